"""Planar kinematics for modules and rigid composites.

Modules are treated as holonomic disks. A composite moves rigidly under the
twist commanded by its brain; members are re-placed from the connection tree
after every step so rigidity holds by construction.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

from vnsim import kernels
from vnsim.topology import MODULE_RADIUS, BodyMap, Pose2, SubtreeDescription, wrap_angle, world_poses

V_MAX = 0.3
OMEGA_MAX = 1.5
R_SENSE = 2.0
EPS_DOCK = 0.02
EPS_ANGLE = 0.1


@dataclass(frozen=True)
class ModuleCommand:
    vx: float = 0.0
    vy: float = 0.0
    omega: float = 0.0

    @property
    def speed(self) -> float:
        return math.hypot(self.vx, self.vy)

    def is_zero(self) -> bool:
        return self.vx == 0.0 and self.vy == 0.0 and self.omega == 0.0


STOP = ModuleCommand()


@dataclass(frozen=True)
class StimulusReading:
    distance: float
    bearing: float
    sensed_at: float = 0.0


@dataclass(frozen=True)
class LedRing:
    count: int = 12
    radius: float = MODULE_RADIUS

    @property
    def angles(self) -> list[float]:
        return [2.0 * math.pi * j / self.count for j in range(self.count)]

    def led_position(self, pose: Pose2, index: int) -> tuple[float, float]:
        a = 2.0 * math.pi * index / self.count
        return pose.apply(self.radius * math.cos(a), self.radius * math.sin(a))


@dataclass
class Stimulus:
    """Point stimulus moving along piecewise-linear waypoints (t, x, y)."""

    waypoints: list[tuple[float, float, float]] = field(default_factory=list)

    def position(self, t: float) -> tuple[float, float] | None:
        wp = self.waypoints
        if not wp:
            return None
        if t <= wp[0][0]:
            return wp[0][1], wp[0][2]
        for (t0, x0, y0), (t1, x1, y1) in zip(wp, wp[1:]):
            if t <= t1:
                if t1 == t0:
                    return x1, y1
                f = (t - t0) / (t1 - t0)
                return x0 + f * (x1 - x0), y0 + f * (y1 - y0)
        return wp[-1][1], wp[-1][2]


def twist_to_module_commands(
    body: BodyMap | SubtreeDescription,
    poses: dict[int, Pose2],
    twist: tuple[float, float, float],
    v_max: float = V_MAX,
    omega_max: float = OMEGA_MAX,
) -> dict[int, ModuleCommand]:
    """Split a brain-frame twist into per-module commands (module frames).

    If any module would exceed a limit, the whole twist is scaled by one
    common factor so the body stays rigid.
    """
    tree = body.tree if isinstance(body, BodyMap) else body
    brain = poses[tree.root]
    vx, vy, w = twist
    c, s = math.cos(brain.theta), math.sin(brain.theta)
    wvx, wvy = c * vx - s * vy, s * vx + c * vy
    world_u = {}
    for nid in tree.node_ids():
        p = poses[nid]
        rx, ry = p.x - brain.x, p.y - brain.y
        world_u[nid] = (wvx - w * ry, wvy + w * rx)
    scale = 1.0
    peak = max(math.hypot(*u) for u in world_u.values())
    if peak > v_max:
        scale = v_max / peak
    if abs(w) * scale > omega_max:
        scale = omega_max / abs(w)
    out = {}
    for nid, (ux, uy) in world_u.items():
        th = poses[nid].theta
        ci, si = math.cos(th), math.sin(th)
        out[nid] = ModuleCommand(
            scale * (ci * ux + si * uy), scale * (-si * ux + ci * uy), scale * w
        )
    return out


def step_pose(pose: Pose2, cmd: ModuleCommand, dt: float) -> Pose2:
    """First-order Euler step of a module under a module-frame command."""
    c, s = math.cos(pose.theta), math.sin(pose.theta)
    return Pose2(
        pose.x + dt * (c * cmd.vx - s * cmd.vy),
        pose.y + dt * (s * cmd.vx + c * cmd.vy),
        pose.theta + dt * cmd.omega,
    )


@dataclass
class Physics:
    """Poses and active commands of every module in the world."""

    poses: dict[int, Pose2] = field(default_factory=dict)
    commands: dict[int, ModuleCommand] = field(default_factory=dict)

    def command(self, nid: int) -> ModuleCommand:
        return self.commands.get(nid, STOP)


def integrate(physics: Physics, bodies: list[BodyMap], dt: float, frozen: set[int] = frozenset()) -> Physics:
    """Advance every body by ``dt``.

    Each body moves under its root's command; members are then placed from
    the tree. Single modules are just the one-node case. Nodes in ``frozen``
    (e.g. crashed modules) pin their whole body.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    poses = dict(physics.poses)
    for body in bodies:
        root = body.root
        if root in frozen or any(n in frozen for n in body.nodes()):
            continue
        cmd = physics.command(root)
        if cmd.is_zero():
            continue
        new_root = step_pose(poses[root], cmd, dt)
        if len(body) == 1:
            poses[root] = new_root
        else:
            poses.update(world_poses(body, new_root))
    return Physics(poses, dict(physics.commands))


def sense_stimulus(
    module_pose: Pose2, stimulus: tuple[float, float] | None, r_sense: float = R_SENSE, now: float = 0.0
) -> StimulusReading | None:
    if stimulus is None:
        return None
    lx, ly = module_pose.apply_inverse(*stimulus)
    d = math.hypot(lx, ly)
    if d > r_sense:
        return None
    return StimulusReading(d, math.atan2(ly, lx), now)


# squared metres; LED spacing on a ring is many orders larger
TIE_EPS = 1e-12


def closest_leds(
    body: BodyMap | SubtreeDescription,
    poses: dict[int, Pose2],
    ring: LedRing,
    stimulus: tuple[float, float],
    k: int,
    counts: dict[int, int] | None = None,
) -> set[tuple[int, int]]:
    """The k LEDs nearest the stimulus across the whole body.

    Ties go to the lower (node id, led index); distances within TIE_EPS
    count as tied, so LEDs that coincide where two modules mate resolve the
    same way whatever rounding the pose composition picked up. ``counts``
    optionally limits the number of LEDs per module (capability led_count);
    by default every module carries a full ring.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    tree = body.tree if isinstance(body, BodyMap) else body
    ids = sorted(tree.node_ids())
    flat = kernels.led_dist2([poses[n].as_tuple() for n in ids], ring.angles, ring.radius, *stimulus)
    labels = [(n, j) for n in ids for j in range(ring.count)]
    if counts is not None:
        keep = [i for i, (n, j) in enumerate(labels) if j < counts.get(n, ring.count)]
        flat = [flat[i] for i in keep]
        labels = [labels[i] for i in keep]
    best = kernels.k_smallest(flat, k)
    if not best:
        return set()
    edge = flat[best[-1]]
    inside = [i for i in best if flat[i] < edge - TIE_EPS]
    tied = [i for i, d in enumerate(flat) if abs(d - edge) <= TIE_EPS]
    return {labels[i] for i in inside + tied[: k - len(inside)]}


def dock_feasible(
    gripper_pose: Pose2, target_pose: Pose2, eps_dist: float = EPS_DOCK, eps_angle: float = EPS_ANGLE
) -> bool:
    """Whether the gripper is close enough to its docking pose to latch (closed tolerances)."""
    d = math.hypot(gripper_pose.x - target_pose.x, gripper_pose.y - target_pose.y)
    return d <= eps_dist and abs(wrap_angle(gripper_pose.theta - target_pose.theta)) <= eps_angle


def goto_twist(
    current: Pose2,
    goal: Pose2,
    dt: float,
    v_max: float = V_MAX,
    omega_max: float = OMEGA_MAX,
    angle_tol: float = 1e-3,
) -> tuple[float, float, float]:
    """Rotate-then-translate controller; twist is in the moving frame.

    Step sizes are capped so a single Euler step lands on the goal instead of
    overshooting it.
    """
    err = wrap_angle(goal.theta - current.theta)
    if abs(err) > angle_tol:
        w = max(-omega_max, min(omega_max, err / dt))
        return 0.0, 0.0, w
    lx, ly = current.apply_inverse(goal.x, goal.y)
    dist = math.hypot(lx, ly)
    if dist == 0.0:
        return 0.0, 0.0, 0.0
    speed = min(v_max, dist / dt)
    return speed * lx / dist, speed * ly / dist, 0.0
