"""Brain-side controllers.

Everything here is a pure function of its inputs: the simulator feeds in the
brain's knowledge, sensor reports and poses, and applies what comes back.
"""
from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, replace
from enum import Enum

from vnsim.body_sim import StimulusReading
from vnsim.topology import (
    MODULE_RADIUS,
    PORT_COUNT,
    BodyMap,
    Capabilities,
    Pose2,
    SubtreeDescription,
    mated_pose,
    world_poses,
)

log = logging.getLogger(__name__)


class InsufficientRobots(Exception):
    pass


class NoValidSplit(Exception):
    pass


class UnknownOrigin(Exception):
    pass


class NoDockingPlan(Exception):
    pass


class Mode(str, Enum):
    FORMING = "Forming"
    IDLE = "Idle"
    POINTING = "Pointing"
    RETREATING = "Retreating"
    RECOVERING = "Recovering"
    DOCKING = "Docking"


@dataclass(frozen=True)
class BehaviorParams:
    r_point: float = 1.5
    r_retreat: float = 0.8
    hysteresis: float = 0.1
    k_leds: int = 3
    v_max: float = 0.3
    stale_after: float = 0.5
    # speed ramps from full down to min_retreat_fraction over this band
    retreat_ramp: float = 0.1
    min_retreat_fraction: float = 0.25


# -- morphology templates ---------------------------------------------------


@dataclass(frozen=True)
class Slot:
    parent: int | None = None
    via_port: int = 0
    entry_port: int = 0
    requires: tuple[tuple[str, object], ...] = ()

    def accepts(self, caps: Capabilities) -> bool:
        return caps.satisfies(dict(self.requires))


@dataclass(frozen=True)
class MorphologyTemplate:
    """Target body shape as a flat list of slots; slot 0 is the root.

    A slot's parent always precedes it, and the pair of ports fixes how it
    mates with the parent slot.
    """

    name: str
    slots: tuple[Slot, ...]

    def __post_init__(self):
        if not self.slots or self.slots[0].parent is not None:
            raise ValueError(f"template {self.name}: slot 0 must be the root")
        used: dict[int, set[int]] = {0: set()}
        for i, s in enumerate(self.slots[1:], start=1):
            if s.parent is None or not 0 <= s.parent < i:
                raise ValueError(f"template {self.name}: slot {i} parent must precede it")
            for p in (s.via_port, s.entry_port):
                if not 0 <= p < PORT_COUNT:
                    raise ValueError(f"template {self.name}: slot {i} port {p} out of range")
            if s.via_port in used[s.parent]:
                raise ValueError(f"template {self.name}: port {s.via_port} of slot {s.parent} used twice")
            used[s.parent].add(s.via_port)
            used[i] = {s.entry_port}

    def __len__(self) -> int:
        return len(self.slots)

    def children_of(self, i: int) -> list[int]:
        return [j for j, s in enumerate(self.slots) if s.parent == i]

    def depth(self, i: int) -> int:
        d = 0
        while self.slots[i].parent is not None:
            i = self.slots[i].parent
            d += 1
        return d

    def realize(self, nodes: list[int], caps: dict[int, Capabilities] | None = None) -> SubtreeDescription:
        """Description of the body obtained by putting ``nodes[i]`` into slot i."""
        caps = caps or {}

        def build(i):
            from vnsim.topology import DEFAULT_CAPS, ChildLink

            kids = []
            for j in self.children_of(i):
                s = self.slots[j]
                kids.append(ChildLink(s.via_port, s.entry_port, mated_pose(s.via_port, s.entry_port), build(j)))
            return SubtreeDescription(nodes[i], caps.get(nodes[i], DEFAULT_CAPS), tuple(kids))

        return build(0)


def _match(desc: SubtreeDescription, tpl: MorphologyTemplate, slot: int, ports: bool) -> bool:
    if not tpl.slots[slot].accepts(desc.caps):
        return False
    kids = tpl.children_of(slot)
    if len(kids) != len(desc.children):
        return False
    if ports:
        for j in kids:
            s = tpl.slots[j]
            c = desc.child_at(s.via_port)
            if c is None or c.child_entry_port != s.entry_port or not _match(c.sub, tpl, j, True):
                return False
        return True
    # unordered: search a bijection between body children and slot children
    subs = [c.sub for c in desc.children]
    for perm in itertools.permutations(kids):
        if all(_match(sub, tpl, j, False) for sub, j in zip(subs, perm)):
            return True
    return False


def matches_template(desc: SubtreeDescription, tpl: MorphologyTemplate, ports: bool = False) -> bool:
    """Whether the body is shaped like the template.

    With ``ports`` the mating ports must agree too; otherwise this is rooted,
    unordered tree isomorphism with capability checks.
    """
    return len(desc) == len(tpl) and _match(desc, tpl, 0, ports)


# -- sensing and pointing ---------------------------------------------------


@dataclass(frozen=True)
class StimulusEstimate:
    position: tuple[float, float]
    distance: float
    sensed_at: float
    origin: int


def fuse_reports(
    reports: list[tuple[int, StimulusReading]],
    knowledge: SubtreeDescription,
    on_unknown=None,
) -> StimulusEstimate | None:
    """Place every reading in the brain frame and keep the nearest one."""
    if not reports:
        return None
    poses = world_poses(knowledge)
    best = None
    for origin, r in reports:
        pose = poses.get(origin)
        if pose is None:
            log.info("report from unknown origin %s ignored", origin)
            if on_unknown is not None:
                on_unknown(origin)
            continue
        pos = pose.apply(r.distance * math.cos(r.bearing), r.distance * math.sin(r.bearing))
        key = (r.distance, origin)
        if best is None or key < best[0]:
            best = (key, StimulusEstimate(pos, r.distance, r.sensed_at, origin))
    return None if best is None else best[1]


@dataclass(frozen=True)
class BrainBehaviorState:
    mode: Mode = Mode.IDLE
    stimulus_estimate: StimulusEstimate | None = None
    open_ports: tuple[tuple[int, int], ...] = ()
    pending_template: MorphologyTemplate | None = None
    # brain-frame centroid of the body, refreshed when knowledge changes
    centroid: tuple[float, float] = (0.0, 0.0)
    filled: tuple[tuple[int, int], ...] = ()
    assigned: tuple[tuple[int, int], ...] = ()
    mode_since: float = 0.0


def body_centroid(knowledge: SubtreeDescription) -> tuple[float, float]:
    poses = world_poses(knowledge)
    n = len(poses)
    return sum(p.x for p in poses.values()) / n, sum(p.y for p in poses.values()) / n


def brain_decide(
    bstate: BrainBehaviorState,
    fused: StimulusEstimate | None,
    now: float,
    params: BehaviorParams = BehaviorParams(),
) -> tuple[BrainBehaviorState, tuple[float, float, float], int]:
    """Point-and-retreat controller.

    Returns the new state, the brain-frame twist and how many LEDs to light
    (0 for none).
    """
    zero = (0.0, 0.0, 0.0)
    if bstate.mode not in (Mode.IDLE, Mode.POINTING, Mode.RETREATING):
        return bstate, zero, 0
    if fused is not None and now - fused.sensed_at > params.stale_after:
        fused = None
    mode = bstate.mode
    if fused is None:
        mode = Mode.IDLE
    else:
        d = fused.distance
        h = params.hysteresis
        if mode is Mode.IDLE and d <= params.r_point:
            mode = Mode.POINTING
        if mode is Mode.RETREATING and d >= params.r_retreat + h:
            mode = Mode.POINTING
        elif mode is Mode.POINTING and d <= params.r_retreat:
            mode = Mode.RETREATING
        if mode is Mode.POINTING and d > params.r_point + h:
            mode = Mode.IDLE
    since = now if mode is not bstate.mode else bstate.mode_since
    new = replace(bstate, mode=mode, stimulus_estimate=fused, mode_since=since)
    if mode is Mode.IDLE:
        return new, zero, 0
    if mode is Mode.POINTING:
        return new, zero, params.k_leds
    cx, cy = bstate.centroid
    sx, sy = fused.position
    ux, uy = cx - sx, cy - sy
    norm = math.hypot(ux, uy)
    if norm == 0.0:
        ux, uy, norm = -sx, -sy, math.hypot(sx, sy) or 1.0
    frac = (params.r_retreat + params.hysteresis - fused.distance) / params.retreat_ramp
    speed = params.v_max * min(1.0, max(params.min_retreat_fraction, frac))
    return new, (speed * ux / norm, speed * uy / norm, 0.0), params.k_leds


# -- recruitment ------------------------------------------------------------


@dataclass(frozen=True)
class Assignment:
    recruit: int
    slot: int
    parent: int
    port: int
    entry_port: int
    goal: Pose2


def recruitment_step(
    bstate: BrainBehaviorState,
    knowledge: SubtreeDescription,
    free_pool: list[tuple],
    poses: dict[int, Pose2],
) -> tuple[BrainBehaviorState, list[Assignment]]:
    """Advertise the open ports of the pending template and pick recruits.

    ``free_pool`` holds (NodeId, Pose2) or (NodeId, Pose2, Capabilities).
    Every slot whose parent is already in place gets the nearest capable free
    robot (ties to the lower id); a port serves one recruit at a time.
    """
    if bstate.mode is not Mode.FORMING or bstate.pending_template is None:
        raise ValueError("recruitment needs a brain in Forming mode")
    tpl = bstate.pending_template
    filled = dict(bstate.filled) or {0: knowledge.root}
    assigned = dict(bstate.assigned)
    if len(filled) == len(tpl):
        return replace(bstate, mode=Mode.IDLE, pending_template=None, open_ports=(), assigned=(),
                       filled=tuple(sorted(filled.items()))), []
    taken = set(filled.values()) | set(assigned.values())
    pool = sorted(
        (entry[0], entry[1], entry[2] if len(entry) > 2 else Capabilities())
        for entry in free_pool
        if entry[0] not in taken
    )
    out = []
    for i, slot in enumerate(tpl.slots):
        if i in filled or i in assigned or slot.parent not in filled:
            continue
        parent = filled[slot.parent]
        goal = poses[parent].compose(mated_pose(slot.via_port, slot.entry_port))
        best = None
        for nid, pose, caps in pool:
            if nid in taken or not slot.accepts(caps):
                continue
            key = (math.hypot(pose.x - goal.x, pose.y - goal.y), nid)
            if best is None or key < best:
                best = key
        if best is None:
            raise InsufficientRobots(f"template {tpl.name}: no free robot for slot {i}")
        nid = best[1]
        taken.add(nid)
        assigned[i] = nid
        out.append(Assignment(nid, i, parent, slot.via_port, slot.entry_port, goal))
    open_ports = tuple(
        (filled[tpl.slots[i].parent], tpl.slots[i].via_port) for i in sorted(assigned)
    )
    new = replace(
        bstate,
        filled=tuple(sorted(filled.items())),
        assigned=tuple(sorted(assigned.items())),
        open_ports=open_ports,
    )
    return new, out


def slot_filled(bstate: BrainBehaviorState, slot: int, node: int) -> BrainBehaviorState:
    filled = dict(bstate.filled)
    filled[slot] = node
    assigned = {k: v for k, v in bstate.assigned if k != slot}
    return replace(bstate, filled=tuple(sorted(filled.items())), assigned=tuple(sorted(assigned.items())))


# -- splitting and recovery -------------------------------------------------


def split_plan(knowledge: SubtreeDescription, template_a: MorphologyTemplate, template_b: MorphologyTemplate) -> int:
    """Child to detach so the brain keeps ``template_a`` and the cut-off part is ``template_b``."""
    from vnsim.topology import cut

    for nid in sorted(knowledge.node_ids()):
        if nid == knowledge.root:
            continue
        rest, sub = cut(knowledge, nid)
        if matches_template(sub, template_b) and matches_template(rest, template_a):
            return nid
    raise NoValidSplit(f"{template_a.name} + {template_b.name}")


def recovery_target(
    original: MorphologyTemplate,
    failed: set[int],
    survivors: list[SubtreeDescription] | None = None,
) -> MorphologyTemplate:
    """Original shape minus one slot per failed robot, deepest leaves first.

    Among equally deep leaves the one listed last goes first. The root slot
    is never removed.
    """
    remove = min(len(failed), len(original) - 1)
    if remove <= 0:
        return original
    slots = list(original.slots)
    alive = list(range(len(slots)))
    tpl = original
    for _ in range(remove):
        leaves = [i for i in alive if i != 0 and not any(slots[j].parent == i for j in alive)]
        depth = {i: tpl.depth(i) for i in leaves}
        victim = max(leaves, key=lambda i: (depth[i], i))
        alive.remove(victim)
    remap = {old: new for new, old in enumerate(alive)}
    new_slots = tuple(
        replace(slots[old], parent=None if slots[old].parent is None else remap[slots[old].parent])
        for old in alive
    )
    return MorphologyTemplate(original.name, new_slots)


def recovery_recruiter(survivors: list[SubtreeDescription]) -> int:
    """Seniority rule: the surviving fragment root with the lowest id leads."""
    return min(d.root for d in survivors)


# -- composite docking ------------------------------------------------------


@dataclass(frozen=True)
class DockPlan:
    gripper: int
    gripper_port: int
    target: int
    target_port: int
    goal: Pose2
    cost: float


def plan_docking(
    ceding: BodyMap,
    ceding_poses: dict[int, Pose2],
    host: BodyMap,
    host_poses: dict[int, Pose2],
    clearance: float = 1e-6,
) -> DockPlan:
    """Cheapest way for the ceding body to grip a free port of the host.

    Candidates whose final placement would overlap the two bodies are
    skipped. Cost is the gripper's straight-line travel plus the turn it
    needs (radians, weighted by one module radius per radian).
    """
    min_gap = 2.0 * MODULE_RADIUS - clearance
    best = None
    for g in sorted(ceding.nodes()):
        g_pose = ceding_poses[g]
        to_local = g_pose.inverse()
        local = {n: to_local.compose(ceding_poses[n]) for n in ceding.nodes()}
        for e in ceding.free_ports(g):
            for t in sorted(host.nodes()):
                for p in host.free_ports(t):
                    goal = host_poses[t].compose(mated_pose(p, e))
                    ok = True
                    for n, lp in local.items():
                        wx, wy = goal.apply(lp.x, lp.y)
                        for h in host.nodes():
                            if n == g and h == t:
                                continue
                            hp = host_poses[h]
                            if math.hypot(wx - hp.x, wy - hp.y) < min_gap:
                                ok = False
                                break
                        if not ok:
                            break
                    if not ok:
                        continue
                    turn = abs(math.remainder(goal.theta - g_pose.theta, 2 * math.pi))
                    cost = math.hypot(goal.x - g_pose.x, goal.y - g_pose.y) + MODULE_RADIUS * turn
                    key = (round(cost, 12), g, e, t, p)
                    if best is None or key < best[0]:
                        best = (key, DockPlan(g, e, t, p, goal, cost))
    if best is None:
        raise NoDockingPlan("no collision-free docking configuration")
    return best[1]
