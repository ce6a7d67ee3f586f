"""Seeded discrete-event world.

The ``World`` owns the clock, the event queue, every node's protocol state,
the ground-truth connection trees and the physics. Events are dispatched in
(time, seq) order on a single thread, and every random choice is drawn from
the one seeded generator in dispatch order, so a (scenario, seed) pair always
produces the same trace.
"""
from __future__ import annotations

import heapq
import random
from dataclasses import dataclass, field, fields, replace
from typing import Callable

from vnsim import behavior as bh
from vnsim import protocol as pr
from vnsim.body_sim import (
    STOP,
    LedRing,
    Physics,
    Stimulus,
    closest_leds,
    dock_feasible,
    goto_twist,
    integrate,
    sense_stimulus,
    twist_to_module_commands,
)
from vnsim.topology import (
    BodyMap,
    Capabilities,
    DEFAULT_CAPS,
    Pose2,
    attach_subtree,
    detach_subtree,
    reroot,
    single,
    world_poses,
)
from vnsim.trace import TraceSink
from vnsim.wire import encode_message


class TimeTravel(ValueError):
    pass


@dataclass
class SimParams:
    seed: int = 1
    latency: float = 0.01
    drop_probability: float = 0.0
    # link-layer retransmission keeps protocol messages lossless; only heartbeats drop
    reliable_protocol: bool = True
    heartbeat_period: float = 0.1
    heartbeat_phase: float = 0.05
    failure_timeout: float = 0.5
    dt_phys: float = 0.05
    dt_sense: float = 0.1
    snapshot_every: int = 4
    r_sense: float = 2.0
    k_leds: int = 3
    r_point: float = 1.5
    r_retreat: float = 0.8
    hysteresis: float = 0.1
    v_max: float = 0.3
    omega_max: float = 1.5
    eps_dock: float = 0.02
    eps_angle: float = 0.1
    stale_after: float = 0.5
    split_clearance: float = 0.3
    t_recover: float = 60.0
    trace_heartbeats: bool = False

    def behavior(self) -> bh.BehaviorParams:
        return bh.BehaviorParams(
            r_point=self.r_point,
            r_retreat=self.r_retreat,
            hysteresis=self.hysteresis,
            k_leds=self.k_leds,
            v_max=self.v_max,
            stale_after=self.stale_after,
        )

    @classmethod
    def from_dict(cls, d: dict) -> "SimParams":
        known = {f.name: f for f in fields(cls)}
        kw = {}
        for k, v in d.items():
            if k not in known:
                raise KeyError(f"unknown parameter {k!r}")
            kw[k] = _coerce(known[k].type, v)
        return cls(**kw)

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


def _coerce(typ, v):
    typ = typ if isinstance(typ, str) else typ.__name__
    if typ == "bool":
        if isinstance(v, str):
            return v.strip().lower() in ("1", "true", "yes", "on")
        return bool(v)
    if typ == "int":
        return int(v)
    return float(v)


@dataclass(frozen=True)
class LinkModel:
    latency: float = 0.01
    drop_probability: float = 0.0

    def __post_init__(self):
        if self.latency <= 0:
            raise ValueError("latency must be positive")
        if not 0.0 <= self.drop_probability <= 1.0:
            raise ValueError("drop_probability must be in [0, 1]")


@dataclass(order=True)
class Event:
    time: float
    seq: int
    kind: str = field(compare=False)
    data: object = field(compare=False, default=None)


@dataclass
class Maneuver:
    """Drive a brain's body until the brain module reaches ``goal()``."""

    brain: int
    goal: Callable[[], Pose2]
    on_arrive: Callable[[], None]
    label: str = ""


LED_RING = LedRing()


class World:
    def __init__(self, robots, params: SimParams | None = None, trace: TraceSink | None = None, observer=None):
        self.params = params or SimParams()
        p = self.params
        self.link_model = LinkModel(p.latency, p.drop_probability)
        self.clock = 0.0
        self.queue: list[Event] = []
        self._seq = 0
        self.rng = random.Random(p.seed)
        self.trace = trace if trace is not None else TraceSink()
        self.observer = observer
        self.listeners: list = []
        self.nodes: dict[int, pr.NodeState] = {}
        self.caps: dict[int, Capabilities] = {}
        self.bodies: dict[int, BodyMap] = {}
        self._root_of: dict[int, int] = {}
        poses = {}
        for nid, caps, pose in robots:
            if nid in self.nodes:
                raise ValueError(f"duplicate robot id {nid}")
            caps = caps or DEFAULT_CAPS
            self.nodes[nid] = pr.new_node(nid, caps)
            self.caps[nid] = caps
            self.bodies[nid] = BodyMap(single(nid, caps))
            self._root_of[nid] = nid
            poses[nid] = pose
        self.physics = Physics(poses)
        self.dead: set[int] = set()
        self.mated: dict[frozenset, tuple[int, int, int]] = {}
        self._gen = 0
        self._env_seq = 0
        self.inflight = 0
        self.behavior: dict[int, bh.BrainBehaviorState] = {n: bh.BrainBehaviorState() for n in self.nodes}
        self.maneuvers: dict[int, Maneuver] = {}
        self.leds: dict[int, int] = {n: 0 for n in self.nodes}
        self._led_sent: dict[int, dict[int, int]] = {}
        self._twist_sent: dict[int, tuple] = {}
        self._centroid_cache: dict[int, tuple] = {}
        self.stimulus = Stimulus()
        self._dirty = False
        self._cede_pending: dict[int, Callable | None] = {}
        self._started = False
        self._tick = 0
        self.checks_run = 0
        self.check_failures = 0

    # -- queue ---------------------------------------------------------------

    def schedule(self, time: float, kind: str, data=None) -> Event:
        if time < self.clock:
            raise TimeTravel(f"event at {time} before clock {self.clock}")
        ev = Event(time, self._seq, kind, data)
        self._seq += 1
        heapq.heappush(self.queue, ev)
        return ev

    def at(self, time: float, fn: Callable[[], None]) -> Event:
        return self.schedule(time, "call", fn)

    def start(self, **header):
        """Emit the run header and seed the periodic events (idempotent)."""
        if self._started:
            return
        self._started = True
        p = self.params
        self.trace.emit(self.clock, None, "Run", seed=p.seed, nodes=sorted(self.nodes),
                        dt_phys=p.dt_phys, snapshot_every=p.snapshot_every, **header)
        self.schedule(p.dt_phys, "physics", 1)
        self.schedule(p.dt_sense, "sense", 1)
        for nid in sorted(self.nodes):
            self.schedule(p.heartbeat_phase, "hb", (nid, 0))
        self._snapshot()

    def run_until(self, t_end: float) -> TraceSink:
        if t_end < self.clock:
            raise TimeTravel(f"run_until({t_end}) before clock {self.clock}")
        self.start()
        while self.queue and self.queue[0].time <= t_end:
            ev = heapq.heappop(self.queue)
            self.clock = ev.time
            self._dispatch(ev)
            if self._dirty and self.is_quiescent():
                self.run_checks()
        self.clock = t_end
        return self.trace

    def _dispatch(self, ev: Event):
        kind = ev.kind
        if kind == "deliver":
            self._deliver(*ev.data)
        elif kind == "hb":
            nid, n = ev.data
            if nid in self.dead:
                return
            self._step(nid, pr.TimerFired("heartbeat"))
            p = self.params
            self.schedule(p.heartbeat_phase + (n + 1) * p.heartbeat_period, "hb", (nid, n + 1))
        elif kind == "physics":
            self._physics_tick(ev.data)
            self.schedule((ev.data + 1) * self.params.dt_phys, "physics", ev.data + 1)
        elif kind == "sense":
            self._sense_tick()
            self.schedule((ev.data + 1) * self.params.dt_sense, "sense", ev.data + 1)
        elif kind in ("call", "action"):
            ev.data()
        else:
            raise ValueError(f"unknown event kind {kind}")

    # -- transport -----------------------------------------------------------

    def is_mated(self, a: int, b: int) -> bool:
        return frozenset((a, b)) in self.mated

    def transmit(self, env: pr.MessageEnvelope) -> bool:
        """Put an envelope on the wire; returns False if it was discarded."""
        self._env_seq += 1
        eid = self._env_seq
        heartbeat = isinstance(env.payload, pr.Heartbeat)
        link = self.mated.get(frozenset((env.src, env.dst)))
        if link is None:
            self.trace.emit(self.clock, env.src, "MsgDrop", id=eid, src=env.src, dst=env.dst, port=env.port,
                            reason="not_mated", msg=type(env.payload).__name__)
            return False
        if self.link_model.drop_probability > 0 and (heartbeat or not self.params.reliable_protocol):
            if self.rng.random() < self.link_model.drop_probability:
                self.trace.emit(self.clock, env.src, "MsgDrop", id=eid, src=env.src, dst=env.dst,
                                port=env.port, reason="loss", msg=type(env.payload).__name__)
                return False
        if not heartbeat or self.params.trace_heartbeats:
            self.trace.emit(self.clock, env.src, "MsgSend", id=eid, src=env.src, dst=env.dst, port=env.port,
                            **encode_message(env.payload))
        if not heartbeat:
            self.inflight += 1
        self.schedule(self.clock + self.link_model.latency, "deliver", (env, eid, link[0]))
        return True

    def _deliver(self, env: pr.MessageEnvelope, eid: int, gen: int):
        heartbeat = isinstance(env.payload, pr.Heartbeat)
        if not heartbeat:
            self.inflight -= 1
        link = self.mated.get(frozenset((env.src, env.dst)))
        reason = None
        if link is None or link[0] != gen:
            reason = "link_severed"
        elif env.dst in self.dead:
            reason = "dead"
        if reason is not None:
            self.trace.emit(self.clock, env.dst, "MsgDrop", id=eid, src=env.src, dst=env.dst, port=env.port,
                            reason=reason, msg=type(env.payload).__name__)
            return
        if not heartbeat or self.params.trace_heartbeats:
            self.trace.emit(self.clock, env.dst, "MsgDeliver", id=eid, src=env.src, dst=env.dst,
                            msg=type(env.payload).__name__)
        self._step(env.dst, pr.MessageArrived(env))

    # -- node bindings -------------------------------------------------------

    def _step(self, nid: int, event):
        if nid in self.dead:
            return
        before = self.nodes[nid]
        state, out, actions = pr.node_step(before, event, self.clock, self.params.failure_timeout)
        self._commit(nid, before, state, out, actions, "merge" if isinstance(event, pr.PhysicalAttached) else "cede")

    def _commit(self, nid, before, state, out, actions, demote_reason="cede"):
        self.nodes[nid] = state
        if state.knowledge is not before.knowledge:
            self._dirty = True
        if state.role is not before.role:
            reason = next((a.reason for a in actions if isinstance(a, pr.BecomeBrain)), demote_reason)
            self.trace.emit(self.clock, nid, "RoleChange", to=state.role.value, reason=reason)
            self._dirty = True
        for a in actions:
            self._apply(nid, a)
        for env in out:
            self.transmit(env)

    def _apply(self, nid: int, a):
        if isinstance(a, pr.SetWheelCommand):
            if self.physics.commands.get(nid, STOP) != a.command:
                self.physics.commands[nid] = a.command
                c = a.command
                self.trace.emit(self.clock, nid, "Command", vx=c.vx, vy=c.vy, omega=c.omega)
        elif isinstance(a, pr.SetLeds):
            if self.leds.get(nid, 0) != a.mask:
                self.leds[nid] = a.mask
                self.trace.emit(self.clock, nid, "LedSet", mask=a.mask)
        elif isinstance(a, pr.ReleasePort):
            if a.reason == "fault":
                self.trace.emit(self.clock, nid, "FaultDetected", peer=a.peer, port=a.port)
                self._notify("fault_detected", node=nid, peer=a.peer)
            if self.is_mated(nid, a.peer):
                self._physical_detach(nid, a.peer, released_by=nid)
        elif isinstance(a, pr.BecomeBrain):
            self.physics.commands[nid] = STOP
            if a.reason == "cede":
                root = self._root_of[nid]
                body = reroot(self.bodies.pop(root), nid)
                self._set_body(body)
                cb = self._cede_pending.pop(nid, None)
                mode = bh.Mode.IDLE if cb is None else bh.Mode.DOCKING
                self.behavior[nid] = bh.BrainBehaviorState(mode=mode, mode_since=self.clock)
                if cb is not None:
                    cb()
            else:
                self.behavior[nid] = bh.BrainBehaviorState(mode_since=self.clock)
            self._notify("new_brain", node=nid, reason=a.reason)
        elif isinstance(a, pr.CedeBrain):
            self.behavior.pop(nid, None)
            self.maneuvers.pop(nid, None)
            self._led_sent.pop(nid, None)
            self._twist_sent.pop(nid, None)

    def _notify(self, name: str, **kw):
        for lst in list(self.listeners):
            fn = getattr(lst, "on_" + name, None)
            if fn is not None:
                fn(self, **kw)

    # -- ground truth --------------------------------------------------------

    def _set_body(self, body: BodyMap):
        self.bodies[body.root] = body
        for n in body.nodes():
            self._root_of[n] = body.root

    def root_of(self, nid: int) -> int:
        return self._root_of[nid]

    def body_of(self, nid: int) -> BodyMap:
        return self.bodies[self._root_of[nid]]

    def live_nodes(self) -> list[int]:
        return sorted(n for n in self.nodes if n not in self.dead)

    def attach(self, child_root: int, entry_port: int, parent: int, parent_port: int, snap: bool = True):
        """Physically dock the body rooted at ``child_root`` onto ``parent``."""
        if self._root_of[child_root] != child_root:
            raise ValueError(f"{child_root} is not the root of its body")
        if self._root_of[parent] == child_root:
            raise ValueError("cannot dock a body onto itself")
        host = self.body_of(parent)
        ceding = self.bodies[child_root]
        merged = attach_subtree(host, parent, parent_port, entry_port, ceding.tree)
        del self.bodies[child_root]
        del self.bodies[host.root]
        self._set_body(merged)
        if snap:
            root_pose = self.physics.poses[merged.root]
            placed = world_poses(merged, root_pose)
            for n in ceding.nodes():
                self.physics.poses[n] = placed[n]
        for n in ceding.nodes():
            self.physics.commands[n] = STOP
        self.maneuvers.pop(child_root, None)
        self._gen += 1
        self.mated[frozenset((child_root, parent))] = (self._gen, entry_port, parent_port)
        self.trace.emit(self.clock, child_root, "Attach", child=child_root, parent=parent,
                        parent_port=parent_port, entry_port=entry_port, depth=merged.depth(parent),
                        nodes=sorted(ceding.nodes()), brain=merged.root)
        self._dirty = True
        self._step(parent, pr.PhysicalAttached(parent_port, child_root, entry_port, pr.Direction.CHILD))
        self._step(child_root, pr.PhysicalAttached(entry_port, parent, parent_port, pr.Direction.PARENT))
        self._notify("attach", child=child_root, parent=parent)

    def detach(self, a: int, b: int):
        """Sever the physical link between two modules; both sides are told."""
        self._physical_detach(a, b, released_by=None)

    def _physical_detach(self, a: int, b: int, released_by: int | None):
        key = frozenset((a, b))
        gen, _, _ = self.mated.pop(key)
        body = self.body_of(a)
        up = body.parent_of(a)
        child, parent = (a, b) if up is not None and up[0] == b else (b, a)
        rest, sub = detach_subtree(body, child)
        del self.bodies[body.root]
        self._set_body(rest)
        self._set_body(BodyMap(sub))
        self.physics.commands[child] = STOP
        self.trace.emit(self.clock, released_by, "Detach", parent=parent, child=child,
                        depth=rest.depth(parent), nodes=sorted(sub.node_ids()), brain=rest.root)
        self._dirty = True
        for n, peer in ((parent, child), (child, parent)):
            if n == released_by or n in self.dead:
                continue
            link = self.nodes[n].link_with(peer)
            if link is not None:
                self._step(n, pr.PhysicalDetached(link.port, peer))
        self._notify("detach", parent=parent, child=child)

    def inject_fault(self, nid: int):
        if nid in self.dead:
            return
        self.dead.add(nid)
        self.physics.commands[nid] = STOP
        self.maneuvers.pop(nid, None)
        self.behavior.pop(nid, None)
        self.trace.emit(self.clock, nid, "FaultInjected")
        self._dirty = True
        self._notify("fault", node=nid)

    # -- brain-side orders ---------------------------------------------------

    def start_cede(self, brain: int, target: int, then: Callable[[], None] | None = None):
        state = self.nodes[brain]
        if target == brain:
            if then is not None:
                then()
            return
        new, out = pr.initiate_cede(state, target, self.clock)
        self._cede_pending[target] = then
        self._dirty = True
        self._commit(brain, state, new, out, [pr.CedeBrain(out[0].dst)])

    def order_split(self, brain: int, split_at: int):
        state = self.nodes[brain]
        new, out, actions = pr.issue_detach(state, split_at, self.clock)
        self._commit(brain, state, new, out, actions)

    def set_mode(self, brain: int, mode: bh.Mode, **kw):
        old = self.behavior.get(brain, bh.BrainBehaviorState())
        new = replace(old, mode=mode, mode_since=self.clock if mode is not old.mode else old.mode_since, **kw)
        self.behavior[brain] = new
        if mode is not old.mode:
            self.trace.emit(self.clock, brain, "Mode", mode=mode.value)
        if mode not in (bh.Mode.POINTING, bh.Mode.RETREATING):
            self._leds_off(brain)
            if brain in self._twist_sent:
                self._drive(brain, (0.0, 0.0, 0.0))

    def start_maneuver(self, brain: int, goal: Callable[[], Pose2], on_arrive: Callable[[], None], label=""):
        self.maneuvers[brain] = Maneuver(brain, goal, on_arrive, label)

    def _leds_off(self, brain: int):
        sent = self._led_sent.get(brain)
        if not sent:
            return
        masks = {n: 0 for n, m in sent.items() if m}
        if masks:
            self._brain_emit(brain, {}, masks)
        self._led_sent[brain] = {}

    def _brain_emit(self, brain: int, commands: dict, masks: dict):
        state = self.nodes[brain]
        new, out, actions = pr.brain_commands(state, commands, masks, self.clock)
        self._commit(brain, state, new, out, actions)

    def _drive(self, brain: int, twist: tuple[float, float, float]):
        """Send a body twist as per-module commands, only when it changed."""
        knowledge = self.nodes[brain].knowledge
        key = (twist, knowledge)
        if self._twist_sent.get(brain) == key:
            return
        self._twist_sent[brain] = key
        poses = world_poses(knowledge)
        cmds = twist_to_module_commands(knowledge, poses, twist, self.params.v_max, self.params.omega_max)
        self._brain_emit(brain, cmds, {})

    # -- periodic work -------------------------------------------------------

    def brains(self) -> list[int]:
        return sorted(n for n, s in self.nodes.items() if s.is_brain and n not in self.dead)

    def _physics_tick(self, n: int):
        p = self.params
        self._tick = n
        for b in sorted(self.maneuvers):
            m = self.maneuvers[b]
            if b in self.dead or not self.nodes[b].is_brain:
                del self.maneuvers[b]
                continue
            twist = goto_twist(self.physics.poses[b], m.goal(), p.dt_phys, p.v_max, p.omega_max)
            self._drive(b, twist)
        frozen = self.dead
        self.physics = integrate(self.physics, list(self.bodies.values()), p.dt_phys, frozen)
        for b in sorted(self.maneuvers):
            m = self.maneuvers.get(b)
            if m is None:
                continue
            if dock_feasible(self.physics.poses[b], m.goal(), p.eps_dock, p.eps_angle):
                del self.maneuvers[b]
                self._drive(b, (0.0, 0.0, 0.0))
                self._snap(b, m.goal())
                m.on_arrive()
        self._notify("tick")
        if self.observer is not None:
            self.observer(self)
        if n % p.snapshot_every == 0:
            self._snapshot()

    def _snap(self, brain: int, goal: Pose2):
        body = self.body_of(brain)
        if body.root != brain:
            self.physics.poses[brain] = goal
            return
        self.physics.poses.update(world_poses(body, goal))

    def _sense_tick(self):
        p = self.params
        stim = self.stimulus.position(self.clock)
        if stim is not None:
            for nid in self.live_nodes():
                if not self.caps[nid].has_stimulus_sensor:
                    continue
                r = sense_stimulus(self.physics.poses[nid], stim, p.r_sense, self.clock)
                if r is not None:
                    self._step(nid, pr.SensorSampled(r))
        bp = p.behavior()
        for b in self.brains():
            bstate = self.behavior.get(b)
            if bstate is None or bstate.mode not in (bh.Mode.IDLE, bh.Mode.POINTING, bh.Mode.RETREATING):
                continue
            state = self.nodes[b]
            fresh = [(o, r) for o, r in sorted(state.reports.items()) if self.clock - r.sensed_at <= p.stale_after]
            est = bh.fuse_reports(fresh, state.knowledge)
            bstate = replace(bstate, centroid=self._centroid(b))
            new, twist, k = bh.brain_decide(bstate, est, self.clock, bp)
            self.behavior[b] = new
            if new.mode is not bstate.mode:
                self.trace.emit(self.clock, b, "Mode", mode=new.mode.value)
            if twist != (0.0, 0.0, 0.0) or b in self._twist_sent:
                self._drive(b, twist)
            if k or any(self._led_sent.get(b, {}).values()):
                self._point(b, est if k else None, k)

    def _centroid(self, b: int) -> tuple[float, float]:
        knowledge = self.nodes[b].knowledge
        hit = self._centroid_cache.get(b)
        if hit is not None and hit[0] is knowledge:
            return hit[1]
        c = bh.body_centroid(knowledge)
        self._centroid_cache[b] = (knowledge, c)
        return c

    def _point(self, b: int, est, k: int):
        knowledge = self.nodes[b].knowledge
        want: dict[int, int] = {n: 0 for n in knowledge.node_ids()}
        if est is not None and k:
            poses = world_poses(knowledge)
            counts = {d.root: d.caps.led_count for d in knowledge}
            for n, j in closest_leds(knowledge, poses, LED_RING, est.position, k, counts):
                want[n] |= 1 << j
        sent = self._led_sent.setdefault(b, {})
        diff = {n: m for n, m in want.items() if sent.get(n, 0) != m}
        if diff:
            sent.update(diff)
            self._brain_emit(b, {}, diff)

    # -- invariants ----------------------------------------------------------

    def _dead_attached(self) -> bool:
        for key in self.mated:
            a, b = tuple(key)
            if (a in self.dead) != (b in self.dead):
                return True
        return False

    @property
    def cede_in_progress(self) -> bool:
        return bool(self._cede_pending)

    def is_quiescent(self) -> bool:
        return self.inflight == 0 and not self._cede_pending and not self._dead_attached()

    def check_invariants(self) -> list[str]:
        """Knowledge consistency and single-brain checks; returns failures."""
        problems = []
        for root, body in sorted(self.bodies.items()):
            live = [n for n in body.nodes() if n not in self.dead]
            if not live:
                continue
            brains = [n for n in live if self.nodes[n].is_brain]
            if brains != [root] or root in self.dead:
                problems.append(f"component {root}: brains {brains}")
            for n in live:
                st = self.nodes[n]
                truth = body.subtree(n)
                if st.knowledge != truth:
                    problems.append(f"node {n}: knowledge differs from ground truth")
                kids = sorted(c.sub.root for c in st.knowledge.children)
                links = sorted(link.peer for link in st.child_links())
                if kids != links:
                    problems.append(f"node {n}: child links {links} vs knowledge {kids}")
                if st.is_brain != (st.parent_link() is None):
                    problems.append(f"node {n}: role/parent mismatch")
        return problems

    def components(self) -> list[dict]:
        out = []
        for root, body in sorted(self.bodies.items()):
            nodes = sorted(body.nodes())
            live = [n for n in nodes if n not in self.dead]
            if not live:
                continue
            out.append({"root": root, "nodes": nodes,
                        "brains": [n for n in live if self.nodes[n].is_brain]})
        return out

    def run_checks(self) -> list[str]:
        self._dirty = False
        self.checks_run += 1
        self.trace.emit(self.clock, None, "Quiescent", components=self.components())
        problems = self.check_invariants()
        if problems:
            self.check_failures += 1
            self.trace.emit(self.clock, None, "CheckFail", check="knowledge", problems=problems)
        else:
            self.trace.emit(self.clock, None, "CheckPass", check="knowledge", nodes=len(self.live_nodes()))
        return problems

    def _snapshot(self):
        rows = []
        for nid in sorted(self.nodes):
            pose = self.physics.poses[nid]
            role = "X" if nid in self.dead else ("B" if self.nodes[nid].is_brain else "M")
            rows.append([nid, round(pose.x, 6), round(pose.y, 6), round(pose.theta, 6), role])
        edges = []
        for body in self.bodies.values():
            for par, ch, _, _ in sorted(body.tree.edges()):
                edges.append([par, ch])
        edges.sort()
        stim = self.stimulus.position(self.clock)
        modes = {str(b): s.mode.value for b, s in sorted(self.behavior.items()) if b not in self.dead}
        self.trace.emit(self.clock, None, "Snapshot", nodes=rows, edges=edges,
                        stimulus=None if stim is None else [round(stim[0], 6), round(stim[1], 6)],
                        modes=modes)
