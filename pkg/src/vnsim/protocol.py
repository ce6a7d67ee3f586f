"""Per-module nervous-system protocol.

Every module runs the same state machine. Messages only travel over
physically mated links, and each module keeps a description of its own
subtree. A merge costs one announcement that climbs from the ceding root to
the brain; a split costs nothing on the detached side and one notice per hop
on the remaining side.

``node_step`` is a pure transition: it never mutates its input and returns
the new state, the envelopes to send and the local actions to perform.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import NamedTuple, Union

from vnsim.body_sim import ModuleCommand, StimulusReading
from vnsim.topology import (
    Capabilities,
    DEFAULT_CAPS,
    DuplicateNodeId,
    Pose2,
    SubtreeDescription,
    TopologyError,
    UnknownNode,
    cut,
    graft,
    single,
)

log = logging.getLogger(__name__)

HEARTBEAT_PERIOD = 0.1
FAILURE_TIMEOUT = 0.5


class ProtocolViolation(Exception):
    pass


class Role(str, Enum):
    BRAIN = "Brain"
    MEMBER = "Member"


class Direction(str, Enum):
    PARENT = "ParentWard"
    CHILD = "ChildWard"


@dataclass(frozen=True)
class LinkState:
    port: int
    peer: int
    peer_port: int
    direction: Direction
    last_heartbeat_rx: float
    alive: bool = True


# -- messages ---------------------------------------------------------------


class Hop(NamedTuple):
    node: int
    via_port: int
    entry_port: int
    pose: Pose2


@dataclass(frozen=True)
class Heartbeat:
    pass


@dataclass(frozen=True)
class MergeAnnounce:
    sub: SubtreeDescription
    via_port_chain: tuple[Hop, ...] = ()
    entry_port: int = 0
    parent_port: int = 0
    # (node, attachment epoch) for every node in ``sub``
    epochs: tuple[tuple[int, int], ...] = ()


@dataclass(frozen=True)
class SplitNotice:
    detached_root: int
    # attachment epoch of the link that was lost
    epoch: int = 0


@dataclass(frozen=True)
class SensorReport:
    origin: int
    reading: StimulusReading


@dataclass(frozen=True)
class ActuatorCommand:
    target: int
    command: ModuleCommand


@dataclass(frozen=True)
class LedCommand:
    target: int
    led_mask: int


@dataclass(frozen=True)
class DetachOrder:
    split_at: int


@dataclass(frozen=True)
class CedeOrder:
    new_local_root: int
    # what the sender keeps once the receiver becomes its parent
    parent_remainder: SubtreeDescription | None = None
    # receiver's frame in the sender's frame
    edge_pose: Pose2 = Pose2()
    remainder_epochs: tuple[tuple[int, int], ...] = ()


Message = Union[
    Heartbeat, MergeAnnounce, SplitNotice, SensorReport, ActuatorCommand, LedCommand, DetachOrder, CedeOrder
]


@dataclass(frozen=True)
class MessageEnvelope:
    src: int
    dst: int
    port: int
    payload: Message
    send_time: float


# -- events and local actions ----------------------------------------------


@dataclass(frozen=True)
class MessageArrived:
    envelope: MessageEnvelope


@dataclass(frozen=True)
class PhysicalAttached:
    port: int
    peer: int
    peer_port: int
    direction: Direction


@dataclass(frozen=True)
class PhysicalDetached:
    port: int
    peer: int


@dataclass(frozen=True)
class TimerFired:
    kind: str = "heartbeat"


@dataclass(frozen=True)
class SensorSampled:
    reading: StimulusReading | None


NodeEvent = Union[MessageArrived, PhysicalAttached, PhysicalDetached, TimerFired, SensorSampled]


@dataclass(frozen=True)
class SetWheelCommand:
    command: ModuleCommand


@dataclass(frozen=True)
class SetLeds:
    mask: int


@dataclass(frozen=True)
class ReleasePort:
    port: int
    peer: int
    reason: str


@dataclass(frozen=True)
class GripPort:
    port: int
    peer: int


@dataclass(frozen=True)
class BecomeBrain:
    reason: str


@dataclass(frozen=True)
class CedeBrain:
    new_parent: int


LocalAction = Union[SetWheelCommand, SetLeds, ReleasePort, GripPort, BecomeBrain, CedeBrain]


# -- node state -------------------------------------------------------------


@dataclass(frozen=True)
class NodeState:
    id: int
    caps: Capabilities = DEFAULT_CAPS
    role: Role = Role.BRAIN
    links: tuple[LinkState, ...] = ()
    knowledge: SubtreeDescription | None = None
    brain_id_belief: int | None = None
    heartbeat_tx_due: float = 0.0
    reports: dict = field(default_factory=dict, compare=False)
    stats: dict = field(default_factory=dict, compare=False)
    # attachment epoch of every node in ``knowledge``; a node bumps its own
    # whenever its parent changes, which orders racing reports about it
    epochs: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.knowledge is None:
            object.__setattr__(self, "knowledge", single(self.id, self.caps))
        if self.brain_id_belief is None:
            object.__setattr__(self, "brain_id_belief", self.id)
        if not self.epochs:
            object.__setattr__(self, "epochs", {self.id: 0})

    @property
    def epoch(self) -> int:
        return self.epochs.get(self.id, 0)

    @property
    def is_brain(self) -> bool:
        return self.role is Role.BRAIN

    def parent_link(self) -> LinkState | None:
        for link in self.links:
            if link.direction is Direction.PARENT:
                return link
        return None

    def link_with(self, peer: int) -> LinkState | None:
        for link in self.links:
            if link.peer == peer:
                return link
        return None

    def link_at(self, port: int) -> LinkState | None:
        for link in self.links:
            if link.port == port:
                return link
        return None

    def child_links(self) -> list[LinkState]:
        return [link for link in self.links if link.direction is Direction.CHILD]


def new_node(nid: int, caps: Capabilities = DEFAULT_CAPS, now: float = 0.0) -> NodeState:
    return NodeState(nid, caps, heartbeat_tx_due=now)


def _without(links, port):
    return tuple(link for link in links if link.port != port)


def _with(links, new):
    return tuple(new if link.port == new.port else link for link in links)


def _bump(stats: dict, key: str) -> dict:
    out = dict(stats)
    out[key] = out.get(key, 0) + 1
    return out


def _send(state: NodeState, link: LinkState, payload, now: float) -> MessageEnvelope:
    return MessageEnvelope(state.id, link.peer, link.port, payload, now)


def _send_up(state: NodeState, payload, now: float) -> list[MessageEnvelope]:
    up = state.parent_link()
    if up is None:
        return []
    return [_send(state, up, payload, now)]


def _bump_epoch(state: NodeState) -> NodeState:
    epochs = dict(state.epochs)
    epochs[state.id] = state.epoch + 1
    return replace(state, epochs=epochs)


def _keep_epochs(epochs: dict, knowledge: SubtreeDescription) -> dict:
    return {n: e for n, e in epochs.items() if n in knowledge}


def _route_down(state: NodeState, target: int) -> LinkState | None:
    for c in state.knowledge.children:
        if target in c.sub:
            link = state.link_at(c.via_port)
            if link is not None and link.direction is Direction.CHILD and link.alive:
                return link
    return None


# -- pure knowledge operations ---------------------------------------------


def build_merge_announce(
    ceding_knowledge: SubtreeDescription, entry_port: int, parent_port: int, epochs: dict | None = None
) -> MergeAnnounce:
    ep = tuple(sorted((epochs or {}).items()))
    return MergeAnnounce(ceding_knowledge, (), entry_port, parent_port, ep)


def reconcile(
    knowledge: SubtreeDescription, epochs: dict, announce: MergeAnnounce
) -> tuple[SubtreeDescription, dict, MergeAnnounce | None]:
    """Resolve nodes that appear both in ``knowledge`` and in the announced subtree.

    Reports about one node can race along different paths. For every
    duplicate, the side carrying the newer attachment epoch wins: a stale
    local position is cut from ``knowledge``, a stale announced one is cut
    from the announcement. Returns None for the announcement when its own
    root is stale. At the attachment point, a current claim on the receiving
    node itself would close a cycle and raises DuplicateNodeId; a relayed
    announce has already crossed tree links, so a claim on the receiver there
    is always stale and is trimmed.
    """
    incoming = dict(announce.epochs)
    sub = announce.sub
    epochs = dict(epochs)
    for d in list(announce.sub):
        n = d.root
        if n not in sub or n not in knowledge:
            continue
        if n == knowledge.root and not announce.via_port_chain and incoming.get(n, 0) >= epochs.get(n, 0):
            raise DuplicateNodeId([n])
        if n != knowledge.root and incoming.get(n, 0) > epochs.get(n, 0):
            knowledge, gone = cut(knowledge, n)
            for g in gone.node_ids():
                epochs.pop(g, None)
        elif n == sub.root:
            return knowledge, epochs, None
        else:
            sub, _ = cut(sub, n)
    kept = tuple((n, e) for n, e in announce.epochs if n in sub)
    return knowledge, epochs, replace(announce, sub=sub, epochs=kept)


def _attach_point(knowledge: SubtreeDescription, via_child_port: int, announce: MergeAnnounce) -> tuple[int, int, Pose2 | None]:
    chain = announce.via_port_chain
    if not chain:
        if via_child_port != announce.parent_port:
            raise ProtocolViolation(
                f"announce names port {announce.parent_port} but arrived on {via_child_port}"
            )
        return knowledge.root, via_child_port, None
    cur, port = knowledge, via_child_port
    for hop in reversed(chain):
        link = cur.child_at(port)
        if link is None or link.sub.root != hop.node:
            raise UnknownNode(hop.node)
        cur, port = link.sub, hop.via_port
    return chain[0].node, chain[0].via_port, chain[0].pose


def absorb_merge(knowledge: SubtreeDescription, via_child_port: int, announce: MergeAnnounce) -> SubtreeDescription:
    """Graft an announced subtree into ``knowledge``.

    With an empty hop chain the announce came straight from the ceding root,
    so the graft happens on this node's own port. Otherwise the chain (oldest
    hop first) spells out the way down from the child on ``via_child_port``
    to the attachment node.
    """
    node, port, pose = _attach_point(knowledge, via_child_port, announce)
    return graft(knowledge, node, port, announce.entry_port, announce.sub, pose)


def prune_split(knowledge: SubtreeDescription, detached_root: int) -> SubtreeDescription:
    if detached_root == knowledge.root:
        raise UnknownNode(detached_root)
    rest, _ = cut(knowledge, detached_root)
    return rest


def detect_failures(state: NodeState, now: float, timeout: float = FAILURE_TIMEOUT) -> list[LinkState]:
    """Links whose peer has been silent for longer than ``timeout``, marked dead."""
    return [
        replace(link, alive=False)
        for link in state.links
        if now - link.last_heartbeat_rx > timeout
    ]


# -- transitions ------------------------------------------------------------


def node_step(
    state: NodeState,
    event: NodeEvent,
    now: float,
    timeout: float = FAILURE_TIMEOUT,
) -> tuple[NodeState, list[MessageEnvelope], list[LocalAction]]:
    if isinstance(event, MessageArrived):
        return _on_message(state, event.envelope, now)
    if isinstance(event, TimerFired):
        return _on_timer(state, now, timeout)
    if isinstance(event, SensorSampled):
        return _on_sensor(state, event.reading, now)
    if isinstance(event, PhysicalAttached):
        return _on_attached(state, event, now)
    if isinstance(event, PhysicalDetached):
        return _on_detached(state, event, now)
    raise TypeError(f"unknown event {event!r}")


def _on_message(state, env, now):
    link = state.link_with(env.src)
    if link is None or not link.alive:
        log.warning("node %s: message from unlinked %s dropped", state.id, env.src)
        return state, [], []
    msg = env.payload
    if isinstance(msg, Heartbeat):
        if now > link.last_heartbeat_rx:
            state = replace(state, links=_with(state.links, replace(link, last_heartbeat_rx=now)))
        return state, [], []
    if isinstance(msg, MergeAnnounce):
        return _on_announce(state, link, msg, now)
    if isinstance(msg, SplitNotice):
        n = msg.detached_root
        c = state.knowledge.child_at(link.port)
        if (
            link.direction is not Direction.CHILD
            or c is None
            or n not in c.sub
            or state.epochs.get(n, 0) != msg.epoch
        ):
            log.info("node %s: stale split notice for %s ignored", state.id, n)
            return state, [], []
        knowledge = prune_split(state.knowledge, n)
        state = replace(state, knowledge=knowledge, epochs=_keep_epochs(state.epochs, knowledge))
        return state, _send_up(state, msg, now), []
    if isinstance(msg, SensorReport):
        if state.is_brain:
            reports = dict(state.reports)
            reports[msg.origin] = msg.reading
            return replace(state, reports=reports), [], []
        state = replace(state, stats=_bump(state.stats, "relayed"))
        return state, _send_up(state, msg, now), []
    if isinstance(msg, (ActuatorCommand, LedCommand)):
        if msg.target == state.id:
            if isinstance(msg, ActuatorCommand):
                return state, [], [SetWheelCommand(msg.command)]
            return state, [], [SetLeds(msg.led_mask)]
        nxt = _route_down(state, msg.target)
        if nxt is None:
            log.warning("node %s: no route to %s", state.id, msg.target)
            return state, [], []
        return state, [_send(state, nxt, msg, now)], []
    if isinstance(msg, DetachOrder):
        return _on_detach_order(state, msg, now)
    if isinstance(msg, CedeOrder):
        if link.direction is not Direction.PARENT:
            log.warning("node %s: cede order from non-parent %s", state.id, env.src)
            return state, [], []
        return _on_cede(state, link, msg, now)
    raise ProtocolViolation(f"unknown payload {msg!r}")


def _on_announce(state, link, msg, now):
    if link.direction is not Direction.CHILD:
        log.warning("node %s: announce from non-child %s", state.id, link.peer)
        return state, [], []
    try:
        node, port, _ = _attach_point(state.knowledge, link.port, msg)
        knowledge, epochs, msg = reconcile(state.knowledge, state.epochs, msg)
        if msg is None:
            log.info("node %s: announce superseded by newer reports, dropped", state.id)
            return state, [], []
        occupant = knowledge.find(node).child_at(port) if node in knowledge else None
        if occupant is not None:
            # the port can only hold one module; whatever we thought was there left
            knowledge, _ = cut(knowledge, occupant.sub.root)
            epochs = _keep_epochs(epochs, knowledge)
        knowledge = absorb_merge(knowledge, link.port, msg)
    except DuplicateNodeId:
        state = replace(state, links=_without(state.links, link.port))
        return state, [], [ReleasePort(link.port, link.peer, "reject")]
    except (TopologyError, ProtocolViolation) as exc:
        log.warning("node %s: stale announce dropped (%s)", state.id, exc)
        return state, [], []
    epochs.update(msg.epochs)
    state = replace(state, knowledge=knowledge, epochs=epochs)
    up = state.parent_link()
    if up is None:
        return state, [], []
    child = knowledge.child_at(link.port)
    hop = Hop(state.id, link.port, child.child_entry_port, child.relative_pose)
    fwd = replace(msg, via_port_chain=msg.via_port_chain + (hop,))
    state = replace(state, stats=_bump(state.stats, "relayed"))
    return state, [_send(state, up, fwd, now)], []


def _drop_child(state, link, now):
    """Forget a child link; prune and notify upward if it was known."""
    state = replace(state, links=_without(state.links, link.port))
    c = state.knowledge.child_at(link.port)
    if c is None or c.sub.root != link.peer:
        return state, []
    notice = SplitNotice(link.peer, state.epochs.get(link.peer, 0))
    knowledge = prune_split(state.knowledge, link.peer)
    state = replace(state, knowledge=knowledge, epochs=_keep_epochs(state.epochs, knowledge))
    return state, _send_up(state, notice, now)


def _on_detach_order(state, msg, now):
    link = state.link_with(msg.split_at)
    if link is not None and link.direction is Direction.CHILD:
        state, out = _drop_child(state, link, now)
        return state, out, [ReleasePort(link.port, link.peer, "order")]
    nxt = _route_down(state, msg.split_at)
    if nxt is None:
        log.warning("node %s: detach target %s unknown", state.id, msg.split_at)
        return state, [], []
    return state, [_send(state, nxt, msg, now)], []


def _on_cede(state, link, msg, now):
    # the former parent becomes a child hanging off the link it arrived on
    remainder = msg.parent_remainder or single(link.peer)
    knowledge = graft(
        state.knowledge, state.id, link.port, link.peer_port, remainder, msg.edge_pose.inverse(), None
    )
    flipped = replace(link, direction=Direction.CHILD)
    links = _with(state.links, flipped)
    epochs = dict(state.epochs)
    epochs.update(msg.remainder_epochs)
    state = _bump_epoch(replace(state, epochs=epochs))
    if msg.new_local_root == state.id:
        state = replace(
            state, knowledge=knowledge, links=links, role=Role.BRAIN, brain_id_belief=state.id, reports={}
        )
        return state, [], [BecomeBrain("cede")]
    state = replace(state, knowledge=knowledge, links=links)
    return _cede_onward(state, msg.new_local_root, now)


def _cede_onward(state, target, now):
    nxt = _route_down(state, target)
    if nxt is None:
        raise UnknownNode(target)
    rest, _ = cut(state.knowledge, nxt.peer)
    edge = state.knowledge.child_at(nxt.port)
    state = _bump_epoch(replace(state, epochs=_keep_epochs(state.epochs, rest)))
    order = CedeOrder(target, rest, edge.relative_pose, tuple(sorted(state.epochs.items())))
    links = _with(state.links, replace(nxt, direction=Direction.PARENT))
    state = replace(state, knowledge=rest, links=links, role=Role.MEMBER, brain_id_belief=target, reports={})
    return state, [_send(state, nxt, order, now)], [CedeBrain(nxt.peer)]


def initiate_cede(brain_state: NodeState, new_local_root: int, now: float = 0.0) -> tuple[NodeState, list[MessageEnvelope]]:
    """Hand local rootship to ``new_local_root`` along the tree path."""
    if not brain_state.is_brain:
        raise ProtocolViolation(f"node {brain_state.id} is not a brain")
    if new_local_root == brain_state.id:
        return brain_state, []
    if new_local_root not in brain_state.knowledge:
        raise UnknownNode(new_local_root)
    state, out, _ = _cede_onward(brain_state, new_local_root, now)
    return state, out


def _on_timer(state, now, timeout):
    actions: list[LocalAction] = []
    out: list[MessageEnvelope] = []
    failed = detect_failures(state, now, timeout)
    # parent first, so child excisions below know whether to notify upward
    failed.sort(key=lambda link: link.direction is not Direction.PARENT)
    for link in failed:
        actions.append(ReleasePort(link.port, link.peer, "fault"))
        if link.direction is Direction.PARENT:
            state = replace(
                state, links=_without(state.links, link.port), role=Role.BRAIN, brain_id_belief=state.id
            )
            state = _bump_epoch(state)
            actions.append(BecomeBrain("fault"))
        else:
            state, notes = _drop_child(state, link, now)
            out.extend(notes)
    for link in state.links:
        if link.alive:
            out.append(_send(state, link, Heartbeat(), now))
    return state, out, actions


def _on_sensor(state, reading, now):
    if reading is None:
        return state, [], []
    if state.is_brain:
        reports = dict(state.reports)
        reports[state.id] = reading
        return replace(state, reports=reports), [], []
    return state, _send_up(state, SensorReport(state.id, reading), now), []


def _on_attached(state, ev, now):
    link = LinkState(ev.port, ev.peer, ev.peer_port, ev.direction, now)
    if state.link_at(ev.port) is not None:
        raise ProtocolViolation(f"node {state.id}: port {ev.port} already linked")
    if ev.direction is Direction.CHILD:
        return replace(state, links=state.links + (link,)), [], []
    if not state.is_brain:
        raise ProtocolViolation(f"node {state.id} already has a parent")
    state = replace(state, links=state.links + (link,), role=Role.MEMBER, brain_id_belief=ev.peer, reports={})
    state = _bump_epoch(state)
    announce = build_merge_announce(state.knowledge, ev.port, ev.peer_port, state.epochs)
    return state, [_send(state, link, announce, now)], [GripPort(ev.port, ev.peer), CedeBrain(ev.peer)]


def _on_detached(state, ev, now):
    link = state.link_at(ev.port)
    if link is None or link.peer != ev.peer:
        return state, [], []
    if link.direction is Direction.PARENT:
        state = replace(
            state, links=_without(state.links, ev.port), role=Role.BRAIN, brain_id_belief=state.id
        )
        return _bump_epoch(state), [], [BecomeBrain("split")]
    state, out = _drop_child(state, link, now)
    return state, out, []


# -- brain-side emission ----------------------------------------------------


def brain_commands(
    state: NodeState,
    commands: dict[int, ModuleCommand],
    led_masks: dict[int, int],
    now: float,
) -> tuple[NodeState, list[MessageEnvelope], list[LocalAction]]:
    """Deliver per-module wheel and LED commands from the brain down the tree."""
    out: list[MessageEnvelope] = []
    actions: list[LocalAction] = []
    for target in sorted(commands):
        msg = ActuatorCommand(target, commands[target])
        out.extend(_emit(state, msg, actions, now))
    for target in sorted(led_masks):
        msg = LedCommand(target, led_masks[target])
        out.extend(_emit(state, msg, actions, now))
    return state, out, actions


def _emit(state, msg, actions, now):
    if msg.target == state.id:
        actions.append(SetWheelCommand(msg.command) if isinstance(msg, ActuatorCommand) else SetLeds(msg.led_mask))
        return []
    link = _route_down(state, msg.target)
    if link is None:
        log.warning("brain %s: no route to %s", state.id, msg.target)
        return []
    return [_send(state, link, msg, now)]


def issue_detach(state: NodeState, split_at: int, now: float):
    """Brain-side start of a planned split at ``split_at``."""
    if split_at not in state.knowledge or split_at == state.id:
        raise UnknownNode(split_at)
    return _on_detach_order(state, DetachOrder(split_at), now)
