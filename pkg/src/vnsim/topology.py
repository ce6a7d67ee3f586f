"""Connection-tree model for composite bodies.

A composite body is a rooted tree of modules. Every edge records which
port of the parent is mated with which port of the child, plus the pose of
the child frame expressed in the parent frame. The root is the brain.

All structures here are immutable; every operation returns new values.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterator

MODULE_RADIUS = 0.085
PORT_COUNT = 8

_TWO_PI = 2.0 * math.pi


class TopologyError(ValueError):
    pass


class UnknownNode(TopologyError):
    pass


class UnknownParent(TopologyError):
    pass


class PortOccupied(TopologyError):
    pass


class DuplicateNodeId(TopologyError):
    pass


class CannotDetachRoot(TopologyError):
    pass


class InvalidPort(TopologyError):
    pass


def wrap_angle(theta: float) -> float:
    """Map an angle into (-pi, pi]."""
    a = math.remainder(theta, _TWO_PI)
    if a <= -math.pi:
        a += _TWO_PI
    return a


@dataclass(frozen=True)
class Pose2:
    x: float = 0.0
    y: float = 0.0
    theta: float = 0.0

    def __post_init__(self):
        t = self.theta
        if not -math.pi < t <= math.pi:
            object.__setattr__(self, "theta", wrap_angle(t))

    def compose(self, other: "Pose2") -> "Pose2":
        """Pose of ``other`` (given in this frame) expressed in the outer frame."""
        c, s = math.cos(self.theta), math.sin(self.theta)
        return Pose2(
            self.x + c * other.x - s * other.y,
            self.y + s * other.x + c * other.y,
            self.theta + other.theta,
        )

    __matmul__ = compose

    def inverse(self) -> "Pose2":
        c, s = math.cos(self.theta), math.sin(self.theta)
        return Pose2(-c * self.x - s * self.y, s * self.x - c * self.y, -self.theta)

    def apply(self, px: float, py: float) -> tuple[float, float]:
        """Transform a point from this frame to the outer frame."""
        c, s = math.cos(self.theta), math.sin(self.theta)
        return self.x + c * px - s * py, self.y + s * px + c * py

    def apply_inverse(self, px: float, py: float) -> tuple[float, float]:
        c, s = math.cos(self.theta), math.sin(self.theta)
        dx, dy = px - self.x, py - self.y
        return c * dx + s * dy, -s * dx + c * dy

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.x, self.y, self.theta)

    def close_to(self, other: "Pose2", tol: float = 1e-9) -> bool:
        return (
            abs(self.x - other.x) <= tol
            and abs(self.y - other.y) <= tol
            and abs(wrap_angle(self.theta - other.theta)) <= tol
        )


def port_angle(port: int) -> float:
    return _TWO_PI * port / PORT_COUNT


def port_pose(port: int) -> Pose2:
    """Port frame in the module frame: on the rim, x-axis pointing outward."""
    a = port_angle(port)
    return Pose2(MODULE_RADIUS * math.cos(a), MODULE_RADIUS * math.sin(a), a)


def mated_pose(parent_port: int, child_port: int) -> Pose2:
    """Child frame in the parent frame when the two given ports are mated.

    The disks touch at the parent's port and the two port frames face each
    other, so the child centre sits two radii out along the parent port axis.
    """
    _check_port(parent_port)
    _check_port(child_port)
    a = port_angle(parent_port)
    b = port_angle(child_port)
    d = 2.0 * MODULE_RADIUS
    return Pose2(d * math.cos(a), d * math.sin(a), a + math.pi - b)


def _check_port(port: int) -> None:
    if not 0 <= port < PORT_COUNT:
        raise InvalidPort(f"port {port} outside [0, {PORT_COUNT})")


@dataclass(frozen=True)
class Capabilities:
    has_wheels: bool = True
    led_count: int = 12
    has_stimulus_sensor: bool = True
    has_gripper: bool = True

    def __post_init__(self):
        if self.led_count < 0:
            raise ValueError("led_count must be >= 0")

    def satisfies(self, requires: dict) -> bool:
        for key, want in requires.items():
            have = getattr(self, key)
            if isinstance(want, bool):
                if want and not have:
                    return False
            elif have < want:
                return False
        return True


DEFAULT_CAPS = Capabilities()


@dataclass(frozen=True)
class ChildLink:
    via_port: int
    child_entry_port: int
    relative_pose: Pose2
    sub: "SubtreeDescription"


@dataclass(frozen=True)
class SubtreeDescription:
    """A node together with everything it knows about its descendants."""

    root: int
    caps: Capabilities = DEFAULT_CAPS
    children: tuple[ChildLink, ...] = ()
    _size: int = field(default=0, compare=False, repr=False, hash=False)

    def __post_init__(self):
        kids = tuple(sorted(self.children, key=lambda c: (c.via_port, c.sub.root)))
        object.__setattr__(self, "children", kids)
        object.__setattr__(self, "_size", 1 + sum(c.sub._size for c in kids))

    def __len__(self) -> int:
        return self._size

    def __iter__(self) -> Iterator["SubtreeDescription"]:
        stack = [self]
        while stack:
            d = stack.pop()
            yield d
            stack.extend(reversed([c.sub for c in d.children]))

    def __contains__(self, node: int) -> bool:
        return self.find(node) is not None

    def node_ids(self) -> list[int]:
        return [d.root for d in self]

    def find(self, node: int) -> "SubtreeDescription | None":
        for d in self:
            if d.root == node:
                return d
        return None

    def path_to(self, node: int) -> list["SubtreeDescription"] | None:
        """Descriptions from this root down to ``node`` inclusive."""
        if self.root == node:
            return [self]
        for c in self.children:
            p = c.sub.path_to(node)
            if p is not None:
                return [self] + p
        return None

    def link_to(self, child: int) -> ChildLink | None:
        for c in self.children:
            if c.sub.root == child:
                return c
        return None

    def child_at(self, port: int) -> ChildLink | None:
        for c in self.children:
            if c.via_port == port:
                return c
        return None

    def depth_of(self, node: int) -> int:
        p = self.path_to(node)
        if p is None:
            raise UnknownNode(node)
        return len(p) - 1

    def edges(self) -> set[tuple[int, int, int, int]]:
        """Directed edges as (parent, child, parent_port, child_port)."""
        out = set()
        for d in self:
            for c in d.children:
                out.add((d.root, c.sub.root, c.via_port, c.child_entry_port))
        return out

    def undirected_edges(self) -> set[frozenset]:
        return {
            frozenset([(p, pp), (c, cp)]) for p, c, pp, cp in self.edges()
        }

    def used_ports(self, entry_port: int | None = None) -> set[int]:
        used = {c.via_port for c in self.children}
        if entry_port is not None:
            used.add(entry_port)
        return used


def single(node: int, caps: Capabilities = DEFAULT_CAPS) -> SubtreeDescription:
    return SubtreeDescription(node, caps)


def _replace_children(desc: SubtreeDescription, children) -> SubtreeDescription:
    return SubtreeDescription(desc.root, desc.caps, tuple(children))


def graft(
    desc: SubtreeDescription,
    parent: int,
    parent_port: int,
    child_entry_port: int,
    sub: SubtreeDescription,
    relative_pose: Pose2 | None = None,
    parent_entry_port: int | None = None,
) -> SubtreeDescription:
    """Hang ``sub`` below ``parent`` at ``parent_port``.

    ``parent_entry_port`` is the port by which ``desc.root`` itself hangs off
    its own parent (unknown to the description), so it can be guarded when
    ``parent`` is the description root.
    """
    _check_port(parent_port)
    _check_port(child_entry_port)
    path = desc.path_to(parent)
    if path is None:
        raise UnknownParent(parent)
    mine = set(desc.node_ids())
    clash = mine.intersection(sub.node_ids())
    if clash:
        raise DuplicateNodeId(sorted(clash))
    target = path[-1]
    if len(path) > 1:
        entry = path[-2].link_to(parent).child_entry_port
    else:
        entry = parent_entry_port
    if parent_port in target.used_ports(entry):
        raise PortOccupied((parent, parent_port))
    if relative_pose is None:
        relative_pose = mated_pose(parent_port, child_entry_port)
    new = _replace_children(
        target,
        target.children + (ChildLink(parent_port, child_entry_port, relative_pose, sub),),
    )
    return _rebuild_path(path, new)


def _rebuild_path(path: list[SubtreeDescription], new: SubtreeDescription) -> SubtreeDescription:
    for anc in reversed(path[:-1]):
        kids = [
            ChildLink(c.via_port, c.child_entry_port, c.relative_pose, new)
            if c.sub.root == new.root
            else c
            for c in anc.children
        ]
        new = _replace_children(anc, kids)
    return new


def cut(desc: SubtreeDescription, node: int) -> tuple[SubtreeDescription, SubtreeDescription]:
    """Split off the subtree rooted at ``node``; returns (remainder, subtree)."""
    if desc.root == node:
        raise CannotDetachRoot(node)
    path = desc.path_to(node)
    if path is None:
        raise UnknownNode(node)
    parent = path[-2]
    new_parent = _replace_children(parent, [c for c in parent.children if c.sub.root != node])
    return _rebuild_path(path[:-1], new_parent), path[-1]


def reroot_description(desc: SubtreeDescription, new_root: int) -> SubtreeDescription:
    """Re-hang the tree from ``new_root``, reversing every edge on the path."""
    path = desc.path_to(new_root)
    if path is None:
        raise UnknownNode(new_root)
    # walk from the old root down, carrying the already-reversed upper part
    carried: SubtreeDescription | None = None
    carried_link: tuple[int, int, Pose2] | None = None
    for i, node in enumerate(path):
        nxt = path[i + 1].root if i + 1 < len(path) else None
        kids = [c for c in node.children if c.sub.root != nxt]
        if carried is not None:
            via, entry, pose = carried_link
            kids.append(ChildLink(via, entry, pose, carried))
        carried = _replace_children(node, kids)
        if nxt is not None:
            link = node.link_to(nxt)
            carried_link = (link.child_entry_port, link.via_port, link.relative_pose.inverse())
    return carried


@dataclass(frozen=True)
class BodyMap:
    """Ground-truth connection tree of one composite body."""

    tree: SubtreeDescription

    @property
    def root(self) -> int:
        return self.tree.root

    def __len__(self) -> int:
        return len(self.tree)

    def __contains__(self, node: int) -> bool:
        return node in self.tree

    def nodes(self) -> list[int]:
        return self.tree.node_ids()

    def subtree(self, node: int) -> SubtreeDescription:
        d = self.tree.find(node)
        if d is None:
            raise UnknownNode(node)
        return d

    def parent_of(self, node: int) -> tuple[int, ChildLink] | None:
        path = self.tree.path_to(node)
        if path is None:
            raise UnknownNode(node)
        if len(path) == 1:
            return None
        return path[-2].root, path[-2].link_to(node)

    def depth(self, node: int) -> int:
        return self.tree.depth_of(node)

    def free_ports(self, node: int) -> list[int]:
        d = self.subtree(node)
        up = self.parent_of(node)
        used = d.used_ports(up[1].child_entry_port if up else None)
        return [p for p in range(PORT_COUNT) if p not in used]


def attach_subtree(
    body: BodyMap,
    parent: int,
    parent_port: int,
    child_entry_port: int,
    sub: SubtreeDescription,
) -> BodyMap:
    return BodyMap(graft(body.tree, parent, parent_port, child_entry_port, sub))


def detach_subtree(body: BodyMap, node: int) -> tuple[BodyMap, SubtreeDescription]:
    rest, sub = cut(body.tree, node)
    return BodyMap(rest), sub


def reroot(body: BodyMap, new_root: int) -> BodyMap:
    if new_root == body.root:
        return body
    return BodyMap(reroot_description(body.tree, new_root))


def world_poses(body: BodyMap | SubtreeDescription, root_world_pose: Pose2 = Pose2()) -> dict[int, Pose2]:
    from vnsim import kernels

    tree = body.tree if isinstance(body, BodyMap) else body
    order, parents, rel = flatten(tree)
    out = kernels.compose_tree(parents, rel, root_world_pose.as_tuple())
    return {nid: Pose2(*p) for nid, p in zip(order, out)}


def flatten(tree: SubtreeDescription) -> tuple[list[int], list[int], list[tuple[float, float, float]]]:
    """Preorder node ids, parent indices (-1 for root) and relative poses."""
    order: list[int] = []
    parents: list[int] = []
    rel: list[tuple[float, float, float]] = []
    stack: list[tuple[SubtreeDescription, int, Pose2]] = [(tree, -1, Pose2())]
    while stack:
        d, pi, pose = stack.pop()
        idx = len(order)
        order.append(d.root)
        parents.append(pi)
        rel.append(pose.as_tuple())
        for c in reversed(d.children):
            stack.append((c.sub, idx, c.relative_pose))
    return order, parents, rel


@dataclass(frozen=True)
class Violation:
    kind: str
    node: int | None = None
    detail: str = ""


def validate(body: BodyMap | SubtreeDescription, root: int | None = None) -> list[Violation]:
    tree = body.tree if isinstance(body, BodyMap) else body
    out: list[Violation] = []
    if root is not None and root != tree.root:
        out.append(Violation("RootMismatch", root, f"tree rooted at {tree.root}"))
    seen: set[int] = set()

    def visit(d: SubtreeDescription, entry: int | None) -> None:
        if not isinstance(d.root, int) or d.root < 0:
            out.append(Violation("InvalidNodeId", d.root))
        if d.root in seen:
            out.append(Violation("DuplicateNodeId", d.root))
        seen.add(d.root)
        used = {} if entry is None else {entry: None}
        for c in d.children:
            for p in (c.via_port, c.child_entry_port):
                if not 0 <= p < PORT_COUNT:
                    out.append(Violation("InvalidPort", d.root, f"port {p}"))
            if c.via_port in used:
                out.append(Violation("PortOccupied", d.root, f"port {c.via_port}"))
            used[c.via_port] = c.sub.root
            visit(c.sub, c.child_entry_port)

    visit(tree, None)
    return out
