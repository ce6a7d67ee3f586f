"""Shared builders for randomized worlds and bodies."""
from __future__ import annotations

import math
import random

import numpy as np

from vnsim.simnet import SimParams, World
from vnsim.topology import PORT_COUNT, Pose2, SubtreeDescription, graft, single


def pose_matrix(p) -> np.ndarray:
    x, y, th = p
    c, s = math.cos(th), math.sin(th)
    return np.array([[c, -s, x], [s, c, y], [0.0, 0.0, 1.0]])


def matrix_pose(m: np.ndarray) -> tuple[float, float, float]:
    return float(m[0, 2]), float(m[1, 2]), math.atan2(m[1, 0], m[0, 0])


def oracle_world_poses(desc: SubtreeDescription, root=(0.0, 0.0, 0.0)) -> dict[int, np.ndarray]:
    """Homogeneous-matrix composition down the tree."""
    out = {}

    def visit(d, m):
        out[d.root] = m
        for c in d.children:
            r = c.relative_pose
            visit(c.sub, m @ pose_matrix((r.x, r.y, r.theta)))

    visit(desc, pose_matrix(root))
    return out


def random_tree(rng: random.Random, ids: list[int]) -> SubtreeDescription:
    """Random tree over ``ids`` (first id is the root) using mated port geometry."""
    desc = single(ids[0])
    used = {ids[0]: set()}
    for n in ids[1:]:
        while True:
            parent = rng.choice(list(used))
            free = [p for p in range(PORT_COUNT) if p not in used[parent]]
            if free:
                break
        port = rng.choice(free)
        entry = rng.randrange(PORT_COUNT)
        desc = graft(desc, parent, port, entry, single(n))
        used[parent].add(port)
        used[n] = {entry}
    return desc


def grow(world: World, rng: random.Random, ids: list[int]) -> None:
    """Attach ``ids[1:]`` one by one onto random free ports of the body rooted at ``ids[0]``."""
    placed = [ids[0]]
    for n in ids[1:]:
        while True:
            parent = rng.choice(placed)
            free = world.body_of(parent).free_ports(parent)
            if free:
                break
        world.attach(n, rng.randrange(PORT_COUNT), parent, rng.choice(free))
        placed.append(n)


def fresh_world(n: int, seed: int, **params) -> World:
    w = World([(i, None, Pose2(0.3 * i, 0.0, 0.0)) for i in range(n)], SimParams(seed=seed, **params))
    w.start()
    return w


def settle(world: World, extra: float = 0.0, limit: float = 5.0) -> None:
    """Run until quiescent (plus ``extra`` seconds)."""
    end = world.clock + limit
    world.run_until(world.clock + 0.05)
    while not world.is_quiescent() and world.clock < end:
        world.run_until(world.clock + 0.05)
    if extra:
        world.run_until(world.clock + extra)
