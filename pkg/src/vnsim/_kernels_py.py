"""Pure-Python numeric kernels. Same API as the compiled ``_kernels``."""
import heapq
import math

_TWO_PI = 2.0 * math.pi


def _wrap(a):
    a = math.remainder(a, _TWO_PI)
    if a <= -math.pi:
        a += _TWO_PI
    return a


def compose_tree(parents, rel, root):
    """World poses for a preorder-flattened tree.

    ``parents[i]`` is the index of node i's parent (-1 for the root) and must
    precede i. ``rel[i]`` is node i's pose in its parent frame; the root entry
    is ignored and replaced by ``root``.
    """
    n = len(parents)
    out = [None] * n
    for i in range(n):
        p = parents[i]
        if p < 0:
            out[i] = (root[0], root[1], _wrap(root[2]))
            continue
        px, py, pt = out[p]
        rx, ry, rt = rel[i]
        c, s = math.cos(pt), math.sin(pt)
        out[i] = (px + c * rx - s * ry, py + s * rx + c * ry, _wrap(pt + rt))
    return out


def led_dist2(poses, angles, radius, sx, sy):
    """Squared distance from every LED of every module to the point (sx, sy).

    Result is flattened module-major: index = module * len(angles) + led.
    """
    out = []
    for x, y, t in poses:
        for a in angles:
            lx = x + radius * math.cos(t + a)
            ly = y + radius * math.sin(t + a)
            out.append((lx - sx) ** 2 + (ly - sy) ** 2)
    return out


def k_smallest(values, k):
    """Indices of the k smallest values, ties broken by lower index."""
    if k <= 0:
        return []
    return heapq.nsmallest(k, range(len(values)), key=lambda i: (values[i], i))
