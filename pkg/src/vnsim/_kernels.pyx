# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled numeric kernels. Mirrors ``_kernels_py`` exactly."""
from libc.math cimport cos, sin, remainder, M_PI
from libc.stdlib cimport malloc, free

cdef double _TWO_PI = 2.0 * M_PI


cdef inline double _wrap(double a) nogil:
    a = remainder(a, _TWO_PI)
    if a <= -M_PI:
        a += _TWO_PI
    return a


def compose_tree(parents, rel, root):
    cdef Py_ssize_t n = len(parents), i
    cdef long p
    cdef double c, s, rx, ry, rt, px, py, pt
    cdef double *buf = <double *> malloc(3 * n * sizeof(double)) if n else NULL
    out = [None] * n
    try:
        for i in range(n):
            p = parents[i]
            if p < 0:
                buf[3 * i] = root[0]
                buf[3 * i + 1] = root[1]
                buf[3 * i + 2] = _wrap(root[2])
            else:
                rx, ry, rt = rel[i]
                px = buf[3 * p]
                py = buf[3 * p + 1]
                pt = buf[3 * p + 2]
                c = cos(pt)
                s = sin(pt)
                buf[3 * i] = px + c * rx - s * ry
                buf[3 * i + 1] = py + s * rx + c * ry
                buf[3 * i + 2] = _wrap(pt + rt)
            out[i] = (buf[3 * i], buf[3 * i + 1], buf[3 * i + 2])
    finally:
        free(buf)
    return out


def led_dist2(poses, angles, double radius, double sx, double sy):
    cdef Py_ssize_t m = len(angles), j
    cdef double x, y, t, lx, ly
    cdef double *ang = <double *> malloc(m * sizeof(double)) if m else NULL
    out = []
    try:
        for j in range(m):
            ang[j] = angles[j]
        for pose in poses:
            x, y, t = pose
            for j in range(m):
                lx = x + radius * cos(t + ang[j])
                ly = y + radius * sin(t + ang[j])
                out.append((lx - sx) * (lx - sx) + (ly - sy) * (ly - sy))
    finally:
        free(ang)
    return out


def k_smallest(values, Py_ssize_t k):
    cdef Py_ssize_t n = len(values), i, j, filled = 0
    cdef double v
    if k > n:
        k = n
    if k <= 0:
        return []
    cdef double *vals = <double *> malloc(n * sizeof(double))
    cdef Py_ssize_t *best = <Py_ssize_t *> malloc(k * sizeof(Py_ssize_t))
    try:
        for i in range(n):
            vals[i] = values[i]
        # insertion into a sorted window of size k; strict < keeps lower index first on ties
        for i in range(n):
            v = vals[i]
            if filled == k and not v < vals[best[k - 1]]:
                continue
            j = filled if filled < k else k - 1
            while j > 0 and v < vals[best[j - 1]]:
                best[j] = best[j - 1]
                j -= 1
            best[j] = i
            if filled < k:
                filled += 1
        return [best[i] for i in range(filled)]
    finally:
        free(vals)
        free(best)
