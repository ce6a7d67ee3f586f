"""Both kernel backends against numpy oracles."""
import math
import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vnsim import kernels

BACKENDS = dict(kernels.backends())
finite = st.floats(-10, 10, allow_nan=False, allow_infinity=False)
angle = st.floats(-math.pi, math.pi, allow_nan=False)
pose = st.tuples(finite, finite, angle)


def mat(p):
    c, s = math.cos(p[2]), math.sin(p[2])
    return np.array([[c, -s, p[0]], [s, c, p[1]], [0.0, 0.0, 1.0]])


@st.composite
def flat_trees(draw):
    n = draw(st.integers(1, 20))
    parents = [-1] + [draw(st.integers(0, i - 1)) for i in range(1, n)]
    rel = [draw(pose) for _ in range(n)]
    return parents, rel, draw(pose)


@pytest.fixture(params=sorted(BACKENDS))
def backend(request):
    return BACKENDS[request.param]


def test_active_backend_is_reported():
    assert kernels.BACKEND in BACKENDS


@settings(max_examples=150, deadline=None)
@given(flat_trees())
def test_compose_tree_matches_matrix_stack(tree):
    parents, rel, root = tree
    oracle = [None] * len(parents)
    for i, p in enumerate(parents):
        oracle[i] = mat(root) if p < 0 else oracle[p] @ mat(rel[i])
    for name, mod in BACKENDS.items():
        got = mod.compose_tree(parents, rel, root)
        for g, m in zip(got, oracle):
            assert g[0] == pytest.approx(m[0, 2], abs=1e-9), name
            assert g[1] == pytest.approx(m[1, 2], abs=1e-9), name
            d = math.remainder(g[2] - math.atan2(m[1, 0], m[0, 0]), 2 * math.pi)
            assert abs(d) < 1e-9, name
            assert -math.pi < g[2] <= math.pi


@settings(max_examples=150, deadline=None)
@given(st.lists(pose, min_size=1, max_size=8), st.integers(1, 16), st.floats(0.01, 0.2), finite, finite)
def test_led_dist2_matches_numpy(poses, count, radius, sx, sy):
    angles = [2 * math.pi * j / count for j in range(count)]
    p = np.array(poses)
    a = p[:, 2:3] + np.array(angles)[None, :]
    lx = p[:, 0:1] + radius * np.cos(a)
    ly = p[:, 1:2] + radius * np.sin(a)
    oracle = ((lx - sx) ** 2 + (ly - sy) ** 2).ravel()
    for mod in BACKENDS.values():
        assert np.allclose(mod.led_dist2(poses, angles, radius, sx, sy), oracle, rtol=0, atol=1e-9)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.integers(0, 5).map(float), max_size=40), st.integers(-2, 45))
def test_k_smallest_is_stable_argsort_prefix(values, k):
    oracle = list(np.argsort(np.array(values, dtype=float), kind="stable")[: max(k, 0)])
    for mod in BACKENDS.values():
        assert mod.k_smallest(values, k) == oracle


def test_backends_agree_on_a_large_body(backend):
    rng = np.random.default_rng(0)
    n = 200
    parents = [-1] + [int(rng.integers(0, i)) for i in range(1, n)]
    rel = [tuple(map(float, r)) for r in rng.uniform(-1, 1, size=(n, 3))]
    ref = kernels.python_backend.compose_tree(parents, rel, (0.5, -0.5, 1.0))
    got = backend.compose_tree(parents, rel, (0.5, -0.5, 1.0))
    assert np.allclose(np.array(got), np.array(ref), atol=1e-9)


@pytest.mark.skipif(kernels.compiled_backend is None, reason="compiled kernels not built")
def test_scenario_trace_is_identical_across_backends(tmp_path):
    traces = []
    for pure in ("0", "1"):
        out = tmp_path / f"trace{pure}.jsonl"
        env = dict(os.environ, VNSIM_PURE_PYTHON=pure)
        subprocess.run([sys.executable, "-m", "vnsim", "run", "--scenario", "fig3", "--trace-out", str(out)],
                       env=env, check=True, capture_output=True)
        traces.append(out.read_bytes())
    assert traces[0] == traces[1]
