"""Time the compiled and pure-Python kernels side by side.

Usage: python3 benchmarks/bench_kernels.py [--repeat N] [--skip-scenario]

Prints a table of per-call times for each kernel at a few body sizes, then
the wall time of a full fig2 run under each backend (each in a subprocess,
since the backend is chosen at import).
"""
from __future__ import annotations

import argparse
import math
import os
import random
import subprocess
import sys
import tempfile
import timeit

from vnsim import kernels


def inputs(n: int, seed: int = 0):
    rng = random.Random(seed)
    parents = [-1] + [rng.randrange(i) for i in range(1, n)]
    rel = [(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-3, 3)) for _ in range(n)]
    poses = [(rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(-3, 3)) for _ in range(n)]
    angles = [2 * math.pi * j / 12 for j in range(12)]
    values = [rng.random() for _ in range(12 * n)]
    return parents, rel, poses, angles, values


def per_call(fn, repeat: int) -> float:
    number = 200
    return min(timeit.repeat(fn, number=number, repeat=repeat)) / number


def kernel_table(repeat: int):
    backends = dict(kernels.backends())
    print(f"{'kernel':<12}{'modules':>8}" + "".join(f"{name + ' (us)':>16}" for name in backends) + f"{'speedup':>10}")
    for n in (5, 20, 100):
        parents, rel, poses, angles, values = inputs(n)
        cases = {
            "compose": lambda m: m.compose_tree(parents, rel, (0.1, 0.2, 0.3)),
            "led_dist2": lambda m: m.led_dist2(poses, angles, 0.085, 0.5, -0.5),
            "k_smallest": lambda m: m.k_smallest(values, 3),
        }
        for name, case in cases.items():
            times = {b: per_call(lambda m=mod: case(m), repeat) for b, mod in backends.items()}
            row = f"{name:<12}{n:>8}" + "".join(f"{t * 1e6:>16.2f}" for t in times.values())
            if "cython" in times:
                row += f"{times['python'] / times['cython']:>9.1f}x"
            print(row)


def scenario_times(runs: int = 3):
    """Best-of-``runs`` wall time; the event loop and tracing dominate, so expect a small gap."""
    out = {}
    with tempfile.TemporaryDirectory() as tmp:
        for name, pure in (("cython", "0"), ("python", "1")):
            if name == "cython" and kernels.compiled_backend is None:
                continue
            env = dict(os.environ, VNSIM_PURE_PYTHON=pure)
            code = (
                "import time; from vnsim.cli import cmd_run; t=time.perf_counter(); "
                f"cmd_run('fig2', 1, None, {os.path.join(tmp, name)!r}); print(time.perf_counter()-t)"
            )
            best = math.inf
            for _ in range(runs):
                res = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
                best = min(best, float(res.stdout.strip().splitlines()[-1]))
            out[name] = best
    return out


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--skip-scenario", action="store_true")
    args = ap.parse_args()
    print(f"active backend: {kernels.BACKEND}")
    kernel_table(args.repeat)
    if not args.skip_scenario:
        for name, t in scenario_times().items():
            print(f"fig2 end to end, {name}: {t:.2f} s (best of 3)")


if __name__ == "__main__":
    main()
