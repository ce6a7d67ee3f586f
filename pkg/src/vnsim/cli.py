"""Command-line entry points: run, check and replay."""
from __future__ import annotations

import argparse
import logging
import os
import sys
from importlib import resources

from vnsim.check import check_records
from vnsim.director import run_scenario
from vnsim.scenario import ScenarioError, ValidationError, load_scenario
from vnsim.svg import replay
from vnsim.trace import MalformedTrace, TraceSink, load_trace

SHIPPED = ("fig1e", "fig2", "fig3", "excise", "lossy")


def shipped_path(name: str) -> str:
    return str(resources.files("vnsim") / "scenarios" / f"{name}.yaml")


def resolve_scenario(arg: str) -> str:
    """A path, or the name of a shipped scenario."""
    if os.path.exists(arg) or arg not in SHIPPED:
        return arg
    return shipped_path(arg)


def cmd_run(scenario: str, seed: int | None, until: float | None, trace_out: str, svg_out: str | None = None,
            every: float = 0.5) -> int:
    sc = load_scenario(resolve_scenario(scenario))
    params = sc.sim_params(seed)
    with open(trace_out, "w", encoding="utf-8", newline="\n") as fh:
        sink = TraceSink(stream=fh, keep=svg_out is not None)
        w, _ = run_scenario(sc, params, until, sink)
    status = 1 if w.check_failures or sink.counts.get("CheckFail") else 0
    if svg_out is not None:
        replay(sink.records, svg_out, every)
    print(f"{sc.name}: t={w.clock:g} checks={w.checks_run} failures={sink.counts.get('CheckFail', 0)}")
    return status


def cmd_check(trace: str) -> int:
    report = check_records(load_trace(trace))
    print(report.summary())
    return 0 if report.ok else 1


def cmd_replay(trace: str, out: str, every: float) -> int:
    n = replay(load_trace(trace), out, every)
    print(f"{n} frames written to {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="vnsim", description="Modular robot nervous-system simulator")
    p.add_argument("-v", "--verbose", action="store_true", help="log protocol warnings")
    sub = p.add_subparsers(dest="cmd", required=True)
    r = sub.add_parser("run", help="run a scenario and write its trace")
    r.add_argument("--scenario", required=True, help=f"YAML file or one of {', '.join(SHIPPED)}")
    r.add_argument("--seed", type=int, default=None)
    r.add_argument("--until", type=float, default=None, help="end time in seconds (default: scenario's)")
    r.add_argument("--trace-out", required=True)
    r.add_argument("--svg-out", default=None, help="directory for SVG frames")
    r.add_argument("--every", type=float, default=0.5, help="SVG frame interval with --svg-out")
    c = sub.add_parser("check", help="re-verify a trace offline")
    c.add_argument("--trace", required=True)
    s = sub.add_parser("replay", help="render a trace as SVG frames")
    s.add_argument("--trace", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--every", type=float, default=0.5)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.verbose else logging.ERROR, format="%(levelname)s %(message)s")
    try:
        if args.cmd == "run":
            return cmd_run(args.scenario, args.seed, args.until, args.trace_out, args.svg_out, args.every)
        if args.cmd == "check":
            return cmd_check(args.trace)
        return cmd_replay(args.trace, args.out, args.every)
    except ValidationError as exc:
        for e in exc.errors:
            print(f"error: {e}", file=sys.stderr)
        return 2
    except (OSError, ScenarioError, MalformedTrace, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
