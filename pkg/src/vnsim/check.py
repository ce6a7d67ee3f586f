"""Offline re-verification of a recorded trace."""
from __future__ import annotations

from dataclasses import dataclass, field

from vnsim.trace import TraceRecord


@dataclass
class Finding:
    check: str
    ok: bool
    detail: str = ""


@dataclass
class CheckReport:
    findings: list[Finding] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return all(f.ok for f in self.findings)

    def failures(self) -> list[Finding]:
        return [f for f in self.findings if not f.ok]

    def add(self, check: str, ok: bool, detail: str = ""):
        self.findings.append(Finding(check, ok, detail))

    def summary(self) -> str:
        lines = [f"{'PASS' if f.ok else 'FAIL'} {f.check}{': ' + f.detail if f.detail else ''}" for f in self.findings]
        lines += [f"WARN {w}" for w in self.warnings]
        return "\n".join(lines)


def _merges(recs: list[TraceRecord], report: CheckReport):
    """One MergeAnnounce origination per Attach, relayed at most depth(parent) hops."""
    attaches: dict[int, dict] = {}
    order: list[dict] = []
    for i, r in enumerate(recs):
        if r.kind == "Attach":
            m = {"at": i, "t": r.time, "child": r.payload["child"], "parent": r.payload["parent"],
                 "depth": r.payload["depth"], "orig": 0, "max_hops": 0}
            attaches[m["child"]] = m
            order.append(m)
        elif r.kind == "MsgSend" and r.payload.get("type") == "MergeAnnounce":
            root = r.payload["sub_root"]
            m = attaches.get(root)
            if m is None:
                report.add("merge", False, f"MergeAnnounce at t={r.time} for {root} without an Attach")
                continue
            hops = r.payload["hops"]
            if hops == 0:
                if r.payload["src"] == root:
                    m["orig"] += 1
            m["max_hops"] = max(m["max_hops"], hops)
    bad = 0
    for m in order:
        where = f"merge of {m['child']} onto {m['parent']} at t={m['t']}"
        if m["orig"] != 1:
            bad += 1
            report.add("merge", False, f"{where}: {m['orig']} MergeAnnounce originations")
        elif m["max_hops"] > m["depth"]:
            bad += 1
            report.add("merge", False, f"{where}: relayed {m['max_hops']} hops, depth {m['depth']}")
    if not bad:
        report.add("merge", True, f"{len(order)} merges, one announcement each")


def _splits(recs: list[TraceRecord], report: CheckReport):
    """Detached side is silent until its root is brain; one notice per remaining hop."""
    bad = 0
    n = 0
    roles: dict[int, str] = {}
    dead: set[int] = set()
    for i, r in enumerate(recs):
        if r.kind == "RoleChange":
            roles[r.node] = r.payload["to"]
        elif r.kind == "FaultInjected":
            dead.add(r.node)
        if r.kind != "Detach":
            continue
        n += 1
        child = r.payload["child"]
        detached = set(r.payload["nodes"])
        depth = r.payload["depth"]
        where = f"split of {child} from {r.payload['parent']} at t={r.time}"
        # a fault-triggered release is traced after the detector's own takeover
        became = i if child in dead or roles.get(child, "Brain") == "Brain" else None
        notices = 0
        lost = False
        for j in range(i + 1, len(recs)):
            q = recs[j]
            if became is None:
                if q.kind == "RoleChange" and q.node == child and q.payload["to"] == "Brain":
                    became = j
                elif q.kind == "MsgSend" and q.payload.get("src") in detached and q.payload.get("type") != "Heartbeat":
                    bad += 1
                    report.add("split", False, f"{where}: node {q.payload['src']} sent {q.payload['type']} before taking over")
                    became = j
            if q.kind in ("Attach", "Detach") and q.payload.get("child") == child:
                break
            if q.kind == "MsgSend" and q.payload.get("type") == "SplitNotice" and q.payload["detached_root"] == child:
                notices += 1
            if q.kind == "MsgDrop" and q.payload.get("msg") == "SplitNotice":
                lost = True
        if became is None:
            bad += 1
            report.add("split", False, f"{where}: detached root never became brain")
        elif notices > depth or (notices < depth and not lost):
            bad += 1
            report.add("split", False, f"{where}: {notices} SplitNotice messages for depth {depth}")
    if not bad:
        report.add("split", True, f"{n} splits, no discovery traffic")


def _brains(recs: list[TraceRecord], report: CheckReport):
    markers = [r for r in recs if r.kind == "Quiescent"]
    bad = [
        f"t={r.time}: component {c['root']} has brains {c['brains']}"
        for r in markers
        for c in r.payload["components"]
        if c["brains"] != [c["root"]]
    ]
    for b in bad:
        report.add("single-brain", False, b)
    if not bad:
        report.add("single-brain", True, f"{len(markers)} quiescence markers")


def _fifo(recs: list[TraceRecord], report: CheckReport):
    last: dict[tuple[int, int], int] = {}
    bad = 0
    for r in recs:
        if r.kind != "MsgDeliver":
            continue
        key = (r.payload["src"], r.payload["dst"])
        mid = r.payload["id"]
        if mid < last.get(key, -1):
            bad += 1
            report.add("fifo", False, f"link {key[0]}->{key[1]}: message {mid} overtook {last[key]}")
        last[key] = max(mid, last.get(key, -1))
    if not bad:
        report.add("fifo", True, f"{len(last)} directed links")


def _online(recs: list[TraceRecord], report: CheckReport):
    fails = [r for r in recs if r.kind == "CheckFail"]
    for r in fails:
        report.add("online", False, f"t={r.time}: {r.payload.get('check')} {r.payload.get('problems')}")
    if not fails:
        passes = sum(1 for r in recs if r.kind == "CheckPass")
        report.add("online", True, f"{passes} in-run checks passed")


def check_records(recs: list[TraceRecord]) -> CheckReport:
    report = CheckReport()
    if not recs:
        report.warnings.append("empty trace: nothing to check")
        return report
    _merges(recs, report)
    _splits(recs, report)
    _brains(recs, report)
    _fifo(recs, report)
    _online(recs, report)
    return report
