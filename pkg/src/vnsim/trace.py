"""Line-delimited trace records.

One JSON object per line, keys in the order ``t, node, kind`` followed by
the kind-specific payload. Times are rounded to nanoseconds.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import IO, Iterable

KINDS = (
    "Run",
    "MsgSend",
    "MsgDeliver",
    "MsgDrop",
    "RoleChange",
    "Attach",
    "Detach",
    "FaultInjected",
    "FaultDetected",
    "LedSet",
    "Command",
    "CheckPass",
    "CheckFail",
    "Snapshot",
    "Quiescent",
    "Action",
    "ActionDone",
    "Mode",
    "Warning",
)


class MalformedTrace(ValueError):
    pass


@dataclass
class TraceRecord:
    time: float
    node: int | None
    kind: str
    payload: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        out = {"t": round(self.time, 9), "node": self.node, "kind": self.kind}
        out.update(self.payload)
        return out

    def to_line(self) -> str:
        return json.dumps(self.to_dict(), separators=(",", ":"), allow_nan=False)

    @classmethod
    def from_dict(cls, d: dict) -> "TraceRecord":
        d = dict(d)
        try:
            t = d.pop("t")
            node = d.pop("node")
            kind = d.pop("kind")
        except KeyError as exc:
            raise MalformedTrace(f"record missing {exc}") from None
        if kind not in KINDS:
            raise MalformedTrace(f"unknown record kind {kind!r}")
        return cls(float(t), node, kind, d)


class TraceSink:
    """Collects records in memory and optionally streams them to a file."""

    def __init__(self, stream: IO[str] | None = None, keep: bool = True):
        self.stream = stream
        self.keep = keep
        self.records: list[TraceRecord] = []
        self.counts: dict[str, int] = {}

    def emit(self, time: float, node: int | None, kind: str, **payload) -> TraceRecord:
        rec = TraceRecord(time, node, kind, payload)
        self.counts[kind] = self.counts.get(kind, 0) + 1
        if self.keep:
            self.records.append(rec)
        if self.stream is not None:
            self.stream.write(rec.to_line())
            self.stream.write("\n")
        return rec

    def of_kind(self, kind: str) -> list[TraceRecord]:
        return [r for r in self.records if r.kind == kind]

    def lines(self) -> list[str]:
        return [r.to_line() for r in self.records]


def read_trace(lines: Iterable[str]) -> list[TraceRecord]:
    out = []
    last = float("-inf")
    for n, line in enumerate(lines, start=1):
        line = line.strip()
        if not line:
            continue
        try:
            d = json.loads(line)
        except json.JSONDecodeError as exc:
            raise MalformedTrace(f"line {n}: {exc}") from None
        if not isinstance(d, dict):
            raise MalformedTrace(f"line {n}: not an object")
        try:
            rec = TraceRecord.from_dict(d)
        except MalformedTrace as exc:
            raise MalformedTrace(f"line {n}: {exc}") from None
        if rec.time < last:
            raise MalformedTrace(f"line {n}: time goes backwards")
        last = rec.time
        out.append(rec)
    return out


def load_trace(path) -> list[TraceRecord]:
    with open(path, encoding="utf-8") as fh:
        return read_trace(fh)
