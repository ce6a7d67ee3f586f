"""Render trace snapshots as SVG frames."""
from __future__ import annotations

import math
import os
from xml.sax.saxutils import escape

from vnsim.topology import MODULE_RADIUS
from vnsim.trace import MalformedTrace, TraceRecord

LED_COUNT = 12
SCALE = 200.0  # px per metre


def frame_times(t_end: float, every: float) -> list[float]:
    if every <= 0:
        raise ValueError("frame interval must be positive")
    n = math.floor(t_end / every + 1e-9) + 1
    return [round(i * every, 9) for i in range(n)]


def _bounds(snaps: list[TraceRecord]):
    xs, ys = [], []
    for s in snaps:
        for _, x, y, _, _ in s.payload["nodes"]:
            xs.append(x)
            ys.append(y)
        if s.payload.get("stimulus"):
            xs.append(s.payload["stimulus"][0])
            ys.append(s.payload["stimulus"][1])
    m = 4 * MODULE_RADIUS
    return min(xs) - m, min(ys) - m, max(xs) + m, max(ys) + m


def render_frame(snap: TraceRecord, leds: dict[int, int], bounds, t: float) -> str:
    x0, y0, x1, y1 = bounds
    w, h = (x1 - x0) * SCALE, (y1 - y0) * SCALE

    def px(x, y):
        return (x - x0) * SCALE, (y1 - y) * SCALE

    nodes = {n: (x, y, th, role) for n, x, y, th, role in snap.payload["nodes"]}
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{w:.1f}" height="{h:.1f}" viewBox="0 0 {w:.1f} {h:.1f}">',
        f'<rect width="{w:.1f}" height="{h:.1f}" fill="white"/>',
        f'<text x="6" y="16" font-size="12" font-family="monospace">t={t:.2f}s</text>',
    ]
    for a, b in snap.payload["edges"]:
        if a in nodes and b in nodes:
            (ax, ay), (bx, by) = px(*nodes[a][:2]), px(*nodes[b][:2])
            out.append(f'<line class="edge" x1="{ax:.2f}" y1="{ay:.2f}" x2="{bx:.2f}" y2="{by:.2f}" stroke="#555" stroke-width="3"/>')
    r = MODULE_RADIUS * SCALE
    for n in sorted(nodes):
        x, y, th, role = nodes[n]
        cx, cy = px(x, y)
        fill = {"B": "#f4a259", "M": "#8ecae6", "X": "#bbbbbb"}[role]
        stroke = "#c0392b" if role == "B" else "#264653"
        out.append(f'<circle class="module {"brain" if role == "B" else "member"}" data-node="{n}" cx="{cx:.2f}" '
                   f'cy="{cy:.2f}" r="{r:.2f}" fill="{fill}" stroke="{stroke}" stroke-width="{3 if role == "B" else 1}"/>')
        hx, hy = px(x + 0.6 * MODULE_RADIUS * math.cos(th), y + 0.6 * MODULE_RADIUS * math.sin(th))
        out.append(f'<line x1="{cx:.2f}" y1="{cy:.2f}" x2="{hx:.2f}" y2="{hy:.2f}" stroke="#264653"/>')
        out.append(f'<text x="{cx - 4:.2f}" y="{cy + 4:.2f}" font-size="10" font-family="monospace">{escape(str(n))}</text>')
        mask = leds.get(n, 0)
        for j in range(LED_COUNT):
            if mask >> j & 1:
                a = th + 2 * math.pi * j / LED_COUNT
                lx, ly = px(x + MODULE_RADIUS * math.cos(a), y + MODULE_RADIUS * math.sin(a))
                out.append(f'<circle class="led" data-node="{n}" data-led="{j}" cx="{lx:.2f}" cy="{ly:.2f}" r="3" fill="#2a9d8f"/>')
    stim = snap.payload.get("stimulus")
    if stim:
        sx, sy = px(*stim)
        out.append(f'<circle class="stimulus" cx="{sx:.2f}" cy="{sy:.2f}" r="6" fill="#38b000" stroke="#1b5e20"/>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def replay(records: list[TraceRecord], out_dir, every: float) -> int:
    """Write one SVG per frame interval; returns the number of frames."""
    snaps = [r for r in records if r.kind == "Snapshot"]
    if not snaps:
        raise MalformedTrace("trace has no pose snapshots")
    header = next((r for r in records if r.kind == "Run"), None)
    t_end = header.payload.get("t_end") if header is not None else None
    if t_end is None:
        t_end = records[-1].time
    times = frame_times(t_end, every)
    bounds = _bounds(snaps)
    os.makedirs(out_dir, exist_ok=True)
    leds: dict[int, int] = {}
    si = ri = 0
    for k, t in enumerate(times):
        while ri < len(records) and records[ri].time <= t + 1e-9:
            r = records[ri]
            if r.kind == "LedSet":
                leds[r.node] = r.payload["mask"]
            ri += 1
        while si + 1 < len(snaps) and snaps[si + 1].time <= t + 1e-9:
            si += 1
        svg = render_frame(snaps[si], leds, bounds, t)
        with open(os.path.join(out_dir, f"frame_{k:05d}.svg"), "w", encoding="utf-8") as fh:
            fh.write(svg)
    return len(times)
