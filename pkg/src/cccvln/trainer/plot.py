"""Hand-written SVG line charts for run logs."""
from __future__ import annotations

import math
from xml.sax.saxutils import escape

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f")


def line_chart(series: dict[str, list[tuple[float, float]]], title: str = "", width: int = 640,
               height: int = 360, xlabel: str = "iteration") -> str:
    """One polyline per named series of (x, y) points."""
    pts = [(x, y) for s in series.values() for x, y in s if math.isfinite(y)]
    ml, mr, mt, mb = 60, 150, 30, 40
    pw, ph = width - ml - mr, height - mt - mb
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">',
           f'<rect width="{width}" height="{height}" fill="white"/>',
           f'<text x="{ml}" y="18" font-size="13">{escape(title)}</text>']
    if not pts:
        out.append(f'<text x="{ml}" y="{mt + ph / 2}">no data</text></svg>')
        return "\n".join(out) + "\n"
    x0, x1 = min(p[0] for p in pts), max(p[0] for p in pts)
    y0, y1 = min(p[1] for p in pts), max(p[1] for p in pts)
    if x1 == x0:
        x1 = x0 + 1
    if y1 == y0:
        y0, y1 = y0 - 0.5, y1 + 0.5

    def sx(x):
        return ml + (x - x0) / (x1 - x0) * pw

    def sy(y):
        return mt + ph - (y - y0) / (y1 - y0) * ph

    out.append(f'<rect x="{ml}" y="{mt}" width="{pw}" height="{ph}" fill="none" stroke="#444"/>')
    for k in range(5):
        yv = y0 + (y1 - y0) * k / 4
        xv = x0 + (x1 - x0) * k / 4
        out.append(f'<text x="{ml - 6}" y="{sy(yv) + 4:.1f}" text-anchor="end">{yv:.3g}</text>')
        out.append(f'<text x="{sx(xv):.1f}" y="{mt + ph + 16}" text-anchor="middle">{xv:.4g}</text>')
    out.append(f'<text x="{ml + pw / 2}" y="{height - 6}" text-anchor="middle">{escape(xlabel)}</text>')
    for n, (name, s) in enumerate(series.items()):
        color = PALETTE[n % len(PALETTE)]
        good = [(x, y) for x, y in s if math.isfinite(y)]
        if good:
            path = " ".join(f"{sx(x):.2f},{sy(y):.2f}" for x, y in good)
            out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{path}"/>')
        ly = mt + 14 * n + 8
        out.append(f'<line x1="{ml + pw + 10}" y1="{ly}" x2="{ml + pw + 28}" y2="{ly}" stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{ml + pw + 32}" y="{ly + 4}">{escape(name)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def runlog_charts(rows: list[dict]) -> dict[str, str]:
    """Loss curves and (if present) evaluation curves from parsed run-log rows."""
    loss_cols = ("il", "rl", "speaker", "cycle_A", "cycle_X", "cycle_Au", "cf_A", "cf_X", "creator", "disc")
    eval_cols = ("SR", "OR", "SPL")
    text_cols = ("Bleu-1", "Bleu-4", "Rouge")
    charts = {}
    for name, cols in (("losses", loss_cols), ("navigation", eval_cols), ("text", text_cols)):
        series = {c: [(r["iteration"], r[c]) for r in rows if r.get(c) is not None] for c in cols}
        series = {k: v for k, v in series.items() if v}
        if series:
            charts[name] = line_chart(series, title=name)
    return charts
