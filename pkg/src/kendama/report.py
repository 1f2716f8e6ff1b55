"""Hand-written SVG charts of a sweep summary (no plotting dependency)."""

from __future__ import annotations

import math
from pathlib import Path
from xml.sax.saxutils import escape

WIDTH, HEIGHT = 480, 320
MARGIN = dict(left=64, right=16, top=32, bottom=48)
REQUIRED = ("n", "hit_center_pct", "catch_pct", "impact_vz_mean", "impact_vz_std")


class ReportError(ValueError):
    pass


def _ticks(lo: float, hi: float, count: int = 5) -> list[float]:
    if hi <= lo:
        return [lo]
    raw = (hi - lo) / count
    mag = 10 ** math.floor(math.log10(raw))
    step = min((m * mag for m in (1, 2, 5, 10) if m * mag >= raw), default=raw)
    start = math.ceil(lo / step) * step
    out = []
    v = start
    while v <= hi + 1e-9 * step:
        out.append(round(v, 10))
        v += step
    return out


def _fmt(v: float) -> str:
    return f"{v:.2f}".rstrip("0").rstrip(".") if v != int(v) else str(int(v))


def line_chart(title: str, ylabel: str, ns, series: dict, bands: dict | None = None, ylim=None) -> str:
    """One polyline <path> per entry of ``series``; optional error bars per point."""
    ns = [float(n) for n in ns]
    bands = bands or {}
    xs = [math.log10(n) for n in ns]
    x_lo, x_hi = min(xs), max(xs)
    if x_hi == x_lo:
        x_lo, x_hi = x_lo - 0.5, x_hi + 0.5
    ys = [v for vals in series.values() for v in vals if math.isfinite(v)]
    for name, half in bands.items():
        ys += [m + s for m, s in zip(series[name], half) if math.isfinite(m + s)]
        ys += [m - s for m, s in zip(series[name], half) if math.isfinite(m - s)]
    if ylim is not None:
        y_lo, y_hi = ylim
    else:
        y_lo, y_hi = (min(ys), max(ys)) if ys else (0.0, 1.0)
        pad = 0.1 * (y_hi - y_lo) or 0.5
        y_lo, y_hi = y_lo - pad, y_hi + pad

    pw = WIDTH - MARGIN["left"] - MARGIN["right"]
    ph = HEIGHT - MARGIN["top"] - MARGIN["bottom"]

    def px(x):
        return MARGIN["left"] + (x - x_lo) / (x_hi - x_lo) * pw

    def py(y):
        return MARGIN["top"] + (y_hi - y) / (y_hi - y_lo) * ph

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">',
        f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<text x="{WIDTH / 2}" y="20" text-anchor="middle" font-size="14">{escape(title)}</text>',
        f'<g class="axes" stroke="black" fill="none">'
        f'<line x1="{MARGIN["left"]}" y1="{MARGIN["top"] + ph}" x2="{MARGIN["left"] + pw}" y2="{MARGIN["top"] + ph}"/>'
        f'<line x1="{MARGIN["left"]}" y1="{MARGIN["top"]}" x2="{MARGIN["left"]}" y2="{MARGIN["top"] + ph}"/></g>',
    ]
    for n, x in zip(ns, xs):
        out.append(
            f'<text x="{px(x):.2f}" y="{MARGIN["top"] + ph + 16}" text-anchor="middle" font-size="10">{_fmt(n)}</text>'
        )
    for y in _ticks(y_lo, y_hi):
        out.append(
            f'<text x="{MARGIN["left"] - 6}" y="{py(y) + 3:.2f}" text-anchor="end" font-size="10">{_fmt(y)}</text>'
        )
    out.append(
        f'<text x="{MARGIN["left"] + pw / 2}" y="{HEIGHT - 8}" text-anchor="middle" font-size="12">sample size n (log scale)</text>'
    )
    out.append(
        f'<text x="14" y="{MARGIN["top"] + ph / 2}" text-anchor="middle" font-size="12" '
        f'transform="rotate(-90 14 {MARGIN["top"] + ph / 2})">{escape(ylabel)}</text>'
    )
    colors = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd")
    for k, (name, vals) in enumerate(series.items()):
        color = colors[k % len(colors)]
        pts = [(px(x), py(v)) for x, v in zip(xs, vals) if math.isfinite(v)]
        if not pts:
            continue
        d = "M " + " L ".join(f"{a:.2f} {b:.2f}" for a, b in pts)
        out.append(f'<path class="series" data-name="{escape(name)}" d="{d}" stroke="{color}" fill="none" stroke-width="2"/>')
        for a, b in pts:
            out.append(f'<circle cx="{a:.2f}" cy="{b:.2f}" r="3" fill="{color}"/>')
        for x, m, s in zip(xs, vals, bands.get(name, ())):
            if math.isfinite(m) and math.isfinite(s):
                out.append(
                    f'<line class="band" x1="{px(x):.2f}" y1="{py(m - s):.2f}" x2="{px(x):.2f}" y2="{py(m + s):.2f}" stroke="{color}"/>'
                )
    out.append("</svg>")
    return "\n".join(out) + "\n"


def render_report(summary: dict, out_dir: str | Path) -> list[Path]:
    """Write hit_center.svg, impact_velocity.svg and catch.svg; return their paths."""
    rows = summary.get("per_n") if isinstance(summary, dict) else None
    if not rows:
        raise ReportError("summary has no per_n entries")
    for row in rows:
        missing = [k for k in REQUIRED if k not in row]
        if missing:
            raise ReportError(f"summary entry missing fields: {', '.join(missing)}")
    rows = sorted(rows, key=lambda r: r["n"])
    ns = [r["n"] for r in rows]

    def col(key):
        return [float("nan") if r[key] is None else float(r[key]) for r in rows]

    charts = {
        "hit_center.svg": line_chart(
            "Ball hitting the cup center", "hit center (%)", ns, {"hit center": col("hit_center_pct")}, ylim=(0, 100)
        ),
        "impact_velocity.svg": line_chart(
            "Relative z-velocity at impact (mean +/- 1 std)", "velocity (m/s)", ns,
            {"impact vz": col("impact_vz_mean")}, bands={"impact vz": col("impact_vz_std")},
        ),
        "catch.svg": line_chart(
            "Successful catches", "catch (%)", ns, {"catch": col("catch_pct")}, ylim=(0, 100)
        ),
    }
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for name, svg in charts.items():
        p = out_dir / name
        p.write_text(svg)
        paths.append(p)
    return paths
