"""Deterministic SVG figures: DET curves, boxplots, scatter layouts.

The emitters build SVG 1.1 documents by string assembly with a fixed
number format, so the same inputs always produce byte-identical files.
No plotting library is involved.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from xml.sax.saxutils import escape

import numpy as np

from .errors import ArgumentError
from .metrics import DetCurve

WIDTH = 640.0
HEIGHT = 480.0
MARGIN_LEFT = 70.0
MARGIN_RIGHT = 30.0
MARGIN_TOP = 40.0
MARGIN_BOTTOM = 55.0
LEGEND_WIDTH = 150.0

PALETTE = (
    "#1f77b4",
    "#ff7f0e",
    "#2ca02c",
    "#d62728",
    "#9467bd",
    "#8c564b",
    "#e377c2",
    "#7f7f7f",
)


def _fmt(v: float) -> str:
    s = f"{v:.2f}".rstrip("0").rstrip(".")
    return "0" if s == "-0" else s


@dataclass
class BoxplotStats:
    """Five-number summary with Tukey 1.5 IQR whiskers."""

    median: float
    q1: float
    q3: float
    whisker_low: float
    whisker_high: float
    outliers: list[float]


def _quantile(sorted_values: np.ndarray, q: float) -> float:
    """Linear-interpolation quantile on pre-sorted data."""
    pos = (len(sorted_values) - 1) * q
    lo = int(math.floor(pos))
    hi = min(lo + 1, len(sorted_values) - 1)
    frac = pos - lo
    return float(sorted_values[lo] * (1.0 - frac) + sorted_values[hi] * frac)


def compute_boxplot(values) -> BoxplotStats:
    """Summarize values: quartiles, whiskers at the last points inside the
    1.5 IQR fences, everything beyond listed as outliers."""
    arr = np.sort(np.asarray(values, dtype=np.float64))
    if arr.size == 0:
        raise ArgumentError("cannot summarize an empty value list")
    if not np.isfinite(arr).all():
        raise ArgumentError("boxplot values must be finite")
    q1 = _quantile(arr, 0.25)
    median = _quantile(arr, 0.5)
    q3 = _quantile(arr, 0.75)
    iqr = q3 - q1
    lo_fence = q1 - 1.5 * iqr
    hi_fence = q3 + 1.5 * iqr
    inside = arr[(arr >= lo_fence) & (arr <= hi_fence)]
    outliers = arr[(arr < lo_fence) | (arr > hi_fence)]
    return BoxplotStats(
        median=median,
        q1=q1,
        q3=q3,
        whisker_low=float(inside.min()),
        whisker_high=float(inside.max()),
        outliers=[float(v) for v in outliers],
    )


def _nice_ticks(lo: float, hi: float, target: int = 5) -> tuple[float, float, list[float]]:
    """Round axis bounds outward to a 1/2/5 step grid and list the ticks."""
    if hi <= lo:
        hi = lo + 1.0
    raw = (hi - lo) / target
    mag = 10.0 ** math.floor(math.log10(raw))
    step = 10.0 * mag
    for mult in (1.0, 2.0, 5.0):
        if raw <= mult * mag:
            step = mult * mag
            break
    lo_n = math.floor(lo / step) * step
    hi_n = math.ceil(hi / step) * step
    n = int(round((hi_n - lo_n) / step))
    ticks = [lo_n + i * step for i in range(n + 1)]
    return lo_n, hi_n, ticks


class _Canvas:
    """Plot-area coordinate mapping plus element accumulation."""

    def __init__(self, x_range, y_range, right_margin=MARGIN_RIGHT):
        self.x0, self.x1 = x_range
        self.y0, self.y1 = y_range
        self.left = MARGIN_LEFT
        self.right = WIDTH - right_margin
        self.top = MARGIN_TOP
        self.bottom = HEIGHT - MARGIN_BOTTOM
        self.parts: list[str] = []

    def px(self, x: float) -> float:
        return self.left + (x - self.x0) / (self.x1 - self.x0) * (self.right - self.left)

    def py(self, y: float) -> float:
        return self.bottom - (y - self.y0) / (self.y1 - self.y0) * (self.bottom - self.top)

    def add(self, element: str) -> None:
        self.parts.append(element)

    def frame(self, title, x_label, y_label, x_ticks, y_ticks):
        self.add(
            f'<rect x="{_fmt(self.left)}" y="{_fmt(self.top)}" '
            f'width="{_fmt(self.right - self.left)}" height="{_fmt(self.bottom - self.top)}" '
            'fill="none" stroke="#333333" stroke-width="1"/>'
        )
        if title:
            self.add(
                f'<text x="{_fmt((self.left + self.right) / 2)}" y="24" '
                'font-family="sans-serif" font-size="15" text-anchor="middle">'
                f"{escape(title)}</text>"
            )
        for t in x_ticks:
            x = self.px(t)
            self.add(
                f'<line x1="{_fmt(x)}" y1="{_fmt(self.bottom)}" '
                f'x2="{_fmt(x)}" y2="{_fmt(self.bottom + 5)}" stroke="#333333" stroke-width="1"/>'
            )
            self.add(
                f'<text x="{_fmt(x)}" y="{_fmt(self.bottom + 18)}" '
                'font-family="sans-serif" font-size="11" text-anchor="middle">'
                f"{_fmt(t)}</text>"
            )
        for t in y_ticks:
            y = self.py(t)
            self.add(
                f'<line x1="{_fmt(self.left - 5)}" y1="{_fmt(y)}" '
                f'x2="{_fmt(self.left)}" y2="{_fmt(y)}" stroke="#333333" stroke-width="1"/>'
            )
            self.add(
                f'<text x="{_fmt(self.left - 8)}" y="{_fmt(y + 4)}" '
                'font-family="sans-serif" font-size="11" text-anchor="end">'
                f"{_fmt(t)}</text>"
            )
        self.add(
            f'<text x="{_fmt((self.left + self.right) / 2)}" y="{_fmt(HEIGHT - 12)}" '
            'font-family="sans-serif" font-size="13" text-anchor="middle">'
            f"{escape(x_label)}</text>"
        )
        mid_y = (self.top + self.bottom) / 2
        self.add(
            f'<text x="18" y="{_fmt(mid_y)}" font-family="sans-serif" font-size="13" '
            f'text-anchor="middle" transform="rotate(-90 18 {_fmt(mid_y)})">'
            f"{escape(y_label)}</text>"
        )

    def document(self) -> str:
        body = "\n".join(self.parts)
        return (
            '<svg xmlns="http://www.w3.org/2000/svg" version="1.1" '
            f'width="{_fmt(WIDTH)}" height="{_fmt(HEIGHT)}" '
            f'viewBox="0 0 {_fmt(WIDTH)} {_fmt(HEIGHT)}">\n'
            f'<rect x="0" y="0" width="{_fmt(WIDTH)}" height="{_fmt(HEIGHT)}" fill="#ffffff"/>\n'
            f"{body}\n</svg>\n"
        )


def _det_svg(curve, title) -> str:
    if isinstance(curve, DetCurve):
        points = curve.points
    else:
        points = list(curve)
    if not points:
        raise ArgumentError("DET curve has no points")
    pct = [(100.0 * m, 100.0 * b) for m, b in points]

    canvas = _Canvas((0.0, 100.0), (0.0, 100.0))
    ticks = [0.0, 20.0, 40.0, 60.0, 80.0, 100.0]
    canvas.frame(title or "Detection error trade-off", "MACER (%)", "BPCER (%)", ticks, ticks)

    # staircase: horizontal run to the next MACER, then vertical drop
    path: list[tuple[float, float]] = []
    for i, (m, b) in enumerate(pct):
        if i > 0:
            path.append((m, pct[i - 1][1]))
        path.append((m, b))
    coords = " ".join(f"{_fmt(canvas.px(m))},{_fmt(canvas.py(b))}" for m, b in path)
    canvas.add(
        f'<polyline points="{coords}" fill="none" stroke="{PALETTE[0]}" stroke-width="2"/>'
    )
    for m, b in pct:
        canvas.add(
            f'<circle cx="{_fmt(canvas.px(m))}" cy="{_fmt(canvas.py(b))}" r="2.5" '
            f'fill="{PALETTE[0]}"/>'
        )
    return canvas.document()


def _boxplot_svg(data, title, y_label) -> str:
    if isinstance(data, dict):
        series = sorted(data.items())
    else:
        series = list(data)
    if not series:
        raise ArgumentError("boxplot needs at least one value series")
    stats = [(str(label), compute_boxplot(values)) for label, values in series]

    all_values = [v for _, values in series for v in values]
    lo, hi, y_ticks = _nice_ticks(min(all_values), max(all_values))
    if lo == hi:
        hi = lo + 1.0
    canvas = _Canvas((0.0, float(len(stats))), (lo, hi))
    canvas.frame(title or "Score spread", "", y_label, [], y_ticks)

    slot = (canvas.right - canvas.left) / len(stats)
    box_w = slot * 0.5
    for i, (label, st) in enumerate(stats):
        cx = canvas.left + (i + 0.5) * slot
        x_lo, x_hi = cx - box_w / 2, cx + box_w / 2
        color = PALETTE[i % len(PALETTE)]
        for w in (st.whisker_low, st.whisker_high):
            canvas.add(
                f'<line x1="{_fmt(cx - box_w / 4)}" y1="{_fmt(canvas.py(w))}" '
                f'x2="{_fmt(cx + box_w / 4)}" y2="{_fmt(canvas.py(w))}" '
                'stroke="#333333" stroke-width="1"/>'
            )
        canvas.add(
            f'<line x1="{_fmt(cx)}" y1="{_fmt(canvas.py(st.whisker_low))}" '
            f'x2="{_fmt(cx)}" y2="{_fmt(canvas.py(st.q1))}" stroke="#333333" stroke-width="1"/>'
        )
        canvas.add(
            f'<line x1="{_fmt(cx)}" y1="{_fmt(canvas.py(st.q3))}" '
            f'x2="{_fmt(cx)}" y2="{_fmt(canvas.py(st.whisker_high))}" '
            'stroke="#333333" stroke-width="1"/>'
        )
        canvas.add(
            f'<rect x="{_fmt(x_lo)}" y="{_fmt(canvas.py(st.q3))}" '
            f'width="{_fmt(box_w)}" height="{_fmt(canvas.py(st.q1) - canvas.py(st.q3))}" '
            f'fill="{color}" fill-opacity="0.35" stroke="#333333" stroke-width="1"/>'
        )
        canvas.add(
            f'<line x1="{_fmt(x_lo)}" y1="{_fmt(canvas.py(st.median))}" '
            f'x2="{_fmt(x_hi)}" y2="{_fmt(canvas.py(st.median))}" '
            'stroke="#333333" stroke-width="2"/>'
        )
        for v in st.outliers:
            canvas.add(
                f'<circle cx="{_fmt(cx)}" cy="{_fmt(canvas.py(v))}" r="2.5" '
                f'fill="none" stroke="{color}" stroke-width="1"/>'
            )
        canvas.add(
            f'<text x="{_fmt(cx)}" y="{_fmt(canvas.bottom + 18)}" '
            'font-family="sans-serif" font-size="11" text-anchor="middle">'
            f"{escape(label)}</text>"
        )
    return canvas.document()


def _scatter_svg(data, title) -> str:
    if isinstance(data, dict):
        groups = sorted((str(k), np.asarray(v, dtype=np.float64)) for k, v in data.items())
    else:
        by_group: dict[str, list[tuple[float, float]]] = {}
        for x, y, g in data:
            by_group.setdefault(str(g), []).append((float(x), float(y)))
        groups = sorted((g, np.asarray(pts)) for g, pts in by_group.items())
    if not groups or all(arr.size == 0 for _, arr in groups):
        raise ArgumentError("scatter needs at least one point")

    xs = np.concatenate([arr[:, 0] for _, arr in groups])
    ys = np.concatenate([arr[:, 1] for _, arr in groups])
    x_lo, x_hi, x_ticks = _nice_ticks(float(xs.min()), float(xs.max()))
    y_lo, y_hi, y_ticks = _nice_ticks(float(ys.min()), float(ys.max()))

    canvas = _Canvas((x_lo, x_hi), (y_lo, y_hi), right_margin=LEGEND_WIDTH)
    canvas.frame(title or "Feature layout", "dimension 1", "dimension 2", x_ticks, y_ticks)

    for i, (group, arr) in enumerate(groups):
        color = PALETTE[i % len(PALETTE)]
        for x, y in arr:
            canvas.add(
                f'<circle cx="{_fmt(canvas.px(x))}" cy="{_fmt(canvas.py(y))}" r="3" '
                f'fill="{color}" fill-opacity="0.8"/>'
            )
    lx = canvas.right + 14
    for i, (group, _) in enumerate(groups):
        ly = canvas.top + 14 + i * 18
        color = PALETTE[i % len(PALETTE)]
        canvas.add(f'<circle cx="{_fmt(lx)}" cy="{_fmt(ly - 4)}" r="4" fill="{color}"/>')
        canvas.add(
            f'<text x="{_fmt(lx + 10)}" y="{_fmt(ly)}" font-family="sans-serif" '
            f'font-size="11">{escape(group)}</text>'
        )
    return canvas.document()


def emit_svg(kind: str, data, title: str | None = None, y_label: str = "D-EER (%)") -> str:
    """Render one figure of the given kind to an SVG document string.

    Kinds: "det" takes a DetCurve or (macer, bpcer) fraction pairs;
    "boxplot" takes {label: values}; "scatter" takes {group: (n, 2) points}
    or (x, y, group) triples.
    """
    if kind == "det":
        return _det_svg(data, title)
    if kind == "boxplot":
        return _boxplot_svg(data, title, y_label)
    if kind == "scatter":
        return _scatter_svg(data, title)
    raise ArgumentError(f"unknown figure kind {kind!r}")
