"""Standalone SVG renderings of traces, 1-D bands and 2-D heatmaps.

Output is deterministic text: no timestamps, no generated ids, floats
formatted with ``repr``. Data marks (polylines, band polygons, heatmap
cells) live inside a single group whose ``transform`` maps data
coordinates to pixels, so the emitted coordinates are the data values
themselves and can be parsed back without touching the axis labels.
Axis ticks and labels are drawn in pixel space outside that group.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import DataError

_WIDTH = 640
_HEIGHT = 420
_MARGIN_L = 72
_MARGIN_R = 24
_MARGIN_T = 28
_MARGIN_B = 52

# Five-stop colormap interpolated in RGB; dark-to-light so magnitude
# reads the same in grayscale.
_STOPS = (
    (68, 1, 84),
    (59, 82, 139),
    (33, 145, 140),
    (94, 201, 98),
    (253, 231, 37),
)


def _fmt(v: float) -> str:
    return repr(float(v))


def _color(frac: float) -> str:
    frac = min(max(frac, 0.0), 1.0)
    pos = frac * (len(_STOPS) - 1)
    i = min(int(pos), len(_STOPS) - 2)
    t = pos - i
    rgb = [
        int(round(a + (b - a) * t))
        for a, b in zip(_STOPS[i], _STOPS[i + 1])
    ]
    return "#{:02x}{:02x}{:02x}".format(*rgb)


def _ticks(lo: float, hi: float, target: int = 5) -> list[float]:
    if hi <= lo:
        return [lo]
    raw = (hi - lo) / target
    mag = 10.0 ** math.floor(math.log10(raw))
    step = min((1.0, 2.0, 5.0, 10.0), key=lambda m: abs((hi - lo) / (m * mag) - target))
    step *= mag
    first = math.ceil(lo / step) * step
    ticks = []
    t = first
    while t <= hi + 1e-9 * step:
        ticks.append(0.0 if abs(t) < 1e-12 * step else t)
        t += step
    return ticks


def _pad_range(lo: float, hi: float) -> tuple[float, float]:
    if hi > lo:
        return lo, hi
    pad = max(abs(lo), 1.0) * 0.5
    return lo - pad, hi + pad


class _Frame:
    """Pixel frame with the data-to-pixel affine map."""

    def __init__(self, xlo, xhi, ylo, yhi):
        self.xlo, self.xhi = _pad_range(float(xlo), float(xhi))
        self.ylo, self.yhi = _pad_range(float(ylo), float(yhi))
        self.plot_w = _WIDTH - _MARGIN_L - _MARGIN_R
        self.plot_h = _HEIGHT - _MARGIN_T - _MARGIN_B
        self.sx = self.plot_w / (self.xhi - self.xlo)
        self.sy = -self.plot_h / (self.yhi - self.ylo)
        self.tx = _MARGIN_L - self.sx * self.xlo
        self.ty = _MARGIN_T - self.sy * self.yhi

    def px(self, x: float) -> float:
        return self.tx + self.sx * x

    def py(self, y: float) -> float:
        return self.ty + self.sy * y

    def group_open(self) -> str:
        return (
            f'<g transform="translate({_fmt(self.tx)} {_fmt(self.ty)})'
            f' scale({_fmt(self.sx)} {_fmt(self.sy)})">'
        )

    def axes(self, xlabel: str, ylabel: str) -> list[str]:
        parts = [
            f'<rect x="{_MARGIN_L}" y="{_MARGIN_T}" width="{self.plot_w}"'
            f' height="{self.plot_h}" fill="none" stroke="#444"/>'
        ]
        y0 = _MARGIN_T + self.plot_h
        for t in _ticks(self.xlo, self.xhi):
            px = self.px(t)
            parts.append(
                f'<line x1="{_fmt(px)}" y1="{y0}" x2="{_fmt(px)}"'
                f' y2="{y0 + 5}" stroke="#444"/>'
            )
            parts.append(
                f'<text x="{_fmt(px)}" y="{y0 + 18}" text-anchor="middle"'
                f' font-family="monospace" font-size="11">{_fmt(t)}</text>'
            )
        for t in _ticks(self.ylo, self.yhi):
            py = self.py(t)
            parts.append(
                f'<line x1="{_MARGIN_L - 5}" y1="{_fmt(py)}" x2="{_MARGIN_L}"'
                f' y2="{_fmt(py)}" stroke="#444"/>'
            )
            parts.append(
                f'<text x="{_MARGIN_L - 8}" y="{_fmt(py + 4)}" text-anchor="end"'
                f' font-family="monospace" font-size="11">{_fmt(t)}</text>'
            )
        parts.append(
            f'<text x="{_MARGIN_L + self.plot_w / 2}" y="{_HEIGHT - 12}"'
            f' text-anchor="middle" font-family="monospace" font-size="12">'
            f"{xlabel}</text>"
        )
        parts.append(
            f'<text x="16" y="{_MARGIN_T + self.plot_h / 2}"'
            f' text-anchor="middle" font-family="monospace" font-size="12"'
            f' transform="rotate(-90 16 {_MARGIN_T + self.plot_h / 2})">'
            f"{ylabel}</text>"
        )
        return parts


def _document(kind: str, body: list[str]) -> str:
    head = (
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_WIDTH}"'
        f' height="{_HEIGHT}" viewBox="0 0 {_WIDTH} {_HEIGHT}"'
        f' data-kind="{kind}">'
    )
    return "\n".join(
        [head, f'<rect width="{_WIDTH}" height="{_HEIGHT}" fill="white"/>']
        + body
        + ["</svg>"]
    )


def _points_attr(x: np.ndarray, y: np.ndarray) -> str:
    return " ".join(f"{_fmt(a)},{_fmt(b)}" for a, b in zip(x, y))


def trace_svg(iterations, values) -> str:
    """Objective trace as a single polyline."""
    it = np.asarray(iterations, dtype=float)
    vals = np.asarray(values, dtype=float)
    if it.size == 0:
        raise DataError("empty trace")
    frame = _Frame(it.min(), it.max(), vals.min(), vals.max())
    body = frame.axes("iteration", "objective")
    body.append(frame.group_open())
    body.append(
        f'<polyline points="{_points_attr(it, vals)}" fill="none"'
        ' stroke="#1f77b4" stroke-width="1.5"'
        ' vector-effect="non-scaling-stroke"/>'
    )
    body.append("</g>")
    return _document("trace", body)


def band_svg(x, mean, variance) -> str:
    """Mean curve with a band of twice the standard deviation."""
    x = np.asarray(x, dtype=float)
    mean = np.asarray(mean, dtype=float)
    variance = np.asarray(variance, dtype=float)
    if x.size == 0:
        raise DataError("empty band data")
    order = np.argsort(x, kind="stable")
    x, mean, variance = x[order], mean[order], variance[order]
    half = 2.0 * np.sqrt(np.maximum(variance, 0.0))
    upper = mean + half
    lower = mean - half
    frame = _Frame(x.min(), x.max(), lower.min(), upper.max())
    body = frame.axes("x0", "value")
    body.append(frame.group_open())
    ring_x = np.concatenate([x, x[::-1]])
    ring_y = np.concatenate([upper, lower[::-1]])
    body.append(
        f'<polygon class="band" points="{_points_attr(ring_x, ring_y)}"'
        ' fill="#1f77b4" fill-opacity="0.25" stroke="none"/>'
    )
    body.append(
        f'<polyline class="mean" points="{_points_attr(x, mean)}" fill="none"'
        ' stroke="#1f77b4" stroke-width="1.5"'
        ' vector-effect="non-scaling-stroke"/>'
    )
    body.append("</g>")
    return _document("band", body)


def heatmap_svg(x0, x1, values) -> str:
    """Cell map of values sampled on a rectangular grid.

    Input is flat columns; the grid is reconstructed from the unique
    sorted coordinates and must be complete.
    """
    x0 = np.asarray(x0, dtype=float)
    x1 = np.asarray(x1, dtype=float)
    values = np.asarray(values, dtype=float)
    u0 = np.unique(x0)
    u1 = np.unique(x1)
    if u0.size * u1.size != values.size:
        raise DataError(
            f"heatmap needs a full grid: {u0.size} x {u1.size} cells vs"
            f" {values.size} rows"
        )
    step0 = float(np.min(np.diff(u0))) if u0.size > 1 else 1.0
    step1 = float(np.min(np.diff(u1))) if u1.size > 1 else 1.0
    vmin, vmax = float(values.min()), float(values.max())
    span = vmax - vmin if vmax > vmin else 1.0
    frame = _Frame(
        u0[0] - step0 / 2, u0[-1] + step0 / 2, u1[0] - step1 / 2, u1[-1] + step1 / 2
    )
    body = frame.axes("x0", "x1")
    body.append(frame.group_open())
    for cx, cy, val in zip(x0, x1, values):
        body.append(
            f'<rect x="{_fmt(cx - step0 / 2)}" y="{_fmt(cy - step1 / 2)}"'
            f' width="{_fmt(step0)}" height="{_fmt(step1)}"'
            f' fill="{_color((val - vmin) / span)}" data-value="{_fmt(val)}"/>'
        )
    body.append("</g>")
    legend = (
        f'<text x="{_WIDTH - _MARGIN_R}" y="16" text-anchor="end"'
        f' font-family="monospace" font-size="11">'
        f"range [{_fmt(vmin)}, {_fmt(vmax)}]</text>"
    )
    body.append(legend)
    return _document("heatmap", body)
