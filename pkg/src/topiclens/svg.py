"""Scatter and box figures as standalone SVG documents.

No plotting dependency: output is deterministic markup (fixed float
formatting, no timestamps or generated ids) so figures byte-compare across
runs.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

__all__ = ["Point", "RefLine", "render_scatter", "render_box"]

_STYLE = (
    "text{font-family:Helvetica,Arial,sans-serif;font-size:11px;fill:#333}"
    ".title{font-size:13px;font-weight:bold}"
    ".axis{stroke:#333;stroke-width:1}"
    ".grid{stroke:#ddd;stroke-width:0.5}"
    ".pt{fill:#4878a8;fill-opacity:0.75;stroke:none}"
    ".pt-early{fill:#c44e52}"
    ".pt-late{fill:#4c72b0}"
    ".pt-excluded{fill:#e8a33d}"
    ".pt-muted{fill:#999;fill-opacity:0.45}"
    ".ref{stroke:#888;stroke-width:1;stroke-dasharray:4 3;fill:none}"
    ".box{fill:#fff;stroke:#333;stroke-width:1}"
    ".box-early{fill:#f3c5c5}"
    ".box-late{fill:#c5d3ef}"
    ".median{stroke:#222;stroke-width:1.5}"
    ".whisker{stroke:#333;stroke-width:1}"
    ".outlier{fill:none;stroke:#555;stroke-width:0.8}"
)


@dataclass(frozen=True)
class Point:
    x: float
    y: float
    name: str = ""
    css: str = "pt"


@dataclass(frozen=True)
class RefLine:
    slope: float
    intercept: float = 0.0
    label: str = ""
    css: str = "ref"


def _fmt(v: float) -> str:
    return f"{v:.2f}"


def _nice_ticks(lo: float, hi: float, target: int = 5) -> list[float]:
    if hi <= lo:
        hi = lo + 1.0
    span = hi - lo
    raw = span / target
    mag = 10 ** math.floor(math.log10(raw))
    for mult in (1.0, 2.0, 5.0, 10.0):
        step = mult * mag
        if span / step <= target:
            break
    first = math.ceil(lo / step) * step
    ticks = []
    t = first
    while t <= hi + 1e-9 * span:
        ticks.append(0.0 if abs(t) < 1e-12 * span else t)
        t += step
    return ticks


def _tick_label(v: float) -> str:
    if v == 0:
        return "0"
    if abs(v) >= 10000 or abs(v) < 0.01:
        return f"{v:.1e}"
    return f"{v:g}"


class _Axis:
    """Maps data values to pixel coordinates, linear or log10."""

    def __init__(self, values: Sequence[float], log: bool, pix_lo: float, pix_hi: float):
        vals = [float(v) for v in values]
        self.log = log
        if log:
            positive = [v for v in vals if v > 0]
            floor = (min(positive) / 2.0) if positive else 0.5
            self.floor = floor
            vals = [math.log10(max(v, floor)) for v in vals]
        lo, hi = min(vals), max(vals)
        if hi == lo:
            lo, hi = lo - 0.5, hi + 0.5
        pad = 0.05 * (hi - lo)
        self.lo, self.hi = lo - pad, hi + pad
        self.pix_lo, self.pix_hi = pix_lo, pix_hi

    def to_pix(self, v: float) -> float:
        if self.log:
            v = math.log10(max(v, self.floor))
        frac = (v - self.lo) / (self.hi - self.lo)
        return self.pix_lo + frac * (self.pix_hi - self.pix_lo)

    def ticks(self) -> list[tuple[float, str]]:
        if self.log:
            lo_d = math.ceil(self.lo)
            hi_d = math.floor(self.hi)
            return [(10.0**d, _tick_label(10.0**d)) for d in range(lo_d, hi_d + 1)]
        return [(t, _tick_label(t)) for t in _nice_ticks(self.lo, self.hi)]


def _frame(
    parts: list[str],
    ax_x: _Axis,
    ax_y: _Axis,
    x_label: str,
    y_label: str,
    title: str,
    width: int,
    height: int,
) -> None:
    left, right = ax_x.pix_lo, ax_x.pix_hi
    bottom, top = ax_y.pix_lo, ax_y.pix_hi
    if title:
        parts.append(
            f'<text class="title" x="{_fmt((left + right) / 2)}" y="18" text-anchor="middle">{_esc(title)}</text>'
        )
    for v, label in ax_x.ticks():
        px = ax_x.to_pix(v)
        parts.append(
            f'<line class="grid" x1="{_fmt(px)}" y1="{_fmt(bottom)}" x2="{_fmt(px)}" y2="{_fmt(top)}"/>'
        )
        parts.append(
            f'<text x="{_fmt(px)}" y="{_fmt(bottom + 14)}" text-anchor="middle">{label}</text>'
        )
    for v, label in ax_y.ticks():
        py = ax_y.to_pix(v)
        parts.append(
            f'<line class="grid" x1="{_fmt(left)}" y1="{_fmt(py)}" x2="{_fmt(right)}" y2="{_fmt(py)}"/>'
        )
        parts.append(
            f'<text x="{_fmt(left - 6)}" y="{_fmt(py + 3)}" text-anchor="end">{label}</text>'
        )
    parts.append(
        f'<path class="axis" d="M {_fmt(left)} {_fmt(top)} L {_fmt(left)} {_fmt(bottom)} L {_fmt(right)} {_fmt(bottom)}" fill="none"/>'
    )
    if x_label:
        parts.append(
            f'<text x="{_fmt((left + right) / 2)}" y="{_fmt(bottom + 30)}" text-anchor="middle">{_esc(x_label)}</text>'
        )
    if y_label:
        mid_y = (top + bottom) / 2
        parts.append(
            f'<text x="14" y="{_fmt(mid_y)}" text-anchor="middle" transform="rotate(-90 14 {_fmt(mid_y)})">{_esc(y_label)}</text>'
        )


def _esc(s: str) -> str:
    return s.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


def _document(parts: list[str], width: int, height: int) -> str:
    body = "\n".join(parts)
    return (
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">\n<style>{_STYLE}</style>\n{body}\n</svg>\n'
    )


def render_scatter(
    points: Sequence[Point],
    reference_lines: Sequence[RefLine] = (),
    *,
    x_label: str = "",
    y_label: str = "",
    title: str = "",
    log_x: bool = False,
    log_y: bool = False,
    width: int = 720,
    height: int = 520,
    radius: float = 3.0,
) -> str:
    """Scatter figure: one circle per point, optional reference lines.

    Reference lines are drawn as y = slope*x + intercept clipped to the data
    window and annotated with their label (or "y=<slope>x"). On log axes,
    non-positive values clamp to half the smallest positive value. Non-finite
    coordinates are an error naming the offending point.
    """
    if not points:
        raise ValueError("no points to draw")
    for p in points:
        if not (math.isfinite(p.x) and math.isfinite(p.y)):
            raise ValueError(f"non-finite coordinate for point {p.name or '(unnamed)'}")
    margin_l, margin_r, margin_t, margin_b = 64, 20, 30, 46
    ax_x = _Axis([p.x for p in points], log_x, margin_l, width - margin_r)
    ax_y = _Axis([p.y for p in points], log_y, height - margin_b, margin_t)
    parts: list[str] = []
    _frame(parts, ax_x, ax_y, x_label, y_label, title, width, height)
    for line in reference_lines:
        seg = _clip_line(line, ax_x, ax_y)
        if seg is None:
            continue
        (x1, y1), (x2, y2) = seg
        label = line.label or f"y={line.slope:.2f}x"
        parts.append(
            f'<line class="{line.css}" x1="{_fmt(ax_x.to_pix(x1))}" y1="{_fmt(ax_y.to_pix(y1))}" '
            f'x2="{_fmt(ax_x.to_pix(x2))}" y2="{_fmt(ax_y.to_pix(y2))}"/>'
        )
        parts.append(
            f'<text x="{_fmt(ax_x.to_pix(x2) - 4)}" y="{_fmt(ax_y.to_pix(y2) + 12)}" '
            f'text-anchor="end">{_esc(label)}</text>'
        )
    for p in points:
        attrs = (
            f'class="{p.css}" cx="{_fmt(ax_x.to_pix(p.x))}" '
            f'cy="{_fmt(ax_y.to_pix(p.y))}" r="{_fmt(radius)}"'
        )
        if p.name:
            parts.append(f"<circle {attrs}><title>{_esc(p.name)}</title></circle>")
        else:
            parts.append(f"<circle {attrs}/>")
    return _document(parts, width, height)


def _clip_line(line: RefLine, ax_x: _Axis, ax_y: _Axis):
    """Clip y = slope*x + b to the data window in value space."""
    if ax_x.log or ax_y.log:
        x_lo, x_hi = 10**ax_x.lo if ax_x.log else ax_x.lo, 10**ax_x.hi if ax_x.log else ax_x.hi
        y_lo, y_hi = 10**ax_y.lo if ax_y.log else ax_y.lo, 10**ax_y.hi if ax_y.log else ax_y.hi
    else:
        x_lo, x_hi, y_lo, y_hi = ax_x.lo, ax_x.hi, ax_y.lo, ax_y.hi
    pts = []
    n_samples = 128
    for i in range(n_samples + 1):
        x = x_lo + (x_hi - x_lo) * i / n_samples
        y = line.slope * x + line.intercept
        if y_lo <= y <= y_hi:
            pts.append((x, y))
    if len(pts) < 2:
        return None
    return pts[0], pts[-1]


def render_box(
    groups: Sequence[tuple[str, Sequence[tuple[str, Sequence[float]]]]],
    *,
    y_label: str = "",
    title: str = "",
    width: int = 720,
    height: int = 440,
    whisker_multiplier: float = 1.5,
) -> str:
    """Grouped box plot: one cluster of boxes per group.

    Box edges are interpolated quartiles, the whiskers reach the most extreme
    datum within ``whisker_multiplier`` IQRs, and values beyond the whiskers
    render as open circles.
    """
    groups = [(g, [(s, list(v)) for s, v in series]) for g, series in groups]
    if not any(v for _, series in groups for _, v in series):
        raise ValueError("no data to draw")
    all_vals = [x for _, series in groups for _, v in series for x in v]
    margin_l, margin_r, margin_t, margin_b = 64, 20, 30, 52
    ax_y = _Axis(all_vals, False, height - margin_b, margin_t)
    n_slots = sum(len(series) for _, series in groups)
    plot_w = width - margin_l - margin_r
    slot_w = plot_w / max(n_slots + len(groups) - 1, 1)
    box_w = slot_w * 0.6
    parts: list[str] = []

    class _XAxis:
        log = False
        lo, hi = 0.0, 1.0
        pix_lo, pix_hi = margin_l, width - margin_r

        def ticks(self):
            return []

        def to_pix(self, v):
            return margin_l + v * plot_w

    _frame(parts, _XAxis(), ax_y, "", y_label, title, width, height)
    slot = 0.0
    for g_label, series in groups:
        group_start = slot
        for s_label, values in series:
            cx = margin_l + (slot + 0.5) * slot_w
            slot += 1.0
            if not values:
                continue
            vals = np.asarray(values, dtype=float)
            q1, q2, q3 = np.percentile(vals, [25.0, 50.0, 75.0])
            iqr = q3 - q1
            lo_fence = q1 - whisker_multiplier * iqr
            hi_fence = q3 + whisker_multiplier * iqr
            inside = vals[(vals >= lo_fence) & (vals <= hi_fence)]
            w_lo = float(inside.min()) if inside.size else float(q1)
            w_hi = float(inside.max()) if inside.size else float(q3)
            css = "box-early" if "early" in s_label.lower() else (
                "box-late" if "late" in s_label.lower() else "box"
            )
            x0 = cx - box_w / 2
            y_q1, y_q3 = ax_y.to_pix(q1), ax_y.to_pix(q3)
            parts.append(
                f'<rect class="box {css}" x="{_fmt(x0)}" y="{_fmt(min(y_q1, y_q3))}" '
                f'width="{_fmt(box_w)}" height="{_fmt(abs(y_q1 - y_q3))}"/>'
            )
            parts.append(
                f'<line class="median" x1="{_fmt(x0)}" y1="{_fmt(ax_y.to_pix(q2))}" '
                f'x2="{_fmt(x0 + box_w)}" y2="{_fmt(ax_y.to_pix(q2))}"/>'
            )
            for v_from, v_to in ((q3, w_hi), (q1, w_lo)):
                parts.append(
                    f'<line class="whisker" x1="{_fmt(cx)}" y1="{_fmt(ax_y.to_pix(v_from))}" '
                    f'x2="{_fmt(cx)}" y2="{_fmt(ax_y.to_pix(v_to))}"/>'
                )
                parts.append(
                    f'<line class="whisker" x1="{_fmt(cx - box_w / 4)}" y1="{_fmt(ax_y.to_pix(v_to))}" '
                    f'x2="{_fmt(cx + box_w / 4)}" y2="{_fmt(ax_y.to_pix(v_to))}"/>'
                )
            for v in vals[(vals < lo_fence) | (vals > hi_fence)]:
                parts.append(
                    f'<circle class="outlier" cx="{_fmt(cx)}" cy="{_fmt(ax_y.to_pix(float(v)))}" r="2.20"/>'
                )
            parts.append(
                f'<text x="{_fmt(cx)}" y="{_fmt(height - margin_b + 14)}" text-anchor="middle">{_esc(s_label)}</text>'
            )
        group_mid = margin_l + ((group_start + slot) / 2) * slot_w
        parts.append(
            f'<text x="{_fmt(group_mid)}" y="{_fmt(height - margin_b + 30)}" text-anchor="middle">{_esc(g_label)}</text>'
        )
        slot += 1.0  # gap between groups
    return _document(parts, width, height)
