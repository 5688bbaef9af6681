"""Deterministic SVG rendering of projected trees and density grids.

Element conventions (relied on by tests): leaves are the only ``<circle>``
elements of a tree plot, internal nodes the only ``<rect>`` elements and
parent->child edges the only ``<line>`` elements. Frame and ticks are paths.
Numbers are written with 6 significant digits.
"""
from __future__ import annotations

from dataclasses import dataclass
from xml.sax.saxutils import escape

import numpy as np

from .errors import InputError
from .jog import DensityGrid, ProjectedTree

MARGIN_LEFT, MARGIN_RIGHT, MARGIN_TOP, MARGIN_BOTTOM = 64, 16, 16, 48


def _f(x: float) -> str:
    s = f"{x:.6g}"
    return "0" if s == "-0" else s


@dataclass(frozen=True)
class PlotSpec:
    width: int = 640
    height: int = 480
    viewport: tuple[float, float, float, float] | None = None   # x0, x1, y0, y1 in PC units
    label_mode: str = "leaves"                                  # all | leaves | none
    highlight: frozenset = frozenset()
    explained: tuple[float, ...] | None = None
    components: tuple[int, int] = (0, 1)
    invert_y: bool = False

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise InputError("plot width and height must be positive")
        if self.label_mode not in ("all", "leaves", "none"):
            raise InputError(f"unknown label mode {self.label_mode!r}")
        if self.viewport is not None:
            x0, x1, y0, y1 = self.viewport
            if not (x1 > x0 and y1 > y0):
                raise InputError("viewport must have positive extent")
        object.__setattr__(self, "highlight", frozenset(self.highlight))


def auto_viewport(points: np.ndarray, margin: float = 0.05) -> tuple[float, float, float, float]:
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    out = []
    for d in range(2):
        lo, hi = float(pts[:, d].min()), float(pts[:, d].max())
        span = hi - lo
        pad = margin * span if span > 0 else max(abs(lo), 1.0) * 0.5
        out += [lo - pad, hi + pad]
    return tuple(out)


class _Frame:
    def __init__(self, spec: PlotSpec, viewport):
        self.spec = spec
        self.x0, self.x1, self.y0, self.y1 = viewport
        self.px0 = MARGIN_LEFT
        self.px1 = spec.width - MARGIN_RIGHT
        self.py0 = MARGIN_TOP
        self.py1 = spec.height - MARGIN_BOTTOM

    def x(self, v):
        return self.px0 + (v - self.x0) / (self.x1 - self.x0) * (self.px1 - self.px0)

    def y(self, v):
        t = (v - self.y0) / (self.y1 - self.y0)
        if not self.spec.invert_y:
            t = 1.0 - t
        return self.py0 + t * (self.py1 - self.py0)

    def header(self) -> list[str]:
        s = self.spec
        w, h = self.px1 - self.px0, self.py1 - self.py0
        box = f"M{_f(self.px0)} {_f(self.py0)}h{_f(w)}v{_f(h)}h{_f(-w)}Z"
        return [
            '<?xml version="1.0" encoding="UTF-8"?>',
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{s.width}" height="{s.height}" '
            f'viewBox="0 0 {s.width} {s.height}" font-family="sans-serif" font-size="11">',
            f'<defs><clipPath id="plotarea"><path d="{box}"/></clipPath></defs>',
            f'<path class="frame" d="{box}" fill="white" stroke="black" stroke-width="1"/>',
        ]

    def axes(self) -> list[str]:
        s = self.spec
        out = []
        ticks = []
        for v in _ticks(self.x0, self.x1):
            px = self.x(v)
            ticks.append(f"M{_f(px)} {_f(self.py1)}v4")
            out.append(f'<text x="{_f(px)}" y="{_f(self.py1 + 16)}" text-anchor="middle">{_f(v)}</text>')
        for v in _ticks(self.y0, self.y1):
            py = self.y(v)
            ticks.append(f"M{_f(self.px0)} {_f(py)}h-4")
            out.append(f'<text x="{_f(self.px0 - 6)}" y="{_f(py + 4)}" text-anchor="end">{_f(v)}</text>')
        out.insert(0, f'<path class="ticks" d="{"".join(ticks)}" stroke="black" fill="none"/>')
        cx, cy = s.components
        xl, yl = _caption(cx, s.explained), _caption(cy, s.explained)
        mx = (self.px0 + self.px1) / 2
        my = (self.py0 + self.py1) / 2
        out.append(f'<text class="xlabel" x="{_f(mx)}" y="{_f(s.height - 8)}" text-anchor="middle">{xl}</text>')
        out.append(f'<text class="ylabel" x="14" y="{_f(my)}" text-anchor="middle" '
                   f'transform="rotate(-90 14 {_f(my)})">{yl}</text>')
        return out


def _caption(comp: int, explained) -> str:
    name = f"PC{comp + 1}"
    if explained is not None and comp < len(explained):
        return f"{name} ({100 * explained[comp]:.1f}%)"
    return name


def _ticks(lo: float, hi: float, target: int = 5) -> list[float]:
    span = hi - lo
    raw = span / target
    mag = 10 ** np.floor(np.log10(raw))
    step = min((m * mag for m in (1, 2, 5, 10) if m * mag >= raw), default=10 * mag)
    start = np.ceil(lo / step) * step
    vals = []
    v = start
    while v <= hi + 1e-12 * span:
        vals.append(float(round(v / step) * step))
        v += step
    return vals


def render_tree(ptree: ProjectedTree, spec: PlotSpec = PlotSpec()) -> str:
    """Scatter of all nodes with straight parent->child edges."""
    tree = ptree.tree
    cx, cy = spec.components
    if ptree.coords.shape[1] <= max(cx, cy):
        raise InputError("projected tree lacks the requested components")
    pts = ptree.coords[:, [cx, cy]]
    frame = _Frame(spec, spec.viewport or auto_viewport(pts))
    X = [frame.x(v) for v in pts[:, 0]]
    Y = [frame.y(v) for v in pts[:, 1]]
    out = frame.header()
    out.append('<g clip-path="url(#plotarea)">')
    out.append('<g class="edges" stroke="#555555" stroke-width="1">')
    for v in tree.preorder:
        p = tree.parent[v]
        if p >= 0:
            out.append(f'<line x1="{_f(X[p])}" y1="{_f(Y[p])}" x2="{_f(X[v])}" y2="{_f(Y[v])}"/>')
    out.append("</g>")
    out.append('<g class="nodes" stroke="black" stroke-width="0.8">')
    for v in tree.preorder:
        if tree.is_leaf(v):
            hl = tree.label[v] in spec.highlight
            attrs = ' class="highlight" fill="#d62728"' if hl else ' fill="#1f77b4"'
            out.append(f'<circle cx="{_f(X[v])}" cy="{_f(Y[v])}" r="4"{attrs}/>')
        else:
            out.append(f'<rect x="{_f(X[v] - 3)}" y="{_f(Y[v] - 3)}" width="6" height="6" fill="#ff7f0e"/>')
    out.append("</g>")
    if spec.label_mode != "none":
        out.append('<g class="labels">')
        for v in tree.preorder:
            if tree.is_leaf(v):
                text = tree.label[v]
            elif spec.label_mode == "all":
                text = f"n{v}"
            else:
                continue
            out.append(f'<text x="{_f(X[v] + 6)}" y="{_f(Y[v] - 6)}">{escape(text)}</text>')
        out.append("</g>")
    out.append("</g>")
    out.extend(frame.axes())
    out.append("</svg>")
    return "\n".join(out) + "\n"


def render_kde(grid: DensityGrid, points=None, spec: PlotSpec = PlotSpec(label_mode="none")) -> str:
    """Grayscale heatmap (darker = denser) with the sample points overlaid."""
    xs, ys = grid.xs, grid.ys
    dx = (xs[1] - xs[0]) if len(xs) > 1 else 1.0
    dy = (ys[1] - ys[0]) if len(ys) > 1 else 1.0
    bounds = (xs[0] - dx / 2, xs[-1] + dx / 2, ys[0] - dy / 2, ys[-1] + dy / 2)
    frame = _Frame(spec, spec.viewport or bounds)
    dmax = float(grid.density.max())
    out = frame.header()
    out.append('<g clip-path="url(#plotarea)">')
    out.append('<g class="density" stroke="none">')
    for j, y in enumerate(ys):
        ya, yb = sorted((frame.y(y - dy / 2), frame.y(y + dy / 2)))
        for i, x in enumerate(xs):
            xa, xb = frame.x(x - dx / 2), frame.x(x + dx / 2)
            level = grid.density[j, i] / dmax if dmax > 0 else 0.0
            g = int(round(255 * (1.0 - level)))
            out.append(f'<rect x="{_f(xa)}" y="{_f(ya)}" width="{_f(xb - xa)}" height="{_f(yb - ya)}" '
                       f'fill="#{g:02x}{g:02x}{g:02x}"/>')
    out.append("</g>")
    if points is not None and len(points):
        out.append('<g class="points" fill="#d62728" stroke="none">')
        for x, y in np.asarray(points, dtype=float).reshape(-1, 2):
            out.append(f'<circle cx="{_f(frame.x(x))}" cy="{_f(frame.y(y))}" r="1.5"/>')
        out.append("</g>")
    out.append("</g>")
    out.extend(frame.axes())
    out.append("</svg>")
    return "\n".join(out) + "\n"
