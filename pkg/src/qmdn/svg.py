"""Minimal deterministic SVG figures: line charts, scatter overlays, density panels.

Numbers are written with fixed precision so identical inputs give identical bytes.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from html import escape

import numpy as np

WIDTH, HEIGHT = 640, 420
MARGIN = dict(left=64, right=16, top=36, bottom=48)
COLORS = {"mdn": "#1f5fbf", "qmdn": "#d62728", "truth": "#000000"}


def _f(v: float) -> str:
    return f"{v:.2f}"


@dataclass
class Axes:
    x_min: float
    x_max: float
    y_min: float
    y_max: float
    left: float = MARGIN["left"]
    top: float = MARGIN["top"]
    width: float = WIDTH - MARGIN["left"] - MARGIN["right"]
    height: float = HEIGHT - MARGIN["top"] - MARGIN["bottom"]
    elements: list = field(default_factory=list)

    def __post_init__(self):
        if self.x_max <= self.x_min:
            self.x_max = self.x_min + 1.0
        if self.y_max <= self.y_min:
            self.y_max = self.y_min + 1.0

    def px(self, x) -> np.ndarray:
        return self.left + (np.asarray(x, dtype=float) - self.x_min) / (self.x_max - self.x_min) * self.width

    def py(self, y) -> np.ndarray:
        return self.top + (1.0 - (np.asarray(y, dtype=float) - self.y_min) / (self.y_max - self.y_min)) * self.height

    def polyline(self, xs, ys, color: str, width: float = 1.2, opacity: float = 1.0) -> None:
        pts = " ".join(f"{_f(a)},{_f(b)}" for a, b in zip(self.px(xs), self.py(ys)))
        self.elements.append(
            f'<polyline fill="none" stroke="{color}" stroke-width="{width}" stroke-opacity="{opacity}" points="{pts}"/>'
        )

    def markers(self, xs, ys, color: str, r: float = 1.2, opacity: float = 0.6) -> None:
        for a, b in zip(self.px(xs), self.py(ys)):
            self.elements.append(f'<circle cx="{_f(a)}" cy="{_f(b)}" r="{r}" fill="{color}" fill-opacity="{opacity}"/>')

    def frame(self, title: str, xlabel: str, ylabel: str, n_ticks: int = 5) -> list[str]:
        x0, y0 = self.left, self.top
        x1, y1 = self.left + self.width, self.top + self.height
        out = [
            f'<rect x="{_f(x0)}" y="{_f(y0)}" width="{_f(self.width)}" height="{_f(self.height)}" fill="none" stroke="#444"/>',
            f'<text x="{_f((x0 + x1) / 2)}" y="{_f(y0 - 12)}" text-anchor="middle" font-size="14">{escape(title)}</text>',
            f'<text x="{_f((x0 + x1) / 2)}" y="{_f(y1 + 38)}" text-anchor="middle" font-size="12">{escape(xlabel)}</text>',
            f'<text x="14" y="{_f((y0 + y1) / 2)}" text-anchor="middle" font-size="12" '
            f'transform="rotate(-90 14 {_f((y0 + y1) / 2)})">{escape(ylabel)}</text>',
        ]
        for v in np.linspace(self.x_min, self.x_max, n_ticks):
            p = float(self.px(v))
            out.append(f'<line x1="{_f(p)}" y1="{_f(y1)}" x2="{_f(p)}" y2="{_f(y1 + 4)}" stroke="#444"/>')
            out.append(f'<text class="xtick" x="{_f(p)}" y="{_f(y1 + 16)}" text-anchor="middle" font-size="10">{v:.3g}</text>')
        for v in np.linspace(self.y_min, self.y_max, n_ticks):
            p = float(self.py(v))
            out.append(f'<line x1="{_f(x0 - 4)}" y1="{_f(p)}" x2="{_f(x0)}" y2="{_f(p)}" stroke="#444"/>')
            out.append(f'<text class="ytick" x="{_f(x0 - 6)}" y="{_f(p + 3)}" text-anchor="end" font-size="10">{v:.3g}</text>')
        return out


def document(axes: Axes, title: str, xlabel: str, ylabel: str, legend: list[tuple[str, str]] = ()) -> str:
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">',
        f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
    ]
    parts += axes.frame(title, xlabel, ylabel)
    parts += axes.elements
    for i, (label, color) in enumerate(legend):
        x, y = axes.left + axes.width - 110, axes.top + 14 + 16 * i
        parts.append(f'<rect x="{_f(x)}" y="{_f(y - 8)}" width="10" height="10" fill="{color}"/>')
        parts.append(f'<text x="{_f(x + 14)}" y="{_f(y + 1)}" font-size="11">{escape(label)}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def loss_history_svg(histories: dict[str, list[list[float]]], title: str = "NLL loss history") -> str:
    """One polyline per ensemble member, coloured by model kind."""
    all_vals = [v for runs in histories.values() for run in runs for v in run]
    n_epochs = max((len(run) for runs in histories.values() for run in runs), default=1)
    ax = Axes(1, max(n_epochs, 2), min(all_vals, default=0.0), max(all_vals, default=1.0))
    for kind, runs in histories.items():
        for run in runs:
            ax.polyline(np.arange(1, len(run) + 1), run, COLORS.get(kind, "#555"), opacity=0.7)
    legend = [(kind, COLORS.get(kind, "#555")) for kind in histories]
    return document(ax, title, "epoch", "NLL", legend)


def scatter_svg(groups: dict[str, tuple[np.ndarray, np.ndarray]], title: str, extent=None) -> str:
    """Scatter overlay; every data row becomes one ``<circle>``."""
    xs = np.concatenate([np.asarray(g[0], dtype=float) for g in groups.values()])
    ys = np.concatenate([np.asarray(g[1], dtype=float) for g in groups.values()])
    if extent is None:
        extent = (xs.min(), xs.max(), ys.min(), ys.max())
    ax = Axes(*extent)
    for name, (gx, gy) in groups.items():
        ax.markers(gx, gy, COLORS.get(name, "#555"))
    return document(ax, title, "x", "y", [(k, COLORS.get(k, "#555")) for k in groups])


def density_svg(curves: dict[str, list[tuple[np.ndarray, np.ndarray]]], title: str, y_range: tuple[float, float]) -> str:
    """Density curves over the configured grid extent ``y_range``."""
    top = max((float(np.max(d)) for runs in curves.values() for _, d in runs), default=1.0)
    ax = Axes(y_range[0], y_range[1], 0.0, top * 1.05 if top > 0 else 1.0)
    for kind, runs in curves.items():
        for grid, dens in runs:
            ax.polyline(grid, dens, COLORS.get(kind, "#555"), opacity=0.8)
    return document(ax, title, "y", "p(y|x)", [(k, COLORS.get(k, "#555")) for k in curves])
