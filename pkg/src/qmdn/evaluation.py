"""Post-training analysis: density curves, mode counting, KL to the double-slit truth."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import Dataset, double_slit_pdf
from .mixture import GaussianMixture, log_pdf, pdf, sample
from .models import forward

DENSITY_FLOOR = 1e-12
DEFAULT_GRIDS = {"double-slit": (-3.0, 3.0, 1001), "logistic": (0.0, 1.0, 1001)}
EVAL_XS = {"double-slit": (0.0, 0.4, 1.0), "logistic": (2.6, 3.3, 3.5, 3.9)}


@dataclass(frozen=True)
class DensityCurve:
    x: float
    y: np.ndarray
    density: np.ndarray

    def __post_init__(self):
        y = np.asarray(self.y, dtype=np.float64)
        d = np.asarray(self.density, dtype=np.float64)
        if y.shape != d.shape or y.ndim != 1:
            raise ValueError("grid and densities must be 1-D arrays of equal length")
        if np.any(np.diff(y) <= 0):
            raise ValueError("grid must be strictly ascending")
        if np.any(d < 0):
            raise ValueError("densities must be non-negative")
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "density", d)

    def mass(self) -> float:
        return float(np.trapezoid(self.density, self.y))

    def to_csv(self) -> str:
        rows = ["y,density"] + [f"{format(a, '.17g')},{format(b, '.17g')}" for a, b in zip(self.y, self.density)]
        return "\n".join(rows) + "\n"


def _mixture_at(model, x) -> GaussianMixture:
    if isinstance(model, GaussianMixture):
        return model
    return forward(model, x)


def density_grid(model, x: float, y_min: float, y_max: float, n_points: int = 1001) -> DensityCurve:
    if n_points < 2 or not y_min < y_max:
        raise ValueError("need n_points >= 2 and y_min < y_max")
    grid = np.linspace(y_min, y_max, n_points)
    return DensityCurve(float(x), grid, pdf(_mixture_at(model, x), grid))


def detect_modes(curve: DensityCurve, rel_threshold: float = 0.05) -> list[tuple[float, float]]:
    """Interior strict local maxima at least ``rel_threshold`` times the global maximum."""
    if not 0.0 < rel_threshold < 1.0:
        raise ValueError("rel_threshold must lie in (0, 1)")
    d = curve.density
    if d.size < 3:
        return []
    cut = rel_threshold * d.max()
    mid = d[1:-1]
    peak = (mid > d[:-2]) & (mid > d[2:]) & (mid >= cut)
    idx = np.nonzero(peak)[0] + 1
    return [(float(curve.y[i]), float(d[i])) for i in idx]


def kl_to_truth(model, x: float, grid=None) -> float:
    """Trapezoidal KL(truth || model) over ``grid`` for the double-slit density at ``x``."""
    grid = np.linspace(*DEFAULT_GRIDS["double-slit"]) if grid is None else np.asarray(grid, dtype=np.float64)
    p = np.maximum(double_slit_pdf(x, grid), DENSITY_FLOOR)
    q = np.maximum(pdf(_mixture_at(model, x), grid), DENSITY_FLOOR)
    return float(np.trapezoid(p * np.log(p / q), grid))


def held_out_nll(model, ds: Dataset) -> float:
    if len(ds) == 0:
        raise ValueError("held-out NLL of an empty dataset")
    return float(-np.mean(log_pdf(forward(model, ds.x), ds.y)))


def sample_predictions(model, xs, rng: np.random.Generator) -> Dataset:
    xs = np.asarray(xs, dtype=np.float64).reshape(-1)
    ys = sample(forward(model, xs), rng)
    return Dataset(xs, np.atleast_1d(ys), {"generator": f"{model.kind}-samples", "n": int(xs.size)})


def crossing_epoch(classical_losses, quantum_losses) -> int | None:
    """First epoch (1-based) from which the quantum curve stays below the classical one."""
    c = np.asarray(classical_losses, dtype=np.float64)
    q = np.asarray(quantum_losses, dtype=np.float64)
    below = q < c
    if not below[-1]:
        return None
    above = np.nonzero(~below)[0]
    return int(above[-1] + 2) if above.size else 1


def modes_csv(modes: list[tuple[float, float]]) -> str:
    rows = ["y,height"] + [f"{format(a, '.17g')},{format(b, '.17g')}" for a, b in modes]
    return "\n".join(rows) + "\n"


def write_json(obj, path) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")
