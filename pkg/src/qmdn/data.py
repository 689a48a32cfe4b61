"""Benchmark datasets: the double-slit conditional density and the logistic map."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .mixture import GaussianMixture, pdf

INTERF_WEIGHTS = (0.125, 0.2, 0.35, 0.2, 0.125)
INTERF_MEANS = (-2.0, -1.0, 0.0, 1.0, 2.0)
INTERF_STD = 0.15
CLASSICAL_WEIGHTS = (0.5, 0.5)
CLASSICAL_MEANS = (-1.0, 1.0)
CLASSICAL_STD = 0.1


class DataFormatError(ValueError):
    pass


@dataclass(frozen=True)
class Dataset:
    x: np.ndarray
    y: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        x = np.array(self.x, dtype=np.float64).reshape(-1)
        y = np.array(self.y, dtype=np.float64).reshape(-1)
        if x.shape != y.shape:
            raise ValueError(f"x and y lengths differ: {x.size} vs {y.size}")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
            raise ValueError("dataset contains NaN or Inf")
        if "n" in self.meta and int(self.meta["n"]) != x.size:
            raise ValueError(f"meta says n={self.meta['n']} but dataset has {x.size} pairs")
        x.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)

    def __len__(self):
        return self.x.size

    @property
    def pairs(self) -> np.ndarray:
        return np.column_stack([self.x, self.y])


# ---------------------------------------------------------------------------
# Double slit
# ---------------------------------------------------------------------------

def double_slit_mixture(x: float) -> GaussianMixture:
    """The ground-truth conditional density at ``x`` as a 7-component mixture."""
    if not 0.0 <= x <= 1.0:
        raise ValueError(f"double-slit input must lie in [0, 1], got {x}")
    w = [(1.0 - x) * a for a in INTERF_WEIGHTS] + [x * a for a in CLASSICAL_WEIGHTS]
    mu = list(INTERF_MEANS) + list(CLASSICAL_MEANS)
    sd = [INTERF_STD] * 5 + [CLASSICAL_STD] * 2
    return GaussianMixture(np.array(w), np.array(mu), np.array(sd))


def double_slit_pdf(x: float, y):
    return pdf(double_slit_mixture(x), y)


def gen_double_slit(n: int = 20000, rng: np.random.Generator | int | None = 0) -> Dataset:
    """x ~ U[0, 1]; y drawn from the conditional mixture at that x."""
    if n < 1:
        raise ValueError("n must be positive")
    seed = rng if isinstance(rng, (int, np.integer)) else None
    rng = np.random.default_rng(rng)
    x = rng.random(n)
    collapsed = rng.random(n) < x
    u = rng.random(n)
    z = rng.standard_normal(n)
    interf_idx = np.searchsorted(np.cumsum(INTERF_WEIGHTS), u * sum(INTERF_WEIGHTS), side="right")
    interf_idx = np.minimum(interf_idx, len(INTERF_WEIGHTS) - 1)
    y_interf = np.asarray(INTERF_MEANS)[interf_idx] + INTERF_STD * z
    y_class = np.where(u < 0.5, CLASSICAL_MEANS[0], CLASSICAL_MEANS[1]) + CLASSICAL_STD * z
    y = np.where(collapsed, y_class, y_interf)
    meta = {"generator": "double-slit", "seed": seed, "n": n, "params": {"x_law": "uniform[0,1]"}}
    return Dataset(x, y, meta)


# ---------------------------------------------------------------------------
# Logistic map
# ---------------------------------------------------------------------------

def logistic_series(x: float, y0: float = 0.5, discard: int = 5, keep: int = 100) -> np.ndarray:
    """Iterate ``y <- x*y*(1-y)`` from ``y0``, drop ``discard`` iterates, return the next ``keep``."""
    if not 0.0 <= x <= 4.0:
        raise ValueError(f"logistic parameter must lie in [0, 4], got {x}")
    if not 0.0 < y0 < 1.0:
        raise ValueError(f"initial value must lie in (0, 1), got {y0}")
    out = np.empty(keep)
    y = y0
    for i in range(discard + keep):
        y = x * y * (1.0 - y)
        if i >= discard:
            out[i - discard] = y
    return out


def logistic_grid(n_x: int = 150, lo: float = 2.5, hi: float = 4.0) -> np.ndarray:
    """Evenly spaced grid on ``[lo, hi)``."""
    return lo + (hi - lo) * np.arange(n_x) / n_x


def gen_logistic(n_x: int = 150, per_x: int = 100, y0: float = 0.5, discard: int = 5) -> Dataset:
    grid = logistic_grid(n_x)
    ys = np.concatenate([logistic_series(float(r), y0, discard, per_x) for r in grid])
    xs = np.repeat(grid, per_x)
    meta = {
        "generator": "logistic",
        "seed": None,
        "n": int(xs.size),
        "params": {"n_x": n_x, "per_x": per_x, "y0": y0, "discard": discard, "x_range": [2.5, 4.0]},
    }
    return Dataset(xs, ys, meta)


# ---------------------------------------------------------------------------
# CSV persistence
# ---------------------------------------------------------------------------

def _meta_path(path: Path) -> Path:
    return path.with_name(path.name + ".meta")


def _fmt(v: float) -> str:
    return format(float(v), ".17g")


def save_csv(ds: Dataset, path) -> None:
    """Write ``x,y`` rows plus a sibling ``<name>.meta`` key-value file."""
    path = Path(path)
    rows = ["x,y"] + [f"{_fmt(a)},{_fmt(b)}" for a, b in zip(ds.x, ds.y)]
    path.write_text("\n".join(rows) + "\n")
    meta = dict(ds.meta)
    meta["n"] = len(ds)
    lines = [f"{key}={json.dumps(meta[key], sort_keys=True)}" for key in ("generator", "seed", "n", "params") if key in meta]
    lines += [f"{k}={json.dumps(v, sort_keys=True)}" for k, v in sorted(meta.items()) if k not in ("generator", "seed", "n", "params")]
    _meta_path(path).write_text("\n".join(lines) + "\n")


def load_meta(path) -> dict:
    mp = _meta_path(Path(path))
    if not mp.exists():
        return {}
    meta = {}
    for line in mp.read_text().splitlines():
        if not line.strip():
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise DataFormatError(f"{mp}: malformed metadata line {line!r}")
        meta[key.strip()] = json.loads(value)
    return meta


def load_csv(path) -> Dataset:
    path = Path(path)
    lines = [ln for ln in path.read_text().splitlines() if ln.strip()]
    if not lines:
        raise DataFormatError(f"{path}: empty file")
    if lines[0].replace(" ", "") != "x,y":
        raise DataFormatError(f"{path}: expected header 'x,y', got {lines[0]!r}")
    if len(lines) == 1:
        raise DataFormatError(f"{path}: no data rows")
    xs, ys = [], []
    for lineno, line in enumerate(lines[1:], start=2):
        parts = line.split(",")
        if len(parts) != 2:
            raise DataFormatError(f"{path}:{lineno}: expected 2 fields, got {len(parts)}")
        try:
            a, b = float(parts[0]), float(parts[1])
        except ValueError as exc:
            raise DataFormatError(f"{path}:{lineno}: non-numeric field") from exc
        if not (math.isfinite(a) and math.isfinite(b)):
            raise DataFormatError(f"{path}:{lineno}: non-finite value")
        xs.append(a)
        ys.append(b)
    meta = load_meta(path)
    if "n" in meta and meta["n"] != len(xs):
        raise DataFormatError(f"{path}: metadata says n={meta['n']} but file has {len(xs)} rows")
    return Dataset(np.array(xs), np.array(ys), meta)
