"""Minibatch Adam training of either model family, singly or as an ensemble."""

from __future__ import annotations

import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .data import Dataset
from .models import backward, bind_data, init_model, with_params

log = logging.getLogger(__name__)


class TrainingAborted(RuntimeError):
    """Raised when a batch produces a non-finite loss or gradient."""


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 5e-3
    batch_size: int = 64
    epochs: int = 100
    ensemble_size: int = 10
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        for name in ("batch_size", "epochs", "ensemble_size"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if not self.learning_rate > 0:
            raise ValueError(f"learning_rate must be positive, got {self.learning_rate}")


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def zeros(cls, n: int) -> "AdamState":
        return cls(np.zeros(n), np.zeros(n), 0)


def adam_step(params, grads, state: AdamState, lr: float, beta1=0.9, beta2=0.999, eps=1e-8):
    """One bias-corrected Adam update; returns new params and a new state."""
    params = np.asarray(params, dtype=np.float64)
    grads = np.asarray(grads, dtype=np.float64)
    if not (params.shape == grads.shape == state.m.shape == state.v.shape):
        raise ValueError("params, grads and optimiser moments must have equal lengths")
    t = state.t + 1
    m = beta1 * state.m + (1.0 - beta1) * grads
    v = beta2 * state.v + (1.0 - beta2) * grads * grads
    m_hat = m / (1.0 - beta1**t)
    v_hat = v / (1.0 - beta2**t)
    return params - lr * m_hat / (np.sqrt(v_hat) + eps), AdamState(m, v, t)


@dataclass
class TrainReport:
    model_kind: str
    seed: int
    losses: list
    final_params: list
    wall_clock: float = 0.0
    config: dict = field(default_factory=dict)

    @property
    def final_loss(self) -> float:
        return self.losses[-1]

    def to_json(self, include_timing: bool = False) -> str:
        d = {
            "model_kind": self.model_kind,
            "seed": self.seed,
            "epochs": len(self.losses),
            "final_loss": self.final_loss,
            "losses": self.losses,
            "final_params": self.final_params,
            "config": self.config,
        }
        if include_timing:
            d["wall_clock"] = self.wall_clock
        return json.dumps(d, indent=2, sort_keys=True) + "\n"

    def loss_csv(self) -> str:
        rows = ["epoch,nll"] + [f"{i + 1},{format(v, '.17g')}" for i, v in enumerate(self.losses)]
        return "\n".join(rows) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "TrainReport":
        d = json.loads(text)
        return cls(d["model_kind"], d["seed"], d["losses"], d["final_params"], d.get("wall_clock", 0.0), d.get("config", {}))


def epoch_rng(seed: int, epoch: int) -> np.random.Generator:
    return np.random.default_rng([seed, epoch])


def train_model(model, ds: Dataset, cfg: TrainConfig, seed: int | None = None, progress=None):
    """Train ``model`` on ``ds``; returns ``(trained_model, TrainReport)``.

    Each epoch shuffles with a generator derived from ``(seed, epoch)``,
    walks minibatches (the last one may be short) and records the mean
    training NLL over the epoch.
    """
    if len(ds) == 0:
        raise ValueError("cannot train on an empty dataset")
    seed = cfg.seed if seed is None else seed
    start = time.perf_counter()
    n = len(ds)
    params = model.params.copy()
    state = AdamState.zeros(params.size)
    losses = []
    for epoch in range(cfg.epochs):
        order = epoch_rng(seed, epoch).permutation(n)
        total = 0.0
        for b, lo in enumerate(range(0, n, cfg.batch_size)):
            idx = order[lo : lo + cfg.batch_size]
            current = with_params(model, params)
            grad, loss = backward(current, ds.x[idx], ds.y[idx], 1.0 / idx.size)
            if not (np.isfinite(loss) and np.all(np.isfinite(grad))):
                raise TrainingAborted(
                    f"non-finite loss/gradient at epoch {epoch + 1}, batch {b + 1} "
                    f"(loss={loss}, |params|={np.linalg.norm(params):.6g})"
                )
            params, state = adam_step(params, grad, state, cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.eps)
            total += loss * idx.size
        losses.append(total / n)
        log.debug("%s seed=%d epoch %d nll %.6f", model.kind, seed, epoch + 1, losses[-1])
        if progress is not None:
            progress(epoch + 1, losses[-1])
    trained = with_params(model, params)
    report = TrainReport(
        model.kind,
        int(seed),
        [float(v) for v in losses],
        [float(v) for v in params],
        time.perf_counter() - start,
        asdict(cfg),
    )
    return trained, report


def _train_member(args):
    kind, ds, cfg, seed = args
    model = init_model(kind, np.random.default_rng(seed))
    model = bind_data(model, ds.x, ds.y)
    return train_model(model, ds, cfg, seed)


def train_ensemble(kind: str, ds: Dataset, cfg: TrainConfig, workers: int = 1):
    """Train ``cfg.ensemble_size`` independently initialised members with seeds ``seed + k``.

    ``workers > 1`` fans members out to processes; results are identical
    to the sequential run because members share no state.
    """
    jobs = [(kind, ds, cfg, cfg.seed + k) for k in range(cfg.ensemble_size)]
    if workers <= 1 or len(jobs) == 1:
        return [_train_member(job) for job in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_train_member, jobs))


def write_report(report: TrainReport, out_dir, stem: str) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / f"{stem}.json").write_text(report.to_json())
    (out / f"{stem}_loss.csv").write_text(report.loss_csv())
