"""Classical MDN (1 -> 5 tanh -> 15) and quantum MDN (three circuit heads).

Both models keep all trainable values in one flat ``params`` vector so the
optimiser and the serialiser never need to know the architecture.  Inputs
are min-max normalised to ``t in [0, 1]`` with bounds taken from the
training set; the quantum model embeds ``t`` as the rotation angle
``embed_scale * t`` (default pi/2, so the upper bound lands on the uniform
superposition rather than on the reference state ``|1...1>``).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .mixture import (
    SIGMA_FLOOR,
    GaussianMixture,
    mixture_from_state_probs,
    nll_gradient,
    state_probs_vjp,
)
from .qsim import CircuitSpec, batch_backward, batch_forward

N_HIDDEN = 5
N_MODES = 5
N_OUT = 3 * N_MODES
CLASSICAL_PARAMS = N_HIDDEN + N_HIDDEN + N_OUT * N_HIDDEN + N_OUT  # 100
N_HEADS = 3
INIT_STD = 0.05
LOG_SIGMA_MAX = 50.0
EMBED_SCALE = math.pi / 2
FORMAT_VERSION = 1


@dataclass(frozen=True)
class Normalization:
    """Per-dataset constants stored with a trained model."""

    x_min: float = 0.0
    x_max: float = 1.0
    sigma_scale: float = 1.0

    @classmethod
    def from_data(cls, xs, ys) -> "Normalization":
        xs = np.asarray(xs, dtype=np.float64)
        ys = np.asarray(ys, dtype=np.float64)
        lo, hi = float(xs.min()), float(xs.max())
        if hi <= lo:
            hi = lo + 1.0
        scale = 0.5 * float(ys.std())
        return cls(lo, hi, scale if scale > 0 else 1.0)

    def scale_x(self, x) -> np.ndarray:
        return (np.asarray(x, dtype=np.float64) - self.x_min) / (self.x_max - self.x_min)


@dataclass(frozen=True)
class ClassicalMdn:
    params: np.ndarray
    norm: Normalization = field(default_factory=Normalization)
    kind = "mdn"

    def __post_init__(self):
        p = np.array(self.params, dtype=np.float64).reshape(-1)
        if p.size != CLASSICAL_PARAMS:
            raise ValueError(f"classical MDN has {CLASSICAL_PARAMS} parameters, got {p.size}")
        p.setflags(write=False)
        object.__setattr__(self, "params", p)

    @property
    def W1(self) -> np.ndarray:
        return self.params[:N_HIDDEN].reshape(N_HIDDEN, 1)

    @property
    def b1(self) -> np.ndarray:
        return self.params[N_HIDDEN : 2 * N_HIDDEN]

    @property
    def W2(self) -> np.ndarray:
        return self.params[2 * N_HIDDEN : 2 * N_HIDDEN + N_OUT * N_HIDDEN].reshape(N_OUT, N_HIDDEN)

    @property
    def b2(self) -> np.ndarray:
        return self.params[2 * N_HIDDEN + N_OUT * N_HIDDEN :]

    @property
    def n_modes(self) -> int:
        return N_MODES


@dataclass(frozen=True)
class QMdn:
    params: np.ndarray
    spec: CircuitSpec = field(default_factory=CircuitSpec)
    norm: Normalization = field(default_factory=Normalization)
    embed_scale: float = EMBED_SCALE
    kind = "qmdn"

    def __post_init__(self):
        p = np.array(self.params, dtype=np.float64).reshape(-1)
        if p.size != N_HEADS * self.spec.n_params:
            raise ValueError(f"Q-MDN has {N_HEADS * self.spec.n_params} parameters, got {p.size}")
        p.setflags(write=False)
        object.__setattr__(self, "params", p)

    @property
    def heads(self) -> np.ndarray:
        """Angles as ``(3, n_params)`` in the order alpha, mu, sigma."""
        return self.params.reshape(N_HEADS, self.spec.n_params)

    @property
    def alpha_head(self) -> np.ndarray:
        return self.heads[0]

    @property
    def mu_head(self) -> np.ndarray:
        return self.heads[1]

    @property
    def sigma_head(self) -> np.ndarray:
        return self.heads[2]

    @property
    def n_modes(self) -> int:
        return self.spec.dim - 1


def param_count(model) -> int:
    return int(model.params.size)


def with_params(model, params):
    return replace(model, params=params)


def bind_data(model, xs, ys):
    """Attach normalisation constants computed from training data."""
    return replace(model, norm=Normalization.from_data(xs, ys))


def init_classical(rng: np.random.Generator, std: float = INIT_STD) -> ClassicalMdn:
    return ClassicalMdn(rng.normal(0.0, std, CLASSICAL_PARAMS))


def init_qmdn(rng: np.random.Generator, spec: CircuitSpec | None = None, std: float = INIT_STD) -> QMdn:
    spec = spec or CircuitSpec()
    return QMdn(rng.normal(0.0, std, N_HEADS * spec.n_params), spec)


def init_model(kind: str, rng: np.random.Generator, spec: CircuitSpec | None = None):
    if kind == "mdn":
        return init_classical(rng)
    if kind == "qmdn":
        return init_qmdn(rng, spec)
    raise ValueError(f"unknown model kind {kind!r}")


# ---------------------------------------------------------------------------
# Classical forward / backward
# ---------------------------------------------------------------------------

def _classical_pass(model: ClassicalMdn, x):
    t = model.norm.scale_x(x)
    hidden = np.tanh(t[..., None] * model.W1[:, 0] + model.b1)
    out = hidden @ model.W2.T + model.b2
    logits, means, log_sd = out[..., :N_MODES], out[..., N_MODES : 2 * N_MODES], out[..., 2 * N_MODES :]
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    weights = e / e.sum(axis=-1, keepdims=True)
    raw_sd = np.exp(np.minimum(log_sd, LOG_SIGMA_MAX))
    stds = np.maximum(raw_sd, SIGMA_FLOOR) * model.norm.sigma_scale
    gm = GaussianMixture(weights, means, stds)
    live = (raw_sd > SIGMA_FLOOR) & (log_sd < LOG_SIGMA_MAX)
    return gm, (t, hidden, live)


def forward_classical(model: ClassicalMdn, x) -> GaussianMixture:
    """Mixture with 5 components: softmax weights, raw means, exp stds."""
    return _classical_pass(model, x)[0]


def backward_classical(model: ClassicalMdn, x, y, weight=1.0):
    """Gradient and value of ``sum_b weight_b * (-log p(y_b | x_b))``.

    ``x``/``y`` may be scalars or equal-length arrays.  Returns
    ``(grad, loss)`` with ``grad`` of length 100.
    """
    x = np.atleast_1d(np.asarray(x, dtype=np.float64))
    y = np.atleast_1d(np.asarray(y, dtype=np.float64))
    w = np.broadcast_to(np.asarray(weight, dtype=np.float64), x.shape)
    gm, (t, hidden, live) = _classical_pass(model, x)
    loss, d_w, d_mu, d_sd = nll_gradient(gm, y)

    alpha = gm.weights
    d_logits = alpha * (d_w - np.sum(alpha * d_w, axis=-1, keepdims=True))
    d_logsd = np.where(live, d_sd * gm.stds, 0.0)
    d_out = np.concatenate([d_logits, d_mu, d_logsd], axis=-1) * w[:, None]

    g_W2 = d_out.T @ hidden
    g_b2 = d_out.sum(axis=0)
    d_pre = (d_out @ model.W2) * (1.0 - hidden * hidden)
    g_W1 = d_pre.T @ t
    g_b1 = d_pre.sum(axis=0)
    grad = np.concatenate([g_W1.ravel(), g_b1, g_W2.ravel(), g_b2])
    return grad, float(np.sum(w * loss))


# ---------------------------------------------------------------------------
# Quantum forward / backward
# ---------------------------------------------------------------------------

def embed_angle(model: QMdn, x) -> np.ndarray:
    return model.embed_scale * model.norm.scale_x(x)


def head_probabilities(model: QMdn, x) -> np.ndarray:
    """Basis-state probabilities of the three heads, ``(3, B, 2**n)``."""
    probs, _ = batch_forward(model.spec, model.heads, np.atleast_1d(embed_angle(model, x)))
    return probs


def forward_qmdn(model: QMdn, x) -> GaussianMixture:
    """Mixture with ``2**n - 1`` components read off the three heads."""
    scalar = np.ndim(x) == 0
    probs = head_probabilities(model, x)
    gm = mixture_from_state_probs(probs[0], probs[1], probs[2], model.norm.sigma_scale)
    return gm[0] if scalar else gm


def backward_qmdn(model: QMdn, x, y, weight=1.0):
    """Gradient and value of ``sum_b weight_b * (-log p(y_b | x_b))``, gradient length 108."""
    x = np.atleast_1d(np.asarray(x, dtype=np.float64))
    y = np.atleast_1d(np.asarray(y, dtype=np.float64))
    w = np.broadcast_to(np.asarray(weight, dtype=np.float64), x.shape)
    probs, tape = batch_forward(model.spec, model.heads, embed_angle(model, x))
    gm, cache = mixture_from_state_probs(
        probs[0], probs[1], probs[2], model.norm.sigma_scale, return_cache=True
    )
    loss, d_w, d_mu, d_sd = nll_gradient(gm, y)
    ww = w[:, None]
    g_a, g_m, g_s = state_probs_vjp(cache, d_w * ww, d_mu * ww, d_sd * ww)
    grads = batch_backward(tape, np.stack([g_a, g_m, g_s]))
    return grads.reshape(-1), float(np.sum(w * loss))


def forward(model, x) -> GaussianMixture:
    if isinstance(model, QMdn):
        return forward_qmdn(model, x)
    return forward_classical(model, x)


def backward(model, x, y, weight=1.0):
    if isinstance(model, QMdn):
        return backward_qmdn(model, x, y, weight)
    return backward_classical(model, x, y, weight)


# ---------------------------------------------------------------------------
# Text serialisation
# ---------------------------------------------------------------------------

def _fmt(v: float) -> str:
    return format(float(v), ".17g")


def dumps_model(model) -> str:
    lines = [f"qmdn-model {FORMAT_VERSION}", f"kind {model.kind}"]
    if isinstance(model, QMdn):
        lines.append(f"n_qubits {model.spec.n_qubits}")
        lines.append(f"n_layers {model.spec.n_layers}")
        lines.append("entangler " + " ".join(f"{c}-{t}" for c, t in model.spec.entangler))
        lines.append(f"embed_scale {_fmt(model.embed_scale)}")
    lines += [
        f"x_min {_fmt(model.norm.x_min)}",
        f"x_max {_fmt(model.norm.x_max)}",
        f"sigma_scale {_fmt(model.norm.sigma_scale)}",
        f"n_params {model.params.size}",
        "params",
    ]
    lines += [_fmt(v) for v in model.params]
    return "\n".join(lines) + "\n"


def loads_model(text: str):
    lines = text.splitlines()
    if not lines or lines[0].split()[:1] != ["qmdn-model"]:
        raise ValueError("not a model file (missing 'qmdn-model' header)")
    version = int(lines[0].split()[1])
    if version != FORMAT_VERSION:
        raise ValueError(f"unsupported model format version {version}")
    header = {}
    i = 1
    while i < len(lines) and lines[i] != "params":
        key, _, value = lines[i].partition(" ")
        header[key] = value
        i += 1
    params = np.array([float(v) for v in lines[i + 1 :] if v.strip()])
    if params.size != int(header["n_params"]):
        raise ValueError(f"expected {header['n_params']} parameters, found {params.size}")
    norm = Normalization(float(header["x_min"]), float(header["x_max"]), float(header["sigma_scale"]))
    if header["kind"] == "mdn":
        return ClassicalMdn(params, norm)
    if header["kind"] == "qmdn":
        pairs = tuple(tuple(int(q) for q in p.split("-")) for p in header.get("entangler", "").split())
        spec = CircuitSpec(int(header["n_qubits"]), int(header["n_layers"]), pairs)
        return QMdn(params, spec, norm, float(header["embed_scale"]))
    raise ValueError(f"unknown model kind {header['kind']!r}")


def save_model(model, path) -> None:
    Path(path).write_text(dumps_model(model))


def load_model(path):
    return loads_model(Path(path).read_text())
