"""One-dimensional Gaussian mixtures and the qubit-probability parameterisation.

A :class:`GaussianMixture` may carry leading batch dimensions: ``weights``,
``means`` and ``stds`` all have shape ``(..., K)``.  Every density function
broadcasts ``y`` against the leading shape, so a minibatch of conditional
mixtures is just one object.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)
PROB_CLAMP = 1e-10
SIGMA_FLOOR = 1e-4
SIMPLEX_TOL = 1e-9


@dataclass(frozen=True)
class GaussianMixture:
    weights: np.ndarray
    means: np.ndarray
    stds: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        mu = np.asarray(self.means, dtype=np.float64)
        sd = np.asarray(self.stds, dtype=np.float64)
        if not (w.shape == mu.shape == sd.shape) or w.ndim == 0:
            raise ValueError(f"weights/means/stds shapes differ: {w.shape}, {mu.shape}, {sd.shape}")
        if np.any(w < 0) or np.any(w > 1) or np.any(np.abs(w.sum(axis=-1) - 1.0) > SIMPLEX_TOL):
            raise ValueError("mixture weights must lie on the probability simplex")
        if not np.all(sd > 0):
            raise ValueError("mixture standard deviations must be positive")
        if not (np.all(np.isfinite(mu)) and np.all(np.isfinite(sd))):
            raise ValueError("mixture means and stds must be finite")
        for name, arr in (("weights", w), ("means", mu), ("stds", sd)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def n_components(self) -> int:
        return self.weights.shape[-1]

    @property
    def batch_shape(self) -> tuple:
        return self.weights.shape[:-1]

    def __getitem__(self, idx) -> "GaussianMixture":
        if not self.batch_shape:
            raise TypeError("cannot index an unbatched mixture")
        return GaussianMixture(self.weights[idx], self.means[idx], self.stds[idx])

    def __len__(self) -> int:
        if not self.batch_shape:
            raise TypeError("unbatched mixture has no length")
        return self.batch_shape[0]

    @classmethod
    def stack(cls, mixtures: Sequence["GaussianMixture"]) -> "GaussianMixture":
        return cls(
            np.stack([m.weights for m in mixtures]),
            np.stack([m.means for m in mixtures]),
            np.stack([m.stds for m in mixtures]),
        )


def logsumexp(a: np.ndarray, axis: int = -1) -> np.ndarray:
    """``log(sum(exp(a)))`` along ``axis`` without overflow; all ``-inf`` gives ``-inf``."""
    a = np.asarray(a, dtype=np.float64)
    top = np.max(a, axis=axis, keepdims=True)
    top = np.where(np.isfinite(top), top, 0.0)
    with np.errstate(divide="ignore"):
        out = np.log(np.sum(np.exp(a - top), axis=axis, keepdims=True)) + top
    return np.squeeze(out, axis=axis)


def component_log_pdf(gm: GaussianMixture, y) -> np.ndarray:
    """``log N(y; mu_i, sigma_i)`` for every component, shape ``(..., K)``."""
    y = np.asarray(y, dtype=np.float64)[..., None]
    z = (y - gm.means) / gm.stds
    return -LOG_SQRT_2PI - np.log(gm.stds) - 0.5 * z * z


def _log_weights(gm: GaussianMixture) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return np.log(gm.weights)


def pdf(gm: GaussianMixture, y):
    """Mixture density evaluated term by term, without log-space tricks."""
    y = np.asarray(y, dtype=np.float64)[..., None]
    z = (y - gm.means) / gm.stds
    dens = np.exp(-0.5 * z * z) / (math.sqrt(2.0 * math.pi) * gm.stds)
    out = np.sum(gm.weights * dens, axis=-1)
    return float(out) if out.ndim == 0 else out


def log_pdf(gm: GaussianMixture, y):
    out = logsumexp(_log_weights(gm) + component_log_pdf(gm, y), axis=-1)
    return float(out) if np.ndim(out) == 0 else out


def responsibilities(gm: GaussianMixture, y) -> np.ndarray:
    """Posterior component probabilities ``alpha_i N_i / sum_j alpha_j N_j``."""
    joint = _log_weights(gm) + component_log_pdf(gm, y)
    return np.exp(joint - logsumexp(joint, axis=-1)[..., None])


def nll(mixtures, ys) -> float:
    """Mean negative log-likelihood of ``ys`` under per-sample mixtures."""
    if not isinstance(mixtures, GaussianMixture):
        mixtures = list(mixtures)
        if not mixtures:
            raise ValueError("nll of an empty batch")
        mixtures = GaussianMixture.stack(mixtures)
    ys = np.asarray(ys, dtype=np.float64)
    if ys.size == 0:
        raise ValueError("nll of an empty batch")
    if mixtures.batch_shape != ys.shape:
        raise ValueError(f"{mixtures.batch_shape} mixtures for {ys.shape} targets")
    return float(-np.mean(log_pdf(mixtures, ys)))


def nll_gradient(gm: GaussianMixture, y):
    """Partial derivatives of ``-log p(y)`` w.r.t. weights, means and stds.

    Returns ``(loss, d_weights, d_means, d_stds)``; batched mixtures give
    per-sample values.  The weight derivative treats the weights as free
    coordinates (no simplex projection).
    """
    y = np.asarray(y, dtype=np.float64)
    comp = component_log_pdf(gm, y)
    joint = _log_weights(gm) + comp
    log_p = logsumexp(joint, axis=-1)
    gamma = np.exp(joint - log_p[..., None])
    diff = y[..., None] - gm.means
    inv_var = 1.0 / (gm.stds * gm.stds)
    d_w = -np.exp(comp - log_p[..., None])
    d_mu = -gamma * diff * inv_var
    d_sd = -gamma * (diff * diff * inv_var - 1.0) / gm.stds
    return -log_p, d_w, d_mu, d_sd


def sample(gm: GaussianMixture, rng: np.random.Generator, size=None):
    """Draw from the mixture: categorical component by weight, then a Gaussian.

    For a batched mixture one value is drawn per batch element and ``size``
    must be left as ``None``.
    """
    if gm.batch_shape:
        if size is not None:
            raise ValueError("size is not supported for batched mixtures")
        w = gm.weights.reshape(-1, gm.n_components)
        cdf = np.cumsum(w, axis=-1)
        u = rng.random(w.shape[0]) * cdf[:, -1]
        idx = np.minimum((u[:, None] >= cdf).sum(axis=-1), gm.n_components - 1)
        mu = gm.means.reshape(w.shape)[np.arange(w.shape[0]), idx]
        sd = gm.stds.reshape(w.shape)[np.arange(w.shape[0]), idx]
        return (mu + sd * rng.standard_normal(w.shape[0])).reshape(gm.batch_shape)
    idx = rng.choice(gm.n_components, size=size, p=gm.weights / gm.weights.sum())
    out = gm.means[idx] + gm.stds[idx] * rng.standard_normal(size)
    return float(out) if size is None else out


# ---------------------------------------------------------------------------
# Basis-state probabilities -> mixture parameters
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class StateProbsCache:
    """Clamped probabilities and masks needed to pull gradients back to the circuits."""

    pa: np.ndarray
    pm: np.ndarray
    ps: np.ndarray
    live_a: np.ndarray
    live_m: np.ndarray
    live_s: np.ndarray
    sigma_raw: np.ndarray
    sigma_live: np.ndarray
    sigma_scale: float


def _check_simplex(p: np.ndarray, name: str) -> None:
    if np.any(p < 0) or np.any(np.abs(p.sum(axis=-1) - 1.0) > SIMPLEX_TOL):
        raise ValueError(f"{name} is not a probability vector")


def mixture_from_state_probs(
    p_alpha, p_mu, p_sigma, sigma_scale: float = 1.0, *, return_cache=False, validate=True
):
    """Turn three basis-state probability vectors into a mixture with ``2**n - 1`` modes.

    With ``last`` the final basis state and probabilities clamped to
    ``[1e-10, 1]``::

        mu_i    = log(p_mu[i] / p_mu[last])
        sigma_i = max(p_sigma[i] / p_sigma[last], 1e-4) * sigma_scale
        alpha_i = p_alpha[i] / sum_{j != last} p_alpha[j]

    On the simplex the weight denominator equals ``1 - p_alpha[last]``; the
    summed form keeps the weights normalised when ``p_alpha[last]`` is near 1.
    Inputs may carry leading batch dimensions. ``validate=False`` skips the
    simplex check, which is only useful for probing the ratio structure.
    """
    arrays = []
    for name, p in (("p_alpha", p_alpha), ("p_mu", p_mu), ("p_sigma", p_sigma)):
        p = np.asarray(p, dtype=np.float64)
        if validate:
            _check_simplex(p, name)
        arrays.append(p)
    pa, pm, ps = (np.clip(p, PROB_CLAMP, 1.0) for p in arrays)
    live_a, live_m, live_s = (p > PROB_CLAMP for p in arrays)

    head_a = pa[..., :-1]
    weights = head_a / head_a.sum(axis=-1, keepdims=True)
    means = np.log(pm[..., :-1]) - np.log(pm[..., -1:])
    sigma_raw = ps[..., :-1] / ps[..., -1:]
    sigma_live = sigma_raw > SIGMA_FLOOR
    stds = np.maximum(sigma_raw, SIGMA_FLOOR) * sigma_scale
    gm = GaussianMixture(weights, means, stds)
    if not return_cache:
        return gm
    return gm, StateProbsCache(pa, pm, ps, live_a, live_m, live_s, sigma_raw, sigma_live, sigma_scale)


def state_probs_vjp(cache: StateProbsCache, d_weights, d_means, d_stds):
    """Pull mixture-parameter gradients back to the three probability vectors.

    Clamped probabilities and floored stds pass no gradient.
    """
    pa, pm, ps = cache.pa, cache.pm, cache.ps

    head = pa[..., :-1]
    total = head.sum(axis=-1, keepdims=True)
    g_head = (d_weights - np.sum(d_weights * head, axis=-1, keepdims=True) / total) / total
    g_a = np.concatenate([g_head, np.zeros_like(total)], axis=-1)

    g_m = np.concatenate(
        [d_means / pm[..., :-1], -np.sum(d_means, axis=-1, keepdims=True) / pm[..., -1:]], axis=-1
    )

    d_raw = np.where(cache.sigma_live, d_stds * cache.sigma_scale, 0.0)
    g_s = np.concatenate(
        [d_raw / ps[..., -1:], -np.sum(d_raw * cache.sigma_raw, axis=-1, keepdims=True) / ps[..., -1:]],
        axis=-1,
    )
    return g_a * cache.live_a, g_m * cache.live_m, g_s * cache.live_s
