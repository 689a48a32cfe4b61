"""Noiseless statevector simulation of layered rotation/CNOT circuits.

Basis ordering: qubit 0 is the most significant bit of the basis index, so
for three qubits ``|q0 q1 q2>`` sits at index ``4*q0 + 2*q1 + q2``.

The circuit run by :func:`run_circuit` is

    |0...0>  ->  Rx(x_angle) on every wire
             ->  L x [ Rot(phi, theta, omega) on every wire, then the entangler CNOTs ]

with ``Rot(phi, theta, omega) = Rz(omega) Ry(theta) Rz(phi)``.  Angles are
stored flat with index ``(layer * n_qubits + qubit) * 3 + {0: phi, 1: theta, 2: omega}``.

All gate kernels accept amplitude arrays with arbitrary leading batch
dimensions, which is what the batched training path relies on.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

__all__ = [
    "StateVector",
    "CircuitSpec",
    "CircuitParams",
    "apply_rx",
    "apply_rot",
    "apply_cnot",
    "rot_matrix",
    "run_circuit",
    "circuit_gradient",
    "circuit_probs",
    "circuit_vjp",
    "circuit_unitary",
    "batch_forward",
    "batch_backward",
    "UnitaryTape",
]

NORM_TOL = 1e-10


@dataclass(frozen=True)
class StateVector:
    n_qubits: int
    amplitudes: np.ndarray

    def __post_init__(self):
        amps = np.asarray(self.amplitudes, dtype=np.complex128)
        if self.n_qubits < 1:
            raise ValueError(f"n_qubits must be positive, got {self.n_qubits}")
        if amps.shape != (2**self.n_qubits,):
            raise ValueError(
                f"expected {2**self.n_qubits} amplitudes for {self.n_qubits} qubits, got shape {amps.shape}"
            )
        amps.setflags(write=False)
        object.__setattr__(self, "amplitudes", amps)

    @classmethod
    def zero(cls, n_qubits: int) -> "StateVector":
        amps = np.zeros(2**n_qubits, dtype=np.complex128)
        amps[0] = 1.0
        return cls(n_qubits, amps)

    @classmethod
    def basis(cls, n_qubits: int, index: int) -> "StateVector":
        amps = np.zeros(2**n_qubits, dtype=np.complex128)
        amps[index] = 1.0
        return cls(n_qubits, amps)

    def probabilities(self) -> np.ndarray:
        return np.abs(self.amplitudes) ** 2

    def norm(self) -> float:
        return float(np.sum(self.probabilities()))


@dataclass(frozen=True)
class CircuitSpec:
    n_qubits: int = 3
    n_layers: int = 4
    entangler: tuple[tuple[int, int], ...] = field(default=((0, 1), (1, 2), (2, 0)))

    def __post_init__(self):
        if self.n_qubits < 1 or self.n_layers < 0:
            raise ValueError("n_qubits must be >= 1 and n_layers >= 0")
        pairs = tuple((int(c), int(t)) for c, t in self.entangler)
        for c, t in pairs:
            _check_pair(c, t, self.n_qubits)
        object.__setattr__(self, "entangler", pairs)

    @classmethod
    def ring(cls, n_qubits: int = 3, n_layers: int = 4) -> "CircuitSpec":
        if n_qubits == 1:
            return cls(1, n_layers, ())
        if n_qubits == 2:
            return cls(2, n_layers, ((0, 1),))
        pairs = tuple((q, (q + 1) % n_qubits) for q in range(n_qubits))
        return cls(n_qubits, n_layers, pairs)

    @classmethod
    def chain(cls, n_qubits: int = 3, n_layers: int = 4) -> "CircuitSpec":
        pairs = tuple((q, q + 1) for q in range(n_qubits - 1))
        return cls(n_qubits, n_layers, pairs)

    @property
    def n_params(self) -> int:
        return 3 * self.n_qubits * self.n_layers

    @property
    def dim(self) -> int:
        return 2**self.n_qubits


@dataclass(frozen=True)
class CircuitParams:
    angles: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.angles, dtype=np.float64).reshape(-1)
        a.setflags(write=False)
        object.__setattr__(self, "angles", a)

    def __len__(self):
        return self.angles.size

    def check(self, spec: CircuitSpec) -> None:
        if self.angles.size != spec.n_params:
            raise ValueError(f"circuit expects {spec.n_params} angles, got {self.angles.size}")

    def as_layers(self, spec: CircuitSpec) -> np.ndarray:
        """View as ``(n_layers, n_qubits, 3)``."""
        self.check(spec)
        return self.angles.reshape(spec.n_layers, spec.n_qubits, 3)


def _check_qubit(qubit: int, n_qubits: int) -> None:
    if not 0 <= qubit < n_qubits:
        raise IndexError(f"qubit {qubit} out of range for {n_qubits} qubits")


def _check_pair(control: int, target: int, n_qubits: int) -> None:
    _check_qubit(control, n_qubits)
    _check_qubit(target, n_qubits)
    if control == target:
        raise ValueError(f"CNOT control and target must differ (both {control})")


# ---------------------------------------------------------------------------
# 2x2 matrices (vectorised over leading dims of the angle arrays)
# ---------------------------------------------------------------------------

def rx_matrix(angle) -> np.ndarray:
    a = np.asarray(angle, dtype=np.float64)
    c, s = np.cos(a / 2), np.sin(a / 2)
    m = np.empty(a.shape + (2, 2), dtype=np.complex128)
    m[..., 0, 0] = c
    m[..., 0, 1] = -1j * s
    m[..., 1, 0] = -1j * s
    m[..., 1, 1] = c
    return m


def rot_matrix(phi, theta, omega) -> np.ndarray:
    """``Rz(omega) @ Ry(theta) @ Rz(phi)`` in closed form."""
    phi, theta, omega = np.broadcast_arrays(
        np.asarray(phi, dtype=np.float64), np.asarray(theta, dtype=np.float64), np.asarray(omega, dtype=np.float64)
    )
    c, s = np.cos(theta / 2), np.sin(theta / 2)
    plus = np.exp(-0.5j * (phi + omega))
    minus = np.exp(0.5j * (phi - omega))
    m = np.empty(phi.shape + (2, 2), dtype=np.complex128)
    m[..., 0, 0] = plus * c
    m[..., 0, 1] = -minus * s
    m[..., 1, 0] = np.conj(minus) * s
    m[..., 1, 1] = np.conj(plus) * c
    return m


def rot_derivatives(phi, theta, omega) -> np.ndarray:
    """Partial derivatives of :func:`rot_matrix`, shape ``(..., 3, 2, 2)`` ordered (phi, theta, omega)."""
    phi, theta, omega = np.broadcast_arrays(
        np.asarray(phi, dtype=np.float64), np.asarray(theta, dtype=np.float64), np.asarray(omega, dtype=np.float64)
    )
    c, s = np.cos(theta / 2), np.sin(theta / 2)
    plus = np.exp(-0.5j * (phi + omega))
    minus = np.exp(0.5j * (phi - omega))
    r00, r01, r10, r11 = plus * c, -minus * s, np.conj(minus) * s, np.conj(plus) * c
    d = np.empty(phi.shape + (3, 2, 2), dtype=np.complex128)
    # d/dphi
    d[..., 0, 0, 0] = -0.5j * r00
    d[..., 0, 0, 1] = 0.5j * r01
    d[..., 0, 1, 0] = -0.5j * r10
    d[..., 0, 1, 1] = 0.5j * r11
    # d/dtheta
    d[..., 1, 0, 0] = -0.5 * plus * s
    d[..., 1, 0, 1] = -0.5 * minus * c
    d[..., 1, 1, 0] = 0.5 * np.conj(minus) * c
    d[..., 1, 1, 1] = -0.5 * np.conj(plus) * s
    # d/domega
    d[..., 2, 0, 0] = -0.5j * r00
    d[..., 2, 0, 1] = -0.5j * r01
    d[..., 2, 1, 0] = 0.5j * r10
    d[..., 2, 1, 1] = 0.5j * r11
    return d


# ---------------------------------------------------------------------------
# Kernels on raw amplitude arrays of shape (..., 2**n)
# ---------------------------------------------------------------------------

def _split(amps: np.ndarray, qubit: int, n_qubits: int) -> np.ndarray:
    return amps.reshape(amps.shape[:-1] + (2**qubit, 2, 2 ** (n_qubits - qubit - 1)))


def _apply_1q(amps: np.ndarray, matrix: np.ndarray, qubit: int, n_qubits: int) -> np.ndarray:
    """Apply ``matrix`` (broadcastable ``(..., 2, 2)``) to ``qubit`` of ``amps``."""
    a = _split(amps, qubit, n_qubits)
    out = np.einsum("...ab,...ibj->...iaj", matrix, a)
    return out.reshape(out.shape[:-3] + (2**n_qubits,))


@lru_cache(maxsize=None)
def _cnot_perm(control: int, target: int, n_qubits: int) -> np.ndarray:
    idx = np.arange(2**n_qubits)
    cbit = 1 << (n_qubits - 1 - control)
    tbit = 1 << (n_qubits - 1 - target)
    perm = np.where(idx & cbit, idx ^ tbit, idx)
    perm.setflags(write=False)
    return perm


@lru_cache(maxsize=None)
def _entangler_perm(entangler: tuple[tuple[int, int], ...], n_qubits: int) -> tuple[np.ndarray, np.ndarray]:
    """Composite permutation of all entangler CNOTs and its inverse."""
    perm = np.arange(2**n_qubits)
    for c, t in entangler:
        # new[i] = old[p[i]] applied after the running composite
        perm = perm[_cnot_perm(c, t, n_qubits)]
    inv = np.empty_like(perm)
    inv[perm] = np.arange(perm.size)
    perm.setflags(write=False)
    inv.setflags(write=False)
    return perm, inv


def _product_embedding(x_angles: np.ndarray, n_qubits: int) -> np.ndarray:
    """Amplitudes of ``Rx(x)^{(x)n} |0...0>``, shape ``x_angles.shape + (2**n,)``."""
    x = np.asarray(x_angles, dtype=np.float64)
    single = np.stack([np.cos(x / 2) + 0j, -1j * np.sin(x / 2)], axis=-1)
    amps = single
    for _ in range(n_qubits - 1):
        amps = (amps[..., :, None] * single[..., None, :]).reshape(x.shape + (-1,))
    return amps


# ---------------------------------------------------------------------------
# Single-state public gates
# ---------------------------------------------------------------------------

def apply_rx(state: StateVector, qubit: int, angle: float) -> StateVector:
    _check_qubit(qubit, state.n_qubits)
    return StateVector(state.n_qubits, _apply_1q(state.amplitudes, rx_matrix(angle), qubit, state.n_qubits))


def apply_rot(state: StateVector, qubit: int, phi: float, theta: float, omega: float) -> StateVector:
    _check_qubit(qubit, state.n_qubits)
    m = rot_matrix(phi, theta, omega)
    return StateVector(state.n_qubits, _apply_1q(state.amplitudes, m, qubit, state.n_qubits))


def apply_cnot(state: StateVector, control: int, target: int) -> StateVector:
    _check_pair(control, target, state.n_qubits)
    return StateVector(state.n_qubits, state.amplitudes[_cnot_perm(control, target, state.n_qubits)])


# ---------------------------------------------------------------------------
# Batched circuit evaluation and adjoint gradient
# ---------------------------------------------------------------------------

def _as_heads(spec: CircuitSpec, angles) -> tuple[np.ndarray, bool]:
    a = np.asarray(angles.angles if isinstance(angles, CircuitParams) else angles, dtype=np.float64)
    squeeze = a.ndim == 1
    a = np.atleast_2d(a)
    if a.shape[-1] != spec.n_params:
        raise ValueError(f"circuit expects {spec.n_params} angles, got {a.shape[-1]}")
    return a.reshape(a.shape[0], spec.n_layers, spec.n_qubits, 3), squeeze


def _forward(spec: CircuitSpec, layers: np.ndarray, x: np.ndarray):
    """Final amplitudes ``(H, B, D)`` plus the per-layer rotation matrices."""
    n = spec.n_qubits
    # (H, L, n, 1, 2, 2) so each head's matrix broadcasts over the batch axis
    mats = rot_matrix(layers[..., 0], layers[..., 1], layers[..., 2])[:, :, :, None]
    perm, _ = _entangler_perm(spec.entangler, n)
    amps = np.broadcast_to(_product_embedding(x, n), (layers.shape[0], x.size, spec.dim))
    for layer in range(spec.n_layers):
        for q in range(n):
            amps = _apply_1q(amps, mats[:, layer, q], q, n)
        amps = amps[..., perm]
    return amps, mats


def circuit_probs(spec: CircuitSpec, angles, x_angles) -> np.ndarray:
    """Output probabilities for many heads and inputs at once.

    ``angles`` is ``(n_params,)`` or ``(H, n_params)``; ``x_angles`` is a scalar
    or 1-D array of length B.  Returns ``(H, B, 2**n)`` (leading axes dropped
    where the inputs were unbatched).
    """
    layers, squeeze_h = _as_heads(spec, angles)
    x = np.asarray(x_angles, dtype=np.float64)
    squeeze_b = x.ndim == 0
    amps, _ = _forward(spec, layers, x.reshape(-1))
    probs = amps.real**2 + amps.imag**2
    if squeeze_b:
        probs = probs[:, 0]
    if squeeze_h:
        probs = probs[0]
    return probs


def circuit_vjp(spec: CircuitSpec, angles, x_angles, cotangents) -> tuple[np.ndarray, np.ndarray]:
    """Adjoint-mode vector-Jacobian product.

    Given ``cotangents[h, b, i] = dLoss/dp_i`` for head ``h`` and input ``b``,
    returns ``(probs, grads)`` where ``grads[h, k] = sum_b dLoss/dangle_k``.
    One forward pass, then the state and the adjoint vector are walked back
    through the gates together.
    """
    layers, squeeze_h = _as_heads(spec, angles)
    x = np.asarray(x_angles, dtype=np.float64).reshape(-1)
    n, H = spec.n_qubits, layers.shape[0]
    g = np.asarray(cotangents, dtype=np.float64).reshape(H, x.size, spec.dim)

    psi, mats = _forward(spec, layers, x)
    probs = psi.real**2 + psi.imag**2
    lam = g * psi
    derivs = rot_derivatives(layers[..., 0], layers[..., 1], layers[..., 2])  # (H, L, n, 3, 2, 2)
    mats_dag = np.conj(np.swapaxes(mats, -1, -2))
    _, inv = _entangler_perm(spec.entangler, n)

    grads = np.zeros((H, spec.n_layers, n, 3))
    for layer in reversed(range(spec.n_layers)):
        psi = psi[..., inv]
        lam = lam[..., inv]
        for q in reversed(range(n)):
            psi = _apply_1q(psi, mats_dag[:, layer, q], q, n)
            # <lam| dR |psi_before> for the three angles of this gate
            ps = _split(psi, q, n)
            ls = _split(lam, q, n)
            outer = np.einsum("hniaj,hnicj->hac", np.conj(ls), ps)
            grads[:, layer, q] = 2.0 * np.einsum("hkab,hab->hk", derivs[:, layer, q], outer).real
            lam = _apply_1q(lam, mats_dag[:, layer, q], q, n)

    grads = grads.reshape(H, spec.n_params)
    if squeeze_h:
        return probs[0], grads[0]
    return probs, grads


def run_circuit(spec: CircuitSpec, params: CircuitParams, x_angle: float) -> np.ndarray:
    """Exact output probability vector of the circuit for one input angle.

    The simulation goes gate by gate through :class:`StateVector`.
    """
    params.check(spec)
    layers = params.as_layers(spec)
    state = StateVector.zero(spec.n_qubits)
    for q in range(spec.n_qubits):
        state = apply_rx(state, q, x_angle)
    for layer in range(spec.n_layers):
        for q in range(spec.n_qubits):
            state = apply_rot(state, q, *layers[layer, q])
        for c, t in spec.entangler:
            state = apply_cnot(state, c, t)
    return state.probabilities()


def circuit_gradient(spec: CircuitSpec, params: CircuitParams, x_angle: float, cotangent) -> np.ndarray:
    """Gradient of ``sum_i cotangent[i] * p_i`` with respect to the circuit angles.

    The input embedding angle is not trainable and gets no gradient.
    """
    params.check(spec)
    cot = np.asarray(cotangent, dtype=np.float64)
    if cot.shape != (spec.dim,):
        raise ValueError(f"cotangent must have length {spec.dim}, got shape {cot.shape}")
    _, grads = circuit_vjp(spec, params.angles, np.array([x_angle]), cot[None, :])
    return grads


# ---------------------------------------------------------------------------
# Layered-unitary fast path for training
# ---------------------------------------------------------------------------
#
# The trainable part of the circuit does not depend on the input, so for a
# minibatch it is cheaper to build each head's 2^n x 2^n unitary once and
# back-propagate through the L layer products than to push every sample
# through the gates.  With layer unitaries W_l = P K_l (P the entangler
# permutation, K_l the Kronecker product of the Rot gates) and
# C = sum_b |psi0_b><lam_b|, the gradient for an angle of layer l is
#     2 Re tr(dK_l M_l),   M_l = W_{l-1}..W_1 C W_L..W_{l+1} P.

@dataclass
class UnitaryTape:
    """Forward values kept by :func:`batch_forward` for :func:`batch_backward`."""

    spec: CircuitSpec
    layers: np.ndarray  # (H, L, n, 3)
    prefix: list  # prefix[l] = W_{l-1} ... W_1, each (H, D, D); prefix[L] is U
    walls: np.ndarray  # (H, L, D, D)
    embed: np.ndarray  # (B, D)
    psi: np.ndarray  # (H, B, D)


def _kron_rows(mats: np.ndarray) -> np.ndarray:
    """Kronecker product over the qubit axis: ``(..., n, 2, 2) -> (..., D, D)``."""
    n = mats.shape[-3]
    out = mats[..., 0, :, :]
    for q in range(1, n):
        m = mats[..., q, :, :]
        d = out.shape[-1] * 2
        out = (out[..., :, None, :, None] * m[..., None, :, None, :]).reshape(out.shape[:-2] + (d, d))
    return out


@lru_cache(maxsize=None)
def _trace_subscripts(n_qubits: int, qubit: int) -> str:
    # T[hl, b..., a...] contracted with R_k[hl, a_k, b_k] for every k != qubit
    bs = "abcdefgh"[:n_qubits]
    as_ = "ABCDEFGH"[:n_qubits]
    ops = ["hl" + bs + as_]
    for k in range(n_qubits):
        if k != qubit:
            ops.append("hl" + as_[k] + bs[k])
    return ",".join(ops) + "->hl" + bs[qubit] + as_[qubit]


def circuit_unitary(spec: CircuitSpec, angles) -> np.ndarray:
    """Unitary of the trainable layers, ``(D, D)`` or ``(H, D, D)``."""
    layers, squeeze = _as_heads(spec, angles)
    mats = rot_matrix(layers[..., 0], layers[..., 1], layers[..., 2])
    perm, _ = _entangler_perm(spec.entangler, spec.n_qubits)
    walls = _kron_rows(mats)[..., perm, :]
    u = np.broadcast_to(np.eye(spec.dim, dtype=np.complex128), (layers.shape[0], spec.dim, spec.dim))
    for layer in range(spec.n_layers):
        u = walls[:, layer] @ u
    return u[0] if squeeze else u


def batch_forward(spec: CircuitSpec, angles, x_angles) -> tuple[np.ndarray, UnitaryTape]:
    """Probabilities ``(H, B, D)`` for ``(H, n_params)`` angles and ``B`` inputs."""
    layers, _ = _as_heads(spec, angles)
    H, D = layers.shape[0], spec.dim
    mats = rot_matrix(layers[..., 0], layers[..., 1], layers[..., 2])
    perm, _ = _entangler_perm(spec.entangler, spec.n_qubits)
    walls = _kron_rows(mats)[..., perm, :]
    prefix = [np.broadcast_to(np.eye(D, dtype=np.complex128), (H, D, D))]
    for layer in range(spec.n_layers):
        prefix.append(walls[:, layer] @ prefix[-1])
    embed = _product_embedding(np.asarray(x_angles, dtype=np.float64).reshape(-1), spec.n_qubits)
    psi = np.einsum("hij,bj->hbi", prefix[-1], embed)
    probs = psi.real**2 + psi.imag**2
    return probs, UnitaryTape(spec, layers, prefix, walls, embed, psi)


def batch_backward(tape: UnitaryTape, cotangents) -> np.ndarray:
    """Angle gradients ``(H, n_params)`` summed over the batch."""
    spec = tape.spec
    n, L, D = spec.n_qubits, spec.n_layers, spec.dim
    H = tape.layers.shape[0]
    g = np.asarray(cotangents, dtype=np.float64).reshape(tape.psi.shape)
    lam = g * tape.psi
    c = np.einsum("bi,hbj->hij", tape.embed, np.conj(lam))
    _, inv = _entangler_perm(spec.entangler, n)

    suffix = [None] * L
    s = np.broadcast_to(np.eye(D, dtype=np.complex128), (H, D, D))
    for layer in reversed(range(L)):
        suffix[layer] = s
        s = s @ tape.walls[:, layer]
    m = np.stack([(tape.prefix[layer] @ c @ suffix[layer])[..., inv] for layer in range(L)], axis=1)
    t = m.reshape((H, L) + (2,) * (2 * n))

    mats = rot_matrix(tape.layers[..., 0], tape.layers[..., 1], tape.layers[..., 2])
    derivs = rot_derivatives(tape.layers[..., 0], tape.layers[..., 1], tape.layers[..., 2])
    grads = np.empty((H, L, n, 3))
    for q in range(n):
        others = [mats[:, :, k] for k in range(n) if k != q]
        reduced = np.einsum(_trace_subscripts(n, q), t, *others)
        grads[:, :, q] = 2.0 * np.einsum("hlkab,hlba->hlk", derivs[:, :, q], reduced).real
    return grads.reshape(H, spec.n_params)
