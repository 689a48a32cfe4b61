import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import central_difference, dense_probs, dense_unitary, rel_err, rx, ry, rz
from qmdn.qsim import (
    CircuitParams,
    CircuitSpec,
    StateVector,
    apply_cnot,
    apply_rot,
    apply_rx,
    batch_backward,
    batch_forward,
    circuit_gradient,
    circuit_probs,
    circuit_unitary,
    circuit_vjp,
    rot_derivatives,
    rot_matrix,
    run_circuit,
)

angles_st = st.floats(-2 * math.pi, 2 * math.pi, allow_nan=False)


def random_state(rng, n):
    v = rng.normal(size=2**n) + 1j * rng.normal(size=2**n)
    return StateVector(n, v / np.linalg.norm(v))


class TestStateVector:
    def test_zero_state(self):
        s = StateVector.zero(3)
        assert s.probabilities().tolist() == [1, 0, 0, 0, 0, 0, 0, 0]

    def test_wrong_length_rejected(self):
        with pytest.raises(ValueError):
            StateVector(3, np.ones(4))

    def test_amplitudes_read_only(self):
        s = StateVector.zero(2)
        with pytest.raises(ValueError):
            s.amplitudes[0] = 0


class TestSingleQubitGates:
    def test_rx_zero_is_identity(self):
        s = apply_rx(StateVector.zero(1), 0, 0.0)
        np.testing.assert_allclose(s.probabilities(), [1.0, 0.0])

    def test_rx_pi_flips(self):
        s = apply_rx(StateVector.zero(1), 0, math.pi)
        np.testing.assert_allclose(s.probabilities(), [0.0, 1.0], atol=1e-15)

    def test_rx_half_pi_even_split(self):
        s = apply_rx(StateVector.zero(1), 0, math.pi / 2)
        np.testing.assert_allclose(s.probabilities(), [0.5, 0.5], atol=1e-15)

    def test_rot_zero_is_identity(self):
        s = random_state(np.random.default_rng(0), 3)
        out = apply_rot(s, 1, 0.0, 0.0, 0.0)
        np.testing.assert_allclose(out.amplitudes, s.amplitudes, atol=1e-15)

    def test_rot_theta_pi_flips(self):
        s = apply_rot(StateVector.zero(1), 0, 0.0, math.pi, 0.0)
        np.testing.assert_allclose(s.probabilities(), [0.0, 1.0], atol=1e-15)

    @given(angles_st, angles_st, angles_st)
    def test_rot_population_depends_on_theta_only(self, phi, theta, omega):
        p = apply_rot(StateVector.zero(1), 0, phi, theta, omega).probabilities()
        assert p[0] == pytest.approx(math.cos(theta / 2) ** 2, abs=1e-12)

    @given(angles_st, angles_st, angles_st)
    def test_rot_matrix_matches_product(self, phi, theta, omega):
        np.testing.assert_allclose(rot_matrix(phi, theta, omega), rz(omega) @ ry(theta) @ rz(phi), atol=1e-13)

    def test_rot_derivatives_by_finite_difference(self):
        a = np.array([0.3, -1.1, 2.0])
        d = rot_derivatives(*a)
        for k in range(3):
            e = np.zeros(3)
            e[k] = 1e-6
            fd = (rot_matrix(*(a + e)) - rot_matrix(*(a - e))) / 2e-6
            np.testing.assert_allclose(d[k], fd, atol=1e-9)

    def test_qubit_out_of_range(self):
        with pytest.raises(IndexError):
            apply_rx(StateVector.zero(3), 3, 0.1)
        with pytest.raises(IndexError):
            apply_rot(StateVector.zero(3), -1, 0.1, 0.2, 0.3)


class TestCnot:
    @pytest.mark.parametrize(
        "inp,out", [(0b00, 0b00), (0b01, 0b01), (0b10, 0b11), (0b11, 0b10)]
    )
    def test_truth_table(self, inp, out):
        # qubit 0 is the most significant bit
        s = apply_cnot(StateVector.basis(2, inp), 0, 1)
        assert np.argmax(s.probabilities()) == out
        assert s.probabilities()[out] == 1.0

    def test_matches_projector_form(self):
        from oracles import cnot

        s = random_state(np.random.default_rng(1), 3)
        for c, t in [(0, 1), (1, 2), (2, 0), (0, 2)]:
            np.testing.assert_allclose(apply_cnot(s, c, t).amplitudes, cnot(c, t, 3) @ s.amplitudes, atol=1e-15)

    def test_involution_bitwise(self):
        s = random_state(np.random.default_rng(2), 3)
        twice = apply_cnot(apply_cnot(s, 2, 0), 2, 0)
        assert np.array_equal(twice.amplitudes, s.amplitudes)

    def test_bad_wires(self):
        s = StateVector.zero(3)
        with pytest.raises(ValueError):
            apply_cnot(s, 1, 1)
        with pytest.raises(IndexError):
            apply_cnot(s, 0, 3)


class TestNormPreservation:
    @settings(max_examples=50)
    @given(st.lists(st.tuples(st.integers(0, 2), angles_st, angles_st, angles_st), min_size=1, max_size=12))
    def test_gate_sequences_keep_unit_norm(self, ops):
        s = StateVector.zero(3)
        for q, a, b, c in ops:
            s = apply_rot(apply_rx(s, q, a), q, a, b, c)
            s = apply_cnot(s, q, (q + 1) % 3)
        assert abs(s.norm() - 1.0) < 1e-12

    @settings(max_examples=30)
    @given(st.lists(angles_st, min_size=36, max_size=36), angles_st)
    def test_circuit_output_is_distribution(self, angles, x):
        p = run_circuit(CircuitSpec(), CircuitParams(angles), x)
        assert np.all(p >= 0)
        assert abs(p.sum() - 1.0) < 1e-12


class TestRunCircuit:
    def test_param_count(self):
        assert CircuitSpec().n_params == 36
        assert CircuitSpec.ring(2, 3).n_params == 18

    def test_all_zero_returns_reference_state(self):
        p = run_circuit(CircuitSpec(), CircuitParams(np.zeros(36)), 0.0)
        assert p.tolist() == [1, 0, 0, 0, 0, 0, 0, 0]

    def test_wrong_angle_count(self):
        with pytest.raises(ValueError):
            run_circuit(CircuitSpec(), CircuitParams(np.zeros(35)), 0.0)

    def test_bad_entangler_rejected(self):
        with pytest.raises(IndexError):
            CircuitSpec(3, 4, ((0, 3),))

    @pytest.mark.parametrize("spec", [CircuitSpec(), CircuitSpec.chain(3, 2), CircuitSpec.ring(2, 3)])
    def test_matches_dense_oracle(self, spec):
        rng = np.random.default_rng(3)
        for _ in range(10):
            a = rng.uniform(-math.pi, math.pi, spec.n_params)
            x = rng.uniform(0, math.pi)
            expected = dense_probs(spec.n_qubits, spec.n_layers, spec.entangler, a, x)
            np.testing.assert_allclose(run_circuit(spec, CircuitParams(a), x), expected, atol=1e-12)

    def test_batched_paths_agree(self):
        spec = CircuitSpec()
        rng = np.random.default_rng(4)
        a = rng.uniform(-math.pi, math.pi, (3, 36))
        xs = rng.uniform(0, math.pi, 7)
        via_gates = np.array([[run_circuit(spec, CircuitParams(h), x) for x in xs] for h in a])
        np.testing.assert_allclose(circuit_probs(spec, a, xs), via_gates, atol=1e-13)
        probs, _ = batch_forward(spec, a, xs)
        np.testing.assert_allclose(probs, via_gates, atol=1e-13)

    def test_circuit_unitary_matches_oracle(self):
        spec = CircuitSpec()
        a = np.random.default_rng(5).uniform(-3, 3, 36)
        # the oracle includes the embedding; with x=0 it is the identity
        np.testing.assert_allclose(circuit_unitary(spec, a), dense_unitary(3, 4, spec.entangler, a, 0.0), atol=1e-12)


class TestGradient:
    def test_zero_cotangent_gives_zero(self):
        a = np.random.default_rng(6).normal(size=36)
        g = circuit_gradient(CircuitSpec(), CircuitParams(a), 0.4, np.zeros(8))
        assert g.shape == (36,)
        assert np.all(g == 0)

    def test_finite_difference_single_probability(self):
        spec = CircuitSpec()
        rng = np.random.default_rng(7)
        for i in range(8):
            a = rng.uniform(-math.pi, math.pi, 36)
            x = rng.uniform(0, math.pi)
            cot = np.eye(8)[i]
            g = circuit_gradient(spec, CircuitParams(a), x, cot)
            fd = central_difference(lambda v: run_circuit(spec, CircuitParams(v), x)[i], a)
            assert rel_err(g, fd) < 1e-4

    def test_finite_difference_random_cotangent(self):
        spec = CircuitSpec.chain(3, 2)
        rng = np.random.default_rng(8)
        a = rng.uniform(-math.pi, math.pi, spec.n_params)
        cot = rng.normal(size=8)
        g = circuit_gradient(spec, CircuitParams(a), 0.7, cot)
        fd = central_difference(lambda v: cot @ run_circuit(spec, CircuitParams(v), 0.7), a)
        assert rel_err(g, fd) < 1e-7

    def test_cotangent_length_checked(self):
        with pytest.raises(ValueError):
            circuit_gradient(CircuitSpec(), CircuitParams(np.zeros(36)), 0.0, np.zeros(7))

    def test_fast_path_matches_adjoint(self):
        spec = CircuitSpec()
        rng = np.random.default_rng(9)
        a = rng.uniform(-math.pi, math.pi, (3, 36))
        xs = rng.uniform(0, math.pi, 11)
        cot = rng.normal(size=(3, 11, 8))
        p1, g1 = circuit_vjp(spec, a, xs, cot)
        p2, tape = batch_forward(spec, a, xs)
        g2 = batch_backward(tape, cot)
        np.testing.assert_allclose(p1, p2, atol=1e-13)
        np.testing.assert_allclose(g1, g2, atol=1e-11)
