"""Statevector simulation, measurement, heads, mixer, and diagnostics.

The in-place gate simulator is checked against a brute-force oracle that
builds explicit 2^n x 2^n unitaries with Kronecker products.
"""

import numpy as np
import pytest

from barfiq.errors import ConfigError, DomainError
from barfiq.nn import ParamStore
from barfiq.numcore import Tensor, grad_check
from barfiq.qfm import (
    MeasurementMap,
    QfmBlock,
    QfmConfig,
    StateVector,
    circuit_expectations,
    correlation_matrix,
    correlation_maps,
    measure_z,
    run_circuit,
)

# -- dense-unitary oracle --------------------------------------------------------


def _ry(theta):
    c, s = np.cos(theta / 2), np.sin(theta / 2)
    return np.array([[c, -s], [s, c]], dtype=complex)


def _single_qubit_unitary(gate, qubit, n_q):
    mats = [np.eye(2, dtype=complex)] * n_q
    mats[qubit - 1] = gate  # qubit 1 is the most significant bit
    out = mats[0]
    for m in mats[1:]:
        out = np.kron(out, m)
    return out


def _cnot_unitary(control, target, n_q):
    dim = 2**n_q
    u = np.zeros((dim, dim), dtype=complex)
    for basis in range(dim):
        c_bit = (basis >> (n_q - control)) & 1
        out = basis ^ ((1 << (n_q - target)) if c_bit else 0)
        u[out, basis] = 1.0
    return u


def oracle_state(angles, n_q, depth):
    state = np.zeros(2**n_q, dtype=complex)
    state[0] = 1.0
    for _ in range(depth):
        for q in range(1, n_q + 1):
            state = _single_qubit_unitary(_ry(angles[q - 1]), q, n_q) @ state
        for q in range(1, n_q + 1):
            state = _cnot_unitary(q, (q % n_q) + 1, n_q) @ state
    return state


class TestRunCircuit:
    def test_zero_angles_identity(self):
        for depth in (1, 2, 3):
            sv = run_circuit(np.zeros(3), n_q=3, depth=depth)
            expected = np.zeros(8, dtype=complex)
            expected[0] = 1.0
            np.testing.assert_allclose(sv.amplitudes, expected, atol=1e-14)

    def test_pi_flip_first_qubit(self):
        # RY(pi) flips qubit 1; CNOT(1->2) copies it; CNOT(2->1) flips it back,
        # leaving |01> in the two-qubit register
        sv = run_circuit([np.pi, 0.0], n_q=2, depth=1)
        np.testing.assert_allclose(sv.amplitudes, [0, 1, 0, 0], atol=1e-12)

    def test_half_pi_superposition(self):
        sv = run_circuit([np.pi / 2, 0.0], n_q=2, depth=1)
        inv = 1 / np.sqrt(2)
        np.testing.assert_allclose(sv.amplitudes, [inv, inv, 0, 0], atol=1e-12)

    def test_matches_dense_unitary_oracle(self):
        rng = np.random.default_rng(0)
        for n_q in (2, 3, 4):
            for depth in (1, 2):
                for _ in range(25):
                    angles = rng.uniform(-2 * np.pi, 2 * np.pi, size=n_q)
                    sv = run_circuit(angles, n_q=n_q, depth=depth)
                    np.testing.assert_allclose(
                        sv.amplitudes, oracle_state(angles, n_q, depth), atol=1e-10
                    )

    def test_norm_preserved(self):
        rng = np.random.default_rng(1)
        for n_q in (2, 4, 6):
            for depth in (1, 4):
                angles = rng.uniform(-10, 10, size=n_q)
                sv = run_circuit(angles, n_q=n_q, depth=depth)
                assert np.sum(np.abs(sv.amplitudes) ** 2) == pytest.approx(1.0, abs=1e-10)

    def test_single_qubit_rejected(self):
        with pytest.raises(ConfigError):
            run_circuit([0.1], n_q=1, depth=1)


class TestMeasureZ:
    def test_ground_state_all_plus_one(self):
        sv = StateVector(np.array([1, 0, 0, 0], dtype=complex))
        np.testing.assert_allclose(measure_z(sv, 2), [1.0, 1.0], atol=0)

    def test_uniform_superposition_all_zero(self):
        sv = StateVector(np.full(8, 1 / np.sqrt(8), dtype=complex))
        np.testing.assert_allclose(measure_z(sv, 3), 0.0, atol=1e-12)

    def test_half_pi_state(self):
        sv = run_circuit([np.pi / 2, 0.0], n_q=2, depth=1)
        np.testing.assert_allclose(measure_z(sv, 2), [1.0, 0.0], atol=1e-12)

    def test_unnormalized_rejected(self):
        with pytest.raises(DomainError):
            measure_z(StateVector(np.array([1.0, 1.0, 0, 0], dtype=complex)), 2)

    def test_bounds_and_vector_norm(self):
        rng = np.random.default_rng(2)
        for _ in range(200):
            n_q = int(rng.integers(2, 5))
            angles = rng.uniform(-8, 8, size=n_q)
            depth = int(rng.integers(1, 4))
            m = measure_z(run_circuit(angles, n_q=n_q, depth=depth), n_q)
            assert np.all(m >= -1.0) and np.all(m <= 1.0)
            assert np.linalg.norm(m) <= np.sqrt(n_q) + 1e-12


class TestCircuitExpectations:
    def test_batch_matches_per_row_oracle(self):
        rng = np.random.default_rng(3)
        angles = rng.uniform(-3, 3, size=(7, 3))
        out = circuit_expectations(Tensor(angles), n_q=3, depth=2).data
        for i in range(7):
            expected = measure_z(run_circuit(angles[i], 3, 2, check_norm=False), 3)
            np.testing.assert_allclose(out[i], expected, atol=1e-10)

    def test_parameter_shift_matches_finite_differences(self):
        rng = np.random.default_rng(4)
        angles = Tensor(rng.uniform(-2, 2, size=(4, 2)), requires_grad=True)
        weights = Tensor(rng.normal(size=(2, 3)), requires_grad=True)

        def loss():
            e = circuit_expectations(angles, n_q=2, depth=2)
            return ((e @ weights) ** 2).sum()

        report = grad_check(loss, [angles, weights], probe_step=1e-6)
        assert report.max_rel_error <= 1e-5

    def test_expectations_are_deterministic(self):
        angles = np.random.default_rng(5).uniform(-3, 3, size=(5, 4))
        a = circuit_expectations(Tensor(angles), n_q=4, depth=2).data
        b = circuit_expectations(Tensor(angles), n_q=4, depth=2).data
        np.testing.assert_array_equal(a, b)


class TestQfmBlock:
    def _block(self, cfg, d_in=6, seed=0):
        store = ParamStore(np.random.default_rng(seed))
        return store, QfmBlock(store, "qfm", cfg, d_in)

    def test_zero_projection_gives_all_ones_maps(self):
        cfg = QfmConfig(n_qubits=3, depth=2, n_heads=2, d_q=4)
        store, block = self._block(cfg)
        for head in block.head_angles:
            head.w.data[:] = 0.0
            head.b.data[:] = 0.0
        z = Tensor(np.random.default_rng(6).normal(size=(2, 5, 4)))
        for k in range(cfg.n_heads):
            np.testing.assert_allclose(block.head_forward(z, k).data, 1.0, atol=1e-12)

    def test_single_token_composition(self):
        cfg = QfmConfig(n_qubits=2, depth=1, n_heads=1, d_q=3)
        store, block = self._block(cfg)
        z = Tensor(np.random.default_rng(7).normal(size=(1, 1, 3)))
        out = block.head_forward(z, 0).data[0, 0]
        angles = z.data[0, 0] @ block.head_angles[0].w.data + block.head_angles[0].b.data
        expected = measure_z(run_circuit(angles, 2, 1, check_norm=False), 2)
        np.testing.assert_allclose(out, expected, atol=1e-12)

    def test_head_batch_matches_token_loop(self):
        cfg = QfmConfig(n_qubits=2, depth=2, n_heads=1, d_q=3)
        store, block = self._block(cfg, seed=8)
        z = Tensor(np.random.default_rng(9).normal(size=(1, 3, 3)))
        out = block.head_forward(z, 0).data[0]
        for t in range(3):
            angles = z.data[0, t] @ block.head_angles[0].w.data + block.head_angles[0].b.data
            expected = measure_z(run_circuit(angles, 2, 2, check_norm=False), 2)
            np.testing.assert_allclose(out[t], expected, atol=1e-10)

    def test_mixer_residual_identity(self):
        cfg = QfmConfig(n_qubits=2, depth=1, n_heads=2, d_q=4)
        store, block = self._block(cfg, seed=10)
        block.mixer.w.data[:] = 0.0
        block.mixer.b.data[:] = 0.0
        rng = np.random.default_rng(11)
        z = Tensor(rng.normal(size=(1, 3, 4)))
        maps = [Tensor(rng.normal(size=(1, 3, 2))) for _ in range(2)]
        np.testing.assert_allclose(block.mix(z, maps).data, z.data, atol=0)

    def test_identity_mixer_single_head(self):
        cfg = QfmConfig(n_qubits=2, depth=1, n_heads=1, d_q=2)
        store, block = self._block(cfg, seed=12)
        block.mixer.w.data[:] = np.eye(2)
        block.mixer.b.data[:] = 0.0
        rng = np.random.default_rng(13)
        z = Tensor(rng.normal(size=(1, 3, 2)))
        m = Tensor(rng.normal(size=(1, 3, 2)))
        np.testing.assert_allclose(block.mix(z, [m]).data, z.data + m.data, atol=1e-12)

    def test_mix_matmul_oracle(self):
        cfg = QfmConfig(n_qubits=2, depth=1, n_heads=2, d_q=3)
        store, block = self._block(cfg, seed=14)
        rng = np.random.default_rng(15)
        z = rng.normal(size=(1, 2, 3))
        maps = [rng.normal(size=(1, 2, 2)) for _ in range(2)]
        out = block.mix(Tensor(z), [Tensor(m) for m in maps]).data
        cat = np.concatenate(maps, axis=-1)
        expected = z + cat @ block.mixer.w.data + block.mixer.b.data
        np.testing.assert_allclose(out, expected, atol=1e-12)

    def test_postprocess_residual_identity(self):
        cfg = QfmConfig(n_qubits=2, depth=1, n_heads=1, d_q=4)
        store, block = self._block(cfg, seed=16)
        block.post2.w.data[:] = 0.0
        block.post2.b.data[:] = 0.0
        y = Tensor(np.random.default_rng(17).normal(size=(2, 3, 4)))
        np.testing.assert_allclose(block.postprocess(y, training=True).data, y.data, atol=0)

    def test_constant_feature_standardizes_to_shift(self):
        cfg = QfmConfig(n_qubits=2, depth=1, n_heads=1, d_q=2)
        store, block = self._block(cfg, seed=18)
        block.norm.beta.data[:] = [0.7, -0.2]
        y = Tensor(np.full((1, 4, 2), 3.0))
        normed = block.norm(y, training=True)
        np.testing.assert_allclose(
            normed.data, np.broadcast_to([0.7, -0.2], (1, 4, 2)), atol=1e-9
        )

    def test_postprocess_inference_scalar_oracle(self):
        cfg = QfmConfig(n_qubits=2, depth=1, n_heads=1, d_q=3)
        store, block = self._block(cfg, seed=19)
        rng = np.random.default_rng(20)
        block.norm.running_mean[...] = rng.normal(size=3)
        block.norm.running_var[...] = rng.uniform(0.5, 2.0, size=3)
        y = rng.normal(size=(1, 4, 3))
        out = block.postprocess(Tensor(y), training=False).data

        normed = (y - block.norm.running_mean) / np.sqrt(block.norm.running_var + block.norm.eps)
        normed = normed * block.norm.gamma.data + block.norm.beta.data
        hidden = np.maximum(normed @ block.post1.w.data + block.post1.b.data, 0.0)
        expected = y + hidden @ block.post2.w.data + block.post2.b.data
        np.testing.assert_allclose(out, expected, atol=1e-10)

    def test_full_block_gradients(self):
        cfg = QfmConfig(n_qubits=2, depth=2, n_heads=2, d_q=3, post_hidden=4)
        store, block = self._block(cfg, d_in=4, seed=21)
        fused = Tensor(np.random.default_rng(22).normal(size=(2, 3, 4)))

        def loss():
            out, _ = block(fused, training=True)
            return (out * out).mean()

        report = grad_check(loss, dict(store.params), probe_step=1e-5)
        assert report.max_rel_error <= 1e-4


class TestCorrelationDiagnostics:
    def test_duplicated_columns(self):
        rng = np.random.default_rng(23)
        col = rng.normal(size=8)
        corr = correlation_matrix(np.column_stack([col, col]))
        np.testing.assert_allclose(corr, 1.0, atol=1e-12)

    def test_negated_column(self):
        rng = np.random.default_rng(24)
        col = rng.normal(size=8)
        corr = correlation_matrix(np.column_stack([col, -col]))
        np.testing.assert_allclose(corr[0, 1], -1.0, atol=1e-12)

    def test_two_pass_covariance_oracle(self):
        rng = np.random.default_rng(25)
        data = rng.normal(size=(8, 3))
        corr = correlation_matrix(data)
        expected = np.zeros((3, 3))
        for i in range(3):
            for j in range(3):
                xi = data[:, i] - data[:, i].mean()
                xj = data[:, j] - data[:, j].mean()
                expected[i, j] = (xi @ xj) / np.sqrt((xi @ xi) * (xj @ xj))
        np.testing.assert_allclose(corr, expected, atol=1e-10)

    def test_constant_column_marked_undefined(self):
        rng = np.random.default_rng(26)
        data = np.column_stack([rng.normal(size=6), np.full(6, 2.5)])
        corr = correlation_matrix(data)
        assert corr[0, 0] == 1.0
        assert np.isnan(corr[0, 1]) and np.isnan(corr[1, 0]) and np.isnan(corr[1, 1])

    def test_symmetric_unit_diagonal(self):
        rng = np.random.default_rng(27)
        data = rng.normal(size=(10, 4))
        corr = correlation_matrix(data)
        np.testing.assert_allclose(corr, corr.T, atol=1e-12)
        np.testing.assert_allclose(np.diag(corr), 1.0, atol=1e-12)

    def test_correlation_maps_shapes(self):
        rng = np.random.default_rng(28)
        z = rng.normal(size=(8, 3))
        maps = [rng.normal(size=(8, 2)) for _ in range(2)]
        pre, post = correlation_maps(z, maps)
        assert len(pre) == len(post) == 2
        assert pre[0].shape == (3, 3) and post[0].shape == (2, 2)
