"""Simulated multi-head quantum feature mapping.

Each head maps a projected latent row to per-qubit rotation angles, prepares
|0...0>, applies depth-many [RY-encoding, ring-CNOT] layers re-uploading the
same angles, and reads out exact Pauli-Z expectations. Head outputs are
concatenated, mixed back to the latent width, and refined by a residual
normalization/MLP stage. Expectations are exact (no shot sampling), so the
whole stage is deterministic and differentiable; gradients flow through the
circuit via the parameter-shift rule applied per gate occurrence.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DomainError, NonFiniteError
from .nn import BatchNorm, Linear, ParamStore
from .numcore import Tensor, concat

_NORM_TOL = 1e-8


@dataclass
class QfmConfig:
    n_qubits: int = 4
    depth: int = 2
    n_heads: int = 3
    d_q: int = 16
    post_hidden: int = 32

    def validate(self) -> None:
        if self.n_qubits < 2:
            raise ConfigError("ring entanglement needs at least two qubits")
        if self.depth < 1 or self.n_heads < 1:
            raise ConfigError("depth and n_heads must be >= 1")


@dataclass
class StateVector:
    amplitudes: np.ndarray  # (2**n_qubits,) complex

    @property
    def n_qubits(self) -> int:
        return int(np.log2(self.amplitudes.size))


@dataclass
class MeasurementMap:
    values: np.ndarray  # (T, n_qubits) Pauli-Z expectations


# -- batched statevector simulation ---------------------------------------------
# Qubit 1 is the most significant bit of the basis index.


def _apply_ry_batch(states: np.ndarray, qubit: int, angles: np.ndarray, n_q: int) -> np.ndarray:
    """RY(angle) on one qubit for a batch of states; angles vary per row."""
    rows = states.shape[0]
    lead = 2 ** (qubit - 1)
    trail = 2 ** (n_q - qubit)
    s = states.reshape(rows, lead, 2, trail)
    c = np.cos(0.5 * angles).reshape(rows, 1, 1)
    sn = np.sin(0.5 * angles).reshape(rows, 1, 1)
    a0 = s[:, :, 0, :]
    a1 = s[:, :, 1, :]
    out = np.empty_like(s)
    out[:, :, 0, :] = c * a0 - sn * a1
    out[:, :, 1, :] = sn * a0 + c * a1
    return out.reshape(rows, -1)


def _apply_cnot_batch(states: np.ndarray, control: int, target: int, n_q: int) -> np.ndarray:
    """CNOT with 1-indexed control/target for a batch of states."""
    rows = states.shape[0]
    s = states.reshape((rows,) + (2,) * n_q).copy()
    sel: list = [slice(None)] * (n_q + 1)
    sel[control] = 1
    view = s[tuple(sel)]
    s[tuple(sel)] = np.flip(view, axis=target - 1 if target > control else target)
    return s.reshape(rows, -1)


def _simulate_layers(layer_angles: list[np.ndarray], n_q: int) -> np.ndarray:
    """Run [RY layer; ring CNOTs] per entry of ``layer_angles`` on |0...0>.

    Each entry is (rows, n_q); returns (rows, 2**n_q) complex amplitudes.
    """
    rows = layer_angles[0].shape[0]
    states = np.zeros((rows, 2**n_q), dtype=np.complex128)
    states[:, 0] = 1.0
    for angles in layer_angles:
        for q in range(1, n_q + 1):
            states = _apply_ry_batch(states, q, angles[:, q - 1], n_q)
        for q in range(1, n_q + 1):
            states = _apply_cnot_batch(states, q, (q % n_q) + 1, n_q)
    return states


def _z_signs(n_q: int) -> np.ndarray:
    """(2**n_q, n_q) matrix of +-1: sign of Z_r on each basis state."""
    basis = np.arange(2**n_q)
    bits = (basis[:, None] >> (n_q - 1 - np.arange(n_q))[None, :]) & 1
    return 1.0 - 2.0 * bits


def run_circuit(angles, n_q: int, depth: int, check_norm: bool = True) -> StateVector:
    """Encode one angle vector through ``depth`` re-uploading layers."""
    if n_q < 2:
        raise ConfigError("ring entanglement needs at least two qubits")
    arr = np.asarray(angles, dtype=np.float64).reshape(1, -1)
    if arr.shape[1] != n_q:
        raise ConfigError("need one rotation angle per qubit")
    if check_norm:
        # gate-by-gate path asserting unit norm after every gate
        states = np.zeros((1, 2**n_q), dtype=np.complex128)
        states[:, 0] = 1.0
        for _ in range(depth):
            for q in range(1, n_q + 1):
                states = _apply_ry_batch(states, q, arr[:, q - 1], n_q)
                _assert_norm(states)
            for q in range(1, n_q + 1):
                states = _apply_cnot_batch(states, q, (q % n_q) + 1, n_q)
                _assert_norm(states)
    else:
        states = _simulate_layers([arr] * depth, n_q)
    return StateVector(amplitudes=states[0])


def _assert_norm(states: np.ndarray) -> None:
    norms = np.sum(np.abs(states) ** 2, axis=1)
    if np.any(np.abs(norms - 1.0) > 1e-10):
        raise NonFiniteError("statevector norm drifted beyond 1e-10")


def measure_z(state: StateVector, n_q: int) -> np.ndarray:
    """Exact per-qubit Pauli-Z expectations of a normalized state."""
    probs = np.abs(state.amplitudes) ** 2
    if abs(probs.sum() - 1.0) > _NORM_TOL:
        raise DomainError("state is not normalized")
    return probs @ _z_signs(n_q)


def circuit_expectations(angles: Tensor, n_q: int, depth: int) -> Tensor:
    """Differentiable batched map: angle rows -> Pauli-Z expectation rows.

    Forward runs the batched simulator; backward applies the parameter-shift
    rule (exact for RY generators) once per re-uploading layer and qubit,
    summing occurrence contributions.
    """
    arr = angles.data
    rows = arr.shape[0]
    signs = _z_signs(n_q)

    def expectations(layer_angles: list[np.ndarray]) -> np.ndarray:
        states = _simulate_layers(layer_angles, n_q)
        return (np.abs(states) ** 2) @ signs

    out_data = expectations([arr] * depth)

    def backward(g):
        if not angles.requires_grad:
            return
        # One simulation evaluates every (+-, layer, qubit) shift at once by
        # stacking the shifted copies along the batch axis.
        copies = []  # (sign, layer, qubit)
        for sign in (1.0, -1.0):
            for layer in range(depth):
                for q in range(n_q):
                    copies.append((sign, layer, q))
        n_copies = len(copies)
        layer_angles = []
        for i in range(depth):
            big = np.tile(arr, (n_copies, 1))
            for c, (sign, layer, q) in enumerate(copies):
                if layer == i:
                    big[c * rows : (c + 1) * rows, q] += sign * 0.5 * np.pi
            layer_angles.append(big)
        shifted = expectations(layer_angles).reshape(n_copies, rows, n_q)
        half = n_copies // 2
        jac = 0.5 * (shifted[:half] - shifted[half:])  # (depth*n_q, rows, n_q_out)
        grad = np.zeros_like(arr)
        for c, (_, layer, q) in enumerate(copies[:half]):
            grad[:, q] += np.sum(g * jac[c], axis=1)
        angles._accumulate(grad)

    return Tensor._from_op(out_data, (angles,), backward)


# -- learnable head assembly ------------------------------------------------------


class QfmBlock:
    """Projection, K measurement heads, residual mixer, and post-processing."""

    def __init__(self, store: ParamStore, name: str, cfg: QfmConfig, d_in: int):
        cfg.validate()
        self.cfg = cfg
        self.project = Linear(store, f"{name}.project", d_in, cfg.d_q)
        self.head_angles = [
            Linear(store, f"{name}.head{k}.angles", cfg.d_q, cfg.n_qubits)
            for k in range(cfg.n_heads)
        ]
        self.mixer = Linear(store, f"{name}.mixer", cfg.n_heads * cfg.n_qubits, cfg.d_q)
        self.norm = BatchNorm(store, f"{name}.bn", cfg.d_q)
        self.post1 = Linear(store, f"{name}.post1", cfg.d_q, cfg.post_hidden)
        self.post2 = Linear(store, f"{name}.post2", cfg.post_hidden, cfg.d_q)

    def head_forward(self, z: Tensor, head: int) -> Tensor:
        """Measurement map of one head for (..., d_q) latents."""
        cfg = self.cfg
        angles = self.head_angles[head](z)
        flat = angles.reshape(-1, cfg.n_qubits)
        return circuit_expectations(flat, cfg.n_qubits, cfg.depth).reshape(
            z.shape[:-1] + (cfg.n_qubits,)
        )

    def mix(self, z: Tensor, maps: list[Tensor]) -> Tensor:
        return z + self.mixer(concat(maps, axis=-1))

    def postprocess(self, y_q: Tensor, training: bool) -> Tensor:
        normed = self.norm(y_q, training)
        return y_q + self.post2((self.post1(normed)).relu())

    def __call__(self, fused: Tensor, training: bool = False) -> tuple[Tensor, list[Tensor]]:
        z = self.project(fused)
        maps = [self.head_forward(z, k) for k in range(self.cfg.n_heads)]
        mixed = self.mix(z, maps)
        return self.postprocess(mixed, training), maps


def correlation_matrix(data: np.ndarray) -> np.ndarray:
    """Pearson correlations between columns; undefined entries become NaN.

    Columns with (near-)zero variance produce NaN rows/columns rather than
    fabricated values; defined diagonal entries are exactly 1.
    """
    if data.ndim != 2 or data.shape[0] < 2:
        raise DomainError("correlation needs a 2-D matrix with at least two rows")
    centered = data - data.mean(axis=0)
    norms = np.sqrt((centered**2).sum(axis=0))
    defined = norms > 1e-12
    corr = np.full((data.shape[1], data.shape[1]), np.nan)
    if defined.any():
        safe = np.where(defined, norms, 1.0)
        unit = centered / safe
        block = unit.T @ unit
        mask = np.outer(defined, defined)
        corr[mask] = block[mask]
        idx = np.where(defined)[0]
        corr[idx, idx] = 1.0
    return corr


def correlation_maps(
    z: np.ndarray, maps: list[np.ndarray]
) -> tuple[list[np.ndarray], list[np.ndarray]]:
    """Diagnostic per-head correlation structure before and after measurement."""
    pre = [correlation_matrix(z) for _ in maps]
    post = [correlation_matrix(m) for m in maps]
    return pre, post
