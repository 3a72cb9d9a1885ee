"""Angle utilities and stable normalization primitives.

``wrap_pi`` and ``atan2_phase`` operate on plain floats/arrays (they sit on
the data path, not the gradient path). ``softmax_vec`` is the reference
vector softmax; ``layer_norm`` is the differentiable row normalization used
throughout the network.
"""
from __future__ import annotations

import numpy as np

from ..errors import DomainError
from .engine import Tensor, _coerce

TWO_PI = 2.0 * np.pi


def wrap_pi(x):
    """Wrap an angle (radians) into [-pi, pi) using a nonnegative modulo."""
    arr = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise DomainError("wrap_pi requires finite input")
    wrapped = np.mod(arr + np.pi, TWO_PI) - np.pi
    if arr.ndim == 0:
        return float(wrapped)
    return wrapped


def atan2_phase(sin_c, cos_c):
    """Two-argument arctangent with range (-pi, pi]; rejects the (0, 0) pair."""
    s = np.asarray(sin_c, dtype=np.float64)
    c = np.asarray(cos_c, dtype=np.float64)
    if np.any((s == 0.0) & (c == 0.0)):
        raise DomainError("atan2_phase undefined at (0, 0)")
    out = np.arctan2(s, c)
    if s.ndim == 0 and c.ndim == 0:
        return float(out)
    return out


def softmax_vec(logits) -> np.ndarray:
    """Stable softmax of a 1-D logit vector (max-subtraction)."""
    arr = np.asarray(logits, dtype=np.float64)
    if arr.ndim != 1 or arr.size == 0:
        raise DomainError("softmax_vec requires a non-empty 1-D vector")
    if not np.all(np.isfinite(arr)):
        raise DomainError("softmax_vec requires finite logits")
    shifted = arr - arr.max()
    e = np.exp(shifted)
    return e / e.sum()


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-6) -> Tensor:
    """Normalize each row of ``x`` over its last axis, then apply gamma/beta."""
    x = _coerce(x)
    gamma = _coerce(gamma)
    beta = _coerce(beta)
    if x.shape[-1] == 0:
        raise DomainError("layer_norm over a zero-length last dimension")
    if gamma.shape[-1] != x.shape[-1] or beta.shape[-1] != x.shape[-1]:
        raise DomainError("gamma/beta must match the last dimension")
    mu = x.mean(axis=-1, keepdims=True)
    centered = x - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    normed = centered / (var + eps).sqrt()
    return normed * gamma + beta
