"""Forecasting head, circular losses, and wrapped-error metrics.

The head pools the enhanced latent sequence, maps it through a small MLP to a
raw (cos, sin) pair, and normalizes the pair onto the unit circle. Training
compares normalized pairs against circular targets; evaluation reconstructs
the angle and measures wrapped angular error.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DomainError
from .nn import LayerNorm, Linear, ParamStore
from .numcore import Tensor, atan2_phase

_EPS_GUARD = 1e-8


@dataclass
class LossConfig:
    cosine_weight: float = 0.0  # lambda; 0 recovers the pure circular MSE
    eps: float = _EPS_GUARD

    def validate(self) -> None:
        if self.cosine_weight < 0.0:
            raise ConfigError("cosine_weight must be >= 0")


@dataclass
class Forecast:
    cos_hat: float
    sin_hat: float
    cos_norm: float
    sin_norm: float
    phi_hat: float
    degenerate: bool = False


class ForecastHead:
    """Layer norm, mean-pool readout, GELU MLP, and circle normalization."""

    def __init__(self, store: ParamStore, name: str, d_in: int, hidden: int, eps: float = _EPS_GUARD):
        self.ln = LayerNorm(store, f"{name}.ln", d_in)
        self.fc1 = Linear(store, f"{name}.fc1", d_in, hidden)
        self.fc2 = Linear(store, f"{name}.fc2", hidden, 2)
        self.eps = eps

    def raw(self, latent: Tensor) -> Tensor:
        pooled = self.ln(latent).mean(axis=-2)
        return self.fc2(self.fc1(pooled).gelu())

    def __call__(self, latent: Tensor) -> Tensor:
        """Normalized (cos, sin) predictions, shape (..., 2)."""
        return normalize_pair(self.raw(latent), self.eps)


def normalize_pair(raw: Tensor, eps: float = _EPS_GUARD) -> Tensor:
    norm = (raw * raw).sum(axis=-1, keepdims=True).sqrt()
    return raw / (norm + eps)


def forecast_from_raw(cos_hat: float, sin_hat: float, eps: float = _EPS_GUARD) -> Forecast:
    """Single-sample diagnostic record; the (0, 0) pair is flagged, not fatal."""
    norm = np.hypot(cos_hat, sin_hat)
    cos_n = cos_hat / (norm + eps)
    sin_n = sin_hat / (norm + eps)
    degenerate = norm < eps
    phi = 0.0 if degenerate else atan2_phase(sin_n, cos_n)
    return Forecast(cos_hat, sin_hat, cos_n, sin_n, phi, degenerate)


def circular_loss(pred: Tensor, target) -> Tensor:
    """Mean squared Euclidean distance between (cos, sin) pairs."""
    target = target if isinstance(target, Tensor) else Tensor(target)
    diff = pred - target
    if pred.ndim == 1:
        return (diff * diff).sum()
    return (diff * diff).sum(axis=-1).mean()


def cosine_loss(pred: Tensor, target, eps: float = _EPS_GUARD) -> Tensor:
    """Alignment regularizer 1 - cos(angle between prediction and target)."""
    target = target if isinstance(target, Tensor) else Tensor(target)
    dot = (pred * target).sum(axis=-1)
    norm_p = (pred * pred).sum(axis=-1).sqrt()
    norm_t = (target * target).sum(axis=-1).sqrt()
    cos_sim = dot / (norm_p * norm_t + eps)
    one_minus = 1.0 - cos_sim
    if pred.ndim == 1:
        return one_minus
    return one_minus.mean()


def total_loss(pred: Tensor, target, cfg: LossConfig) -> Tensor:
    cfg.validate()
    loss = circular_loss(pred, target)
    if cfg.cosine_weight > 0.0:
        loss = loss + cfg.cosine_weight * cosine_loss(pred, target, cfg.eps)
    return loss


def wrapped_error_metrics(phi_hat, phi_true) -> dict:
    """MSE/MAE/RMSE of the wrapped angular error atan2(sin d, cos d)."""
    hat = np.asarray(phi_hat, dtype=np.float64)
    true = np.asarray(phi_true, dtype=np.float64)
    if hat.shape != true.shape or hat.size == 0:
        raise DomainError("metric inputs must be equal-length and non-empty")
    diff = hat - true
    err = np.arctan2(np.sin(diff), np.cos(diff))
    mse = float(np.mean(err**2))
    return {
        "mse": mse,
        "mae": float(np.mean(np.abs(err))),
        "rmse": float(np.sqrt(mse)),
        "n_samples": int(hat.size),
    }
