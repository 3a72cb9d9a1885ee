"""Optimization loop with decoupled weight decay, clipping, and early stopping.

Training minimizes the circular loss over shuffled mini-batches, tracks the
validation wrapped-phase MAE for early stopping (patience-based), restores
the best-epoch parameters before test evaluation, and is bit-reproducible
under a fixed seed: parameter init, batch shuffling, and dropout each use
their own seeded generator.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .dataio import DatasetSplit, raw_delta_phi_history, stack_pairs, targets_phi
from .errors import ConfigError, NumericalAbort
from .forecaster import Forecaster
from .fusion import FusionConfig
from .head import LossConfig, wrapped_error_metrics
from .model import ModelConfig
from .numcore import Tensor, wrap_pi
from .qfm import QfmConfig


@dataclass
class TrainConfig:
    lr: float = 1e-3
    batch_size: int = 32
    max_epochs: int = 100
    patience: int = 15
    clip_norm: float = 1.0
    weight_decay: float = 0.01
    seed: int = 42
    window_len: int = 8
    fusion_variant: str = "ca_sa"
    cosine_weight: float = 0.0  # lambda of the auxiliary cosine term
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8

    def validate(self) -> None:
        if min(self.lr, self.batch_size, self.max_epochs, self.patience, self.clip_norm) <= 0:
            raise ConfigError("lr, batch_size, max_epochs, patience, clip_norm must be positive")
        if self.weight_decay < 0 or self.cosine_weight < 0:
            raise ConfigError("weight_decay and cosine_weight must be >= 0")
        if self.window_len < 2:
            raise ConfigError("window_len must be >= 2")


@dataclass
class RunReport:
    train_losses: list = field(default_factory=list)
    val_maes: list = field(default_factory=list)
    best_epoch: int = -1
    stopped_early: bool = False
    aborted: bool = False
    test_metrics: dict = field(default_factory=dict)
    wall_time: float = 0.0

    @property
    def n_epochs(self) -> int:
        return len(self.train_losses)


def clip_gradients(grads: list[np.ndarray], max_norm: float) -> tuple[list[np.ndarray], float, float]:
    """Scale gradients so their global L2 norm is at most ``max_norm``.

    Returns (clipped grads, pre-clip norm, post-clip norm).
    """
    if max_norm <= 0:
        raise ConfigError("max_norm must be positive")
    total = float(np.sqrt(sum(float((g * g).sum()) for g in grads)))
    if total <= max_norm:
        return grads, total, total
    scale = max_norm / total
    return [g * scale for g in grads], total, max_norm


def optimizer_step(
    params: list[np.ndarray],
    grads: list[np.ndarray],
    state: dict,
    cfg: TrainConfig,
) -> None:
    """One decoupled-weight-decay adaptive-moment update, in place.

    m <- b1 m + (1-b1) g; v <- b2 v + (1-b2) g^2; bias-corrected;
    p <- p - lr (m_hat / (sqrt(v_hat) + eps) + wd * p).
    """
    if "m" not in state:
        state["m"] = [np.zeros_like(p) for p in params]
        state["v"] = [np.zeros_like(p) for p in params]
        state["t"] = 0
    for i, g in enumerate(grads):
        if not np.all(np.isfinite(g)):
            raise NumericalAbort(f"non-finite gradient in parameter slot {i}")
    state["t"] += 1
    t = state["t"]
    bc1 = 1.0 - cfg.beta1**t
    bc2 = 1.0 - cfg.beta2**t
    for p, g, m, v in zip(params, grads, state["m"], state["v"]):
        m *= cfg.beta1
        m += (1.0 - cfg.beta1) * g
        v *= cfg.beta2
        v += (1.0 - cfg.beta2) * g * g
        m_hat = m / bc1
        v_hat = v / bc2
        p -= cfg.lr * (m_hat / (np.sqrt(v_hat) + cfg.adam_eps) + cfg.weight_decay * p)


class AdamW:
    """Stateful wrapper binding the functional update to named tensors."""

    def __init__(self, params: dict[str, Tensor], cfg: TrainConfig):
        self.names = list(params)
        self.tensors = [params[n] for n in self.names]
        self.cfg = cfg
        self.state: dict = {}
        self.last_grad_norm = 0.0
        self.last_clipped_norm = 0.0

    def step(self) -> None:
        grads = [
            t.grad if t.grad is not None else np.zeros_like(t.data) for t in self.tensors
        ]
        grads, self.last_grad_norm, self.last_clipped_norm = clip_gradients(
            grads, self.cfg.clip_norm
        )
        optimizer_step([t.data for t in self.tensors], grads, self.state, self.cfg)


def evaluate(fc: Forecaster, pairs: list) -> dict:
    """Wrapped-phase error metrics of the forecaster on (window, target) pairs."""
    x, _ = stack_pairs(pairs)
    phi_hat = fc.predict_phi(x)
    return wrapped_error_metrics(phi_hat, targets_phi(pairs))


def train(
    split: DatasetSplit,
    model_cfg: ModelConfig,
    fusion_cfg: FusionConfig,
    qfm_cfg: QfmConfig,
    train_cfg: TrainConfig,
) -> tuple[Forecaster, RunReport]:
    """Fit a forecaster on a normalized split; returns it at its best epoch."""
    train_cfg.validate()
    if not (split.train and split.val and split.test):
        raise ConfigError("train/val/test splits must all be non-empty")
    started = time.perf_counter()

    fc = Forecaster(
        model_cfg,
        fusion_cfg,
        qfm_cfg,
        LossConfig(cosine_weight=train_cfg.cosine_weight),
        n_channels=len(split.channel_names),
        init_seed=train_cfg.seed,
    )
    optimizer = AdamW(fc.store.params, train_cfg)
    shuffle_rng = np.random.default_rng(train_cfg.seed + 1)
    dropout_rng = np.random.default_rng(train_cfg.seed + 2)

    x_train, y_train = stack_pairs(split.train)
    n_train = x_train.shape[0]
    report = RunReport()
    best_mae = np.inf
    best_state = fc.store.state_dict()
    epochs_since_best = 0
    last_good_state = fc.store.state_dict()

    for epoch in range(train_cfg.max_epochs):
        order = shuffle_rng.permutation(n_train)
        fc.train_mode(dropout_rng)
        batch_losses = []
        try:
            for start in range(0, n_train, train_cfg.batch_size):
                idx = order[start : start + train_cfg.batch_size]
                fc.store.zero_grads()
                loss = fc.loss(x_train[idx], y_train[idx])
                value = loss.item()
                if not np.isfinite(value):
                    raise NumericalAbort("non-finite training loss")
                loss.backward()
                optimizer.step()
                batch_losses.append(value)
        except (NumericalAbort, ArithmeticError):
            fc.store.load_state(last_good_state)
            report.aborted = True
            report.stopped_early = True
            break
        fc.eval_mode()
        report.train_losses.append(float(np.mean(batch_losses)))
        val = evaluate(fc, split.val)
        report.val_maes.append(val["mae"])
        last_good_state = fc.store.state_dict()
        if val["mae"] < best_mae:
            best_mae = val["mae"]
            report.best_epoch = epoch
            best_state = fc.store.state_dict()
            epochs_since_best = 0
        else:
            epochs_since_best += 1
            if epochs_since_best >= train_cfg.patience:
                report.stopped_early = True
                break

    fc.store.load_state(best_state)
    fc.eval_mode()
    report.test_metrics = evaluate(fc, split.test)
    report.wall_time = time.perf_counter() - started
    return fc, report


# -- reference predictors ---------------------------------------------------------


def persistence_baseline(split: DatasetSplit) -> dict:
    """Predict that the next residual equals the last observed one."""
    phi_hat = wrap_pi(raw_delta_phi_history(split, split.test))
    return wrapped_error_metrics(phi_hat, targets_phi(split.test))


def circular_mean_baseline(split: DatasetSplit) -> dict:
    """Predict the circular mean of the training targets everywhere."""
    train_phi = targets_phi(split.train)
    mean_angle = float(np.arctan2(np.mean(np.sin(train_phi)), np.mean(np.cos(train_phi))))
    phi_hat = np.full(len(split.test), mean_angle)
    return wrapped_error_metrics(phi_hat, targets_phi(split.test))
