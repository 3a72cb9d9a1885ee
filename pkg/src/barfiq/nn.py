"""Parameter registry and small learnable building blocks."""
from __future__ import annotations

import numpy as np

from .errors import ConfigError
from .numcore import Tensor, layer_norm


class ParamStore:
    """Ordered registry of trainable parameters and persistent buffers.

    Registration order is deterministic (module construction order), which
    fixes both optimizer traversal and checkpoint layout.
    """

    def __init__(self, rng: np.random.Generator):
        self.rng = rng
        self.params: dict[str, Tensor] = {}
        self.buffers: dict[str, np.ndarray] = {}

    def _register(self, name: str, tensor: Tensor) -> Tensor:
        if name in self.params or name in self.buffers:
            raise ConfigError(f"duplicate parameter name: {name}")
        self.params[name] = tensor
        return tensor

    def uniform(self, name: str, shape: tuple, fan_in: int) -> Tensor:
        bound = 1.0 / np.sqrt(max(fan_in, 1))
        data = self.rng.uniform(-bound, bound, size=shape)
        return self._register(name, Tensor(data, requires_grad=True))

    def full(self, name: str, shape: tuple, value: float) -> Tensor:
        return self._register(name, Tensor(np.full(shape, value), requires_grad=True))

    def buffer(self, name: str, data: np.ndarray) -> np.ndarray:
        if name in self.params or name in self.buffers:
            raise ConfigError(f"duplicate buffer name: {name}")
        self.buffers[name] = np.asarray(data, dtype=np.float64)
        return self.buffers[name]

    def state_dict(self) -> dict[str, np.ndarray]:
        state = {name: t.data.copy() for name, t in self.params.items()}
        state.update({name: b.copy() for name, b in self.buffers.items()})
        return state

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        expected = list(self.params) + list(self.buffers)
        if sorted(state) != sorted(expected):
            raise ConfigError("checkpoint names do not match the model")
        for name, tensor in self.params.items():
            if state[name].shape != tensor.data.shape:
                raise ConfigError(f"shape mismatch for {name}")
            tensor.data = state[name].astype(np.float64).copy()
        for name in self.buffers:
            if state[name].shape != self.buffers[name].shape:
                raise ConfigError(f"shape mismatch for {name}")
            self.buffers[name][...] = state[name]

    def zero_grads(self) -> None:
        for t in self.params.values():
            t.grad = None


class Linear:
    """Affine (or purely linear) map on the last axis."""

    def __init__(self, store: ParamStore, name: str, d_in: int, d_out: int, bias: bool = True):
        self.w = store.uniform(f"{name}.w", (d_in, d_out), fan_in=d_in)
        self.b = store.uniform(f"{name}.b", (d_out,), fan_in=d_in) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        out = x @ self.w
        return out if self.b is None else out + self.b


class LayerNorm:
    """Last-axis normalization with learnable scale and shift."""

    def __init__(self, store: ParamStore, name: str, dim: int, eps: float = 1e-6):
        self.gamma = store.full(f"{name}.gamma", (dim,), 1.0)
        self.beta = store.full(f"{name}.beta", (dim,), 0.0)
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        return layer_norm(x, self.gamma, self.beta, eps=self.eps)


class BatchNorm:
    """Feature-wise standardization over the token/batch rows.

    Training mode normalizes with the statistics of the rows it sees and
    updates running estimates; evaluation mode uses the frozen running
    statistics.
    """

    def __init__(self, store: ParamStore, name: str, dim: int, eps: float = 1e-6, momentum: float = 0.1):
        self.gamma = store.full(f"{name}.gamma", (dim,), 1.0)
        self.beta = store.full(f"{name}.beta", (dim,), 0.0)
        self.running_mean = store.buffer(f"{name}.running_mean", np.zeros(dim))
        self.running_var = store.buffer(f"{name}.running_var", np.ones(dim))
        self.eps = eps
        self.momentum = momentum

    def __call__(self, x: Tensor, training: bool) -> Tensor:
        flat_axes = tuple(range(x.ndim - 1))
        if training:
            mu = x.mean(axis=flat_axes, keepdims=True)
            centered = x - mu
            var = (centered * centered).mean(axis=flat_axes, keepdims=True)
            self.running_mean[...] = (
                (1.0 - self.momentum) * self.running_mean
                + self.momentum * mu.data.reshape(-1)
            )
            self.running_var[...] = (
                (1.0 - self.momentum) * self.running_var
                + self.momentum * var.data.reshape(-1)
            )
            normed = centered / (var + self.eps).sqrt()
        else:
            normed = (x - Tensor(self.running_mean)) / Tensor(
                np.sqrt(self.running_var + self.eps)
            )
        return normed * self.gamma + self.beta


def dropout(x: Tensor, rate: float, training: bool, rng: np.random.Generator | None) -> Tensor:
    if not training or rate <= 0.0:
        return x
    if rng is None:
        raise ConfigError("dropout in training mode needs a seeded generator")
    mask = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return x * Tensor(mask)
