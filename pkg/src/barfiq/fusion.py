"""Hierarchical fusion of branch outputs.

Branch streams are concatenated channel-wise, projected to a common width,
then refined by two optional residual attention stages: a channel gate driven
by multiscale temporal convolutions and global pooling, and a temporal gate
driven by channel pooling. Both stages can be ablated independently.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ShapeError
from .nn import Linear, ParamStore
from .numcore import Tensor, concat

VARIANTS = {
    "ca_sa": (True, True),
    "sa": (False, True),
    "ca": (True, False),
    "none": (False, False),
}


@dataclass
class FusionConfig:
    d_out: int = 32
    kernel_sizes: tuple = (3, 5, 7)
    reduction: int = 4
    use_channel_attention: bool = True
    use_spatial_attention: bool = True

    @classmethod
    def from_variant(cls, variant: str, **kwargs) -> "FusionConfig":
        if variant not in VARIANTS:
            raise ConfigError(f"unknown fusion variant: {variant!r}")
        ca, sa = VARIANTS[variant]
        return cls(use_channel_attention=ca, use_spatial_attention=sa, **kwargs)

    @property
    def variant(self) -> str:
        for name, flags in VARIANTS.items():
            if flags == (self.use_channel_attention, self.use_spatial_attention):
                return name
        raise ConfigError("unreachable")

    def validate(self) -> None:
        if any(k % 2 == 0 or k < 1 for k in self.kernel_sizes):
            raise ConfigError("convolution kernels must be odd (symmetric padding)")
        if self.reduction < 1 or self.d_out < self.reduction:
            raise ConfigError("reduction must satisfy 1 <= reduction <= d_out")


def depthwise_conv(x: Tensor, weights: Tensor) -> Tensor:
    """Per-channel temporal convolution with zero same-padding.

    ``x`` is (..., T, C); ``weights`` is (K, C) with odd K.
    """
    k = weights.shape[0]
    t = x.shape[-2]
    half = k // 2
    zeros = Tensor(np.zeros(x.shape[:-2] + (half,) + x.shape[-1:]))
    padded = concat([zeros, x, zeros], axis=-2)
    out = None
    for j in range(k):
        term = padded[..., j : j + t, :] * weights[j]
        out = term if out is None else out + term
    return out


def multiscale_conv(x: Tensor, kernels: list[Tensor]) -> Tensor:
    """Sum of depthwise temporal convolutions at several kernel widths."""
    out = None
    for w in kernels:
        filtered = depthwise_conv(x, w)
        out = filtered if out is None else out + filtered
    return out


class ChannelAttention:
    """Residual channel recalibration: x + conv-pathway * sigmoid gate."""

    def __init__(self, store: ParamStore, name: str, cfg: FusionConfig):
        d = cfg.d_out
        self.lin_in = Linear(store, f"{name}.lin_in", d, d)
        self.kernels = [
            store.uniform(f"{name}.conv{k}", (k, d), fan_in=k) for k in cfg.kernel_sizes
        ]
        self.lin_out = Linear(store, f"{name}.lin_out", d, d)
        hidden = max(1, d // cfg.reduction)
        self.gate_w1 = store.uniform(f"{name}.gate_w1", (d, hidden), fan_in=d)
        self.gate_w2 = store.uniform(f"{name}.gate_w2", (hidden, d), fan_in=hidden)

    def __call__(self, x0: Tensor) -> Tensor:
        pathway = self.lin_out(multiscale_conv(self.lin_in(x0), self.kernels))
        pooled = pathway.mean(axis=-2)  # global temporal pooling, (..., d)
        gate = ((pooled @ self.gate_w1).relu() @ self.gate_w2).sigmoid()
        return x0 + pathway * gate.reshape(gate.shape[:-1] + (1, gate.shape[-1]))


class SpatialAttention:
    """Residual temporal recalibration: x + conv-pathway * per-step gate."""

    def __init__(self, store: ParamStore, name: str, cfg: FusionConfig):
        d = cfg.d_out
        self.lin_in = Linear(store, f"{name}.lin_in", d, d)
        self.kernels = [
            store.uniform(f"{name}.conv{k}", (k, d), fan_in=k) for k in cfg.kernel_sizes
        ]
        self.lin_out = Linear(store, f"{name}.lin_out", d, d)
        # pointwise conv compressing [avg_pool_c; max_pool_c] to one gate per step
        self.gate_w = store.uniform(f"{name}.gate_w", (2, 1), fan_in=2)

    def __call__(self, x1: Tensor) -> Tensor:
        pathway = self.lin_out(multiscale_conv(self.lin_in(x1), self.kernels))
        avg_c = pathway.mean(axis=-1, keepdims=True)
        max_c = pathway.max(axis=-1, keepdims=True)
        gate = (concat([avg_c, max_c], axis=-1) @ self.gate_w).sigmoid()
        return x1 + pathway * gate


class FusionBlock:
    """Concat projection, optional channel/temporal refinement, output projection."""

    def __init__(self, store: ParamStore, name: str, cfg: FusionConfig, in_channels: int):
        cfg.validate()
        self.cfg = cfg
        self.project = Linear(store, f"{name}.project", in_channels, cfg.d_out)
        self.channel = ChannelAttention(store, f"{name}.ca", cfg) if cfg.use_channel_attention else None
        self.spatial = SpatialAttention(store, f"{name}.sa", cfg) if cfg.use_spatial_attention else None
        self.out = Linear(store, f"{name}.out", cfg.d_out, cfg.d_out)

    def fuse_project(self, branch_outputs: list[Tensor]) -> Tensor:
        lengths = {b.shape[-2] for b in branch_outputs}
        if len(lengths) != 1:
            raise ShapeError("branch outputs must share the temporal length")
        return self.project(concat(branch_outputs, axis=-1))

    def __call__(self, branch_outputs: list[Tensor]) -> Tensor:
        x = self.fuse_project(branch_outputs)
        if self.channel is not None:
            x = self.channel(x)
        if self.spatial is not None:
            x = self.spatial(x)
        return self.out(x)
