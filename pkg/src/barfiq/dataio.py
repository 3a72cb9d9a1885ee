"""Synthetic fringe-stream generation, window assembly, and normalization.

The generator stands in for an unavailable instrument: it synthesizes shot
streams whose residual phase follows a slow sinusoidal drift plus AR(1)
noise, applies the fringe response to produce population ratios, and records
the ground-truth residual for oracle tests. Window assembly turns a
reconstructed stream into strictly historical (L x M) feature matrices paired
with next-step circular targets.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DomainError
from .fringe import PhaseResult, ShotRecord
from .numcore import wrap_pi

CHANNELS = [
    "elapsed_time",
    "dt",
    "theta",
    "rho",
    "phi_rt",
    "delta_phi",
    "aux_a",
    "aux_c",
    "aux_r",
]
N_CHANNELS = len(CHANNELS)
_DPHI_IDX = CHANNELS.index("delta_phi")

_STD_FLOOR = 1e-8


@dataclass
class GeneratorConfig:
    n_shots: int = 4000
    p0_true: float = 0.5
    c_true: float = 0.2
    # deliberately not a rational fraction of 2*pi: the scan grid then never
    # lands exactly on a fringe extremum, where arccos amplifies roundoff
    theta_step: float = 0.26
    drift_amp: float = 0.5
    drift_period: float = 500.0
    ar_coeff: float = 0.9
    noise_sigma: float = 0.05
    seed: int = 42
    # the real-time phase follows a slow linear ramp rt_offset + rt_ramp * i;
    # a nonzero intercept keeps shot 0 off the exact fringe extremum, where
    # arccos turns fit roundoff into O(1e-8) phase error
    rt_ramp: float = 0.002
    rt_offset: float = 0.3

    def validate(self) -> None:
        if self.n_shots < 1:
            raise ConfigError("n_shots must be >= 1")
        if not 0.0 < self.p0_true < 1.0:
            raise ConfigError("p0_true must lie in (0, 1)")
        if self.c_true < 0.0:
            raise ConfigError("c_true must be >= 0")
        if self.noise_sigma < 0.0:
            raise ConfigError("noise_sigma must be >= 0")
        if self.drift_period <= 0.0:
            raise ConfigError("drift_period must be > 0")
        if self.theta_step == 0.0:
            raise ConfigError("theta_step must be nonzero")


@dataclass
class FeatureMatrix:
    values: np.ndarray  # (L, M)
    channel_names: list[str]
    t_end: int


@dataclass
class CircularTarget:
    cos_c: float
    sin_c: float


@dataclass
class NormStats:
    mean: np.ndarray  # (M,)
    std: np.ndarray  # (M,)


@dataclass
class DatasetSplit:
    train: list
    val: list
    test: list
    norm_stats: NormStats
    normalized: bool = False
    channel_names: list[str] = field(default_factory=lambda: list(CHANNELS))


def generate_stream(cfg: GeneratorConfig) -> tuple[list[ShotRecord], np.ndarray]:
    """Synthesize a shot stream; returns (shots, wrapped ground-truth delta_phi)."""
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    n = cfg.n_shots
    idx = np.arange(n, dtype=np.float64)

    ar_innov = rng.normal(0.0, cfg.noise_sigma, size=n)
    rho_noise = rng.normal(0.0, cfg.noise_sigma, size=n)
    a_noise = rng.normal(0.0, cfg.noise_sigma, size=n)
    c_noise = rng.normal(0.0, cfg.noise_sigma, size=n)

    ar = np.zeros(n)
    prev = 0.0
    for i in range(n):
        prev = cfg.ar_coeff * prev + ar_innov[i]
        ar[i] = prev

    theta = wrap_pi(idx * cfg.theta_step)
    dphi_raw = cfg.drift_amp * np.sin(2.0 * math.pi * idx / cfg.drift_period) + ar
    phi_rt = cfg.rt_offset + cfg.rt_ramp * idx
    phi_ai = wrap_pi(phi_rt + dphi_raw)
    fringe = cfg.p0_true + 2.0 * cfg.c_true * np.cos(theta + phi_ai)
    rho_pre_clip = fringe + rho_noise
    rho = np.clip(rho_pre_clip, 0.0, 1.0)
    aux_a = 2.0 * cfg.c_true + a_noise
    aux_c = cfg.c_true + c_noise

    shots = [
        ShotRecord(
            iter=i,
            theta=float(theta[i]),
            rho=float(rho[i]),
            phi_rt=float(phi_rt[i]),
            aux_a=float(aux_a[i]),
            aux_c=float(aux_c[i]),
            aux_r=float(rho_pre_clip[i]),
        )
        for i in range(n)
    ]
    return shots, wrap_pi(dphi_raw)


def build_windows(
    shots: list[ShotRecord],
    phases: list[PhaseResult],
    window_len: int,
) -> list[tuple[FeatureMatrix, CircularTarget]]:
    """Assemble stride-1 (L x M) windows with next-step circular targets.

    A window ending at t uses shots t-L+1..t and targets delta_phi at t+1;
    any missing phase inside that span (target included) drops the window.
    """
    if window_len < 2:
        raise DomainError("window length must be >= 2")
    if len(phases) != len(shots):
        raise DomainError("phases must align one-to-one with shots")
    n = len(shots)
    if n < window_len + 1:
        return []

    ok = np.array([p.ok for p in phases])
    feats = np.zeros((n, N_CHANNELS))
    for i, (s, p) in enumerate(zip(shots, phases)):
        dt = float(shots[i].iter - shots[i - 1].iter) if i > 0 else 0.0
        feats[i] = [
            float(s.iter),
            dt,
            s.theta,
            s.rho,
            s.phi_rt,
            p.delta_phi if p.ok else 0.0,
            s.aux_a,
            s.aux_c,
            s.aux_r,
        ]

    pairs = []
    for t in range(window_len - 1, n - 1):
        span_ok = ok[t - window_len + 1 : t + 2].all()  # history plus target
        if not span_ok:
            continue
        window = FeatureMatrix(
            values=feats[t - window_len + 1 : t + 1].copy(),
            channel_names=list(CHANNELS),
            t_end=t,
        )
        dphi_next = phases[t + 1].delta_phi
        target = CircularTarget(cos_c=math.cos(dphi_next), sin_c=math.sin(dphi_next))
        pairs.append((window, target))
    return pairs


def split_windows(
    pairs: list[tuple[FeatureMatrix, CircularTarget]],
    ratios: tuple[float, float, float] = (0.70, 0.15, 0.15),
) -> DatasetSplit:
    """Time-ordered 70/15/15 split; normalization stats from train only."""
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ConfigError("split ratios must sum to 1")
    n = len(pairs)
    n_train = int(n * ratios[0])
    n_val = int(n * ratios[1])
    train = pairs[:n_train]
    val = pairs[n_train : n_train + n_val]
    test = pairs[n_train + n_val :]
    if train:
        stacked = np.stack([w.values for w, _ in train])
        mean = stacked.mean(axis=(0, 1))
        std = stacked.std(axis=(0, 1))
    else:
        mean = np.zeros(N_CHANNELS)
        std = np.ones(N_CHANNELS)
    return DatasetSplit(train=train, val=val, test=test, norm_stats=NormStats(mean, std))


def normalize(split: DatasetSplit) -> DatasetSplit:
    """Z-score every channel with train statistics; targets stay untouched.

    Channels with train std below 1e-8 are mean-centered but not divided.
    """
    if not split.train:
        raise DomainError("cannot normalize with an empty train split")
    mean = split.norm_stats.mean
    std = split.norm_stats.std
    scale = np.where(std < _STD_FLOOR, 1.0, std)

    def apply(pairs):
        out = []
        for w, target in pairs:
            out.append(
                (
                    FeatureMatrix(
                        values=(w.values - mean) / scale,
                        channel_names=list(w.channel_names),
                        t_end=w.t_end,
                    ),
                    target,
                )
            )
        return out

    return DatasetSplit(
        train=apply(split.train),
        val=apply(split.val),
        test=apply(split.test),
        norm_stats=split.norm_stats,
        normalized=True,
        channel_names=list(split.channel_names),
    )


def raw_delta_phi_history(split: DatasetSplit, pairs: list) -> np.ndarray:
    """Last historical delta_phi per window, de-normalized when needed."""
    last = np.array([w.values[-1, _DPHI_IDX] for w, _ in pairs])
    if split.normalized:
        std = split.norm_stats.std[_DPHI_IDX]
        scale = std if std >= _STD_FLOOR else 1.0
        last = last * scale + split.norm_stats.mean[_DPHI_IDX]
    return last


def targets_phi(pairs: list) -> np.ndarray:
    """Recover the wrapped target angle from each circular target."""
    return np.array([math.atan2(t.sin_c, t.cos_c) for _, t in pairs])


def stack_pairs(pairs: list) -> tuple[np.ndarray, np.ndarray]:
    """Stack (window, target) pairs into (n, L, M) and (n, 2) arrays."""
    x = np.stack([w.values for w, _ in pairs])
    y = np.array([[t.cos_c, t.sin_c] for _, t in pairs])
    return x, y


def write_manifest(path, split: DatasetSplit) -> None:
    doc = {
        "split_sizes": {
            "train": len(split.train),
            "val": len(split.val),
            "test": len(split.test),
        },
        "channel_names": split.channel_names,
        "normalized": split.normalized,
        "norm_stats": {
            "mean": split.norm_stats.mean.tolist(),
            "std": split.norm_stats.std.tolist(),
        },
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
