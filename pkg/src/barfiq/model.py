"""Patch embedding and the dual-branch block-attention-residual transformer.

Each branch stacks blocks that combine four mechanisms on top of a rotary
linear-attention core:

- query/key normalization with learnable scales, applied before rotation
- cross-depth residual retrieval: every block pools its input into a summary
  vector, and later blocks softmax-attend over all predecessor summaries to
  retrieve a residual vector that is broadcast across tokens
- a sparse top-k mixture of SwiGLU experts as the feed-forward stage
- a sigmoid gate blending the expert output into the residual stream
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DomainError
from .nn import LayerNorm, Linear, ParamStore, dropout
from .numcore import Tensor, concat, scatter_rows, softmax, stack_last


@dataclass
class ModelConfig:
    d_model: int = 32
    patch_len: int = 4
    patch_stride: int = 4
    blocks_branch1: int = 2
    blocks_branch2: int = 2
    n_experts: int = 4
    top_k: int = 2
    d_r: int = 16
    expert_hidden: int = 64
    head_hidden: int = 32
    gamma_q_init: float = 1.0
    gamma_k_init: float = 1.0
    rope_base: float = 10000.0
    eps_norm: float = 1e-6
    eps_div: float = 1e-8
    dropout_rate: float = 0.1

    def validate(self) -> None:
        if self.d_model % 2 != 0:
            raise ConfigError("d_model must be even (features rotate in pairs)")
        if not 1 <= self.top_k <= self.n_experts:
            raise ConfigError("need 1 <= top_k <= n_experts")
        if self.patch_len < 1 or self.patch_stride < 1:
            raise ConfigError("patch_len and patch_stride must be >= 1")
        if min(self.blocks_branch1, self.blocks_branch2) < 1:
            raise ConfigError("each branch needs at least one block")


@dataclass
class TokenSequence:
    tokens: Tensor  # (B, N, d)
    positions: list[int]


@dataclass
class BlockSummary:
    vector: Tensor  # (B, d)
    depth: int


@dataclass
class BarTrace:
    alphas: list = field(default_factory=list)  # per block: (B, n_predecessors)
    retrieved_norms: list = field(default_factory=list)  # per block: (B,)


# -- stateless operations ------------------------------------------------------


def qk_normalize(q: Tensor, k: Tensor, gamma_q, gamma_k, eps: float) -> tuple[Tensor, Tensor]:
    """Rescale each query/key row to a learnable norm: gamma * v / (||v|| + eps)."""

    def scale(v, gamma):
        norm = (v * v).sum(axis=-1, keepdims=True).sqrt()
        return v / (norm + eps) * gamma

    return scale(q, gamma_q), scale(k, gamma_k)


def rope_frequencies(dim: int, base: float) -> np.ndarray:
    """Per-pair rotation frequencies base**(-2m/d) for pairs m = 1..d/2."""
    m = np.arange(1, dim // 2 + 1, dtype=np.float64)
    return base ** (-2.0 * m / dim)


def _rope_tables(dim: int, base: float, positions) -> tuple[np.ndarray, np.ndarray]:
    freqs = rope_frequencies(dim, base)
    angles = np.asarray(positions, dtype=np.float64)[:, None] * freqs[None, :]
    return np.cos(angles), np.sin(angles)


def rope_apply(x: Tensor, positions, base: float) -> Tensor:
    """Rotate feature pairs (2m, 2m+1) of each token by position * freq_m."""
    dim = x.shape[-1]
    if dim % 2 != 0:
        raise ConfigError("rotary encoding needs an even feature dimension")
    cos, sin = _rope_tables(dim, base, positions)
    even = x[..., 0::2]
    odd = x[..., 1::2]
    rot_even = even * cos - odd * sin
    rot_odd = even * sin + odd * cos
    return stack_last([rot_even, rot_odd]).reshape(x.shape)


def rope_rotate(vec: Tensor, position: int, base: float) -> Tensor:
    """Single-vector rotary encoding (token at one integer position)."""
    if not isinstance(vec, Tensor):
        vec = Tensor(vec)
    return rope_apply(vec.reshape(1, vec.shape[-1]), [position], base).reshape(vec.shape)


def linear_attention(q_rot: Tensor, k_rot: Tensor, v: Tensor, eps: float) -> Tensor:
    """Kernelized attention phi(Q) [phi(K)^T V] / (phi(Q) [phi(K)^T 1] + eps).

    The positive feature map is phi(x) = ELU(x) + 1; associating the key-value
    product first keeps the cost linear in sequence length.
    """
    phi_q = q_rot.elu() + 1.0
    phi_k = k_rot.elu() + 1.0
    kv = phi_k.swapaxes(-1, -2) @ v  # (..., d, d)
    numer = phi_q @ kv  # (..., N, d)
    key_sum = phi_k.sum(axis=-2, keepdims=True)  # (..., 1, d)
    denom = (phi_q * key_sum).sum(axis=-1, keepdims=True) + eps
    return numer / denom


def bar_combine(scores: Tensor, values: list[Tensor]) -> tuple[Tensor, Tensor]:
    """Softmax-weighted convex combination of predecessor value vectors.

    ``scores`` is (B, n), ``values`` holds n tensors of shape (B, d).
    Returns the retrieved vector (B, d) and the weights (B, n).
    """
    alphas = softmax(scores, axis=-1)
    parts = [alphas[:, j : j + 1] * values[j] for j in range(len(values))]
    retrieved = parts[0]
    for p in parts[1:]:
        retrieved = retrieved + p
    return retrieved, alphas


def bar_aggregate(
    current: Tensor,
    history: list[Tensor],
    w_q: Tensor,
    w_k: Tensor,
    w_v: Tensor,
    d_r: int,
) -> tuple[Tensor, Tensor]:
    """Score each predecessor summary against the current block and retrieve.

    s_j = (W_q c) . (W_k B_j) / sqrt(d_r); alpha = softmax(s);
    r = sum_j alpha_j W_v B_j.
    """
    if not history:
        raise DomainError("residual retrieval needs at least one predecessor")
    squeeze = current.ndim == 1
    if squeeze:
        current = current.reshape(1, current.shape[-1])
        history = [h.reshape(1, h.shape[-1]) if h.ndim == 1 else h for h in history]
    query = current @ w_q  # (B, d_r)
    scale = 1.0 / math.sqrt(d_r)
    score_cols = [((query * (h @ w_k)).sum(axis=-1, keepdims=True)) * scale for h in history]
    scores = concat(score_cols, axis=-1)  # (B, n)
    values = [h @ w_v for h in history]
    retrieved, alphas = bar_combine(scores, values)
    if squeeze:
        retrieved = retrieved.reshape(retrieved.shape[-1])
        alphas = alphas.reshape(alphas.shape[-1])
    return retrieved, alphas


def topk_indices(probs: np.ndarray, k: int) -> np.ndarray:
    """Indices of the k largest entries; ties resolve to the lower index."""
    return np.argsort(-probs, axis=-1, kind="stable")[..., :k]


# -- learnable components -------------------------------------------------------


class PatchEmbed:
    """Flatten (P x M) patches of the input window and project them to d."""

    def __init__(self, store: ParamStore, name: str, cfg: ModelConfig, n_channels: int):
        self.cfg = cfg
        self.n_channels = n_channels
        self.proj = Linear(store, name, cfg.patch_len * n_channels, cfg.d_model)

    def __call__(self, window: Tensor) -> TokenSequence:
        batch, length, channels = window.shape
        cfg = self.cfg
        if cfg.patch_len > length:
            raise ConfigError("patch length exceeds the input window")
        starts = list(range(0, length - cfg.patch_len + 1, cfg.patch_stride))
        flat = [
            window[:, s : s + cfg.patch_len, :].reshape(batch, 1, cfg.patch_len * channels)
            for s in starts
        ]
        tokens = self.proj(concat(flat, axis=1))
        return TokenSequence(tokens=tokens, positions=starts)


class SwiGluExpert:
    """Gated feed-forward transform [SiLU(x W_u) * (x W_v)] W_o (biasless)."""

    def __init__(self, store: ParamStore, name: str, dim: int, hidden: int):
        self.w_u = store.uniform(f"{name}.w_u", (dim, hidden), fan_in=dim)
        self.w_v = store.uniform(f"{name}.w_v", (dim, hidden), fan_in=dim)
        self.w_o = store.uniform(f"{name}.w_o", (hidden, dim), fan_in=hidden)

    def __call__(self, x: Tensor) -> Tensor:
        return ((x @ self.w_u).silu() * (x @ self.w_v)) @ self.w_o


class SparseMoe:
    """Top-k routed mixture of SwiGLU experts over token rows.

    Only the selected experts run; ``last_expert_evals`` counts expert-row
    evaluations of the most recent call (always rows * k).
    """

    def __init__(self, store: ParamStore, name: str, cfg: ModelConfig):
        self.cfg = cfg
        self.router_w = store.uniform(f"{name}.router_w", (cfg.d_model, cfg.n_experts), fan_in=cfg.d_model)
        self.experts = [
            SwiGluExpert(store, f"{name}.expert{e}", cfg.d_model, cfg.expert_hidden)
            for e in range(cfg.n_experts)
        ]
        self.last_expert_evals = 0

    def __call__(self, x: Tensor) -> Tensor:
        rows = x.shape[0]
        cfg = self.cfg
        probs = softmax(x @ self.router_w, axis=-1)  # (R, E)
        chosen = topk_indices(probs.data, cfg.top_k)  # (R, k)
        selected = np.zeros((rows, cfg.n_experts), dtype=bool)
        np.put_along_axis(selected, chosen, True, axis=-1)

        kept = probs * Tensor(selected.astype(np.float64))
        kept_sum = kept.sum(axis=-1, keepdims=True) + cfg.eps_div  # (R, 1)

        out = None
        self.last_expert_evals = 0
        for e in range(cfg.n_experts):
            rows_e = np.nonzero(selected[:, e])[0]
            if rows_e.size == 0:
                continue
            self.last_expert_evals += rows_e.size
            gathered = x[rows_e, :]
            weight = (probs[:, e : e + 1] / kept_sum)[rows_e, :]
            placed = scatter_rows(self.experts[e](gathered) * weight, rows_e, rows)
            out = placed if out is None else out + placed
        return out if out is not None else x * 0.0


class BarBlock:
    """One transformer block with cross-depth residual retrieval."""

    def __init__(self, store: ParamStore, name: str, cfg: ModelConfig):
        d = cfg.d_model
        self.cfg = cfg
        self.w_q = store.uniform(f"{name}.attn_wq", (d, d), fan_in=d)
        self.w_k = store.uniform(f"{name}.attn_wk", (d, d), fan_in=d)
        self.w_v = store.uniform(f"{name}.attn_wv", (d, d), fan_in=d)
        self.w_o = store.uniform(f"{name}.attn_wo", (d, d), fan_in=d)
        self.gamma_q = store.full(f"{name}.gamma_q", (), cfg.gamma_q_init)
        self.gamma_k = store.full(f"{name}.gamma_k", (), cfg.gamma_k_init)
        self.bar_wq = store.uniform(f"{name}.bar_wq", (d, cfg.d_r), fan_in=d)
        self.bar_wk = store.uniform(f"{name}.bar_wk", (d, cfg.d_r), fan_in=d)
        self.bar_wv = store.uniform(f"{name}.bar_wv", (d, d), fan_in=d)
        self.ln = LayerNorm(store, f"{name}.ln", d, eps=cfg.eps_norm)
        self.moe = SparseMoe(store, f"{name}.moe", cfg)
        self.gate_w = store.uniform(f"{name}.gate_w", (2 * d, d), fan_in=2 * d)
        self.gate_b = store.uniform(f"{name}.gate_b", (d,), fan_in=2 * d)

    def __call__(
        self,
        hidden: Tensor,
        history: list[Tensor],
        positions,
        training: bool = False,
        drop_rng: np.random.Generator | None = None,
    ) -> tuple[Tensor, Tensor, dict]:
        cfg = self.cfg
        batch, n_tokens, d = hidden.shape
        summary_in = hidden.mean(axis=1)  # this block's contribution to history

        q = hidden @ self.w_q
        k = hidden @ self.w_k
        v = hidden @ self.w_v
        q, k = qk_normalize(q, k, self.gamma_q, self.gamma_k, cfg.eps_norm)
        q = rope_apply(q, positions, cfg.rope_base)
        k = rope_apply(k, positions, cfg.rope_base)
        attn = linear_attention(q, k, v, cfg.eps_div)
        z = hidden + dropout(attn @ self.w_o, cfg.dropout_rate, training, drop_rng)

        trace: dict = {}
        if history:
            current = z.mean(axis=1)
            retrieved, alphas = bar_aggregate(
                current, history, self.bar_wq, self.bar_wk, self.bar_wv, cfg.d_r
            )
            u = z + retrieved.reshape(batch, 1, d)
            trace["alphas"] = alphas.data.copy()
            trace["retrieved_norm"] = np.linalg.norm(retrieved.data, axis=-1)
        else:
            u = z

        normed = self.ln(u)
        moe_out = self.moe(normed.reshape(batch * n_tokens, d)).reshape(batch, n_tokens, d)
        gate = (concat([u, moe_out], axis=-1) @ self.gate_w + self.gate_b).sigmoid()
        return u + gate * moe_out, summary_in, trace


class BarBranch:
    """A stack of blocks sharing one summary history."""

    def __init__(self, store: ParamStore, name: str, cfg: ModelConfig, n_blocks: int):
        self.blocks = [BarBlock(store, f"{name}.block{i}", cfg) for i in range(n_blocks)]

    def __call__(
        self,
        tokens: TokenSequence,
        training: bool = False,
        drop_rng: np.random.Generator | None = None,
    ) -> tuple[Tensor, BarTrace]:
        hidden = tokens.tokens
        history: list[Tensor] = []
        trace = BarTrace()
        for block in self.blocks:
            hidden, summary, entry = block(
                hidden, history, tokens.positions, training=training, drop_rng=drop_rng
            )
            history.append(summary)
            if entry:
                trace.alphas.append(entry["alphas"])
                trace.retrieved_norms.append(entry["retrieved_norm"])
        return hidden, trace


class DualBranch:
    """Two independent branches over the same embedded tokens, concatenated."""

    def __init__(self, store: ParamStore, cfg: ModelConfig):
        self.branch1 = BarBranch(store, "branch1", cfg, cfg.blocks_branch1)
        self.branch2 = BarBranch(store, "branch2", cfg, cfg.blocks_branch2)

    def branch_outputs(
        self,
        tokens: TokenSequence,
        training: bool = False,
        drop_rng: np.random.Generator | None = None,
    ) -> tuple[Tensor, Tensor, BarTrace, BarTrace]:
        h1, t1 = self.branch1(tokens, training=training, drop_rng=drop_rng)
        h2, t2 = self.branch2(tokens, training=training, drop_rng=drop_rng)
        return h1, h2, t1, t2

    def __call__(
        self,
        tokens: TokenSequence,
        training: bool = False,
        drop_rng: np.random.Generator | None = None,
    ) -> tuple[Tensor, BarTrace, BarTrace]:
        h1, h2, t1, t2 = self.branch_outputs(tokens, training=training, drop_rng=drop_rng)
        return concat([h1, h2], axis=-1), t1, t2
