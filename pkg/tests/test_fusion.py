"""Fusion projection, multiscale convolution, and attention-gate stages."""

import numpy as np
import pytest

from barfiq.errors import ConfigError, ShapeError
from barfiq.fusion import (
    FusionBlock,
    FusionConfig,
    VARIANTS,
    depthwise_conv,
    multiscale_conv,
)
from barfiq.nn import ParamStore
from barfiq.numcore import Tensor, grad_check


def _block(cfg, in_channels=6, seed=0):
    store = ParamStore(np.random.default_rng(seed))
    return store, FusionBlock(store, "fusion", cfg, in_channels)


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


class TestFusionConfig:
    def test_variant_mapping(self):
        assert set(VARIANTS) == {"ca_sa", "sa", "ca", "none"}
        cfg = FusionConfig.from_variant("sa")
        assert not cfg.use_channel_attention and cfg.use_spatial_attention
        assert cfg.variant == "sa"

    def test_unknown_variant_rejected(self):
        with pytest.raises(ConfigError):
            FusionConfig.from_variant("both")

    def test_even_kernel_rejected(self):
        with pytest.raises(ConfigError):
            FusionConfig(kernel_sizes=(2, 5, 7)).validate()


class TestFuseProject:
    def test_averaging_identity(self):
        cfg = FusionConfig(d_out=3, reduction=2, use_channel_attention=False, use_spatial_attention=False)
        store, block = _block(cfg, in_channels=6)
        block.project.w.data[:] = np.vstack([np.eye(3) / 2, np.eye(3) / 2])
        block.project.b.data[:] = 0.0
        stream = np.random.default_rng(1).normal(size=(2, 4, 3))
        out = block.fuse_project([Tensor(stream), Tensor(stream)])
        np.testing.assert_allclose(out.data, stream, atol=1e-12)

    def test_zero_inputs_zero_bias(self):
        cfg = FusionConfig(d_out=3, reduction=2)
        store, block = _block(cfg)
        block.project.b.data[:] = 0.0
        out = block.fuse_project([Tensor(np.zeros((1, 4, 2))), Tensor(np.zeros((1, 4, 4)))])
        np.testing.assert_allclose(out.data, 0.0, atol=0)

    def test_matmul_oracle(self):
        cfg = FusionConfig(d_out=4)
        store, block = _block(cfg, in_channels=5)
        rng = np.random.default_rng(2)
        a, b = rng.normal(size=(1, 2, 2)), rng.normal(size=(1, 2, 3))
        out = block.fuse_project([Tensor(a), Tensor(b)])
        cat = np.concatenate([a, b], axis=-1)
        expected = cat @ block.project.w.data + block.project.b.data
        np.testing.assert_allclose(out.data, expected, atol=1e-12)

    def test_mismatched_lengths_rejected(self):
        cfg = FusionConfig(d_out=3, reduction=2)
        store, block = _block(cfg)
        with pytest.raises(ShapeError):
            block.fuse_project([Tensor(np.zeros((1, 4, 3))), Tensor(np.zeros((1, 5, 3)))])

    def test_time_pointwise_permutation_equivariance(self):
        cfg = FusionConfig(d_out=4)
        store, block = _block(cfg, in_channels=5)
        rng = np.random.default_rng(3)
        a, b = rng.normal(size=(1, 6, 2)), rng.normal(size=(1, 6, 3))
        perm = rng.permutation(6)
        direct = block.fuse_project([Tensor(a), Tensor(b)]).data
        permuted = block.fuse_project([Tensor(a[:, perm]), Tensor(b[:, perm])]).data
        unpermuted = np.empty_like(permuted)
        unpermuted[:, perm] = permuted
        np.testing.assert_allclose(unpermuted, direct, atol=1e-12)


class TestMultiscaleConv:
    def test_zero_kernels(self):
        x = Tensor(np.random.default_rng(4).normal(size=(1, 6, 2)))
        kernels = [Tensor(np.zeros((k, 2))) for k in (3, 5, 7)]
        np.testing.assert_allclose(multiscale_conv(x, kernels).data, 0.0, atol=0)

    def test_delta_kernel_identity(self):
        x = Tensor(np.random.default_rng(5).normal(size=(1, 6, 1)))
        k3 = np.zeros((3, 1))
        k3[1, 0] = 1.0  # centered tap
        kernels = [Tensor(k3), Tensor(np.zeros((5, 1))), Tensor(np.zeros((7, 1)))]
        np.testing.assert_allclose(multiscale_conv(x, kernels).data, x.data, atol=0)

    def test_direct_convolution_oracle(self):
        rng = np.random.default_rng(6)
        x = rng.normal(size=(1, 6, 2))
        weights = [rng.normal(size=(k, 2)) for k in (3, 5, 7)]
        out = multiscale_conv(Tensor(x), [Tensor(w) for w in weights]).data
        expected = np.zeros_like(x)
        for w in weights:
            k = w.shape[0]
            half = k // 2
            for t in range(6):
                for j in range(k):
                    src = t + j - half
                    if 0 <= src < 6:
                        expected[0, t] += w[j] * x[0, src]
        np.testing.assert_allclose(out, expected, atol=1e-12)


class TestChannelAttention:
    def test_zero_pathway_is_identity(self):
        cfg = FusionConfig(d_out=4, use_spatial_attention=False)
        store, block = _block(cfg)
        block.channel.lin_out.w.data[:] = 0.0
        block.channel.lin_out.b.data[:] = 0.0
        x0 = Tensor(np.random.default_rng(7).normal(size=(2, 3, 4)))
        np.testing.assert_allclose(block.channel(x0).data, x0.data, atol=0)

    def test_ablated_flag_passes_through(self):
        cfg = FusionConfig(d_out=4, use_channel_attention=False, use_spatial_attention=False)
        store, block = _block(cfg, in_channels=4)
        assert block.channel is None and block.spatial is None
        x = np.random.default_rng(8).normal(size=(1, 3, 4))
        out = block([Tensor(x[..., :2]), Tensor(x[..., 2:])])
        # base variant reduces to projection then output projection only
        cat_proj = x @ block.project.w.data + block.project.b.data
        np.testing.assert_allclose(out.data, cat_proj @ block.out.w.data + block.out.b.data, atol=1e-12)

    def test_scalar_oracle(self):
        cfg = FusionConfig(d_out=3, reduction=1, use_spatial_attention=False)
        store, block = _block(cfg, seed=9)
        ca = block.channel
        rng = np.random.default_rng(10)
        x0 = rng.normal(size=(1, 2, 3))
        out = ca(Tensor(x0)).data

        xc = x0 @ ca.lin_in.w.data + ca.lin_in.b.data
        conv = np.zeros_like(xc)
        for w in ca.kernels:
            k = w.data.shape[0]
            half = k // 2
            for t in range(2):
                for j in range(k):
                    src = t + j - half
                    if 0 <= src < 2:
                        conv[0, t] += w.data[j] * xc[0, src]
        pathway = conv @ ca.lin_out.w.data + ca.lin_out.b.data
        pooled = pathway.mean(axis=1)
        gate = _sigmoid(np.maximum(pooled @ ca.gate_w1.data, 0.0) @ ca.gate_w2.data)
        expected = x0 + pathway * gate[:, None, :]
        np.testing.assert_allclose(out, expected, atol=1e-10)

    def test_gate_in_unit_interval(self):
        cfg = FusionConfig(d_out=4, use_spatial_attention=False)
        store, block = _block(cfg, seed=11)
        x0 = Tensor(np.random.default_rng(12).normal(size=(3, 5, 4)) * 10)
        ca = block.channel
        pathway = ca.lin_out(multiscale_conv(ca.lin_in(x0), ca.kernels))
        gate = ((pathway.mean(axis=-2) @ ca.gate_w1).relu() @ ca.gate_w2).sigmoid()
        assert np.all(gate.data > 0) and np.all(gate.data < 1)


class TestSpatialAttention:
    def test_zero_pathway_is_identity(self):
        cfg = FusionConfig(d_out=4, use_channel_attention=False)
        store, block = _block(cfg)
        block.spatial.lin_out.w.data[:] = 0.0
        block.spatial.lin_out.b.data[:] = 0.0
        x1 = Tensor(np.random.default_rng(13).normal(size=(2, 3, 4)))
        np.testing.assert_allclose(block.spatial(x1).data, x1.data, atol=0)

    def test_constant_pathway_gives_constant_gate(self):
        cfg = FusionConfig(d_out=4, use_channel_attention=False)
        store, block = _block(cfg, seed=14)
        sa = block.spatial
        # a constant input makes the pathway time-constant wherever every
        # kernel has full support (zero padding breaks this near the edges)
        x1 = Tensor(np.ones((1, 9, 4)))
        pathway = sa.lin_out(multiscale_conv(sa.lin_in(x1), sa.kernels)).data
        avg_c = pathway.mean(axis=-1, keepdims=True)
        max_c = pathway.max(axis=-1, keepdims=True)
        gate = _sigmoid(np.concatenate([avg_c, max_c], axis=-1) @ sa.gate_w.data)
        np.testing.assert_allclose(pathway[0, 3], pathway[0, 5], atol=1e-12)
        np.testing.assert_allclose(gate[0, 3], gate[0, 4], atol=1e-12)
        np.testing.assert_allclose(gate[0, 4], gate[0, 5], atol=1e-12)

    def test_scalar_oracle(self):
        cfg = FusionConfig(d_out=2, reduction=1, use_channel_attention=False)
        store, block = _block(cfg, seed=15)
        sa = block.spatial
        rng = np.random.default_rng(16)
        x1 = rng.normal(size=(1, 4, 2))
        out = sa(Tensor(x1)).data

        xs = x1 @ sa.lin_in.w.data + sa.lin_in.b.data
        conv = np.zeros_like(xs)
        for w in sa.kernels:
            k = w.data.shape[0]
            half = k // 2
            for t in range(4):
                for j in range(k):
                    src = t + j - half
                    if 0 <= src < 4:
                        conv[0, t] += w.data[j] * xs[0, src]
        pathway = conv @ sa.lin_out.w.data + sa.lin_out.b.data
        gates = np.zeros((1, 4, 1))
        for t in range(4):
            pooled = np.array([pathway[0, t].mean(), pathway[0, t].max()])
            gates[0, t, 0] = _sigmoid(pooled @ sa.gate_w.data[:, 0])
        expected = x1 + pathway * gates
        np.testing.assert_allclose(out, expected, atol=1e-10)


class TestFuseForward:
    def test_zero_attention_pathways_match_base_variant(self):
        rng = np.random.default_rng(17)
        a, b = rng.normal(size=(1, 4, 3)), rng.normal(size=(1, 4, 3))
        full_store, full = _block(FusionConfig(d_out=4), seed=18)
        base_store, base = _block(
            FusionConfig(d_out=4, use_channel_attention=False, use_spatial_attention=False),
            seed=18,
        )
        # align shared projections, then zero the attention correction paths
        for name in ("project", "out"):
            getattr(base, name).w.data[...] = getattr(full, name).w.data
            getattr(base, name).b.data[...] = getattr(full, name).b.data
        full.channel.lin_out.w.data[:] = 0.0
        full.channel.lin_out.b.data[:] = 0.0
        full.spatial.lin_out.w.data[:] = 0.0
        full.spatial.lin_out.b.data[:] = 0.0
        np.testing.assert_allclose(
            full([Tensor(a), Tensor(b)]).data, base([Tensor(a), Tensor(b)]).data, atol=1e-12
        )

    def test_attention_stages_are_order_sensitive(self):
        # unlike fuse_project, the conv-driven stages see temporal order
        cfg = FusionConfig(d_out=4)
        store, block = _block(cfg, seed=19)
        rng = np.random.default_rng(20)
        a, b = rng.normal(size=(1, 6, 2)), rng.normal(size=(1, 6, 4))
        perm = np.array([3, 0, 5, 1, 4, 2])
        direct = block([Tensor(a), Tensor(b)]).data
        permuted = block([Tensor(a[:, perm]), Tensor(b[:, perm])]).data
        unpermuted = np.empty_like(permuted)
        unpermuted[:, perm] = permuted
        assert not np.allclose(unpermuted, direct, atol=1e-6)

    def test_variant_parameter_sets(self):
        names = {}
        for variant in VARIANTS:
            store, _ = _block(FusionConfig.from_variant(variant, d_out=4), seed=21)
            names[variant] = set(store.params)
        assert names["ca_sa"] == names["ca"] | names["sa"]
        assert names["none"] == names["ca"] & names["sa"]
        assert not any(name.startswith("fusion.sa.") for name in names["ca"])
        assert not any(name.startswith("fusion.ca.") for name in names["sa"])

    def test_full_path_gradients(self):
        cfg = FusionConfig(d_out=4)
        store, block = _block(cfg, seed=22)
        rng = np.random.default_rng(23)
        a = Tensor(rng.normal(size=(2, 4, 3)))
        b = Tensor(rng.normal(size=(2, 4, 3)))

        def loss():
            out = block([a, b])
            return (out * out).mean()

        report = grad_check(loss, dict(store.params), probe_step=1e-5)
        assert report.max_rel_error <= 1e-4
