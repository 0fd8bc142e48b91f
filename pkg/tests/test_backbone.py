"""Attention and backbone tests against independently coded references."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pan.backbone import (
    EnhancerConfig,
    conv_refine,
    count_work,
    enhance,
    init_backbone,
    init_enhancer,
    load_params,
    pan_backbone,
    save_params,
    self_attention,
)
from pan.pillars import PillarConfig, PillarGrid, PointCloud, RadarPoint, TokenBatch, gather, pillarize, scatter
from pan.tensor import Rng

from test_layers import conv2d_oracle, max_pool_oracle


def attention_oracle(x, params, cfg):
    """Explicit-loop scaled dot-product attention, one head at a time."""
    p, f = x.shape
    q = x @ params.q.weight + params.q.bias
    k = x @ params.k.weight + params.k.bias
    v = x @ params.v.weight + params.v.bias
    dh = f // cfg.num_heads
    out = np.zeros((p, f))
    for hd in range(cfg.num_heads):
        lo, hi = hd * dh, (hd + 1) * dh
        for i in range(p):
            scores = [sum(q[i, lo + c] * k[j, lo + c] for c in range(dh)) / math.sqrt(dh)
                      for j in range(p)]
            mx = max(scores)
            exps = [math.exp(s - mx) for s in scores]
            z = sum(exps)
            weights = [e / z for e in exps]
            for c in range(dh):
                out[i, lo + c] = sum(weights[j] * v[j, lo + c] for j in range(p))
    if cfg.use_attn_out:
        out = out @ params.attn_out.weight + params.attn_out.bias
    return out


def enhance_reference(tokens, params, cfg):
    """Straight-line re-implementation of the token enhancement chain."""
    e = tokens @ params.enc.weight + params.enc.bias
    a = e + attention_oracle(e, params, cfg)
    h = a @ params.mlp1.weight + params.mlp1.bias
    mu = h.mean(axis=1, keepdims=True)
    var = h.var(axis=1, keepdims=True)
    h = params.ln_gamma * (h - mu) / np.sqrt(var + 1e-5) + params.ln_beta
    h = h * 0.5 * (1.0 + np.vectorize(math.erf)(h / math.sqrt(2.0)))
    m = a + (h @ params.mlp2.weight + params.mlp2.bias)
    return m @ params.dec.weight + params.dec.bias


def small_pillar_cfg(**kw):
    defaults = dict(x_min=-8.0, x_max=8.0, y_min=-8.0, y_max=8.0,
                    pillar_size=1.0, out_channels=4)
    defaults.update(kw)
    return PillarConfig(**defaults)


class TestSelfAttention:
    def test_single_token_weight_is_one(self):
        cfg = EnhancerConfig(embed_dim=6, dropout_p=0.0)
        params = init_enhancer(4, cfg, Rng(0))
        x = Rng(1).normal(size=(1, 6))
        capture = {}
        out = self_attention(x, params, cfg, capture=capture)
        assert capture["weights"].shape == (1, 1, 1)
        assert capture["weights"][0, 0, 0] == 1.0
        v = x @ params.v.weight + params.v.bias
        expected = v @ params.attn_out.weight + params.attn_out.bias
        assert np.allclose(out, expected, atol=1e-12)

    def test_identical_tokens_identical_outputs(self):
        cfg = EnhancerConfig(embed_dim=8, dropout_p=0.0)
        params = init_enhancer(4, cfg, Rng(2))
        row = Rng(3).normal(size=(1, 8))
        out = self_attention(np.repeat(row, 3, axis=0), params, cfg)
        assert np.allclose(out[0], out[1], atol=1e-12)
        assert np.allclose(out[0], out[2], atol=1e-12)

    def test_empty_batch(self):
        cfg = EnhancerConfig(embed_dim=8, dropout_p=0.0)
        params = init_enhancer(4, cfg, Rng(4))
        assert self_attention(np.zeros((0, 8)), params, cfg).shape == (0, 8)

    def test_matches_loop_oracle(self):
        cfg = EnhancerConfig(embed_dim=8, num_heads=2, dropout_p=0.0)
        params = init_enhancer(4, cfg, Rng(5))
        x = Rng(6).normal(size=(4, 8))
        assert np.allclose(self_attention(x, params, cfg),
                           attention_oracle(x, params, cfg), atol=1e-10)

    def test_oracle_equivalence_many_seeds(self):
        for seed in range(100):
            rng = Rng(seed)
            p_count = int(rng.integers(1, 9))
            f = int(rng.integers(1, 5)) * 2  # even, <= 16, divisible by heads=2
            heads = 2 if f % 2 == 0 else 1
            cfg = EnhancerConfig(embed_dim=f, num_heads=heads, dropout_p=0.0)
            params = init_enhancer(3, cfg, rng)
            x = rng.normal(size=(p_count, f))
            assert np.allclose(self_attention(x, params, cfg),
                               attention_oracle(x, params, cfg), atol=1e-10)

    def test_attention_rows_sum_to_one(self):
        cfg = EnhancerConfig(embed_dim=8, num_heads=2, dropout_p=0.0)
        params = init_enhancer(4, cfg, Rng(7))
        capture = {}
        self_attention(Rng(8).normal(size=(5, 8)), params, cfg, capture=capture)
        assert np.allclose(capture["weights"].sum(axis=2), 1.0, atol=1e-9)

    def test_dropout_before_softmax_differs_from_after(self):
        cfg_before = EnhancerConfig(embed_dim=8, dropout_p=0.5)
        cfg_after = EnhancerConfig(embed_dim=8, dropout_p=0.5, dropout_after_softmax=True)
        params = init_enhancer(4, cfg_before, Rng(9))
        x = Rng(10).normal(size=(4, 8))
        before = self_attention(x, params, cfg_before, rng=Rng(11), training=True)
        after = self_attention(x, params, cfg_after, rng=Rng(11), training=True)
        assert not np.allclose(before, after)
        # inference ignores dropout entirely
        a = self_attention(x, params, cfg_before, rng=Rng(12), training=False)
        b = self_attention(x, params, cfg_after, rng=Rng(13), training=False)
        assert np.array_equal(a, b)


class TestEnhance:
    def test_empty_passthrough(self):
        cfg = EnhancerConfig(embed_dim=8, dropout_p=0.0)
        params = init_enhancer(4, cfg, Rng(0))
        tb = TokenBatch(tokens=np.zeros((0, 4)), coords=np.zeros((0, 2), dtype=int))
        out = enhance(tb, params, cfg)
        assert len(out) == 0

    def test_all_zero_weights_give_zero(self):
        cfg = EnhancerConfig(embed_dim=8, dropout_p=0.0)
        params = init_enhancer(4, cfg, Rng(1))
        for lp in (params.enc, params.q, params.k, params.v, params.attn_out,
                   params.mlp1, params.mlp2, params.dec):
            lp.weight[:] = 0.0
            lp.bias[:] = 0.0
        params.ln_gamma[:] = 0.0
        params.ln_beta[:] = 0.0
        tb = TokenBatch(tokens=Rng(2).normal(size=(3, 4)),
                        coords=np.array([[0, 0], [1, 1], [2, 2]]))
        assert np.all(enhance(tb, params, cfg).tokens == 0.0)

    def test_matches_reference_reimplementation(self):
        cfg = EnhancerConfig(embed_dim=16, dropout_p=0.0)
        params = init_enhancer(6, cfg, Rng(3))
        tokens = Rng(4).normal(size=(5, 6))
        tb = TokenBatch(tokens=tokens, coords=np.column_stack([np.arange(5), np.arange(5)]))
        got = enhance(tb, params, cfg).tokens
        want = enhance_reference(tokens, params, cfg)
        assert np.allclose(got, want, atol=1e-10)

    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=25, deadline=None)
    def test_permutation_equivariance(self, seed):
        cfg = EnhancerConfig(embed_dim=8, dropout_p=0.0)
        params = init_enhancer(4, cfg, Rng(100))
        rng = Rng(seed)
        n = int(rng.integers(2, 10))
        tokens = rng.normal(size=(n, 4))
        coords = np.column_stack([np.arange(n), np.zeros(n, dtype=int)])
        perm = rng.permutation(n)
        base = enhance(TokenBatch(tokens=tokens, coords=coords), params, cfg).tokens
        permuted = enhance(TokenBatch(tokens=tokens[perm], coords=coords[perm]),
                           params, cfg).tokens
        assert np.allclose(base[perm], permuted, atol=1e-10)

    def test_sparsity_preserved_through_scatter(self):
        cfg = EnhancerConfig(embed_dim=8, dropout_p=0.0)
        pcfg = small_pillar_cfg()
        params = init_backbone(pcfg, cfg, Rng(5))
        pts = [RadarPoint(x=float(x), y=float(y), z=0.0, vx=1.0, vy=0.0, rcs=1.0)
               for x, y in [(-3.5, 2.5), (0.5, 0.5), (6.5, -7.5)]]
        grid = pillarize(PointCloud("f", pts), pcfg, params.pfn)
        tb = enhance(gather(grid), params.enhancer, cfg)
        back = scatter(tb, grid.height, grid.width)
        assert np.array_equal(back.mask, grid.mask)
        assert np.all(back.data[~grid.mask] == 0.0)


class TestConvRefine:
    def _grid(self, data):
        mask = np.any(data != 0.0, axis=2)
        return PillarGrid(data=data, mask=mask)

    def test_zero_grid_bias_free(self):
        cfg = EnhancerConfig(embed_dim=8, dropout_p=0.0)
        params = init_enhancer(4, cfg, Rng(0))
        params.conv1.bias[:] = 0.0
        params.conv2.bias[:] = 0.0
        grid = PillarGrid(data=np.zeros((8, 8, 4)), mask=np.zeros((8, 8), dtype=bool))
        out = conv_refine(grid, params)
        assert np.allclose(out, 0.0, atol=1e-12)

    def test_output_shape_halved_and_tripled(self):
        cfg = EnhancerConfig(embed_dim=8, dropout_p=0.0)
        params = init_enhancer(4, cfg, Rng(1))
        grid = self._grid(Rng(2).normal(size=(8, 8, 4)))
        assert conv_refine(grid, params).shape == (4, 4, 12)

    def test_matches_loop_oracle(self):
        cfg = EnhancerConfig(embed_dim=8, dropout_p=0.0)
        params = init_enhancer(2, cfg, Rng(3))
        grid = self._grid(Rng(4).normal(size=(8, 8, 2)))
        got = conv_refine(grid, params)

        x = conv2d_oracle(grid.data, params.conv1.kernel, params.conv1.bias)
        stats = params.conv1.bn_stats
        x = params.conv1.bn_gamma * (x - stats.mean) / np.sqrt(stats.var + 1e-5) \
            + params.conv1.bn_beta
        x = np.maximum(x, 0.0)
        x = max_pool_oracle(x)
        want = conv2d_oracle(x, params.conv2.kernel, params.conv2.bias)
        assert np.allclose(got, want, atol=1e-10)


class TestBackbone:
    def _setup(self, seed=0, **encfg):
        pcfg = small_pillar_cfg()
        cfg = EnhancerConfig(embed_dim=8, dropout_p=0.0, **encfg)
        params = init_backbone(pcfg, cfg, Rng(seed))
        return pcfg, cfg, params

    def test_empty_cloud_zero_output(self):
        pcfg, cfg, params = self._setup()
        params.enhancer.conv1.bias[:] = 0.0
        params.enhancer.conv2.bias[:] = 0.0
        out = pan_backbone(PointCloud("f", []), params, pcfg, cfg)
        assert out.shape == (8, 8, 12)
        assert np.allclose(out, 0.0, atol=1e-12)

    def test_shape_law_with_conv(self):
        pcfg, cfg, params = self._setup()
        pts = [RadarPoint(x=1.0, y=1.0, z=0.0, vx=1.0, vy=0.0, rcs=1.0)]
        out = pan_backbone(PointCloud("f", pts), params, pcfg, cfg)
        assert out.shape == (pcfg.height // 2, pcfg.width // 2, 3 * pcfg.out_channels)

    def test_shape_law_no_conv(self):
        pcfg, cfg, params = self._setup(conv_enabled=False)
        pts = [RadarPoint(x=1.0, y=1.0, z=0.0, vx=1.0, vy=0.0, rcs=1.0)]
        out = pan_backbone(PointCloud("f", pts), params, pcfg, cfg)
        assert out.shape == (pcfg.height, pcfg.width, pcfg.out_channels)

    def test_single_point_receptive_field(self):
        pcfg, cfg, params = self._setup(seed=7)
        params.enhancer.conv1.bias[:] = 0.0
        params.enhancer.conv2.bias[:] = 0.0
        pt = RadarPoint(x=0.5, y=0.5, z=0.0, vx=2.0, vy=0.0, rcs=4.0)
        out = pan_backbone(PointCloud("f", [pt]), params, pcfg, cfg)
        # pillar (8, 8); conv1 dilates to rows/cols 7..9, pooling maps to 3..4,
        # conv2 dilates once more to 2..5
        nonzero = np.argwhere(np.any(out != 0.0, axis=2))
        assert nonzero.size > 0
        assert nonzero[:, 0].min() >= 2 and nonzero[:, 0].max() <= 5
        assert nonzero[:, 1].min() >= 2 and nonzero[:, 1].max() <= 5

    def test_determinism_same_seed(self):
        pcfg, cfg, params = self._setup(seed=9)
        rng_pts = Rng(11)
        pts = [RadarPoint(x=float(rng_pts.uniform(-8, 8)), y=float(rng_pts.uniform(-8, 8)),
                          z=0.0, vx=1.0, vy=1.0, rcs=2.0) for _ in range(20)]
        pc = PointCloud("f", pts)
        a = pan_backbone(pc, params, pcfg, cfg)
        b = pan_backbone(pc, params, pcfg, cfg)
        assert np.array_equal(a, b)

    def test_training_mode_consumes_rng_and_updates_stats(self):
        pcfg = small_pillar_cfg()
        cfg = EnhancerConfig(embed_dim=8, dropout_p=0.2)
        rng_pts = Rng(13)
        pts = [RadarPoint(x=float(rng_pts.uniform(-8, 8)), y=float(rng_pts.uniform(-8, 8)),
                          z=0.0, vx=1.0, vy=0.0, rcs=2.0) for _ in range(25)]
        pc = PointCloud("f", pts)

        def fresh():
            return init_backbone(pcfg, cfg, Rng(15))

        p1, p2 = fresh(), fresh()
        a = pan_backbone(pc, p1, pcfg, cfg, rng=Rng(1), training=True)
        b = pan_backbone(pc, p2, pcfg, cfg, rng=Rng(1), training=True)
        assert np.array_equal(a, b)  # same dropout seed, same result
        c = pan_backbone(pc, fresh(), pcfg, cfg, rng=Rng(2), training=True)
        assert not np.array_equal(a, c)
        # batch-norm running stats moved off their fresh values
        assert not np.allclose(p1.pfn.bn_stats.mean, 0.0)
        inference = pan_backbone(pc, fresh(), pcfg, cfg, training=False)
        assert not np.array_equal(a, inference)


class TestCountWork:
    def test_empty_cloud(self):
        pcfg = small_pillar_cfg()
        cfg = EnhancerConfig(embed_dim=8)
        assert count_work(PointCloud("f", []), pcfg, cfg).attention_macs == 0

    def test_full_grid_equals_dense(self):
        pcfg = small_pillar_cfg()
        cfg = EnhancerConfig(embed_dim=8)
        pts = [RadarPoint(x=pcfg.x_min + (j + 0.5), y=pcfg.y_min + (i + 0.5),
                          z=0.0, vx=0.0, vy=0.0, rcs=0.0)
               for i in range(16) for j in range(16)]
        work = count_work(PointCloud("f", pts), pcfg, cfg)
        assert work.pillar_count == 256
        assert work.attention_macs == work.dense_equivalent_macs

    def test_sparse_ratio_from_counted_pillars(self):
        pcfg = PillarConfig()  # 128 x 128 default grid
        cfg = EnhancerConfig()
        rng = Rng(21)
        pts = [RadarPoint(x=float(rng.uniform(-50, 50)), y=float(rng.uniform(-50, 50)),
                          z=0.0, vx=0.0, vy=0.0, rcs=0.0) for _ in range(100)]
        work = count_work(PointCloud("f", pts), pcfg, cfg)
        assert 0 < work.pillar_count <= 100
        # expected MACs recomputed arithmetically from the counted P
        p, n = work.pillar_count, 128 * 128
        c, f = pcfg.out_channels, cfg.embed_dim
        expected = 2 * p * c * f + 4 * p * f * f + 2 * p * p * f + 2 * p * f * f
        assert work.attention_macs == expected
        assert work.sparse_dense_ratio < 0.01

    def test_monotone_in_points(self):
        pcfg = small_pillar_cfg()
        cfg = EnhancerConfig(embed_dim=8)
        pts = [RadarPoint(x=float(x), y=0.0, z=0.0, vx=0.0, vy=0.0, rcs=0.0)
               for x in np.linspace(-7.5, 7.5, 12)]
        prev = -1
        for k in range(len(pts) + 1):
            macs = count_work(PointCloud("f", pts[:k]), pcfg, cfg).attention_macs
            assert macs >= prev
            prev = macs


class TestParamsIO:
    def test_save_load_round_trip(self, tmp_path):
        pcfg = small_pillar_cfg()
        cfg = EnhancerConfig(embed_dim=8, dropout_p=0.0)
        params = init_backbone(pcfg, cfg, Rng(33))
        path = tmp_path / "params.json"
        save_params(path, params)
        loaded = load_params(path, pcfg, cfg)
        pts = [RadarPoint(x=1.5, y=-2.5, z=0.0, vx=1.0, vy=0.5, rcs=3.0)]
        pc = PointCloud("f", pts)
        a = pan_backbone(pc, params, pcfg, cfg)
        b = pan_backbone(pc, loaded, pcfg, cfg)
        assert np.array_equal(a, b)

    def test_load_rejects_wrong_shape(self, tmp_path):
        pcfg = small_pillar_cfg()
        cfg = EnhancerConfig(embed_dim=8, dropout_p=0.0)
        params = init_backbone(pcfg, cfg, Rng(34))
        path = tmp_path / "params.json"
        save_params(path, params)
        other_cfg = EnhancerConfig(embed_dim=16, dropout_p=0.0)
        with pytest.raises(ValueError):
            load_params(path, pcfg, other_cfg)
