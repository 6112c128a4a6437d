import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nbsa import attention as A
from nbsa import oracles
from nbsa.errors import ConfigurationError, DimensionError
from nbsa.tensor import Tensor


def weights(rng, C, d, L=None, gain=1.0):
    w = A.init_attention_weights(C, d, rng, relative_positions=L, out_gain=gain)
    if w.e_rel is not None:
        w.e_rel.data[...] = rng.normal(0, 0.5, size=w.e_rel.shape)
    return w


def mats(w):
    return w.w_theta.data, w.w_phi.data, w.w_g.data, w.w_out.data


def jacobian(f, x, h=1e-6):
    """Central-difference Jacobian of a map C x H x W -> C x H x W, indexed [out_pos, in_pos] summed over channels."""
    C, H, W = x.shape
    N = H * W
    J = np.zeros((N, N))
    for i in range(N):
        for c in range(C):
            xp, xm = x.copy(), x.copy()
            xp[c].flat[i] += h
            xm[c].flat[i] -= h
            diff = (f(xp) - f(xm)).reshape(C, N)
            J[:, i] += np.abs(diff).sum(axis=0) / (2 * h)
    return J


class TestSchedule:
    def test_origins_8_4_2(self):
        s = A.enumerate_blocks(8, 8, 4, 2)
        assert s.origins == [(r, c) for r in (0, 2, 4) for c in (0, 2, 4)]

    def test_single_block(self):
        s = A.enumerate_blocks(5, 5, 5, 5)
        assert s.origins == [(0, 0)]
        np.testing.assert_array_equal(s.membership, np.ones((5, 5)))

    def test_membership_counts(self):
        P = A.enumerate_blocks(8, 8, 4, 2).membership
        assert (P[3, 3], P[0, 0], P[7, 7]) == (4, 1, 1)

    def test_index_is_raster_within_block(self):
        s = A.enumerate_blocks(4, 6, 2, 2)
        np.testing.assert_array_equal(s.index[1], [2, 3, 8, 9])

    def test_inexact_tiling_names_everything(self):
        with pytest.raises(ConfigurationError, match=r"H=10, W=10, B=4, s=4"):
            A.enumerate_blocks(10, 10, 4, 4)

    @pytest.mark.parametrize("B,s", [(0, 1), (4, 5), (12, 4)])
    def test_bad_parameters(self, B, s):
        with pytest.raises(ConfigurationError):
            A.enumerate_blocks(8, 8, B, s)

    def test_per_axis_blocks(self):
        s = A.enumerate_blocks(1, 8, (1, 2), (1, 1))
        assert s.n_blocks == 7 and s.block_positions == 2

    @settings(max_examples=40, deadline=None)
    @given(st.integers(1, 6), st.integers(1, 6), st.integers(0, 4), st.integers(0, 4))
    def test_membership_matches_count_formula(self, B, s, kr, kc):
        s = min(s, B)
        H, W = B + kr * s, B + kc * s
        sched = A.enumerate_blocks(H, W, B, s)
        assert sched.n_blocks == (kr + 1) * (kc + 1)
        assert sched.membership.sum() == sched.n_blocks * B * B

    def test_nearest_valid_sizes(self):
        assert A.nearest_valid_sizes(64, 8, 5) == (63, 68)
        assert A.nearest_valid_sizes(64, 8, 5, multiple=4) == (48, 68)
        assert A.nearest_valid_sizes(64, 10, 4, multiple=4) == (None, None)


class TestFullAttention:
    def test_zero_value_path_is_identity(self):
        rng = np.random.default_rng(0)
        w = weights(rng, 3, 2)
        w.w_g.data[...] = 0
        x = rng.normal(size=(3, 4, 4))
        np.testing.assert_array_equal(A.full_self_attention(x, w).data, x)

    def test_constant_two_positions(self):
        c = 0.7
        ones = lambda r, k: Tensor(np.ones((r, k)))  # noqa: E731
        w = A.AttentionWeights(ones(1, 1), ones(1, 1), ones(1, 1), ones(1, 1))
        out = A.full_self_attention(np.full((1, 1, 2), c), w).data
        np.testing.assert_allclose(out, np.full((1, 1, 2), 2 * c), rtol=0, atol=1e-15)

    def test_matches_triple_loop(self):
        rng = np.random.default_rng(1)
        w = weights(rng, 1, 1)
        x = rng.normal(size=(1, 2, 2))
        np.testing.assert_allclose(A.full_self_attention(x, w).data, oracles.full_attention(x, *mats(w)), atol=1e-10)

    def test_logits_scaled_once_by_sqrt_d(self):
        eye = Tensor(np.eye(4))
        w = A.AttentionWeights(eye, eye, eye, eye)
        x = np.zeros((4, 1, 2))
        x[0, 0, 0] = 1.0
        out = A.full_self_attention(x, w).data
        a00 = math.exp(0.5) / (math.exp(0.5) + 1.0)  # logits [1, 0] / sqrt(4)
        assert out[0, 0, 0] == pytest.approx(1.0 + a00, abs=1e-15)
        assert out[0, 0, 1] == pytest.approx(0.5, abs=1e-15)  # uniform row from zero query

    def test_channel_mismatch(self):
        w = weights(np.random.default_rng(0), 3, 2)
        with pytest.raises(DimensionError):
            A.full_self_attention(np.zeros((2, 2, 2)), w)


class TestNbsaLayer:
    @settings(max_examples=30, deadline=None)
    @given(st.sampled_from([2, 3, 4, 6]), st.integers(1, 8), st.integers(0, 2**31 - 1))
    def test_single_block_equals_full(self, H, C, seed):
        rng = np.random.default_rng(seed)
        w = weights(rng, C, max(1, C // 2))
        x = rng.normal(size=(C, H, H))
        a = A.nbsa_layer(x, w, A.enumerate_blocks(H, H, H, H)).data
        np.testing.assert_allclose(a, A.full_self_attention(x, w).data, rtol=0, atol=1e-12)

    def test_zero_value_path(self):
        rng = np.random.default_rng(2)
        w = weights(rng, 4, 2)
        w.w_g.data[...] = 0
        x = rng.normal(size=(4, 6, 6))
        np.testing.assert_array_equal(A.nbsa_layer(x, w, A.enumerate_blocks(6, 6, 4, 2)).data, x)

    def test_non_overlap_matches_per_block_oracle(self):
        rng = np.random.default_rng(3)
        w = weights(rng, 3, 2)
        x = rng.normal(size=(3, 4, 4))
        got = A.nbsa_layer(x, w, A.enumerate_blocks(4, 4, 2, 2)).data
        np.testing.assert_allclose(got, oracles.block_attention(x, *mats(w), 2, 2, 2, 2), atol=1e-12)

    @pytest.mark.parametrize("average", [False, True])
    def test_overlap_matches_loop_oracle(self, average):
        rng = np.random.default_rng(4)
        w = weights(rng, 4, 2)
        x = rng.normal(size=(4, 6, 6))
        got = A.nbsa_layer(x, w, A.enumerate_blocks(6, 6, 4, 2), average=average).data
        ref = oracles.block_attention(x, *mats(w), 4, 4, 2, 2, average=average)
        np.testing.assert_allclose(got, ref, atol=1e-12)

    def test_relative_matches_gather_oracle(self):
        rng = np.random.default_rng(5)
        w = weights(rng, 3, 2, L=4)
        x = rng.normal(size=(3, 4, 4))
        got = A.nbsa_layer(x, w, A.enumerate_blocks(4, 4, 2, 1)).data
        ref = oracles.block_attention_np(x, *mats(w), 2, 2, 1, 1, e_rel=w.e_rel.data)
        np.testing.assert_allclose(got, ref, atol=1e-12)

    def test_reverse_reduction_within_tolerance(self):
        rng = np.random.default_rng(6)
        w = weights(rng, 4, 2)
        x = rng.normal(size=(4, 12, 12))
        sched = A.enumerate_blocks(12, 12, 4, 2)
        fwd = A.nbsa_layer(x, w, sched).data
        rev = A.nbsa_layer(x, w, sched, reverse=True).data
        assert np.abs(fwd - rev).max() < 1e-12

    def test_serial_is_bitwise_batched(self):
        rng = np.random.default_rng(7)
        w = weights(rng, 4, 2)
        x = rng.normal(size=(4, 8, 8))
        sched = A.enumerate_blocks(8, 8, 4, 2)
        np.testing.assert_array_equal(A.nbsa_layer(x, w, sched, serial=True).data, A.nbsa_layer(x, w, sched).data)

    def test_schedule_size_mismatch(self):
        rng = np.random.default_rng(8)
        with pytest.raises(DimensionError):
            A.nbsa_layer(rng.normal(size=(2, 6, 6)), weights(rng, 2, 1), A.enumerate_blocks(8, 8, 4, 2))

    def test_support_is_block_diagonal_without_overlap(self):
        rng = np.random.default_rng(9)
        w = weights(rng, 2, 2)
        sched = A.enumerate_blocks(4, 4, 2, 2)
        J = jacobian(lambda v: A.nbsa_layer(v, w, sched).data - v, rng.normal(size=(2, 4, 4)))
        block_of = np.zeros(16, dtype=int)
        for b, idx in enumerate(sched.index):
            block_of[idx] = b
        same = block_of[:, None] == block_of[None, :]
        assert np.all(J[~same] == 0.0)
        assert np.all(J[same] > 1e-8)

    def test_overlap_two_layers_reach_non_adjacent_blocks(self):
        rng = np.random.default_rng(10)
        w1, w2 = weights(rng, 2, 2), weights(rng, 2, 2)
        sched = A.enumerate_blocks(6, 6, 2, 1)
        J = jacobian(lambda v: A.nested_nbsa(v, w1, w2, sched).data, rng.normal(size=(2, 6, 6)))
        # pixel (0,0) and (0,2): in no common block, yet connected through the middle column
        assert J[2, 0] > 1e-8
        # two layers of 2x2 blocks cannot span three pixel steps
        assert J[3, 0] == 0.0


class TestNested:
    def test_zero_value_paths_identity(self):
        rng = np.random.default_rng(0)
        w1, w2 = weights(rng, 3, 2), weights(rng, 3, 2)
        w1.w_g.data[...] = 0
        w2.w_g.data[...] = 0
        x = rng.normal(size=(3, 6, 6))
        np.testing.assert_array_equal(A.nested_nbsa(x, w1, w2, A.enumerate_blocks(6, 6, 4, 2)).data, x)

    def test_single_block_equals_stacked_full(self):
        rng = np.random.default_rng(1)
        w1, w2 = weights(rng, 3, 2), weights(rng, 3, 2)
        x = rng.normal(size=(3, 4, 4))
        got = A.nested_nbsa(x, w1, w2, A.enumerate_blocks(4, 4, 4, 4)).data
        ref = A.full_self_attention(A.full_self_attention(x, w1), w2).data
        np.testing.assert_allclose(got, ref, atol=1e-12)

    def test_shared_weights_rejected(self):
        w = weights(np.random.default_rng(2), 2, 1)
        with pytest.raises(ConfigurationError):
            A.nested_nbsa(np.zeros((2, 4, 4)), w, w, A.enumerate_blocks(4, 4, 2, 2))

    def test_strip_reach_per_layer(self):
        rng = np.random.default_rng(3)
        w1, w2 = weights(rng, 2, 2), weights(rng, 2, 2)
        sched = A.enumerate_blocks(1, 4, (1, 2), (1, 1))
        x = rng.normal(size=(2, 1, 4))
        J1 = jacobian(lambda v: A.nbsa_layer(v, w1, sched).data - v, x)
        J2 = jacobian(lambda v: A.nested_nbsa(v, w1, w2, sched).data - v, x)
        assert set(np.nonzero(J1[:, 0])[0]) == {0, 1}
        assert set(np.nonzero(J2[:, 0])[0]) == {0, 1, 2}


class TestRelativeLogits:
    def test_zero_embedding(self):
        q = np.random.default_rng(0).normal(size=(5, 3))
        np.testing.assert_array_equal(A.relative_logits_skew(Tensor(q), Tensor(np.zeros((9, 3)))).data, np.zeros((5, 5)))

    @pytest.mark.parametrize("fn", [lambda q, e: A.relative_logits_skew(Tensor(q), Tensor(e)).data, A.relative_logits_naive])
    def test_hand_indexing(self, fn):
        a, b, c = 2.0, 3.0, 5.0
        out = fn(np.ones((2, 1)), np.array([[a], [b], [c]]))
        np.testing.assert_array_equal(out, [[b, c], [a, b]])

    def test_one_hot_offset_zero(self):
        rng = np.random.default_rng(1)
        q = rng.normal(size=(4, 3))
        e = np.zeros((7, 3))
        e[3, 1] = 1.0
        out = A.relative_logits_skew(Tensor(q), Tensor(e)).data
        np.testing.assert_array_equal(out, np.diag(q[:, 1]))

    def test_single_position(self):
        q, e = np.array([[2.0, -1.0]]), np.array([[0.5, 4.0]])
        np.testing.assert_array_equal(A.relative_logits_skew(Tensor(q), Tensor(e)).data, [[-3.0]])

    @settings(max_examples=60, deadline=None)
    @given(st.integers(1, 8), st.integers(1, 8), st.integers(0, 2**31 - 1))
    def test_skew_bitwise_equals_naive(self, L, d, seed):
        rng = np.random.default_rng(seed)
        q, e = rng.normal(size=(L, d)), rng.normal(size=(2 * L - 1, d))
        np.testing.assert_array_equal(A.relative_logits_skew(Tensor(q), Tensor(e)).data, A.relative_logits_naive(q, e))

    def test_batched(self):
        rng = np.random.default_rng(2)
        q, e = rng.normal(size=(3, 4, 2)), rng.normal(size=(7, 2))
        out = A.relative_logits_skew(Tensor(q), Tensor(e)).data
        for m in range(3):
            np.testing.assert_array_equal(out[m], A.relative_logits_naive(q[m], e))

    def test_wrong_table_size(self):
        with pytest.raises(DimensionError):
            A.relative_logits_skew(Tensor(np.ones((3, 2))), Tensor(np.ones((4, 2))))


class TestAttentionMaps:
    def test_single_block_is_full_softmax_row(self):
        rng = np.random.default_rng(0)
        w = weights(rng, 3, 2)
        x = rng.normal(size=(3, 4, 4))
        X = x.reshape(3, 16)
        q, k = w.w_theta.data @ X, w.w_phi.data @ X
        z = (q[:, 5] @ k) / math.sqrt(2)
        row = np.exp(z - z.max()) / np.exp(z - z.max()).sum()
        got = A.attention_received(x, w, A.enumerate_blocks(4, 4, 4, 4), (1, 1))
        np.testing.assert_allclose(got.reshape(-1), row, atol=1e-14)
        png = A.export_attention_map(x, w, A.enumerate_blocks(4, 4, 4, 4), (1, 1))
        np.testing.assert_array_equal(png.reshape(-1), np.rint((row - row.min()) / (row.max() - row.min()) * 255))

    def test_non_overlap_support(self):
        rng = np.random.default_rng(1)
        w = weights(rng, 3, 2)
        got = A.attention_received(rng.normal(size=(3, 4, 4)), w, A.enumerate_blocks(4, 4, 2, 2), (2, 3))
        mask = np.zeros((4, 4), dtype=bool)
        mask[2:4, 2:4] = True
        assert np.all(got[~mask] == 0) and np.all(got[mask] > 0)

    def test_constant_input_uniform_within_blocks(self):
        w = weights(np.random.default_rng(2), 2, 1)
        sched = A.enumerate_blocks(6, 6, 4, 2)
        got = A.attention_received(np.ones((2, 6, 6)), w, sched, (2, 2))
        expected = np.zeros((6, 6))
        for (r, c) in sched.origins:
            if r <= 2 < r + 4 and c <= 2 < c + 4:
                expected[r : r + 4, c : c + 4] += 1 / 16
        np.testing.assert_allclose(got, expected, atol=1e-15)

    def test_query_outside_map(self):
        w = weights(np.random.default_rng(3), 2, 1)
        with pytest.raises(ConfigurationError):
            A.attention_received(np.ones((2, 4, 4)), w, A.enumerate_blocks(4, 4, 2, 2), (4, 0))


class TestConfig:
    def test_defaults(self):
        c = A.AttentionConfig()
        assert (c.variant, c.n_layers, c.B, c.s, c.placement) == ("nbsa", 2, 8, 4, "penultimate")

    def test_auto_stride(self):
        assert A.AttentionConfig(B=12, s=None).s == 8
        assert A.AttentionConfig(B=12, s=None, overlap=False).s == 12

    @pytest.mark.parametrize(
        "kw",
        [
            {"variant": "cca"},
            {"placement": "first"},
            {"n_layers": 4},
            {"B": 1},
            {"B": 8, "s": 8, "overlap": True},
            {"B": 8, "s": 4, "overlap": False},
        ],
    )
    def test_invalid(self, kw):
        with pytest.raises(ConfigurationError):
            A.AttentionConfig(**kw)

    def test_width(self):
        assert A.AttentionConfig().width(8) == 4
        assert A.AttentionConfig(d=3).width(8) == 3

    def test_weights_reject_wide_projection(self):
        with pytest.raises((DimensionError, ConfigurationError)):
            A.init_attention_weights(2, 3, np.random.default_rng(0))
