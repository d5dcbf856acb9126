import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ssat.correspondence import (
    CorrelationMatrix,
    FeatureFusion,
    correlation,
    correspondence_visualization,
    feature_fusion,
    soft_warp,
    sscft,
    warp_weights,
)
from ssat.datagen.faces import one_hot
from ssat.layers import EncoderStack, NetWidths
from ssat.losses import semantic_loss
from ssat.tensor import ShapeError, Tensor, backward, no_grad, tsum


def _cos_oracle(x, y):
    """Cosine of channel-centred columns, computed with plain numpy loops."""
    d = x.shape[0]
    xc = x.reshape(d, -1) - x.reshape(d, -1).mean(axis=1, keepdims=True)
    yc = y.reshape(d, -1) - y.reshape(d, -1).mean(axis=1, keepdims=True)
    out = np.zeros((xc.shape[1], yc.shape[1]))
    for i in range(xc.shape[1]):
        for j in range(yc.shape[1]):
            out[i, j] = xc[:, i] @ yc[:, j] / (np.linalg.norm(xc[:, i]) * np.linalg.norm(yc[:, j]))
    return out


def _matrix(values, sigma=100.0):
    n = values.shape[0]
    return CorrelationMatrix(Tensor(values), (1, n), (1, values.shape[1]), sigma)


class TestFeatureFusion:
    @pytest.mark.parametrize("widths,d", [(NetWidths.desk(), 400), (NetWidths(base=4, semantic=2, n_classes=8), 100)])
    def test_fused_channels(self, widths, d, rng):
        size = 16
        e_c = EncoderStack(3, widths.encoder, "content", rng)
        e_s = EncoderStack(widths.n_classes, widths.semantic_encoder, "semantic", rng)
        ff = FeatureFusion(widths, rng)
        with no_grad():
            _, pyr = e_c(Tensor(rng.uniform(-1, 1, (3, size, size))))
            sem, _ = e_s(Tensor(one_hot(rng.integers(0, widths.n_classes, (size, size)), widths.n_classes)))
            fused = feature_fusion(pyr, sem, ff)
        assert fused.channels == d == widths.fused
        assert fused.spatial == (size // 4, size // 4)

    def test_paper_fused_width(self):
        w = NetWidths.paper()
        assert w.ff_in == 256 + 128
        assert w.fused == 64 + 128 + 256 + 128 + 512 + 512 == 1600

    def test_paper_ff_first_conv(self, rng):
        ff = FeatureFusion(NetWidths.paper(), rng)
        conv = ff.blocks[0].conv
        assert conv.weight.shape == (512, 384, 3, 3) and conv.stride == 2 and conv.padding == 1

    def test_misaligned_inputs(self, rng):
        w = NetWidths.desk()
        with pytest.raises(ShapeError):
            feature_fusion([Tensor(np.zeros((16, 16, 16))), Tensor(np.zeros((32, 8, 8))), Tensor(np.zeros((64, 4, 4)))],
                           Tensor(np.zeros((32, 8, 8))), FeatureFusion(w, rng))


class TestCorrelation:
    def test_matches_oracle(self, rng):
        x, y = rng.standard_normal((5, 3, 3)), rng.standard_normal((5, 3, 3))
        np.testing.assert_allclose(correlation(Tensor(x), Tensor(y)).values.data, _cos_oracle(x, y), atol=1e-5)

    def test_self_diagonal_is_one(self, rng):
        x = Tensor(rng.standard_normal((6, 4, 4)))
        np.testing.assert_allclose(np.diag(correlation(x, x).values.data), 1.0, atol=1e-6)

    def test_hand_instance(self):
        # centred columns: x1 = (1, 0), y1 = (1, 1) -> cos = 1/sqrt(2)
        x = np.array([[[1.0, -1.0]], [[0.0, 0.0]]])
        y = np.array([[[1.0, -1.0]], [[1.0, -1.0]]])
        a = correlation(Tensor(x), Tensor(y)).values.data
        assert a[0, 0] == pytest.approx(1 / np.sqrt(2), abs=1e-6)

    def test_orthogonal_is_zero(self):
        x = np.array([[[1.0, -1.0]], [[0.0, 0.0]]])
        y = np.array([[[0.0, 0.0]], [[1.0, -1.0]]])
        assert np.abs(correlation(Tensor(x), Tensor(y)).values.data).max() < 1e-7

    def test_zero_norm_is_clamped(self, caplog):
        a = correlation(Tensor(np.ones((3, 2, 2))), Tensor(np.ones((3, 2, 2))))
        assert np.all(a.values.data == 0)
        assert "zero-norm" in caplog.text

    def test_mismatched_depth(self):
        with pytest.raises(ShapeError):
            correlation(Tensor(np.zeros((3, 2, 2))), Tensor(np.zeros((4, 2, 2))))

    @given(st.integers(0, 10_000))
    def test_entries_bounded_and_symmetric(self, seed):
        r = np.random.default_rng(seed)
        x, y = Tensor(r.standard_normal((4, 3, 3))), Tensor(r.standard_normal((4, 3, 3)))
        a = correlation(x, y).values.data
        assert np.abs(a).max() <= 1.0 + 1e-6
        np.testing.assert_allclose(correlation(y, x).values.data, a.T, atol=1e-6)


class TestSoftWarp:
    def test_hand_two_locations(self):
        # weights (0.75, 0.25) need a logit gap of ln 3 at sigma = 1
        a = _matrix(np.array([[np.log(3.0), 0.0]]), sigma=1.0)
        out = soft_warp(a, Tensor(np.array([[[0.0, 4.0]]])))
        assert out.data[0, 0, 0] == pytest.approx(1.0, abs=1e-6)

    def test_one_hot_rows_gather(self):
        perm = np.array([2, 0, 1])
        vals = np.full((3, 3), -1.0)
        vals[np.arange(3), perm] = 1.0
        out = soft_warp(_matrix(vals), Tensor(np.array([[[10.0, 20.0, 30.0]]])))
        np.testing.assert_allclose(out.data[0, 0], [30.0, 10.0, 20.0], atol=1e-4)

    def test_constant_map(self, rng):
        a = correlation(Tensor(rng.standard_normal((3, 3, 3))), Tensor(rng.standard_normal((3, 3, 3))))
        out = soft_warp(a, Tensor(np.full((2, 3, 3), 0.25)))
        np.testing.assert_allclose(out.data, 0.25, atol=1e-6)

    def test_transpose_direction(self, rng):
        x, y = Tensor(rng.standard_normal((4, 2, 3))), Tensor(rng.standard_normal((4, 2, 3)))
        v = Tensor(rng.standard_normal((2, 2, 3)))
        a = correlation(x, y)
        np.testing.assert_allclose(soft_warp(a, v, "target_to_ref").data, soft_warp(correlation(y, x), v).data, atol=1e-5)

    def test_bad_direction(self, rng):
        a = correlation(Tensor(rng.standard_normal((3, 2, 2))), Tensor(rng.standard_normal((3, 2, 2))))
        with pytest.raises(ValueError):
            warp_weights(a, "sideways")

    def test_grid_mismatch(self, rng):
        a = correlation(Tensor(rng.standard_normal((3, 2, 2))), Tensor(rng.standard_normal((3, 1, 4))))
        with pytest.raises(ShapeError):
            soft_warp(a, Tensor(np.zeros((1, 2, 2))), "ref_to_target")

    @given(st.integers(0, 10_000))
    def test_convex_and_simplex(self, seed):
        r = np.random.default_rng(seed)
        a = correlation(Tensor(r.standard_normal((3, 3, 3))), Tensor(r.standard_normal((3, 3, 3))))
        v = r.standard_normal((2, 3, 3))
        out = soft_warp(a, Tensor(v)).data
        assert np.all(out <= v.reshape(2, -1).max(axis=1)[:, None, None] + 1e-6)
        assert np.all(out >= v.reshape(2, -1).min(axis=1)[:, None, None] - 1e-6)
        s = soft_warp(a, Tensor(one_hot(r.integers(0, 4, (3, 3)), 4))).data
        assert np.abs(s.sum(axis=0) - 1).max() < 1e-6 and s.min() >= 0


class TestSSCFT:
    def test_swap_gives_transpose(self, rng):
        x, y = Tensor(rng.standard_normal((5, 3, 3))), Tensor(rng.standard_normal((5, 3, 3)))
        xm, ym = Tensor(rng.standard_normal((2, 3, 3))), Tensor(rng.standard_normal((2, 3, 3)))
        one, two = sscft(x, y, xm, ym), sscft(y, x, ym, xm)
        np.testing.assert_allclose(two.corr.values.data, one.corr.values.data.T, atol=1e-6)
        np.testing.assert_allclose(two.warped_ref_makeup.data, one.warped_target_makeup.data, atol=1e-5)
        np.testing.assert_allclose(two.warped_target_makeup.data, one.warped_ref_makeup.data, atol=1e-5)

    def test_identical_pair_semantic_near_zero(self, rng):
        # distinct feature columns make the diagonal dominate at sigma = 100
        feat = Tensor(rng.standard_normal((16, 4, 4)))
        s = Tensor(one_hot(rng.integers(0, 3, (4, 4)), 3))
        out = sscft(feat, feat, feat, feat, s, s, 100.0)
        np.testing.assert_allclose(out.warped_ref_parsing.data, s.data, atol=1e-6)
        assert semantic_loss(s, s, out.warped_target_parsing, out.warped_ref_parsing).item() < 1e-6

    def test_gradients_reach_features(self, rng):
        x = Tensor(rng.standard_normal((4, 2, 2)), requires_grad=True)
        y = Tensor(rng.standard_normal((4, 2, 2)), requires_grad=True)
        out = sscft(x, y, Tensor(rng.standard_normal((2, 2, 2))), Tensor(rng.standard_normal((2, 2, 2))), sigma=1.0)
        backward(tsum(out.warped_ref_makeup * out.warped_ref_makeup))
        assert np.abs(x.grad).sum() > 0 and np.abs(y.grad).sum() > 0


def test_visualization_shape_and_bounds(rng):
    a = correlation(Tensor(rng.standard_normal((4, 4, 4))), Tensor(rng.standard_normal((4, 4, 4))))
    ref = rng.uniform(-1, 1, (3, 16, 16)).astype(np.float32)
    vis = correspondence_visualization(a, ref)
    assert vis.shape == (3, 16, 16)
    assert vis.min() >= ref.min() - 1e-6 and vis.max() <= ref.max() + 1e-6
