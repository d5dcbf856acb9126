import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ssat.losses import (
    LossWeights,
    adversarial_loss_discriminator,
    adversarial_loss_generator,
    image_gradients,
    makeup_loss,
    makeup_spl_loss,
    overall_loss,
    reconstruction_loss,
    semantic_loss,
)
from ssat.tensor import ShapeError, Tensor


def t(a):
    return Tensor(np.asarray(a, np.float64))


class TestSemantic:
    def test_exact_match_is_zero(self, rng):
        s = t(np.eye(3)[rng.integers(0, 3, (4, 4))].transpose(2, 0, 1))
        assert semantic_loss(s, s, s, s).item() == 0.0

    def test_uniform_two_class(self):
        # per pixel |1 - .5| + |0 - .5| = 1 over L = 2 channels -> mean 0.5 for one term
        s = t(np.stack([np.ones((2, 2)), np.zeros((2, 2))]))
        half = t(np.full((2, 2, 2), 0.5))
        assert semantic_loss(s, s, s, half).item() == pytest.approx(0.5)
        assert semantic_loss(s, s, half, half).item() == pytest.approx(1.0)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            semantic_loss(t(np.zeros((2, 2, 2))), t(np.zeros((2, 2, 2))), t(np.zeros((2, 2, 2))), t(np.zeros((3, 2, 2))))

    def test_decreases_along_path(self, rng):
        s_t = np.eye(4)[rng.integers(0, 4, (5, 5))].transpose(2, 0, 1)
        start = np.full_like(s_t, 0.25)
        vals = []
        for a in np.linspace(0, 1, 10):
            w = t((1 - a) * start + a * s_t)
            vals.append(semantic_loss(t(s_t), t(s_t), t(s_t), w).item())
        assert all(b < a for a, b in zip(vals, vals[1:]))
        assert vals[-1] == 0.0


class TestSPL:
    def test_identical_is_zero(self, rng):
        x = t(rng.uniform(-1, 1, (3, 4, 4)))
        assert makeup_spl_loss(x, x, x).item() == 0.0

    def test_constant_shift(self, rng):
        src = rng.uniform(-0.5, 0.5, (3, 4, 4))
        gen = t(src + 0.1)
        assert makeup_spl_loss(gen, t(src), gen).item() == pytest.approx(0.0, abs=1e-12)

    def test_hand_2x2(self):
        # gen = [[0, 1], [2, 3]], id = 0, color = 1
        # dx: (1, 1) vs 0 -> 1; dy: (2, 2) vs 0 -> 2; color |(-1, 0, 1, 2)| mean 1
        gen = t([[[0.0, 1.0], [2.0, 3.0]]])
        val = makeup_spl_loss(gen, t(np.zeros((1, 2, 2))), t(np.ones((1, 2, 2)))).item()
        assert val == pytest.approx(1.0 + 2.0 + 1.0)

    def test_forward_differences(self):
        gx, gy = image_gradients(t([[[0.0, 1.0, 4.0], [2.0, 2.0, 2.0]]]))
        np.testing.assert_array_equal(gx.data, [[[1.0, 3.0], [0.0, 0.0]]])
        np.testing.assert_array_equal(gy.data, [[[2.0, 1.0, -2.0]]])

    def test_both_directions(self, rng):
        a, b, c, d, e, f = (t(rng.uniform(-1, 1, (3, 4, 4))) for _ in range(6))
        assert makeup_loss(a, b, c, d, e, f).item() == pytest.approx(makeup_spl_loss(a, b, c).item() + makeup_spl_loss(d, e, f).item())

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            makeup_spl_loss(t(np.zeros((3, 4, 4))), t(np.zeros((3, 4, 4))), t(np.zeros((3, 2, 2))))


class TestReconstruction:
    def test_exact_is_zero(self, rng):
        x, y = t(rng.uniform(-1, 1, (3, 4, 4))), t(rng.uniform(-1, 1, (3, 4, 4)))
        assert reconstruction_loss(x, x, x, y, y, y).item() == 0.0

    def test_single_offset(self, rng):
        x, y = rng.uniform(-1, 1, (3, 4, 4)), rng.uniform(-1, 1, (3, 4, 4))
        assert reconstruction_loss(t(x), t(x + 0.5), t(x), t(y), t(y), t(y)).item() == pytest.approx(0.5)

    @given(st.integers(0, 3), st.floats(0.01, 1.0))
    def test_additive(self, which, delta):
        r = np.random.default_rng(which)
        x, y = r.uniform(-1, 1, (2, 3, 3)), r.uniform(-1, 1, (2, 3, 3))
        args = [x, x + 0.2, x - 0.1, y, y + 0.3, y - 0.05]
        base = reconstruction_loss(*map(t, args)).item()
        slot = [1, 2, 4, 5][which]
        before = np.abs(args[slot] - args[0 if slot < 3 else 3]).mean()
        args[slot] = args[slot] + np.sign(args[slot] - args[0 if slot < 3 else 3]) * delta
        after = np.abs(args[slot] - args[0 if slot < 3 else 3]).mean()
        assert reconstruction_loss(*map(t, args)).item() - base == pytest.approx(after - before, abs=1e-9)


class TestAdversarial:
    def test_targets_met(self):
        assert adversarial_loss_discriminator([t(np.ones((1, 2, 2)))], [t(np.zeros((1, 2, 2)))]).item() == 0.0
        assert adversarial_loss_generator([t(np.ones((1, 2, 2)))]).item() == 0.0

    def test_worst_case(self):
        assert adversarial_loss_discriminator([t(np.zeros((1, 2, 2)))], [t(np.ones((1, 2, 2)))]).item() == pytest.approx(2.0)

    def test_averaged_over_scales(self):
        maps = [t(np.zeros((1, 4, 4))), t(np.full((1, 2, 2), 0.5))]
        assert adversarial_loss_generator(maps).item() == pytest.approx((1.0 + 0.25) / 2)


class TestOverall:
    def _terms(self, vals):
        return {k: t(v) for k, v in zip(("sem", "makeup", "rec", "adv"), vals)}

    def test_unit_weights_sum(self):
        total, report = overall_loss(self._terms([0.1, 0.2, 0.3, 0.4]))
        assert total.item() == pytest.approx(1.0)
        assert report.total == pytest.approx(1.0)
        assert report.terms == pytest.approx({"sem": 0.1, "makeup": 0.2, "rec": 0.3, "adv": 0.4})

    def test_zero_terms(self):
        assert overall_loss(self._terms([0, 0, 0, 0]))[0].item() == 0.0

    def test_adv_weight_zero(self):
        w = LossWeights(adv=0.0)
        a = overall_loss(self._terms([0.1, 0.2, 0.3, 0.4]), w)[1].total
        b = overall_loss(self._terms([0.1, 0.2, 0.3, 9.0]), w)[1].total
        assert a == b

    @given(st.lists(st.floats(0, 5), min_size=4, max_size=4), st.lists(st.floats(0, 3), min_size=4, max_size=4))
    def test_report_total_is_weighted_sum(self, vals, ws):
        w = LossWeights(*ws)
        _, report = overall_loss(self._terms(vals), w)
        assert report.total == pytest.approx(sum(a * b for a, b in zip(vals, ws)), abs=1e-6)

    def test_negative_weight(self):
        with pytest.raises(ValueError):
            LossWeights(sem=-1.0)

    def test_record_layout(self):
        _, report = overall_loss(self._terms([0.1, 0.2, 0.3, 0.4]), iteration=7)
        assert list(report.to_record()) == ["iteration", "sem", "makeup", "rec", "adv", "total"]
