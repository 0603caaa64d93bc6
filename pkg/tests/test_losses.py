import math

import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from handocc.errors import ConfigError
from handocc.gradcheck import (
    check_cross_entropy,
    check_focusing_ce,
    check_pfce,
    check_smoothness,
    max_relative_error,
)
from handocc.losses import (
    LossSchedule,
    cross_entropy,
    focusing_ce,
    gradient_orientation,
    overall_loss,
    pfce,
    smoothness_loss,
    soft_argmax,
)
from handocc.model import LogitsPyramid

LN2 = math.log(2.0)


def _rand_probs(seed, size=8):
    gen = torch.Generator().manual_seed(seed)
    logits = torch.randn(3, size, size, dtype=torch.float64, generator=gen)
    probs = torch.softmax(logits, dim=0)
    target = torch.randint(0, 3, (size, size), generator=gen)
    overlap = (torch.rand(size, size, generator=gen) < 0.5).double()
    return probs, target, overlap


class TestCrossEntropy:
    def test_perfect_prediction_is_zero(self):
        target = torch.randint(0, 3, (6, 6))
        probs = torch.zeros(3, 6, 6, dtype=torch.float64)
        probs.scatter_(0, target.unsqueeze(0), 1.0)
        assert float(cross_entropy(probs, target)) == 0.0

    def test_uniform_prediction_is_log3(self):
        probs = torch.full((3, 8, 8), 1.0 / 3.0, dtype=torch.float64)
        target = torch.randint(0, 3, (8, 8))
        assert float(cross_entropy(probs, target)) == pytest.approx(math.log(3.0))

    def test_unnormalized_rejected(self):
        probs = torch.full((3, 4, 4), 0.5, dtype=torch.float64)
        with pytest.raises(ValueError):
            cross_entropy(probs, torch.zeros(4, 4, dtype=torch.long))

    def test_gradient_matches_finite_differences(self):
        assert check_cross_entropy(trials=3, seed=0) < 1e-4


class TestFocusingCE:
    def test_single_overlap_pixel(self):
        probs = torch.tensor([0.5, 0.3, 0.2]).view(3, 1, 1).double()
        loss = focusing_ce(probs, torch.zeros(1, 1, dtype=torch.long),
                           torch.ones(1, 1).double())
        assert float(loss) == pytest.approx(0.6 * LN2)

    def test_empty_overlap_scales_standard_ce(self):
        probs, target, _ = _rand_probs(1)
        empty = torch.zeros(8, 8, dtype=torch.float64)
        assert float(focusing_ce(probs, target, empty)) == pytest.approx(
            0.2 * float(cross_entropy(probs, target)))

    def test_alpha0_beta1_is_standard_ce(self):
        probs, target, overlap = _rand_probs(2)
        assert float(focusing_ce(probs, target, overlap, alpha=0.0, beta=1.0)) \
            == pytest.approx(float(cross_entropy(probs, target)))

    def test_gradient_matches_finite_differences(self):
        assert check_focusing_ce(trials=3, seed=0) < 1e-4


class TestPFCE:
    def test_step_zero_equals_plain_ce(self):
        probs, target, overlap = _rand_probs(3)
        schedule = LossSchedule(total_steps=100, step=0)
        diff = abs(float(pfce(probs, target, overlap, schedule))
                   - float(cross_entropy(probs, target)))
        assert diff < 1e-12

    def test_final_step_weights(self):
        probs = torch.tensor([0.5, 0.3, 0.2]).view(3, 1, 1).double()
        target = torch.zeros(1, 1, dtype=torch.long)
        schedule = LossSchedule(total_steps=10, step=10)
        inside = pfce(probs, target, torch.ones(1, 1).double(), schedule)
        outside = pfce(probs, target, torch.zeros(1, 1).double(), schedule)
        assert float(inside) == pytest.approx(1.2 * LN2)
        assert float(outside) == pytest.approx(0.8 * LN2)

    def test_weight_monotone_in_step(self):
        probs = torch.tensor([0.5, 0.3, 0.2]).view(3, 1, 1).double()
        target = torch.zeros(1, 1, dtype=torch.long)
        inside, outside = [], []
        for j in range(0, 101, 10):
            schedule = LossSchedule(total_steps=100, step=j)
            inside.append(float(pfce(probs, target, torch.ones(1, 1).double(),
                                     schedule)))
            outside.append(float(pfce(probs, target, torch.zeros(1, 1).double(),
                                      schedule)))
        assert all(b >= a for a, b in zip(inside, inside[1:]))
        assert all(b <= a for a, b in zip(outside, outside[1:]))

    def test_zero_total_steps_rejected(self):
        probs, target, overlap = _rand_probs(4)
        with pytest.raises(ConfigError):
            pfce(probs, target, overlap, LossSchedule(total_steps=0, step=0))

    def test_sign_flag_flips_beta(self):
        probs = torch.tensor([0.5, 0.3, 0.2]).view(3, 1, 1).double()
        target = torch.zeros(1, 1, dtype=torch.long)
        schedule = LossSchedule(total_steps=10, step=10, focus_sign=1.0)
        outside = pfce(probs, target, torch.zeros(1, 1).double(), schedule)
        assert float(outside) == pytest.approx(1.2 * LN2)

    def test_gradient_matches_finite_differences(self):
        assert check_pfce(trials=3, seed=0) < 1e-4


class TestSoftArgmax:
    def test_closed_form_value(self):
        logits = torch.tensor([0.1, 0.05, 0.0]).view(3, 1, 1).double()
        expected = ((math.exp(10) + 2 * math.exp(5) + 3)
                    / (math.exp(10) + math.exp(5) + 1))
        assert float(soft_argmax(logits, gamma=100.0)) == pytest.approx(
            expected, abs=1e-9)

    def test_equal_logits_give_exactly_two(self):
        b = soft_argmax(torch.zeros(3, 5, 5))
        assert torch.equal(b, torch.full((1, 5, 5), 2.0))

    def test_dominant_margin_tracks_argmax(self):
        gen = torch.Generator().manual_seed(0)
        logits = torch.randn(3, 40, 25, dtype=torch.float64, generator=gen)
        top2 = logits.topk(2, dim=0).values
        margin_ok = (top2[0] - top2[1]) >= 0.1
        b = soft_argmax(logits, gamma=100.0)[0]
        hard = logits.argmax(dim=0).double() + 1.0
        assert float((b - hard).abs()[margin_ok].max()) < 1e-3

    @settings(max_examples=25, deadline=None)
    @given(st.floats(-5.0, 5.0))
    def test_invariant_to_constant_shift(self, shift):
        gen = torch.Generator().manual_seed(7)
        logits = torch.randn(3, 6, 6, dtype=torch.float64, generator=gen)
        a = soft_argmax(logits)
        b = soft_argmax(logits + shift)
        assert float((a - b).abs().max()) < 1e-9


class TestGradientOrientation:
    def test_vertical_step_edge(self):
        field = torch.zeros(8, 8, dtype=torch.float64)
        field[:, 4:] = 1.0
        orient, valid = gradient_orientation(field)
        # the columns flanking the edge carry a pure +x orientation
        for col in (3, 4):
            assert bool(valid[0, :, col].all())
            assert torch.allclose(orient[0, 0, :, col],
                                  torch.ones(8, dtype=torch.float64))
            assert torch.allclose(orient[0, 1, :, col],
                                  torch.zeros(8, dtype=torch.float64))

    def test_constant_field_is_invalid_everywhere(self):
        orient, valid = gradient_orientation(torch.full((6, 6), 3.3))
        assert not bool(valid.any())
        assert float(orient.abs().max()) == 0.0

    def test_rotation_equivariance(self):
        gen = torch.Generator().manual_seed(3)
        field = torch.randn(8, 8, dtype=torch.float64, generator=gen)
        orient, valid = gradient_orientation(field)
        rot_field = torch.rot90(field, 1, dims=(0, 1))
        orient_r, valid_r = gradient_orientation(rot_field)
        assert torch.equal(valid_r[0], torch.rot90(valid[0], 1, dims=(0, 1)))
        # rotating the image by 90 deg CCW maps (gx, gy) -> (gy, -gx)
        gx = torch.rot90(orient[0, 0], 1, dims=(0, 1))
        gy = torch.rot90(orient[0, 1], 1, dims=(0, 1))
        inner = valid_r[0] & torch.rot90(valid[0], 1, dims=(0, 1))
        assert torch.allclose(orient_r[0, 0][inner], gy[inner], atol=1e-9)
        assert torch.allclose(orient_r[0, 1][inner], -gx[inner], atol=1e-9)


class TestSmoothness:
    def test_identical_maps_are_zero(self):
        ramp = torch.arange(64, dtype=torch.float64).reshape(8, 8)
        assert float(smoothness_loss(ramp, ramp)) < 1e-6

    def test_orthogonal_orientations(self):
        xs = torch.arange(8, dtype=torch.float64).repeat(8, 1)
        loss = smoothness_loss(xs, xs.t())
        assert float(loss) == pytest.approx((math.pi / 2) ** 2)

    def test_symmetric(self):
        gen = torch.Generator().manual_seed(5)
        a = torch.randn(8, 8, dtype=torch.float64, generator=gen)
        b = torch.randn(8, 8, dtype=torch.float64, generator=gen)
        assert float(smoothness_loss(a, b)) == pytest.approx(
            float(smoothness_loss(b, a)))

    def test_flat_pair_contributes_zero(self):
        flat = torch.zeros(8, 8, dtype=torch.float64)
        gen = torch.Generator().manual_seed(6)
        other = torch.randn(8, 8, dtype=torch.float64, generator=gen)
        assert float(smoothness_loss(flat, other)) == 0.0

    def test_gradient_matches_finite_differences(self):
        assert check_smoothness(trials=3, seed=0) < 1e-3


def _random_pyramid(seed, size=8, scale=1.0):
    gen = torch.Generator().manual_seed(seed)
    aux = [torch.randn(3, size, size, dtype=torch.float64, generator=gen) * scale
           for _ in range(4)]
    final = torch.randn(3, size, size, dtype=torch.float64, generator=gen) * scale
    target = torch.randint(0, 3, (size, size), generator=gen)
    overlap = (torch.rand(size, size, generator=gen) < 0.4).double()
    return LogitsPyramid(aux=aux, final=final), target, overlap


class TestOverallLoss:
    def test_breakdown_recombines_exactly(self):
        pyramid, target, overlap = _random_pyramid(0)
        schedule = LossSchedule(total_steps=100, step=40)
        bd = overall_loss(pyramid, target, overlap, schedule)
        recombined = (schedule.aux_weight * torch.stack(bd.aux_ce).sum()
                      + schedule.focus_weight * bd.focus
                      + schedule.smooth_weight * bd.smooth)
        assert abs(float(recombined - bd.total)) < 1e-12

    def test_zero_when_parts_zero(self):
        # a perfectly confident, correct prediction with matching maps
        target = torch.zeros(8, 8, dtype=torch.long)
        logits = torch.zeros(3, 8, 8, dtype=torch.float64)
        logits[0] = 60.0
        pyramid = LogitsPyramid(aux=[logits] * 4, final=logits)
        schedule = LossSchedule(total_steps=10, step=5)
        bd = overall_loss(pyramid, target, torch.zeros(8, 8).double(), schedule)
        assert float(bd.total) == pytest.approx(0.0, abs=1e-9)

    def test_gradient_on_16x16_instance(self):
        size = 16
        pyramid, target, overlap = _random_pyramid(11, size=size, scale=0.05)
        schedule = LossSchedule(total_steps=100, step=63)
        tensors = [t.detach().clone().requires_grad_(True)
                   for t in (*pyramid.aux, pyramid.final)]

        def fn(ts):
            return overall_loss(LogitsPyramid(aux=list(ts[:4]), final=ts[4]),
                                target, overlap, schedule).total

        loss = fn(tensors)
        loss.backward()
        analytic = [t.grad.detach().clone() for t in tensors]

        from handocc.gradcheck import central_difference
        numeric = central_difference(
            lambda ts: float(fn(ts).detach()),
            [t.detach().clone() for t in tensors])
        assert max_relative_error(analytic, numeric) < 1e-3
