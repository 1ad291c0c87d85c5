import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import max_relative_error, shift_oracle
from stereospace_kit import backward_warp, forward_warp, lr_consistency_mask
from stereospace_kit.errors import ShapeMismatch, StereoSpaceError
from stereospace_kit.imaging import (
    RIGHT_TO_LEFT,
    backward_warp_vjp,
    rl_consistency_mask,
    warp_validity_mask,
)


class TestBackwardWarp:
    def test_zero_disparity_is_identity(self, rng):
        img = rng.uniform(size=(8, 9, 3))
        out, mask = backward_warp(img, np.zeros((8, 9)))
        np.testing.assert_array_equal(out, img)
        assert mask.all()

    def test_constant_shift_matches_oracle(self, rng):
        img = rng.uniform(size=(32, 32))
        out, mask = backward_warp(img, np.full((32, 32), 4.0))
        expected = shift_oracle(img, 4)
        assert not mask[:, :4].any() and mask[:, 4:].all()
        np.testing.assert_array_equal(out[:, 4:], expected[:, 4:])
        assert np.all(out[:, :4] == 0)

    def test_right_to_left_samples_forward(self, rng):
        img = rng.uniform(size=(6, 10))
        out, mask = backward_warp(img, np.full((6, 10), 3.0), RIGHT_TO_LEFT)
        np.testing.assert_array_equal(out[:, :7], img[:, 3:])
        assert not mask[:, 7:].any()

    def test_nan_disparity(self, rng):
        out, mask = backward_warp(rng.uniform(size=(4, 4)), np.full((4, 4), np.nan))
        assert not mask.any() and np.all(out == 0)

    def test_subpixel_is_bilinear(self):
        img = np.tile(np.arange(6, dtype=float), (2, 1))
        out, mask = backward_warp(img, np.full((2, 6), 0.25))
        np.testing.assert_allclose(out[:, 1:], img[:, 1:] - 0.25)
        assert not mask[:, 0].any()

    def test_right_border_sample_is_valid(self):
        img = np.tile(np.arange(5, dtype=float), (1, 1))
        out, mask = backward_warp(img, np.full((1, 5), -1.0))
        assert mask[0, 3] and out[0, 3] == 4.0 and not mask[0, 4]

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatch):
            backward_warp(np.zeros((4, 5)), np.zeros((4, 4)))

    def test_unknown_direction(self):
        with pytest.raises(StereoSpaceError):
            backward_warp(np.zeros((2, 2)), np.zeros((2, 2)), "up")

    def test_vjp_matches_finite_differences(self, rng):
        img = rng.uniform(size=(12, 14, 3))
        disp = rng.uniform(0, 5, (12, 14))
        weights = rng.standard_normal(img.shape)
        grad = backward_warp_vjp(weights, disp)
        fn = lambda x: float((backward_warp(x, disp)[0] * weights).sum())  # noqa: E731
        coords = [tuple(int(rng.integers(0, s)) for s in img.shape) for _ in range(120)]
        assert max_relative_error(fn, img, grad, coords) < 1e-4

    def test_vjp_is_adjoint(self, rng):
        disp = rng.uniform(-3, 3, (10, 11))
        x = rng.standard_normal((10, 11))
        y = rng.standard_normal((10, 11))
        lhs = (backward_warp(x, disp)[0] * y).sum()
        rhs = (x * backward_warp_vjp(y, disp)).sum()
        assert lhs == pytest.approx(rhs, rel=1e-12)


class TestForwardWarp:
    def test_zero_disparity_is_identity(self, rng):
        img = rng.uniform(size=(5, 6, 3))
        out, hit = forward_warp(img, np.zeros((5, 6)))
        np.testing.assert_array_equal(out, img)
        assert hit.all()

    def test_larger_disparity_wins(self):
        src = np.array([[0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]])
        disp = np.full((1, 8), np.nan)
        src[0, 3], disp[0, 3] = 0.2, 2.0  # lands on column 1
        src[0, 6], disp[0, 6] = 0.5, 5.0  # also lands on column 1
        out, hit = forward_warp(src, disp)
        assert out[0, 1] == 0.5 and hit.sum() == 1

    def test_equal_disparities_never_collide(self):
        # integer column gaps survive a shared subpixel offset
        src = np.array([[0.1, 0.2, 0.3, 0.4]])
        out, hit = forward_warp(src, np.full((1, 4), 1.6))
        np.testing.assert_array_equal(out, [[0.3, 0.4, 0.0, 0.0]])
        assert hit.sum() == 2

    def test_constant_shift_leaves_right_band_unhit(self, rng):
        img = rng.uniform(size=(7, 12))
        out, hit = forward_warp(img, np.full((7, 12), 3.0))
        assert hit[:, :9].all() and not hit[:, 9:].any()
        np.testing.assert_array_equal(out[:, :9], img[:, 3:])

    def test_round_half_up(self):
        src = np.array([[0.0, 0.0, 0.7]])
        out, hit = forward_warp(src, np.array([[np.nan, np.nan, 0.5]]))
        # 2 - 0.5 = 1.5 rounds up to 2
        assert hit[0, 2] and out[0, 2] == 0.7

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 6), st.integers(0, 2**32 - 1))
    def test_forward_then_backward_recovers_source(self, d, seed):
        src = np.random.default_rng(seed).uniform(size=(6, 16))
        disp = np.full(src.shape, float(d))
        fw, hit = forward_warp(src, disp)
        back, inb = backward_warp(fw, disp)
        hit_back, _ = backward_warp(hit.astype(float), disp)
        joint = inb & (hit_back == 1.0)
        assert joint[:, d:].all()
        np.testing.assert_allclose(back[joint], src[joint], atol=1e-6)


class TestConsistencyMasks:
    def test_consistent_constant_pair(self):
        d = np.full((4, 10), 3.0)
        mask = lr_consistency_mask(d, d, 1.0)
        assert not mask[:, :3].any() and mask[:, 3:].all()

    @pytest.mark.parametrize("tau", [0.5, 1.0, 2.5])
    def test_uniform_excess_rejects_everything(self, tau):
        dl = np.full((5, 12), 3.0)
        assert not lr_consistency_mask(dl, dl + 2.0 * tau, tau).any()

    def test_infinite_tau_reduces_to_bounds_and_validity(self, rng):
        dl = rng.uniform(0, 5, (6, 12))
        dr = rng.uniform(0, 5, (6, 12))
        dr[2, 4] = np.nan
        mask = lr_consistency_mask(dl, dr, np.inf)
        look = np.arange(12)[None, :] - np.floor(dl + 0.5)
        inb = look >= 0
        both = inb.copy()
        both[inb] &= np.isfinite(dr[np.nonzero(inb)[0], look[inb].astype(int)])
        np.testing.assert_array_equal(mask, both)

    def test_nan_left_is_invalid(self):
        d = np.full((2, 5), 1.0)
        dl = d.copy()
        dl[0, 3] = np.nan
        assert not lr_consistency_mask(dl, d)[0, 3]

    @settings(max_examples=40, deadline=None)
    @given(st.floats(0, 3), st.floats(0, 3), st.integers(0, 2**32 - 1))
    def test_monotone_in_tau(self, t1, t2, seed):
        lo, hi = sorted((t1, t2))
        r = np.random.default_rng(seed)
        dl, dr = r.uniform(0, 4, (2, 5, 9))
        assert np.all(lr_consistency_mask(dl, dr, lo) <= lr_consistency_mask(dl, dr, hi))

    def test_right_referenced_mirror(self):
        d = np.full((3, 8), 2.0)
        mask = rl_consistency_mask(d, d)
        assert mask[:, :6].all() and not mask[:, 6:].any()

    def test_warp_validity_combines_bounds_and_lr(self):
        d = np.full((3, 8), 2.0)
        assert warp_validity_mask(d)[:, 2:].all()
        other = d.copy()
        other[:, 3] = 9.0
        m = warp_validity_mask(d, other)
        assert not m[:, 5].any() and m[:, 4].all()

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatch):
            lr_consistency_mask(np.zeros((2, 3)), np.zeros((3, 2)))
