"""Grid ops against brute-force oracles and closed-form identities."""

import numpy as np
import pytest

from evstereo import autograd as ag
from evstereo import nn_ops
from evstereo.autograd import Tensor
from evstereo.gradcheck import check_gradients


def conv2d_bruteforce(x, w, b, stride, padding, dilation):
    """Direct 6-loop cross-correlation, the independent conv oracle."""
    B, C, H, W = x.shape
    O, _, kh, kw = w.shape
    ho = (H + 2 * padding - dilation * (kh - 1) - 1) // stride + 1
    wo = (W + 2 * padding - dilation * (kw - 1) - 1) // stride + 1
    xp = np.zeros((B, C, H + 2 * padding, W + 2 * padding))
    xp[:, :, padding: padding + H, padding: padding + W] = x
    out = np.zeros((B, O, ho, wo))
    for bi in range(B):
        for oi in range(O):
            for hi in range(ho):
                for wi in range(wo):
                    acc = 0.0
                    for ci in range(C):
                        for i in range(kh):
                            for j in range(kw):
                                acc += (xp[bi, ci, hi * stride + i * dilation,
                                           wi * stride + j * dilation]
                                        * w[oi, ci, i, j])
                    out[bi, oi, hi, wi] = acc + (b[oi] if b is not None else 0.0)
    return out


class TestConv2d:
    def test_all_ones_kernel_sums(self):
        x = Tensor(np.ones((1, 1, 3, 3)))
        w = Tensor(np.ones((1, 1, 3, 3)))
        out = nn_ops.conv2d(x, w)
        assert out.shape == (1, 1, 1, 1)
        assert out.item() == 9.0

    def test_identity_1x1_kernel(self):
        rng = np.random.default_rng(0)
        x = Tensor(rng.normal(size=(2, 1, 4, 5)))
        w = Tensor(np.ones((1, 1, 1, 1)))
        out = nn_ops.conv2d(x, w)
        assert np.array_equal(out.data, x.data)

    def test_matches_bruteforce_oracle(self):
        rng = np.random.default_rng(1)
        x = rng.normal(size=(1, 2, 5, 5))
        w = rng.normal(size=(3, 2, 3, 3))
        b = rng.normal(size=3)
        got = nn_ops.conv2d(Tensor(x), Tensor(w), Tensor(b)).data
        want = conv2d_bruteforce(x, w, b, stride=1, padding=0, dilation=1)
        assert np.allclose(got, want, atol=1e-12)

    @pytest.mark.parametrize("stride,padding,dilation", [(2, 1, 1), (1, 2, 2)])
    def test_strided_dilated_matches_oracle(self, stride, padding, dilation):
        rng = np.random.default_rng(2)
        x = rng.normal(size=(2, 3, 7, 6))
        w = rng.normal(size=(2, 3, 3, 3))
        got = nn_ops.conv2d(Tensor(x), Tensor(w), None, stride=stride,
                            padding=padding, dilation=dilation).data
        want = conv2d_bruteforce(x, w, None, stride, padding, dilation)
        assert np.allclose(got, want, atol=1e-12)

    def test_shape_mismatch_error_names_dimensions(self):
        with pytest.raises(ValueError, match="channel mismatch"):
            nn_ops.conv2d(Tensor(np.ones((1, 2, 4, 4))),
                          Tensor(np.ones((1, 3, 3, 3))))

    def test_kernel_too_large_error(self):
        with pytest.raises(ValueError, match="does not fit"):
            nn_ops.conv2d(Tensor(np.ones((1, 1, 2, 2))),
                          Tensor(np.ones((1, 1, 3, 3))))


class TestBatchNorm:
    def test_constant_channel_zeroed(self):
        x = Tensor(np.full((2, 1, 3, 3), 7.0))
        out = nn_ops.batchnorm2d(x, Tensor(np.ones(1)), Tensor(np.zeros(1)),
                                 np.zeros(1), np.ones(1), training=True)
        assert np.allclose(out.data, 0.0)

    def test_gamma_zero_beta_five(self):
        rng = np.random.default_rng(3)
        x = Tensor(rng.normal(size=(2, 2, 3, 3)))
        out = nn_ops.batchnorm2d(x, Tensor(np.zeros(2)), Tensor(np.full(2, 5.0)),
                                 np.zeros(2), np.ones(2), training=True)
        assert np.allclose(out.data, 5.0)

    def test_train_mode_normalizes_moments(self):
        rng = np.random.default_rng(4)
        x = Tensor(rng.normal(3.0, 2.5, size=(4, 3, 8, 8)))
        out = nn_ops.batchnorm2d(x, Tensor(np.ones(3)), Tensor(np.zeros(3)),
                                 np.zeros(3), np.ones(3), training=True)
        mean = out.data.mean(axis=(0, 2, 3))
        var = out.data.var(axis=(0, 2, 3))
        assert np.all(np.abs(mean) < 1e-5)
        assert np.all(np.abs(var - 1.0) < 1e-4)

    def test_eval_mode_uses_running_stats(self):
        x = Tensor(np.full((1, 1, 2, 2), 10.0))
        rm, rv = np.array([4.0]), np.array([9.0])
        out = nn_ops.batchnorm2d(x, Tensor(np.ones(1)), Tensor(np.zeros(1)),
                                 rm, rv, training=False, eps=0.0)
        assert np.allclose(out.data, (10.0 - 4.0) / 3.0)

    def test_running_stats_updated_by_ema(self):
        x = Tensor(np.full((2, 1, 2, 2), 6.0) + np.arange(8).reshape(2, 1, 2, 2))
        rm, rv = np.zeros(1), np.ones(1)
        nn_ops.batchnorm2d(x, Tensor(np.ones(1)), Tensor(np.zeros(1)), rm, rv,
                           training=True, momentum=0.1)
        assert rm[0] == pytest.approx(0.1 * x.data.mean())
        assert rv[0] == pytest.approx(0.9 + 0.1 * x.data.var() * 8 / 7)

    def test_train_requires_two_elements(self):
        with pytest.raises(ValueError, match=">= 2"):
            nn_ops.batchnorm2d(Tensor(np.ones((1, 1, 1, 1))), Tensor(np.ones(1)),
                               Tensor(np.zeros(1)), np.zeros(1), np.ones(1),
                               training=True)

    def test_zero_variance_channel_is_finite(self):
        x = Tensor(np.full((2, 1, 4, 4), 3.0))
        out = nn_ops.batchnorm2d(x, Tensor(np.ones(1)), Tensor(np.zeros(1)),
                                 np.zeros(1), np.ones(1), training=True)
        assert np.all(np.isfinite(out.data))


class TestPoolAndUpsample:
    def test_maxpool_picks_maxima(self):
        x = Tensor(np.arange(16, dtype=float).reshape(1, 1, 4, 4))
        out = nn_ops.maxpool2d(x, 2, 2)
        assert np.array_equal(out.data[0, 0], [[5, 7], [13, 15]])

    def test_upsample_constant_map_exact(self):
        x = Tensor(np.full((1, 2, 3, 3), 3.14159))
        out = nn_ops.bilinear_upsample(x, 2)
        assert out.shape == (1, 2, 6, 6)
        assert np.all(out.data == 3.14159)

    def test_upsample_factor_one_identity(self):
        x = Tensor(np.random.default_rng(5).normal(size=(1, 1, 3, 3)))
        assert np.array_equal(nn_ops.bilinear_upsample(x, 1).data, x.data)


class TestDeformConv:
    def test_zero_offsets_equal_conv2d_exactly(self):
        rng = np.random.default_rng(6)
        x = Tensor(rng.normal(size=(2, 3, 6, 5)))
        w = Tensor(rng.normal(size=(4, 3, 3, 3)))
        b = Tensor(rng.normal(size=4))
        off = Tensor(np.zeros((2, 18, 6, 5)))
        got = nn_ops.deform_conv2d(x, off, w, b).data
        want = nn_ops.conv2d(x, w, b, stride=1, padding=1).data
        assert np.abs(got - want).max() < 1e-10

    def test_integer_shift_matches_shifted_conv(self):
        rng = np.random.default_rng(7)
        x = rng.normal(size=(1, 2, 8, 8))
        w = rng.normal(size=(1, 2, 3, 3))
        off = np.zeros((1, 18, 8, 8))
        off[:, 0::2] = 1.0        # every tap shifted one row down
        got = nn_ops.deform_conv2d(Tensor(x), Tensor(off), Tensor(w)).data
        shifted = np.zeros_like(x)
        shifted[:, :, :-1] = x[:, :, 1:]       # row r of shifted = row r+1 of x
        want = nn_ops.conv2d(Tensor(shifted), Tensor(w), None, padding=1).data
        assert np.allclose(got[:, :, 2:-2, 2:-2], want[:, :, 2:-2, 2:-2],
                           atol=1e-12)

    def test_offset_gradients_match_finite_differences(self):
        rng = np.random.default_rng(8)
        x = Tensor(rng.normal(size=(1, 2, 5, 5)), requires_grad=True)
        w = Tensor(rng.normal(size=(2, 2, 3, 3)), requires_grad=True)
        off = Tensor(rng.uniform(-0.4, 0.4, size=(1, 18, 5, 5)),
                     requires_grad=True)
        err = check_gradients(
            lambda: nn_ops.deform_conv2d(x, off, w).sum(), [x, off, w])
        assert err < 1e-4

    def test_offset_shape_mismatch_error(self):
        with pytest.raises(ValueError, match="offset tensor"):
            nn_ops.deform_conv2d(Tensor(np.ones((1, 1, 4, 4))),
                                 Tensor(np.ones((1, 17, 4, 4))),
                                 Tensor(np.ones((1, 1, 3, 3))))


class TestGridWarp:
    def test_zero_disparity_identity(self):
        rng = np.random.default_rng(9)
        x = Tensor(rng.normal(size=(2, 3, 4, 6)))
        out, valid = nn_ops.grid_warp(x, Tensor(np.zeros((2, 1, 4, 6))))
        assert np.abs(out.data - x.data).max() < 1e-10
        assert valid.all()

    def test_constant_disparity_shifts_ramp(self):
        w = 8
        ramp = np.broadcast_to(np.arange(w, dtype=float), (1, 1, 4, w)).copy()
        out, valid = nn_ops.grid_warp(Tensor(ramp),
                                      Tensor(np.ones((1, 1, 4, w))))
        assert np.allclose(out.data[:, :, :, 1:], ramp[:, :, :, 1:] - 1.0)
        assert not valid[:, :, :, 0].any()
        assert valid[:, :, :, 1:].all()

    def test_disparity_gradients_match_finite_differences(self):
        rng = np.random.default_rng(10)
        x = Tensor(rng.normal(size=(1, 2, 4, 7)), requires_grad=True)
        d = Tensor(rng.uniform(0.2, 2.8, size=(1, 1, 4, 7)), requires_grad=True)
        err = check_gradients(lambda: nn_ops.grid_warp(x, d)[0].sum(), [x, d])
        assert err < 1e-4

    def test_shape_errors(self):
        with pytest.raises(ValueError, match="grid_warp"):
            nn_ops.grid_warp(Tensor(np.ones((1, 1, 4, 4))),
                             Tensor(np.ones((1, 2, 4, 4))))
