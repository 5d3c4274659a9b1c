import math

import numpy as np
import pytest

from mvslite.numerics import (
    ConvSpec,
    SeededRng,
    bilinear_resize,
    conv2d,
    conv3d,
    phi,
    require_finite,
    seeded_init,
    softmax_axis,
)


def conv2d_loops(x, kernel, bias, stride=1):
    # Independent reference: direct six-loop cross-correlation.
    c_out, c_in, k, _ = kernel.shape
    pad = (k - 1) // 2
    _, h, w = x.shape
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad)))
    oh = (h + 2 * pad - k) // stride + 1
    ow = (w + 2 * pad - k) // stride + 1
    out = np.zeros((c_out, oh, ow))
    for o in range(c_out):
        for i in range(c_in):
            for y in range(oh):
                for x_ in range(ow):
                    for ky in range(k):
                        for kx in range(k):
                            out[o, y, x_] += (
                                xp[i, y * stride + ky, x_ * stride + kx] * kernel[o, i, ky, kx]
                            )
    return out + bias[:, None, None]


def conv3d_loops(x, kernel, bias, stride=1):
    c_out, c_in, k, _, _ = kernel.shape
    pad = (k - 1) // 2
    _, d, h, w = x.shape
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad), (pad, pad)))
    od = (d + 2 * pad - k) // stride + 1
    oh = (h + 2 * pad - k) // stride + 1
    ow = (w + 2 * pad - k) // stride + 1
    out = np.zeros((c_out, od, oh, ow))
    for o in range(c_out):
        for i in range(c_in):
            for z in range(od):
                for y in range(oh):
                    for x_ in range(ow):
                        for kz in range(k):
                            for ky in range(k):
                                for kx in range(k):
                                    out[o, z, y, x_] += (
                                        xp[
                                            i,
                                            z * stride + kz,
                                            y * stride + ky,
                                            x_ * stride + kx,
                                        ]
                                        * kernel[o, i, kz, ky, kx]
                                    )
    return out + bias[:, None, None, None]


def bilinear_loops(img, out_h, out_w):
    # Independent reference: per-pixel half-pixel mapping with edge clamping.
    c, h, w = img.shape
    out = np.zeros((c, out_h, out_w))
    for oy in range(out_h):
        for ox in range(out_w):
            sy = min(max((oy + 0.5) * h / out_h - 0.5, 0.0), h - 1.0)
            sx = min(max((ox + 0.5) * w / out_w - 0.5, 0.0), w - 1.0)
            y0, x0 = int(math.floor(sy)), int(math.floor(sx))
            y1, x1 = min(y0 + 1, h - 1), min(x0 + 1, w - 1)
            fy, fx = sy - y0, sx - x0
            out[:, oy, ox] = (
                img[:, y0, x0] * (1 - fy) * (1 - fx)
                + img[:, y0, x1] * (1 - fy) * fx
                + img[:, y1, x0] * fy * (1 - fx)
                + img[:, y1, x1] * fy * fx
            )
    return out


class TestConv2d:
    def test_matches_loop_reference_on_small_input(self):
        rng = SeededRng(11)
        x = rng.substream("x").normal((1, 4, 4))
        kernel = rng.substream("k").normal((1, 1, 3, 3))
        bias = np.array([0.25])
        got = conv2d(x, ConvSpec(kernel=kernel, bias=bias))
        want = conv2d_loops(x, kernel, bias)
        np.testing.assert_allclose(got, want, rtol=0, atol=1e-12)

    @pytest.mark.parametrize("c_in,c_out,k,stride", [(3, 5, 3, 1), (4, 2, 1, 1), (2, 3, 3, 2)])
    def test_matches_loop_reference_multichannel(self, c_in, c_out, k, stride):
        rng = SeededRng(100 + c_in * 7 + c_out * 3 + k + stride)
        x = rng.substream("x").normal((c_in, 6, 8))
        kernel = rng.substream("k").normal((c_out, c_in, k, k))
        bias = rng.substream("b").normal((c_out,))
        got = conv2d(x, ConvSpec(kernel=kernel, bias=bias, stride=stride))
        want = conv2d_loops(x, kernel, bias, stride=stride)
        assert got.shape == want.shape
        np.testing.assert_allclose(got, want, rtol=0, atol=1e-12)

    def test_delta_kernel_is_identity(self):
        x = SeededRng(3).normal((2, 5, 5))
        kernel = np.zeros((2, 2, 3, 3))
        kernel[0, 0, 1, 1] = 1.0
        kernel[1, 1, 1, 1] = 1.0
        out = conv2d(x, ConvSpec(kernel=kernel, bias=np.zeros(2)))
        np.testing.assert_array_equal(out, x)

    def test_stride_two_halves_even_dims(self):
        x = np.zeros((1, 8, 12))
        spec = ConvSpec(kernel=np.ones((4, 1, 3, 3)), bias=np.zeros(4), stride=2)
        assert conv2d(x, spec).shape == (4, 4, 6)

    def test_channel_mismatch_rejected(self):
        spec = ConvSpec(kernel=np.ones((1, 2, 3, 3)), bias=np.zeros(1))
        with pytest.raises(ValueError, match="channels"):
            conv2d(np.zeros((3, 4, 4)), spec)


class TestConv3d:
    def test_matches_loop_reference(self):
        rng = SeededRng(21)
        x = rng.substream("x").normal((2, 4, 3, 5))
        kernel = rng.substream("k").normal((3, 2, 3, 3, 3))
        bias = rng.substream("b").normal((3,))
        got = conv3d(x, ConvSpec(kernel=kernel, bias=bias))
        want = conv3d_loops(x, kernel, bias)
        np.testing.assert_allclose(got, want, rtol=0, atol=1e-12)

    def test_matches_loop_reference_stride_two(self):
        rng = SeededRng(22)
        x = rng.substream("x").normal((1, 4, 6, 4))
        kernel = rng.substream("k").normal((2, 1, 3, 3, 3))
        bias = np.zeros(2)
        got = conv3d(x, ConvSpec(kernel=kernel, bias=bias, stride=2))
        want = conv3d_loops(x, kernel, bias, stride=2)
        assert got.shape == (2, 2, 3, 2)
        np.testing.assert_allclose(got, want, rtol=0, atol=1e-12)

    def test_delta_kernel_is_identity(self):
        x = SeededRng(23).normal((1, 3, 4, 4))
        kernel = np.zeros((1, 1, 3, 3, 3))
        kernel[0, 0, 1, 1, 1] = 1.0
        out = conv3d(x, ConvSpec(kernel=kernel, bias=np.zeros(1)))
        np.testing.assert_array_equal(out, x)


class TestConvSpec:
    def test_even_kernel_rejected(self):
        with pytest.raises(ValueError, match="kernel size"):
            ConvSpec(kernel=np.ones((1, 1, 2, 2)), bias=np.zeros(1))

    def test_bias_length_mismatch_rejected(self):
        with pytest.raises(ValueError, match="bias"):
            ConvSpec(kernel=np.ones((2, 1, 3, 3)), bias=np.zeros(3))

    def test_padding_preserves_extent(self):
        spec = ConvSpec(kernel=np.ones((1, 1, 3, 3)), bias=np.zeros(1))
        assert spec.padding == 1
        spec1 = ConvSpec(kernel=np.ones((1, 1, 1, 1)), bias=np.zeros(1))
        assert spec1.padding == 0


class TestBilinearResize:
    def test_hand_computed_upsample_row(self):
        # Half-pixel mapping of [0, 1] onto 4 output columns, by hand:
        # sources -0.25, 0.25, 0.75, 1.25 clamp to 0, .25, .75, 1.
        img = np.array([[[0.0, 1.0]]])
        out = bilinear_resize(img, (1, 4))
        np.testing.assert_allclose(out, [[[0.0, 0.25, 0.75, 1.0]]], atol=1e-15)

    def test_identity_resize_exact(self):
        img = SeededRng(31).normal((3, 5, 7))
        np.testing.assert_array_equal(bilinear_resize(img, (5, 7)), img)

    def test_matches_loop_reference(self):
        img = SeededRng(32).normal((2, 5, 6))
        for out_h, out_w in [(10, 12), (3, 3), (5, 9), (7, 4)]:
            got = bilinear_resize(img, (out_h, out_w))
            want = bilinear_loops(img, out_h, out_w)
            np.testing.assert_allclose(got, want, rtol=0, atol=1e-12)

    def test_constant_image_stays_constant(self):
        img = np.full((1, 4, 4), 3.5)
        out = bilinear_resize(img, (9, 5))
        np.testing.assert_allclose(out, 3.5, atol=1e-15)

    def test_values_stay_in_input_range(self):
        img = SeededRng(33).uniform((1, 6, 6), 2.0, 5.0)
        out = bilinear_resize(img, (13, 4))
        assert out.min() >= img.min() - 1e-12
        assert out.max() <= img.max() + 1e-12


class TestSoftmax:
    def test_sums_to_one_and_positive(self):
        x = SeededRng(41).normal((4, 3, 5))
        for axis in range(3):
            p = softmax_axis(x, axis)
            np.testing.assert_allclose(p.sum(axis=axis), 1.0, atol=1e-12)
            assert (p > 0).all()

    def test_shift_invariance(self):
        x = SeededRng(42).normal((6, 4))
        np.testing.assert_allclose(
            softmax_axis(x, 0), softmax_axis(x + 123.0, 0), rtol=0, atol=1e-12
        )

    def test_extreme_inputs_stay_finite(self):
        x = np.array([[1000.0, -1000.0, 0.0]])
        p = softmax_axis(x, 1)
        assert np.isfinite(p).all()
        np.testing.assert_allclose(p[0, 0], 1.0, atol=1e-12)

    def test_uniform_input_gives_uniform_output(self):
        p = softmax_axis(np.zeros((8,)), 0)
        np.testing.assert_allclose(p, 1.0 / 8.0, atol=1e-15)


class TestPhi:
    def test_closed_form_values(self):
        x = np.array([0.0, 2.0, -1.0, -20.0])
        want = np.array([1.0, 3.0, math.exp(-1.0), math.exp(-20.0)])
        np.testing.assert_allclose(phi(x), want, rtol=1e-15)

    def test_strictly_positive_and_monotonic(self):
        x = np.linspace(-30, 30, 301)
        y = phi(x)
        assert (y > 0).all()
        assert (np.diff(y) > 0).all()

    def test_no_overflow_for_large_positive(self):
        y = phi(np.array([1e6]))
        np.testing.assert_allclose(y, 1e6 + 1.0)


class TestSeededRng:
    def test_same_seed_bit_identical(self):
        a = SeededRng(77).normal((64,))
        b = SeededRng(77).normal((64,))
        np.testing.assert_array_equal(a, b)

    def test_substream_is_stable_and_distinct(self):
        root = SeededRng(5)
        a = root.substream("weights")
        b = root.substream("weights")
        c = root.substream("bias")
        assert a.seed == b.seed
        assert a.seed != c.seed
        assert root.substream("a").substream("b").seed != root.substream("b").substream("a").seed

    def test_normal_moments(self):
        z = SeededRng(6).normal((10_000,))
        assert abs(z.mean()) < 0.05
        assert abs(z.std() - 1.0) < 0.05

    def test_uniform_bounds_and_mean(self):
        u = SeededRng(7).uniform((10_000,), 2.0, 4.0)
        assert u.min() > 2.0 and u.max() < 4.0
        assert abs(u.mean() - 3.0) < 0.05

    def test_raw_is_deterministic(self):
        np.testing.assert_array_equal(SeededRng(9).raw(8), SeededRng(9).raw(8))


class TestSeededInit:
    def test_std_tracks_fan_in_unit(self):
        w = seeded_init((10_000,), SeededRng(13), scale=1.0)
        assert abs(w.std() - 1.0) < 0.05

    def test_std_tracks_fan_in_conv(self):
        w = seeded_init((64, 16, 3, 3), SeededRng(14), scale=1.0)
        assert abs(w.std() - 1.0 / math.sqrt(16 * 9)) < 0.05 / math.sqrt(16 * 9)

    def test_deterministic_per_stream(self):
        a = seeded_init((4, 4), SeededRng(15).substream("w"))
        b = seeded_init((4, 4), SeededRng(15).substream("w"))
        np.testing.assert_array_equal(a, b)


def test_require_finite_raises_on_nan():
    with pytest.raises(ValueError, match="non-finite"):
        require_finite(np.array([1.0, np.nan]), "probe")
