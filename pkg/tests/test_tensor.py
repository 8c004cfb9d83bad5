"""Tests for the dense tensor primitives and their forward-mode tangents."""

import numpy as np
import pytest

from rtfskit import tensor as T
from rtfskit.errors import NumericalError, ShapeError
from rtfskit.tensor import ConvSpec, DualTensor, KinkTape, kink_tape


def conv2d_reference(x, weight, bias, stride, padding, groups):
    """Direct nested-loop cross-correlation."""

    c_out, c_in_g, kh, kw = weight.shape
    x = np.pad(x, ((0, 0), (padding, padding), (padding, padding)))
    h_out = (x.shape[1] - kh) // stride + 1
    w_out = (x.shape[2] - kw) // stride + 1
    out = np.zeros((c_out, h_out, w_out))
    per_group = c_out // groups
    for o in range(c_out):
        g = o // per_group
        for i in range(h_out):
            for j in range(w_out):
                patch = x[g * c_in_g : (g + 1) * c_in_g, i * stride : i * stride + kh, j * stride : j * stride + kw]
                out[o, i, j] = np.sum(patch * weight[o]) + (bias[o] if bias is not None else 0.0)
    return out


def finite_difference(f, x, d, step=1e-6):
    return (f(x + step * d) - f(x - step * d)) / (2 * step)


# =============================================================================
# ConvSpec
# =============================================================================


class TestConvSpec:
    def test_encoder_param_count(self):
        """2 -> 256 channels with a 3x3 kernel has 2*256*9 weights plus 256 biases."""
        spec = ConvSpec.make(2, 256, (3, 3), padding=1)
        assert spec.param_count == 4864

    def test_out_spatial_same_padding(self):
        spec = ConvSpec.make(2, 4, (3, 3), padding=1)
        assert spec.out_spatial((251, 129)) == (251, 129)

    def test_out_spatial_strided(self):
        spec = ConvSpec.make(4, 4, (4, 4), stride=2, padding=1, groups=4)
        assert spec.out_spatial((251, 129)) == (125, 64)

    def test_transposed_weight_layout(self):
        spec = ConvSpec.make(6, 2, (3, 3), padding=1, transposed=True)
        assert spec.weight_shape == (6, 2, 3, 3)
        assert spec.out_spatial((10, 7)) == (10, 7)

    def test_depthwise_param_count(self):
        spec = ConvSpec.make(8, 8, (4, 4), groups=8, has_bias=False)
        assert spec.param_count == 8 * 16

    def test_macs(self):
        spec = ConvSpec.make(3, 5, (1, 1))
        assert spec.macs((7, 11)) == 3 * 5 * 7 * 11

    def test_empty_output_raises(self):
        spec = ConvSpec.make(1, 1, (5, 5))
        with pytest.raises(ShapeError):
            spec.out_spatial((3, 3))

    def test_groups_must_divide(self):
        with pytest.raises(ShapeError):
            ConvSpec.make(6, 4, (1, 1), groups=4)

    def test_same_padding(self):
        assert T.same_padding(3) == (1, 1)
        assert T.same_padding(4) == (1, 2)


# =============================================================================
# Convolution
# =============================================================================


class TestConv:
    @pytest.mark.parametrize("stride,padding,groups", [(1, 1, 1), (2, 1, 1), (1, 0, 2), (2, 1, 4)])
    def test_conv2d_matches_loops(self, rng, stride, padding, groups):
        x = rng.standard_normal((4, 9, 7))
        spec = ConvSpec.make(4, 8, (3, 3), stride=stride, padding=padding, groups=groups)
        weight = rng.standard_normal(spec.weight_shape)
        bias = rng.standard_normal(8)
        out = T.conv(x, spec, weight, bias)
        expected = conv2d_reference(x, weight, bias, stride, padding, groups)
        np.testing.assert_allclose(out, expected, atol=1e-10)

    @pytest.mark.parametrize(
        "size,expected",
        [(4, [[9.0, 9.0], [9.0, 9.0]]), (5, [[9.0, 12.0], [12.0, 16.0]])],
    )
    def test_ones_kernel_counts_covered_cells(self, size, expected):
        """A 4x4 ones kernel, stride 2, pad 1 sums the unpadded cells under each window."""
        spec = ConvSpec.make(1, 1, (4, 4), stride=2, padding=1, groups=1, has_bias=False)
        out = T.conv(np.ones((1, size, size)), spec, np.ones(spec.weight_shape))
        np.testing.assert_array_equal(out[0], expected)

    def test_transposed_is_adjoint(self, rng):
        """<conv(x), y> == <x, conv_transpose(y)> for the same weights."""
        forward = ConvSpec.make(3, 4, (3, 3), stride=2, padding=1)
        backward = ConvSpec.make(4, 3, (3, 3), stride=2, padding=1, transposed=True)
        weight = rng.standard_normal(forward.weight_shape)
        x = rng.standard_normal((3, 9, 9))
        y = rng.standard_normal((4,) + forward.out_spatial((9, 9)))
        lhs = np.sum(T.conv(x, forward, weight) * y)
        rhs = np.sum(x * T.conv(y, backward, weight))
        assert lhs == pytest.approx(rhs, rel=1e-10)

    def test_conv1d_single_channel(self, rng):
        x = rng.standard_normal((1, 20))
        w = rng.standard_normal((1, 1, 5))
        spec = ConvSpec.make(1, 1, 5, has_bias=False)
        out = T.conv(x, spec, w)
        np.testing.assert_allclose(out[0], np.correlate(x[0], w[0, 0], mode="valid"), atol=1e-12)

    def test_channel_mismatch(self, rng):
        spec = ConvSpec.make(3, 2, (1, 1))
        with pytest.raises(ShapeError):
            T.conv(rng.standard_normal((2, 4, 4)), spec, np.zeros(spec.weight_shape))

    def test_non_finite_output(self):
        spec = ConvSpec.make(1, 1, (1, 1), has_bias=False)
        with pytest.raises(NumericalError, match="conv2d"):
            T.conv(np.ones((1, 2, 2)), spec, np.full(spec.weight_shape, np.inf))

    def test_dual_tangent_skips_bias(self, rng):
        spec = ConvSpec.make(2, 3, (3, 3), padding=1)
        weight = rng.standard_normal(spec.weight_shape)
        bias = rng.standard_normal(3)
        x, d = rng.standard_normal((2, 5, 5)), rng.standard_normal((2, 5, 5))
        out = T.conv(DualTensor(x, d), spec, weight, bias)
        np.testing.assert_allclose(out.primal, T.conv(x, spec, weight, bias))
        np.testing.assert_allclose(out.tangent, T.conv(d, spec, weight))


# =============================================================================
# Normalization
# =============================================================================


class TestNorms:
    def test_gln_statistics(self, rng):
        x = 3.0 + 2.0 * rng.standard_normal((4, 6, 5))
        out = T.gln(x, np.ones(4), np.zeros(4))
        assert abs(out.mean()) < 1e-10
        assert out.std() == pytest.approx(1.0, rel=1e-4)

    def test_gln_affine(self, rng):
        x = rng.standard_normal((2, 3, 3))
        gamma, beta = np.array([2.0, 0.5]), np.array([1.0, -1.0])
        base = T.gln(x, np.ones(2), np.zeros(2))
        out = T.gln(x, gamma, beta)
        np.testing.assert_allclose(out, gamma[:, None, None] * base + beta[:, None, None])

    def test_channel_ln_per_position(self, rng):
        x = rng.standard_normal((8, 4, 3)) * 5.0
        out = T.channel_ln(x, np.ones(8), np.zeros(8))
        np.testing.assert_allclose(out.mean(axis=0), 0.0, atol=1e-10)

    def test_batch_norm_inference(self, rng):
        x = rng.standard_normal((3, 10))
        mean, var = np.array([1.0, 0.0, -1.0]), np.array([4.0, 1.0, 0.25])
        out = T.batch_norm(x, np.ones(3), np.zeros(3), mean, var, eps=0.0)
        np.testing.assert_allclose(out, (x - mean[:, None]) / np.sqrt(var)[:, None])

    def test_wrong_affine_shape(self, rng):
        with pytest.raises(ShapeError):
            T.gln(rng.standard_normal((3, 2, 2)), np.ones(4), np.zeros(4))

    @pytest.mark.parametrize("norm", [T.gln, T.channel_ln])
    def test_dual_tangent(self, rng, norm):
        x, d = rng.standard_normal((4, 5, 3)), rng.standard_normal((4, 5, 3))
        gamma, beta = rng.standard_normal(4), rng.standard_normal(4)
        out = norm(DualTensor(x, d), gamma, beta)
        numeric = finite_difference(lambda a: norm(a, gamma, beta), x, d)
        np.testing.assert_allclose(out.tangent, numeric, rtol=1e-5, atol=1e-7)


# =============================================================================
# Resampling and unfolding
# =============================================================================


class TestResampling:
    def test_nearest_indices(self):
        np.testing.assert_array_equal(T.nearest_indices(3, 6), [0, 0, 1, 1, 2, 2])
        np.testing.assert_array_equal(T.nearest_indices(6, 3), [0, 2, 4])

    def test_interp_nearest_upsamples(self):
        x = np.arange(6.0).reshape(1, 2, 3)
        out = T.interp_nearest(x, (4, 3))
        np.testing.assert_array_equal(out[0], [[0, 1, 2], [0, 1, 2], [3, 4, 5], [3, 4, 5]])

    def test_interp_three_to_five(self):
        out = T.interp_nearest(np.array([[10.0, 20.0, 30.0]]), (5,))
        np.testing.assert_array_equal(out[0], [10.0, 10.0, 20.0, 20.0, 30.0])

    def test_adaptive_pool_halves(self):
        out = T.adaptive_avg_pool(np.array([[1.0, 2.0, 3.0, 4.0]]), (2,))
        np.testing.assert_allclose(out[0], [1.5, 3.5])

    def test_adaptive_pool_overlapping_bins(self):
        x = np.array([[0.0, 1.0, 2.0, 3.0, 4.0]])
        out = T.adaptive_avg_pool(x, (2,))
        np.testing.assert_allclose(out[0], [1.0, 3.0])

    def test_pool_matrix_rows_average(self):
        matrix = T.pool_matrix(7, 3, dtype=np.float64)
        np.testing.assert_allclose(matrix.sum(axis=1), 1.0)
        # bin edges floor(i*7/3) .. ceil((i+1)*7/3)
        assert np.count_nonzero(matrix[0]) == 3
        assert np.count_nonzero(matrix[1]) == 3

    def test_adaptive_pool_to_one_is_mean(self, rng):
        x = rng.standard_normal((2, 6, 5))
        out = T.adaptive_avg_pool(x, (1, 1))
        np.testing.assert_allclose(out[:, 0, 0], x.mean(axis=(1, 2)))

    def test_adaptive_pool_identity(self, rng):
        x = rng.standard_normal((2, 4, 4))
        np.testing.assert_array_equal(T.adaptive_avg_pool(x, (4, 4)), x)


class TestUnfold:
    def test_channel_layout(self):
        x = np.arange(2 * 1 * 4, dtype=np.float64).reshape(2, 1, 4)
        out = T.unfold_freq(x, kernel=2, stride=1)
        assert out.shape == (4, 1, 3)
        # channel c * kernel + k holds tap k of channel c
        np.testing.assert_array_equal(out[0, 0], [0, 1, 2])
        np.testing.assert_array_equal(out[1, 0], [1, 2, 3])
        np.testing.assert_array_equal(out[2, 0], [4, 5, 6])
        np.testing.assert_array_equal(out[3, 0], [5, 6, 7])

    def test_time_axis(self, rng):
        x = rng.standard_normal((3, 6, 2))
        out = T.unfold(x, 3, 1, axis=1)
        assert out.shape == (9, 4, 2)
        np.testing.assert_array_equal(out[1 * 3 + 2, 0], x[1, 2])

    def test_stride_pads_tail(self):
        assert T.unfold_padding(9, 4, 2) == 1
        assert T.unfold_length(9, 4, 2) == 4
        assert T.unfold_padding(8, 4, 2) == 0

    def test_kernel_longer_than_axis(self, rng):
        with pytest.raises(ShapeError):
            T.unfold_freq(rng.standard_normal((1, 2, 3)), kernel=8, stride=1)


# =============================================================================
# Activations and dual arithmetic
# =============================================================================


class TestDualTensor:
    def test_product_rule(self):
        x = DualTensor(np.array([3.0]), np.array([1.0]))
        out = x * x
        assert out.tangent[0] == pytest.approx(6.0)

    def test_ndarray_left_operand(self):
        x = DualTensor(np.array([2.0]), np.array([1.0]))
        out = np.array([5.0]) * x
        assert isinstance(out, DualTensor)
        assert out.tangent[0] == pytest.approx(5.0)

    def test_matmul_tangent(self, rng):
        a, da = rng.standard_normal((3, 4)), rng.standard_normal((3, 4))
        b = rng.standard_normal((4, 2))
        out = T.matmul(DualTensor(a, da), b)
        np.testing.assert_allclose(out.tangent, da @ b)

    @pytest.mark.parametrize("fn", [T.sigmoid, T.tanh, lambda a: T.softmax(a, axis=0)])
    def test_smooth_tangents(self, rng, fn):
        x, d = rng.standard_normal((5, 3)), rng.standard_normal((5, 3))
        out = fn(DualTensor(x, d))
        np.testing.assert_allclose(out.tangent, finite_difference(fn, x, d), rtol=1e-6, atol=1e-9)

    def test_relu_tangent_masked(self):
        x = DualTensor(np.array([-1.0, 2.0]), np.array([5.0, 5.0]))
        out = T.relu(x)
        np.testing.assert_array_equal(out.primal, [0.0, 2.0])
        np.testing.assert_array_equal(out.tangent, [0.0, 5.0])

    def test_prelu_slope(self):
        out = T.prelu(np.array([[-2.0, 2.0]]), np.array([0.25]))
        np.testing.assert_array_equal(out, [[-0.5, 2.0]])

    def test_softmax_rows_sum_to_one(self, rng):
        out = T.softmax(rng.standard_normal((4, 6)) * 50.0, axis=-1)
        np.testing.assert_allclose(out.sum(axis=-1), 1.0)

    def test_softmax_known_values(self):
        out = T.softmax(np.array([0.0, np.log(3.0)]))
        np.testing.assert_allclose(out, [0.25, 0.75], atol=1e-12)

    def test_softmax_shift_invariant(self, rng):
        x = rng.standard_normal((3, 5))
        np.testing.assert_allclose(T.softmax(x + 7.5, axis=-1), T.softmax(x, axis=-1), atol=1e-12)

    def test_contiguous_relayouts_both_parts(self, rng):
        x = rng.standard_normal((3, 4, 5)).transpose(2, 0, 1)
        d = rng.standard_normal((3, 4, 5)).transpose(2, 0, 1)
        out = T.contiguous(DualTensor(x, d))
        assert out.primal.flags.c_contiguous and out.tangent.flags.c_contiguous
        np.testing.assert_array_equal(out.primal, x)
        np.testing.assert_array_equal(out.tangent, d)


class TestKinkTape:
    def test_records_masks(self):
        tape = KinkTape(threshold=0.1)
        with kink_tape(tape):
            T.relu(np.array([-1.0, 0.05, 2.0]))
        assert len(tape.masks) == 1
        assert tape.near_fraction == pytest.approx(1 / 3)

    def test_replay_keeps_pattern(self):
        tape = KinkTape()
        with kink_tape(tape):
            T.relu(np.array([1e-5, -1e-5]))
        with kink_tape(tape.replay()):
            # perturbed across the kink, the recorded side still applies
            out = T.relu(np.array([-1e-5, 1e-5]))
        np.testing.assert_array_equal(out, [-1e-5, 0.0])

    def test_no_tape_outside_context(self):
        tape = KinkTape()
        with kink_tape(tape):
            pass
        T.relu(np.array([1.0]))
        assert tape.masks == []
