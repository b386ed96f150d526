"""Tensor-core operators: convolution, transposed convolution, adjointness,
shape algebra, and elementwise arithmetic.

Oracle values are hand-derived and frozen; the adjoint identities are the
central property (they guarantee backpropagation through conv/deconv layers
is exact).
"""

import numpy as np
import pytest

from quadnet.tensor import (
    PadMode,
    ShapeError,
    add,
    col2im,
    conv2d,
    conv2d_transpose,
    im2col,
    mul,
    relu,
    square,
    sub,
)


class TestConv2d:
    def test_all_ones_kernel_sums_window(self):
        """3x3 input 1..9, all-ones 3x3 kernel, valid: single output 45."""
        x = np.arange(1, 10, dtype=np.float64).reshape(1, 3, 3)
        k = np.ones((1, 1, 3, 3))
        out = conv2d(x, k, pad=PadMode.VALID)
        assert out.shape == (1, 1, 1)
        assert out[0, 0, 0] == 45.0

    def test_identity_kernel_preserves_input(self):
        rng = np.random.default_rng(0)
        x = rng.normal(size=(1, 5, 7))
        k = np.zeros((1, 1, 1, 1))
        k[0, 0, 0, 0] = 1.0
        np.testing.assert_array_equal(conv2d(x, k, pad=PadMode.SAME), x)

    def test_same_pad_preserves_spatial_size(self):
        rng = np.random.default_rng(1)
        out = conv2d(rng.normal(size=(1, 5, 5)), rng.normal(size=(3, 1, 3, 3)),
                     pad=PadMode.SAME)
        assert out.shape == (3, 5, 5)

    def test_valid_shrinks_by_k_minus_1(self):
        rng = np.random.default_rng(2)
        for size in range(3, 9):
            out = conv2d(rng.normal(size=(2, size, size)),
                         rng.normal(size=(1, 2, 3, 3)), pad=PadMode.VALID)
            assert out.shape == (1, size - 2, size - 2)

    def test_bias_added_per_output_channel(self):
        x = np.zeros((1, 4, 4))
        k = np.zeros((3, 1, 3, 3))
        out = conv2d(x, k, bias=np.array([1.0, -2.0, 0.5]), pad=PadMode.SAME)
        np.testing.assert_array_equal(out[0], np.full((4, 4), 1.0))
        np.testing.assert_array_equal(out[1], np.full((4, 4), -2.0))
        np.testing.assert_array_equal(out[2], np.full((4, 4), 0.5))

    def test_cross_correlation_orientation(self):
        """The kernel is not flipped: an off-center tap reads the pixel at
        the matching positive offset."""
        x = np.zeros((1, 3, 3))
        x[0, 2, 2] = 1.0
        k = np.zeros((1, 1, 3, 3))
        k[0, 0, 2, 2] = 1.0       # tap at (+1, +1) relative to center
        out = conv2d(x, k, pad=PadMode.SAME)
        # output at the center position (1,1) sees input pixel (2,2)
        assert out[0, 1, 1] == 1.0

    def test_linearity(self):
        rng = np.random.default_rng(3)
        x, y = rng.normal(size=(2, 2, 6, 6))
        k = rng.normal(size=(3, 2, 3, 3))
        a, b = 0.7, -1.3
        lhs = conv2d(a * x + b * y, k, pad=PadMode.SAME)
        rhs = a * conv2d(x, k, pad=PadMode.SAME) + b * conv2d(y, k, pad=PadMode.SAME)
        assert np.max(np.abs(lhs - rhs)) < 1e-12

    def test_channel_mismatch_rejected(self):
        with pytest.raises(ShapeError):
            conv2d(np.zeros((2, 4, 4)), np.zeros((1, 3, 3, 3)))

    def test_even_kernel_rejected(self):
        with pytest.raises(ShapeError):
            conv2d(np.zeros((1, 4, 4)), np.zeros((1, 1, 2, 2)))

    def test_input_smaller_than_kernel_rejected(self):
        with pytest.raises(ShapeError):
            conv2d(np.zeros((1, 2, 2)), np.zeros((1, 1, 3, 3)), pad=PadMode.VALID)


class TestConv2dTranspose:
    def test_single_pixel_scatter(self):
        """Transposing a single-pixel image against kernel K paints K."""
        rng = np.random.default_rng(4)
        k = rng.normal(size=(1, 1, 3, 3))
        a = 2.5
        out = conv2d_transpose(np.array([[[a]]]), k, pad=PadMode.VALID)
        assert out.shape == (1, 3, 3)
        np.testing.assert_allclose(out[0], a * k[0, 0], atol=1e-14)

    def test_valid_grows_by_k_minus_1(self):
        rng = np.random.default_rng(5)
        out = conv2d_transpose(rng.normal(size=(2, 4, 4)),
                               rng.normal(size=(1, 2, 3, 3)), pad=PadMode.VALID)
        assert out.shape == (1, 6, 6)

    def test_same_preserves_spatial_size(self):
        rng = np.random.default_rng(6)
        out = conv2d_transpose(rng.normal(size=(2, 5, 5)),
                               rng.normal(size=(3, 2, 3, 3)), pad=PadMode.SAME)
        assert out.shape == (3, 5, 5)

    @pytest.mark.parametrize("pad", [PadMode.VALID, PadMode.SAME])
    def test_adjoint_identity(self, pad):
        """<conv(x,K), y> == <x, conv_transpose(y, K-swapped)> exactly
        describes the transpose; holds to 1e-12 on random inputs."""
        rng = np.random.default_rng(7)
        for _ in range(5):
            x = rng.normal(size=(2, 4, 4))
            k = rng.normal(size=(3, 2, 3, 3))
            y_shape = conv2d(x, k, pad=pad).shape
            y = rng.normal(size=y_shape)
            lhs = float(np.sum(conv2d(x, k, pad=pad) * y))
            rhs = float(np.sum(x * conv2d_transpose(
                y, k.transpose(1, 0, 2, 3), pad=pad)))
            assert abs(lhs - rhs) < 1e-12 * max(1.0, abs(lhs))

    def test_bias_added_after_scatter(self):
        out = conv2d_transpose(np.zeros((1, 2, 2)), np.zeros((2, 1, 3, 3)),
                               bias=np.array([3.0, -1.0]), pad=PadMode.VALID)
        np.testing.assert_array_equal(out[0], np.full((4, 4), 3.0))
        np.testing.assert_array_equal(out[1], np.full((4, 4), -1.0))


class TestIm2col:
    def test_round_trip_adjoint(self):
        """col2im is the exact adjoint of im2col: <im2col(x), c> == <x, col2im(c)>."""
        rng = np.random.default_rng(8)
        x = rng.normal(size=(2, 3, 6, 6))
        cols, (ho, wo) = im2col(x, 3)
        c = rng.normal(size=cols.shape)
        lhs = float(np.sum(cols * c))
        rhs = float(np.sum(x * col2im(c, 3, 3, 6, 6)))
        assert abs(lhs - rhs) < 1e-12 * max(1.0, abs(lhs))

    def test_square_columns_match(self):
        rng = np.random.default_rng(9)
        x = rng.normal(size=(1, 2, 5, 5))
        cols, cols2, _ = im2col(x, 3, square=True)
        np.testing.assert_array_equal(cols2, cols * cols)


class TestElementwise:
    def test_relu(self):
        np.testing.assert_array_equal(relu(np.array([-1.0, 0.0, 2.0])),
                                      np.array([0.0, 0.0, 2.0]))

    def test_square(self):
        np.testing.assert_array_equal(square(np.array([2.0, -3.0])),
                                      np.array([4.0, 9.0]))

    def test_add_sub_mul_identities(self):
        rng = np.random.default_rng(10)
        x = rng.normal(size=(2, 3, 3))
        np.testing.assert_array_equal(add(x, np.zeros_like(x)), x)
        np.testing.assert_array_equal(sub(x, np.zeros_like(x)), x)
        np.testing.assert_array_equal(mul(x, np.ones_like(x)), x)

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ShapeError):
            add(np.zeros((1, 2, 2)), np.zeros((1, 3, 3)))


class TestDtypeFlow:
    def test_float32_inputs_stay_float32_inside_batch_path(self):
        from quadnet.tensor import conv2d_batch
        rng = np.random.default_rng(11)
        x = rng.normal(size=(2, 1, 6, 6)).astype(np.float32)
        k = rng.normal(size=(2, 1, 3, 3)).astype(np.float32)
        out = conv2d_batch(x, k, None, PadMode.SAME)
        assert out.dtype == np.float32

    def test_mixed_inputs_promote_to_float64(self):
        from quadnet.tensor import conv2d_batch
        rng = np.random.default_rng(12)
        x = rng.normal(size=(2, 1, 6, 6)).astype(np.float32)
        k = rng.normal(size=(2, 1, 3, 3))
        out = conv2d_batch(x, k, None, PadMode.SAME)
        assert out.dtype == np.float64

    def test_public_rank3_ops_compute_in_float64(self):
        rng = np.random.default_rng(13)
        x = rng.normal(size=(1, 5, 5)).astype(np.float32)
        k = rng.normal(size=(1, 1, 3, 3)).astype(np.float32)
        assert conv2d(x, k, pad=PadMode.SAME).dtype == np.float64
