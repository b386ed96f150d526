"""Quadratic neurons: forward values, analytic gradients against central
finite differences, the reduction to conventional convolution, and the
quadratic-activation variants.
"""

import numpy as np
import pytest

from quadnet.neuron import (
    Activation,
    IDENTITY,
    RELU,
    QuadraticParams,
    activation_gradient,
    apply_activation,
    quad_backward,
    quad_conv_forward,
    quad_forward,
    quadratic_activation,
    rectified_quadratic_activation,
)
from quadnet.tensor import PadMode, ShapeError, conv2d


def conv_params(w_r, w_g, w_b, b_r, b_g, c):
    return QuadraticParams(np.asarray(w_r, dtype=float),
                           np.asarray(w_g, dtype=float),
                           np.asarray(w_b, dtype=float),
                           np.asarray(b_r, dtype=float),
                           np.asarray(b_g, dtype=float),
                           np.asarray(c, dtype=float))


class TestQuadForward:
    def test_all_zero_parameters_give_zero(self):
        p = conv_params([0.0, 0.0], [0.0, 0.0], [0.0, 0.0], 0.0, 0.0, 0.0)
        for x in ([0.0, 0.0], [1.0, -2.0], [10.0, 3.0]):
            assert quad_forward(np.array(x), p, IDENTITY) == 0.0

    def test_pure_product_neuron(self):
        """w_r=(1,0), w_g=(0,1), everything else zero: output x1*x2."""
        p = conv_params([1.0, 0.0], [0.0, 1.0], [0.0, 0.0], 0.0, 0.0, 0.0)
        assert quad_forward(np.array([1.0, 2.0]), p, IDENTITY) == 2.0
        assert quad_forward(np.array([3.0, -4.0]), p, IDENTITY) == -12.0

    def test_xor_neuron(self):
        """A single quadratic neuron realizing XOR on binary inputs."""
        p = conv_params([1.0, 1.0], [-2.0, 0.0], [3.0, 1.0], 0.0, 0.0, 0.0)
        got = [quad_forward(np.array([a, b], dtype=float), p, IDENTITY)
               for a, b in ((0, 0), (0, 1), (1, 0), (1, 1))]
        assert got == [0.0, 1.0, 1.0, 0.0]

    def test_length_mismatch_rejected(self):
        p = conv_params([1.0, 0.0], [0.0, 1.0], [0.0, 0.0], 0.0, 0.0, 0.0)
        with pytest.raises(ShapeError):
            quad_forward(np.array([1.0, 2.0, 3.0]), p, IDENTITY)

    def test_weight_shape_mismatch_rejected(self):
        with pytest.raises(ShapeError):
            QuadraticParams(np.zeros(2), np.zeros(3), np.zeros(2), 0.0, 0.0, 0.0)

    def test_parameter_count_is_3n_plus_3(self):
        for n in (1, 2, 5, 9):
            p = conv_params(np.zeros(n), np.zeros(n), np.zeros(n), 0.0, 0.0, 0.0)
            assert p.count() == 3 * n + 3


class TestActivations:
    def test_quadratic_value(self):
        act = quadratic_activation(0.4)
        assert apply_activation(act, np.array(2.0)) == pytest.approx(1.6)

    def test_rectified_quadratic_negative_is_zero(self):
        act = rectified_quadratic_activation(0.4)
        assert apply_activation(act, np.array(-1.0)) == 0.0
        assert apply_activation(act, np.array(2.0)) == pytest.approx(1.6)

    def test_relu_gradient(self):
        g = activation_gradient(RELU, np.array([3.0, -1.0, 0.0]))
        np.testing.assert_array_equal(g, [1.0, 0.0, 0.0])

    def test_quadratic_gradient_is_2_alpha_x(self):
        act = quadratic_activation(0.4)
        g = activation_gradient(act, np.array([2.0, -3.0]))
        np.testing.assert_allclose(g, [1.6, -2.4])

    def test_rectified_quadratic_gradient_zero_at_origin_and_below(self):
        act = rectified_quadratic_activation(0.4)
        g = activation_gradient(act, np.array([2.0, 0.0, -2.0]))
        np.testing.assert_allclose(g, [1.6, 0.0, 0.0])

    def test_unknown_kind_rejected(self):
        with pytest.raises(ValueError):
            Activation("sigmoid")

    def test_float32_dtype_preserved(self):
        x = np.array([1.0, -1.0], dtype=np.float32)
        for act in (RELU, IDENTITY, quadratic_activation(0.4),
                    rectified_quadratic_activation(0.4)):
            assert apply_activation(act, x).dtype == np.float32
            assert activation_gradient(act, x).dtype == np.float32


class TestQuadConvForward:
    def test_reduction_to_conventional_conv(self):
        """w_g=0, b_g=1, w_b=0 collapses to an ordinary convolution."""
        rng = np.random.default_rng(0)
        for pad in (PadMode.SAME, PadMode.VALID):
            w = rng.normal(size=(3, 2, 3, 3))
            b = rng.normal(size=3)
            x = rng.normal(size=(2, 7, 7))
            p = conv_params(w, np.zeros_like(w), np.zeros_like(w),
                            b, np.ones(3), np.zeros(3))
            got = quad_conv_forward(x, p, pad=pad, act=IDENTITY)
            want = conv2d(x, w, b, pad=pad)
            assert np.max(np.abs(got - want)) <= 1e-12

    def test_all_zero_banks_constant_c_relu(self):
        shape = (2, 1, 3, 3)
        p = conv_params(np.zeros(shape), np.zeros(shape), np.zeros(shape),
                        np.zeros(2), np.zeros(2), np.full(2, 0.7))
        out = quad_conv_forward(np.zeros((1, 5, 5)), p, pad=PadMode.SAME, act=RELU)
        np.testing.assert_allclose(out, 0.7)

    def test_single_pixel_matches_vector_neuron(self):
        """1x1 input with 1x1 kernels is the length-1 vector neuron."""
        rng = np.random.default_rng(1)
        for _ in range(10):
            w_r, w_g, w_b, b_r, b_g, c, x = rng.normal(size=7)
            p = conv_params([[[[w_r]]]], [[[[w_g]]]], [[[[w_b]]]],
                            [b_r], [b_g], [c])
            conv_out = quad_conv_forward(np.array([[[x]]]), p,
                                         pad=PadMode.VALID, act=IDENTITY)
            vec = QuadraticParams(np.array([w_r]), np.array([w_g]),
                                  np.array([w_b]), b_r, b_g, c)
            vec_out = quad_forward(np.array([x]), vec, IDENTITY)
            assert conv_out[0, 0, 0] == pytest.approx(vec_out, rel=1e-12)

    def test_product_symmetry(self):
        """Swapping the (w_r, b_r) and (w_g, b_g) groups leaves the
        pre-activation output unchanged."""
        rng = np.random.default_rng(2)
        w_r, w_g, w_b = rng.normal(size=(3, 2, 1, 3, 3))
        b_r, b_g, c = rng.normal(size=(3, 2))
        x = rng.normal(size=(1, 6, 6))
        p1 = conv_params(w_r, w_g, w_b, b_r, b_g, c)
        p2 = conv_params(w_g, w_r, w_b, b_g, b_r, c)
        out1 = quad_conv_forward(x, p1, act=IDENTITY)
        out2 = quad_conv_forward(x, p2, act=IDENTITY)
        np.testing.assert_allclose(out1, out2, atol=1e-12)


class TestQuadBackward:
    def test_scalar_oracle(self):
        """Hand-derived gradients of the scalar neuron
        h = (w_r x + b_r)(w_g x + b_g) + w_b x^2 + c at
        x=2, w_r=1, b_r=0, w_g=3, b_g=1, w_b=0.5, c=0, upstream 1."""
        p = conv_params([[[[1.0]]]], [[[[3.0]]]], [[[[0.5]]]],
                        [0.0], [1.0], [0.0])
        g = quad_backward(np.array([[[2.0]]]), p, np.ones((1, 1, 1)),
                          pad=PadMode.VALID, act=IDENTITY)
        assert g["w_r"][0, 0, 0, 0] == pytest.approx(14.0)
        assert g["w_g"][0, 0, 0, 0] == pytest.approx(4.0)
        assert g["w_b"][0, 0, 0, 0] == pytest.approx(4.0)
        assert g["b_r"][0] == pytest.approx(7.0)
        assert g["b_g"][0] == pytest.approx(2.0)
        assert g["c"][0] == pytest.approx(1.0)
        assert g["x"][0, 0, 0] == pytest.approx(15.0)

    def test_c_gradient_is_upstream_sum(self):
        """d h / d c = 1 at every position, so the c gradient is the sum of
        the upstream gradient regardless of the input."""
        rng = np.random.default_rng(3)
        shape = (2, 1, 3, 3)
        p = conv_params(rng.normal(size=shape), rng.normal(size=shape),
                        rng.normal(size=shape), rng.normal(size=2),
                        rng.normal(size=2), rng.normal(size=2))
        x = rng.normal(size=(1, 5, 5))
        up = rng.normal(size=(2, 5, 5))
        g = quad_backward(x, p, up, pad=PadMode.SAME, act=IDENTITY)
        np.testing.assert_allclose(g["c"], up.sum(axis=(1, 2)), atol=1e-12)

    @pytest.mark.parametrize("pad,transpose", [
        (PadMode.SAME, False), (PadMode.VALID, False),
        (PadMode.SAME, True), (PadMode.VALID, True),
    ])
    def test_finite_difference_agreement(self, pad, transpose):
        """Every analytic gradient matches central differences < 1e-6
        relative, on random small layers in double precision."""
        rng = np.random.default_rng(4)
        shape = (2, 2, 3, 3)
        p = conv_params(rng.normal(size=shape) * 0.5,
                        rng.normal(size=shape) * 0.5,
                        rng.normal(size=shape) * 0.5,
                        rng.normal(size=2), rng.normal(size=2),
                        rng.normal(size=2))
        x = rng.normal(size=(2, 5, 5))
        out = quad_conv_forward(x, p, pad=pad, act=IDENTITY, transpose=transpose)
        up = rng.normal(size=out.shape)

        def loss(params, probe):
            o = quad_conv_forward(probe, params, pad=pad, act=IDENTITY,
                                  transpose=transpose)
            return float(np.sum(o * up))

        g = quad_backward(x, p, up, pad=pad, act=IDENTITY, transpose=transpose)
        step = 1e-5
        arrays = {"w_r": p.w_r, "w_g": p.w_g, "w_b": p.w_b,
                  "b_r": p.b_r, "b_g": p.b_g, "c": p.c, "x": x}
        for name, arr in arrays.items():
            flat = arr.reshape(-1)
            idx = rng.choice(flat.size, size=min(8, flat.size), replace=False)
            for i in idx:
                orig = flat[i]
                flat[i] = orig + step
                hi = loss(p, x)
                flat[i] = orig - step
                lo = loss(p, x)
                flat[i] = orig
                numeric = (hi - lo) / (2 * step)
                exact = g[name].reshape(-1)[i]
                denom = max(abs(exact), abs(numeric), 1e-6)
                assert abs(exact - numeric) / denom < 1e-6, (name, i)

    def test_reduction_gradient_matches_conventional(self):
        """In the reduction configuration the w_r gradient equals the
        ordinary convolution weight gradient (finite-difference oracle)."""
        rng = np.random.default_rng(5)
        w = rng.normal(size=(2, 1, 3, 3))
        x = rng.normal(size=(1, 5, 5))
        up = rng.normal(size=(2, 5, 5))
        p = conv_params(w, np.zeros_like(w), np.zeros_like(w),
                        np.zeros(2), np.ones(2), np.zeros(2))
        g = quad_backward(x, p, up, pad=PadMode.SAME, act=IDENTITY)
        step = 1e-6
        for idx in [(0, 0, 0, 0), (1, 0, 2, 1), (0, 0, 1, 2)]:
            orig = w[idx]
            w[idx] = orig + step
            hi = float(np.sum(conv2d(x, w, pad=PadMode.SAME) * up))
            w[idx] = orig - step
            lo = float(np.sum(conv2d(x, w, pad=PadMode.SAME) * up))
            w[idx] = orig
            assert g["w_r"][idx] == pytest.approx((hi - lo) / (2 * step), rel=1e-5)

    def test_relu_mask_fused(self):
        """With ReLU, positions whose pre-activation is negative contribute
        no gradient."""
        shape = (1, 1, 1, 1)
        p = conv_params(np.ones(shape), np.zeros(shape), np.zeros(shape),
                        [0.0], [1.0], [0.0])
        x = np.array([[[-3.0, 3.0]]])     # preactivations -3 (off), 3 (on)
        up = np.ones((1, 1, 2))
        g = quad_backward(x, p, up, pad=PadMode.SAME, act=RELU)
        assert g["c"][0] == 1.0           # only the active position counts
        assert g["x"][0, 0, 0] == 0.0
        assert g["x"][0, 0, 1] == 1.0
