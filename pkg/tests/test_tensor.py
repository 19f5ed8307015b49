"""Unit tests for the autodiff tensor core."""

import numpy as np
import pytest

from segkit.errors import (
    AxisOutOfRangeError,
    ClassOutOfRangeError,
    EmptyShapeError,
    NegativeOutputExtentError,
    NonScalarLossError,
    ShapeMismatchError,
)
from segkit.rng import SplitMix64
from segkit.tensor import (
    Tensor,
    add,
    add_bias,
    concat,
    conv2d,
    cross_entropy,
    elementwise,
    grad_check,
    layer_norm,
    linear,
    matmul,
    mul,
    relu,
    reshape,
    scalar_mul,
    scale,
    sigmoid,
    softmax,
    tensor_new,
    tmean,
    transpose2d,
    tsum,
    upsample_nearest,
)

TOL = 1e-4


def _t(shape, seed=0, lo=-1.0, hi=1.0):
    return Tensor(SplitMix64(seed).uniform_array(shape, lo, hi), requires_grad=True)


class TestConstruction:
    def test_tensor_new_roundtrip(self):
        t = tensor_new((2, 3), [1, 2, 3, 4, 5, 6])
        assert t.shape == (2, 3)
        assert t.data[1, 2] == 6.0

    def test_tensor_new_size_mismatch(self):
        with pytest.raises(ShapeMismatchError):
            tensor_new((2, 3), [1, 2, 3])

    def test_empty_shape_rejected(self):
        with pytest.raises(EmptyShapeError):
            tensor_new((0, 3), [])
        with pytest.raises(EmptyShapeError):
            Tensor(np.empty((2, 0)))

    def test_int_input_promoted_to_f32(self):
        assert Tensor([1, 2, 3]).dtype == np.float32


class TestBackwardMechanics:
    def test_non_scalar_loss_rejected(self):
        with pytest.raises(NonScalarLossError):
            _t((3,)).backward()

    def test_gradients_accumulate_until_zero_grad(self):
        x = _t((4,))
        tsum(x).backward()
        g1 = x.grad.copy()
        tsum(x).backward()
        assert np.array_equal(x.grad, 2 * g1)
        x.zero_grad()
        assert x.grad is None

    def test_repeat_backward_deterministic(self):
        x = _t((5,), seed=3)
        w = _t((5,), seed=4)

        def loss():
            return tsum(mul(softmax(x, axis=0), w))

        loss().backward()
        gx, gw = x.grad.copy(), w.grad.copy()
        x.zero_grad()
        w.zero_grad()
        loss().backward()
        assert np.array_equal(x.grad, gx)
        assert np.array_equal(w.grad, gw)

    def test_diamond_graph_accumulates_both_paths(self):
        x = Tensor(np.array([2.0]), requires_grad=True)
        y = add(mul(x, x), scale(x, 3.0))  # x^2 + 3x
        tsum(y).backward()
        assert abs(float(x.grad[0]) - 7.0) < 1e-6  # 2x + 3


class TestGradients:
    """Targeted finite-difference checks beyond the bundled suites."""

    def test_elementwise_ops(self):
        w = SplitMix64(9).uniform_array((6,), -1, 1)
        for f in (
            lambda v: tsum(add(v, Tensor(w))),
            lambda v: tsum(mul(v, Tensor(w))),
            lambda v: tsum(scale(v, -1.7)),
            lambda v: tsum(mul(relu(v), Tensor(w))),
            lambda v: tsum(mul(sigmoid(v), Tensor(w))),
        ):
            assert grad_check(f, _t((6,), seed=1)) <= TOL

    def test_shape_ops(self):
        w = SplitMix64(9).uniform_array((6,), -1, 1)
        assert grad_check(lambda v: tsum(mul(reshape(v, (6,)), Tensor(w))),
                          _t((2, 3), seed=2)) <= TOL
        assert grad_check(lambda v: tsum(mul(reshape(transpose2d(v), (6,)), Tensor(w))),
                          _t((2, 3), seed=2)) <= TOL
        assert grad_check(lambda v: tmean(concat([v, scale(v, 2.0)], axis=0)),
                          _t((2, 3), seed=2)) <= TOL

    def test_getitem_scatter(self):
        assert grad_check(lambda v: tsum(v[1:3]), _t((5,), seed=6)) <= TOL

    def test_linear_and_bias(self):
        w = SplitMix64(8).uniform_array((3, 2), -1, 1)
        b = SplitMix64(9).uniform_array((2,), -1, 1)
        assert grad_check(lambda v: tsum(linear(v, Tensor(w), Tensor(b))),
                          _t((4, 3), seed=7)) <= TOL
        assert grad_check(lambda v: tsum(add_bias(Tensor(SplitMix64(1).uniform_array((4, 2), -1, 1)), v)),
                          _t((2,), seed=7)) <= TOL

    def test_scalar_mul_both_sides(self):
        x = SplitMix64(2).uniform_array((3, 3), -1, 1)
        s = Tensor(np.array(0.7), requires_grad=True)
        assert grad_check(lambda v: tsum(scalar_mul(v, Tensor(np.array(0.7)))),
                          _t((3, 3), seed=2)) <= TOL
        assert grad_check(lambda v: tsum(scalar_mul(Tensor(x), v)),
                          Tensor(np.array(0.7), requires_grad=True)) <= TOL
        del s

    def test_conv2d_strided(self):
        w = SplitMix64(4).uniform_array((2, 3, 3, 3), -1, 1)
        assert grad_check(lambda v: tsum(conv2d(v, Tensor(w), stride=2, padding=1)),
                          _t((1, 3, 6, 6), seed=5)) <= TOL

    def test_upsample_nearest(self):
        w = SplitMix64(4).uniform_array((1, 2, 6, 6), -1, 1)
        assert grad_check(lambda v: tsum(mul(upsample_nearest(v, 3), Tensor(w))),
                          _t((1, 2, 2, 2), seed=5)) <= TOL

    def test_layer_norm(self):
        g = SplitMix64(5).uniform_array((6,), 0.5, 1.5)
        b = SplitMix64(6).uniform_array((6,), -0.5, 0.5)
        w = SplitMix64(7).uniform_array((4, 6), -1, 1)
        assert grad_check(lambda v: tsum(mul(layer_norm(v, Tensor(g), Tensor(b)), Tensor(w))),
                          _t((4, 6), seed=8)) <= TOL

    def test_cross_entropy_with_ignore_and_weights(self):
        target = np.array([[[1, 0], [-1, 2]]])
        pw = np.array([[[0.5, 1.0], [1.0, 2.0]]])
        assert grad_check(lambda v: cross_entropy(v, target, pixel_weights=pw),
                          _t((1, 3, 2, 2), seed=9, lo=-2, hi=2)) <= TOL


class TestSemantics:
    def test_softmax_rows_sum_to_one_large_magnitude(self):
        x = Tensor(SplitMix64(11).uniform_array((20, 7), -1e4, 1e4))
        s = softmax(x, axis=-1).data.sum(axis=-1)
        assert np.all(np.abs(s - 1.0) < 1e-6)

    def test_softmax_axis_out_of_range(self):
        with pytest.raises(AxisOutOfRangeError):
            softmax(_t((3,)), axis=2)

    def test_matmul_shape_mismatch(self):
        with pytest.raises(ShapeMismatchError):
            matmul(_t((2, 3)), _t((2, 3)))

    def test_conv2d_even_kernel_rejected(self):
        with pytest.raises(ShapeMismatchError):
            conv2d(_t((1, 1, 4, 4)), _t((1, 1, 2, 2)))

    def test_conv2d_negative_output(self):
        with pytest.raises(NegativeOutputExtentError):
            conv2d(_t((1, 1, 2, 2)), _t((1, 1, 5, 5)))

    def test_elementwise_dispatch(self):
        x = _t((3,), seed=1)
        assert np.array_equal(elementwise("relu", x).data, relu(x).data)
        with pytest.raises(ValueError):
            elementwise("pow", x, 2)

    def test_cross_entropy_all_ignored_is_zero_with_zero_grad(self):
        logits = _t((1, 3, 2, 2), seed=2)
        loss = cross_entropy(logits, np.full((1, 2, 2), -1))
        assert float(loss.data) == 0.0
        loss.backward()
        assert np.all(logits.grad == 0.0)

    def test_cross_entropy_class_out_of_range(self):
        with pytest.raises(ClassOutOfRangeError):
            cross_entropy(_t((1, 3, 2, 2)), np.full((1, 2, 2), 7))

    def test_cross_entropy_hand_value(self):
        # uniform logits over K classes -> loss = log K
        logits = Tensor(np.zeros((1, 4, 2, 2)))
        loss = cross_entropy(logits, np.zeros((1, 2, 2), dtype=int))
        assert abs(float(loss.data) - np.log(4.0)) < 1e-6
