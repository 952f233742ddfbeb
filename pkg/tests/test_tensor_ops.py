"""Autodiff engine: forward values against hand/loop oracles, gradients
against central finite differences."""

import numpy as np
import pytest

from mugennet import tensor as T
from mugennet.tensor import DegenerateBatchError, ShapeError, Tensor

from oracles import fd_gradient, naive_conv2d

RNG = np.random.default_rng(7)


def grads_match(build, x0, tol=1e-4, h=1e-5):
    """Autodiff gradient of a scalar graph vs central differences."""
    x = Tensor(np.asarray(x0, dtype=np.float64), requires_grad=True)
    build(x).backward()
    fd = fd_gradient(lambda a: build(Tensor(a)).data.sum(), np.asarray(x0, float), h=h)
    denom = max(np.abs(fd).max(), np.abs(x.grad).max(), 1e-12)
    assert np.abs(x.grad - fd).max() / denom < tol
    return x.grad


# -- matmul ------------------------------------------------------------------


def test_matmul_identity():
    b = np.array([[5.0, 6.0], [7.0, 8.0]])
    out = T.matmul(Tensor(np.eye(2)), Tensor(b))
    assert np.array_equal(out.data, b)


def test_matmul_hand_case():
    out = T.matmul(Tensor([[1.0, 2.0], [3.0, 4.0]]), Tensor([[1.0], [1.0]]))
    assert np.array_equal(out.data, [[3.0], [7.0]])


def test_matmul_shape_error_names_dims():
    with pytest.raises(ShapeError) as e:
        T.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((4, 2))))
    assert "3" in str(e.value) and "4" in str(e.value)


def test_matmul_gradcheck():
    b = RNG.standard_normal((4, 3))
    grads_match(lambda x: T.matmul(x, Tensor(b)).sum(), RNG.standard_normal((2, 4)))


# -- conv2d ------------------------------------------------------------------


def test_conv2d_scalar_identity():
    out = T.conv2d(Tensor(np.full((1, 1, 1, 1), 2.5)), Tensor(np.ones((1, 1, 1, 1))))
    assert out.data.reshape(()) == pytest.approx(2.5)


def test_conv2d_ones_2x2():
    out = T.conv2d(Tensor(np.ones((1, 1, 2, 2))), Tensor(np.ones((1, 1, 2, 2))))
    assert out.shape == (1, 1, 1, 1)
    assert out.item() == pytest.approx(4.0)


def test_conv2d_identity_kernel():
    x = RNG.standard_normal((2, 3, 5, 4))
    w = np.zeros((3, 3, 1, 1))
    for i in range(3):
        w[i, i, 0, 0] = 1.0
    out = T.conv2d(Tensor(x), Tensor(w))
    assert np.allclose(out.data, x)


@pytest.mark.parametrize("stride,pad", [(1, 0), (1, 1), (2, 1), (2, 0)])
def test_conv2d_matches_naive(stride, pad):
    x = RNG.standard_normal((1, 2, 5, 5))
    w = RNG.standard_normal((3, 2, 3, 3))
    b = RNG.standard_normal(3)
    if (5 + 2 * pad - 3) % stride:
        pytest.skip("non-integral extent")
    out = T.conv2d(Tensor(x), Tensor(w), Tensor(b), stride=stride, pad=pad)
    ref = naive_conv2d(x, w, b, stride=stride, pad=pad)
    assert out.shape == ref.shape
    assert np.abs(out.data - ref).max() < 1e-5


def test_conv2d_non_integral_extent_raises():
    with pytest.raises(ShapeError):
        T.conv2d(Tensor(np.zeros((1, 1, 5, 5))), Tensor(np.zeros((1, 1, 2, 2))), stride=2)


def test_conv2d_weight_gradcheck():
    x = RNG.standard_normal((1, 2, 4, 4))
    w0 = RNG.standard_normal((2, 2, 3, 3))
    w = Tensor(w0, requires_grad=True)
    T.conv2d(Tensor(x), w, stride=1, pad=1).sum().backward()
    fd = fd_gradient(lambda a: naive_conv2d(x, a, stride=1, pad=1).sum(), w0)
    assert np.abs(w.grad - fd).max() / max(np.abs(fd).max(), 1e-12) < 1e-4


def test_conv2d_input_gradcheck():
    w = RNG.standard_normal((2, 2, 3, 3))
    grads_match(lambda x: T.conv2d(x, Tensor(w), stride=1, pad=1).sum(),
                RNG.standard_normal((1, 2, 4, 4)))


# -- softmax / normalization -------------------------------------------------


def test_softmax_symmetry_and_analytic():
    assert np.allclose(T.softmax_rows(Tensor([[0.0, 0.0]])).data, [[0.5, 0.5]])
    out = T.softmax_rows(Tensor([[np.log(2.0), 0.0]]))
    assert np.allclose(out.data, [[2 / 3, 1 / 3]], atol=1e-12)
    assert np.allclose(T.softmax_rows(Tensor([[3.7]])).data, [[1.0]])


def test_softmax_rows_sum_to_one_and_shift_invariant():
    x = RNG.standard_normal((6, 9))
    out = T.softmax_rows(Tensor(x))
    assert np.abs(out.data.sum(axis=-1) - 1.0).max() < 1e-6
    shifted = T.softmax_rows(Tensor(x + 13.0))
    assert np.abs(out.data - shifted.data).max() < 1e-6


def test_softmax_gradcheck():
    grads_match(lambda x: (T.softmax_rows(x) * Tensor(np.arange(8.0).reshape(2, 4))).sum(),
                RNG.standard_normal((2, 4)))


def test_layer_norm_constant_row_and_analytic():
    g, b = Tensor(np.ones(3)), Tensor(np.zeros(3))
    out = T.layer_norm(Tensor([[4.0, 4.0, 4.0]]), g, b)
    assert np.abs(out.data).max() < 1e-3
    out2 = T.layer_norm(Tensor([[1.0, 3.0]]), Tensor(np.ones(2)), Tensor(np.zeros(2)), eps=1e-12)
    assert np.allclose(out2.data, [[-1.0, 1.0]], atol=1e-5)


def test_layer_norm_gradcheck():
    g = Tensor(RNG.standard_normal(5), requires_grad=True)
    b = Tensor(RNG.standard_normal(5), requires_grad=True)
    coef = RNG.standard_normal((3, 5))
    grads_match(lambda x: (T.layer_norm(x, g, b) * Tensor(coef)).sum(),
                RNG.standard_normal((3, 5)))


def test_batch_norm_eval_identity():
    c = 3
    x = RNG.standard_normal((4, c, 2, 2))
    out = T.batch_norm(Tensor(x), Tensor(np.ones(c)), Tensor(np.zeros(c)),
                       np.zeros(c), np.ones(c), training=False)
    assert np.abs(out.data - x).max() < 1e-4


def test_batch_norm_training_pair():
    x = np.array([[-1.0], [1.0]])
    out = T.batch_norm(Tensor(x), Tensor(np.ones(1)), Tensor(np.zeros(1)),
                       np.zeros(1), np.ones(1), training=True)
    assert np.allclose(out.data, x, atol=1e-4)


def test_batch_norm_updates_running_stats():
    rm, rv = np.zeros(1), np.ones(1)
    x = np.array([[2.0], [4.0]])
    T.batch_norm(Tensor(x), Tensor(np.ones(1)), Tensor(np.zeros(1)), rm, rv, training=True)
    assert rm[0] == pytest.approx(0.1 * 3.0)
    assert rv[0] == pytest.approx(0.9 * 1.0 + 0.1 * 1.0)


def test_batch_norm_degenerate_batch():
    with pytest.raises(DegenerateBatchError):
        T.batch_norm(Tensor(np.zeros((1, 2))), Tensor(np.ones(2)), Tensor(np.zeros(2)),
                     np.zeros(2), np.ones(2), training=True)


def test_batch_norm_gradcheck():
    coef = RNG.standard_normal((5, 2))
    grads_match(lambda x: (T.batch_norm(x, Tensor(np.full(2, 1.3)), Tensor(np.full(2, 0.2)),
                                        np.zeros(2), np.ones(2), training=True)
                           * Tensor(coef)).sum(),
                RNG.standard_normal((5, 2)), tol=1e-3)


# -- elementwise -------------------------------------------------------------


def test_sigmoid_relu_values():
    assert T.sigmoid(Tensor([0.0])).data[0] == pytest.approx(0.5)
    assert T.relu(Tensor([-3.0])).data[0] == 0.0
    assert T.relu(Tensor([3.0])).data[0] == 3.0
    big = T.sigmoid(Tensor([30.0, -30.0])).data
    assert 0.0 < big[1] and big[0] < 1.0
    assert np.isfinite(T.sigmoid(Tensor([700.0, -700.0])).data).all()


def test_sigmoid_gelu_gradcheck():
    grads_match(lambda x: T.sigmoid(x).sum(), RNG.standard_normal(12))
    grads_match(lambda x: T.gelu(x).sum(), RNG.standard_normal(12))


def test_gelu_values():
    out = T.gelu(Tensor([0.0, 100.0, -100.0])).data
    assert out[0] == pytest.approx(0.0)
    assert out[1] == pytest.approx(100.0)
    assert out[2] == pytest.approx(0.0, abs=1e-6)


# -- pooling / resampling ----------------------------------------------------


def test_global_max_pool_values():
    x = np.array([[[[1.0, 2.0], [3.0, 0.0]]]])
    assert T.global_max_pool(Tensor(x)).data[0, 0] == 3.0
    single = np.full((1, 2, 1, 1), 1.5)
    assert np.allclose(T.global_max_pool(Tensor(single)).data, 1.5)


def test_global_max_pool_tie_break_single_grad():
    x = Tensor(np.full((1, 1, 2, 2), 2.0), requires_grad=True)
    T.global_max_pool(x).sum().backward()
    assert x.grad.sum() == 1.0
    assert (x.grad != 0).sum() == 1
    assert x.grad[0, 0, 0, 0] == 1.0  # first index in scan order


def test_upsample_nearest_block_replication():
    out = T.upsample2x(Tensor(np.array([[[[1.0, 2.0], [3.0, 4.0]]]])), "nearest")
    expect = np.array([[[[1, 1, 2, 2], [1, 1, 2, 2], [3, 3, 4, 4], [3, 3, 4, 4]]]], float)
    assert np.array_equal(out.data, expect)


def test_upsample_bilinear_preserves_constants():
    out = T.upsample2x(Tensor(np.full((1, 2, 3, 3), 0.7)), "bilinear")
    assert out.shape == (1, 2, 6, 6)
    assert np.abs(out.data - 0.7).max() < 1e-6


def test_upsample_nearest_then_avgpool_is_identity():
    x = RNG.standard_normal((2, 3, 4, 5))
    back = T.avg_pool2d(T.upsample2x(Tensor(x), "nearest"), 2)
    assert np.abs(back.data - x).max() < 1e-5


def test_upsample_bilinear_gradcheck():
    grads_match(lambda x: (T.upsample2x(x, "bilinear")
                           * Tensor(RNG_FIXED)).sum(),
                RNG.standard_normal((1, 2, 3, 4)))


RNG_FIXED = np.random.default_rng(3).standard_normal((1, 2, 6, 8))


def test_max_avg_pool2d_gradcheck():
    grads_match(lambda x: T.max_pool2d(x, 2).sum(), RNG.standard_normal((1, 2, 4, 6)))
    grads_match(lambda x: T.avg_pool2d(x, 2).sum(), RNG.standard_normal((1, 2, 4, 6)))


# -- concat ------------------------------------------------------------------


def test_concat_single_and_order():
    a = RNG.standard_normal((1, 1, 2, 2))
    b = RNG.standard_normal((1, 2, 2, 2))
    alone = T.concat_channels([Tensor(a)])
    assert np.array_equal(alone.data, a)
    both = T.concat_channels([Tensor(a), Tensor(b)])
    assert both.shape == (1, 3, 2, 2)
    assert np.array_equal(both.data[:, :1], a)
    assert np.array_equal(both.data[:, 1:], b)


def test_concat_spatial_mismatch():
    with pytest.raises(ShapeError):
        T.concat_channels([Tensor(np.zeros((1, 1, 2, 2))), Tensor(np.zeros((1, 1, 3, 2)))])


def test_concat_backward_splits_ones():
    a = Tensor(RNG.standard_normal((1, 1, 2, 2)), requires_grad=True)
    b = Tensor(RNG.standard_normal((1, 2, 2, 2)), requires_grad=True)
    T.concat_channels([a, b]).sum().backward()
    assert np.array_equal(a.grad, np.ones_like(a.data))
    assert np.array_equal(b.grad, np.ones_like(b.data))


# -- backward engine ---------------------------------------------------------


def test_backward_sum_gives_ones():
    x = Tensor(RNG.standard_normal((3, 4)), requires_grad=True)
    x.sum().backward()
    assert np.array_equal(x.grad, np.ones((3, 4)))


def test_backward_quadratic():
    v = RNG.standard_normal(5)
    x = Tensor(v, requires_grad=True)
    (x * x).sum().backward()
    assert np.allclose(x.grad, 2 * v)


def test_backward_requires_scalar():
    x = Tensor(np.zeros((2, 2)), requires_grad=True)
    with pytest.raises(ValueError):
        (x * 2.0).backward()


def test_backward_fanout_accumulates():
    v = RNG.standard_normal(4)
    x = Tensor(v, requires_grad=True)
    (x + x).sum().backward()
    y = Tensor(v, requires_grad=True)
    (y * 2.0).sum().backward()
    assert np.allclose(x.grad, y.grad)


def test_clamp_log_exp_gradcheck():
    grads_match(lambda x: T.log(T.clamp(T.sigmoid(x), 1e-7, 1 - 1e-7)).sum(),
                RNG.standard_normal(9))
    grads_match(lambda x: T.exp(x).sum(), RNG.standard_normal(6))


def test_nan_guard_names_op():
    T.set_nan_checks(True)
    try:
        with pytest.raises(T.NumericalError) as e:
            T.log(Tensor([-1.0]))
        assert "log" in str(e.value)
    finally:
        T.set_nan_checks(False)
