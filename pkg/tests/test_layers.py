import numpy as np
import pytest

from conftest import conv_reference, fd_gradient, rel_err
from pyroclass.errors import ConfigError, NumericError, ShapeError
from pyroclass.layers import (
    ConvParams,
    DenseParams,
    conv2d_backward,
    conv2d_forward,
    dense_backward,
    dense_forward,
    dropout_backward,
    dropout_forward,
    maxpool2x2_backward,
    maxpool2x2_forward,
    relu_backward,
    relu_forward,
    sigmoid,
    softmax,
)

# ---------------------------------------------------------------- conv2d


def test_conv_identity_kernel():
    x = np.arange(9, dtype=np.float32).reshape(1, 3, 3)
    kern = np.zeros((1, 1, 3, 3), dtype=np.float32)
    kern[0, 0, 1, 1] = 1.0
    y, _ = conv2d_forward(x, ConvParams(kern, np.zeros(1, np.float32)))
    assert np.array_equal(y, x)


def test_conv_zero_kernels_give_bias_planes(rng):
    x = rng.random((2, 4, 4)).astype(np.float32)
    params = ConvParams(np.zeros((3, 2, 3, 3), np.float32), np.array([1.0, -2.0, 0.5], np.float32))
    y, _ = conv2d_forward(x, params)
    for c, b in enumerate(params.bias):
        assert np.all(y[c] == b)


def test_conv_matches_nested_loop_oracle(rng):
    x = rng.normal(size=(2, 5, 5))
    kern = rng.normal(size=(3, 2, 3, 3))
    bias = rng.normal(size=3)
    y, _ = conv2d_forward(x, ConvParams(kern, bias))
    assert np.max(np.abs(y - conv_reference(x, kern, bias))) < 1e-5


def test_conv_1x1_matches_oracle(rng):
    x = rng.normal(size=(4, 6, 6))
    kern = rng.normal(size=(2, 4, 1, 1))
    bias = rng.normal(size=2)
    y, _ = conv2d_forward(x, ConvParams(kern, bias))
    assert np.max(np.abs(y - conv_reference(x, kern, bias))) < 1e-5


def test_conv_batched_equals_per_sample(rng):
    x = rng.normal(size=(3, 2, 4, 4)).astype(np.float32)
    params = ConvParams(rng.normal(size=(5, 2, 3, 3)).astype(np.float32),
                        rng.normal(size=5).astype(np.float32))
    yb, _ = conv2d_forward(x, params)
    for i in range(3):
        yi, _ = conv2d_forward(x[i], params)
        assert np.allclose(yb[i], yi, atol=1e-6)


def test_conv_channel_mismatch():
    params = ConvParams(np.zeros((1, 2, 3, 3), np.float32), np.zeros(1, np.float32))
    with pytest.raises(ShapeError):
        conv2d_forward(np.zeros((3, 4, 4), np.float32), params)


def test_conv_params_reject_bad_kernel_size():
    with pytest.raises(ShapeError):
        ConvParams(np.zeros((1, 1, 2, 2), np.float32), np.zeros(1, np.float32))


def test_conv_backward_zero_grad_gives_zeros(rng):
    x = rng.normal(size=(2, 4, 4))
    params = ConvParams(rng.normal(size=(3, 2, 3, 3)), rng.normal(size=3))
    y, cache = conv2d_forward(x, params)
    gx, gk, gb = conv2d_backward(cache, np.zeros_like(y))
    assert not gx.any() and not gk.any() and not gb.any()


def test_conv_backward_identity_kernel_passes_grad_through(rng):
    kern = np.zeros((1, 1, 3, 3))
    kern[0, 0, 1, 1] = 1.0
    x = rng.normal(size=(1, 4, 4))
    _, cache = conv2d_forward(x, ConvParams(kern, np.zeros(1)))
    g = rng.normal(size=(1, 4, 4))
    gx, _, _ = conv2d_backward(cache, g)
    assert np.allclose(gx, g)


def test_conv_backward_matches_finite_differences(rng):
    x = rng.normal(size=(2, 5, 5))
    kern = rng.normal(size=(3, 2, 3, 3))
    bias = rng.normal(size=3)
    g = rng.normal(size=(3, 5, 5))

    y, cache = conv2d_forward(x, ConvParams(kern, bias))
    gx, gk, gb = conv2d_backward(cache, g)

    def s_of_x(xp):
        yy, _ = conv2d_forward(xp, ConvParams(kern, bias))
        return float((g * yy).sum())

    def s_of_k(kp):
        yy, _ = conv2d_forward(x, ConvParams(kp, bias))
        return float((g * yy).sum())

    def s_of_b(bp):
        yy, _ = conv2d_forward(x, ConvParams(kern, bp))
        return float((g * yy).sum())

    assert rel_err(gx, fd_gradient(s_of_x, x)) < 1e-4
    assert rel_err(gk, fd_gradient(s_of_k, kern)) < 1e-4
    assert rel_err(gb, fd_gradient(s_of_b, bias)) < 1e-4


def test_conv_backward_shape_mismatch(rng):
    x = rng.normal(size=(1, 4, 4))
    params = ConvParams(rng.normal(size=(2, 1, 3, 3)), np.zeros(2))
    _, cache = conv2d_forward(x, params)
    with pytest.raises(ShapeError):
        conv2d_backward(cache, np.zeros((2, 3, 3)))


# ---------------------------------------------------------------- relu


def test_relu_basic():
    y, _ = relu_forward(np.array([-1.0, 0.0, 2.0], np.float32))
    assert y.tolist() == [0.0, 0.0, 2.0]


def test_relu_all_negative_zeroes_forward_and_backward():
    x = -np.ones((3, 3), np.float32)
    y, cache = relu_forward(x)
    assert not y.any()
    assert not relu_backward(cache, np.ones_like(x)).any()


def test_relu_backward_matches_fd_away_from_zero(rng):
    x = rng.normal(size=(4, 4))
    x[np.abs(x) < 0.05] += 0.1  # stay away from the kink
    g = rng.normal(size=(4, 4))
    _, cache = relu_forward(x)
    gx = relu_backward(cache, g)

    def s(xp):
        yy, _ = relu_forward(xp)
        return float((g * yy).sum())

    assert rel_err(gx, fd_gradient(s, x)) < 1e-4


# ---------------------------------------------------------------- maxpool


def test_pool_2x2_single_window():
    y, _ = maxpool2x2_forward(np.array([[[1.0, 2.0], [3.0, 4.0]]], dtype=np.float32))
    assert y.tolist() == [[[4.0]]]


def test_pool_constant_input_tie_goes_to_first_element():
    x = np.full((1, 2, 2), 7.0, np.float32)
    y, cache = maxpool2x2_forward(x)
    assert y.tolist() == [[[7.0]]]
    gx = maxpool2x2_backward(cache, np.array([[[5.0]]], np.float32))
    assert gx.tolist() == [[[5.0, 0.0], [0.0, 0.0]]]


def test_pool_rejects_odd_extent():
    with pytest.raises(ShapeError):
        maxpool2x2_forward(np.zeros((1, 3, 4), np.float32))


def test_pool_matches_window_scan_oracle(rng):
    x = rng.normal(size=(1, 6, 6))
    y, cache = maxpool2x2_forward(x)
    for i in range(3):
        for j in range(3):
            assert y[0, i, j] == x[0, 2 * i:2 * i + 2, 2 * j:2 * j + 2].max()

    g = rng.normal(size=(1, 3, 3))
    gx = maxpool2x2_backward(cache, g)

    def s(xp):
        yy, _ = maxpool2x2_forward(xp)
        return float((g * yy).sum())

    assert rel_err(gx, fd_gradient(s, x, h=1e-5)) < 1e-4


def test_pool_conserves_gradient_mass(rng):
    x = rng.normal(size=(2, 8, 8))
    _, cache = maxpool2x2_forward(x)
    g = rng.normal(size=(2, 4, 4))
    gx = maxpool2x2_backward(cache, g)
    assert np.isclose(gx.sum(), g.sum())


# ---------------------------------------------------------------- dense


def test_dense_identity_weights():
    params = DenseParams(np.eye(3, dtype=np.float32), np.zeros(3, np.float32))
    x = np.array([1.0, -2.0, 0.5], np.float32)
    y, _ = dense_forward(x, params)
    assert np.allclose(y, x)


def test_dense_zero_input_gives_bias_and_zero_weight_grad(rng):
    params = DenseParams(rng.normal(size=(4, 3)).astype(np.float32),
                         rng.normal(size=4).astype(np.float32))
    y, cache = dense_forward(np.zeros(3, np.float32), params)
    assert np.allclose(y, params.bias)
    _, gw, _ = dense_backward(cache, np.ones(4, np.float32))
    assert not gw.any()


def test_dense_gradients_match_fd(rng):
    x = rng.normal(size=8)
    w = rng.normal(size=(5, 8))
    b = rng.normal(size=5)
    g = rng.normal(size=5)
    _, cache = dense_forward(x, DenseParams(w, b))
    gx, gw, gb = dense_backward(cache, g)

    assert rel_err(gx, fd_gradient(lambda xp: float((g * dense_forward(xp, DenseParams(w, b))[0]).sum()), x)) < 1e-4
    assert rel_err(gw, fd_gradient(lambda wp: float((g * dense_forward(x, DenseParams(wp, b))[0]).sum()), w)) < 1e-4
    assert rel_err(gb, fd_gradient(lambda bp: float((g * dense_forward(x, DenseParams(w, bp))[0]).sum()), b)) < 1e-4


def test_dense_length_mismatch():
    params = DenseParams(np.zeros((2, 3), np.float32), np.zeros(2, np.float32))
    with pytest.raises(ShapeError):
        dense_forward(np.zeros(4, np.float32), params)


# ---------------------------------------------------------------- dropout


def test_dropout_rate_zero_is_identity(rng):
    x = rng.random((5, 5)).astype(np.float32)
    y, _ = dropout_forward(x, 0.0, np.random.default_rng(0), training=True)
    assert np.array_equal(y, x)


def test_dropout_inference_is_identity(rng):
    x = rng.random((5, 5)).astype(np.float32)
    y, cache = dropout_forward(x, 0.9, None, training=False)
    assert np.array_equal(y, x)
    assert np.array_equal(dropout_backward(cache, x), x)


def test_dropout_mean_preserved_at_large_n():
    x = np.ones(100_000, np.float32)
    y, _ = dropout_forward(x, 0.5, np.random.default_rng(77), training=True)
    assert 0.98 <= float(y.mean()) <= 1.02


def test_dropout_backward_applies_same_mask(rng):
    x = rng.random(1000).astype(np.float32)
    y, cache = dropout_forward(x, 0.3, np.random.default_rng(3), training=True)
    g = np.ones_like(x)
    gx = dropout_backward(cache, g)
    # zeroed forward positions get zero gradient, survivors the 1/(1-rate) scale
    assert np.array_equal(gx == 0, y == 0)
    assert np.allclose(gx[gx > 0], 1 / 0.7, atol=1e-6)


@pytest.mark.parametrize("rate", [1.0, 1.5, -0.1])
def test_dropout_rejects_bad_rate(rate):
    with pytest.raises(ConfigError):
        dropout_forward(np.ones(3, np.float32), rate, np.random.default_rng(0), True)


# ---------------------------------------------------------------- softmax / sigmoid


def test_softmax_uniform_for_equal_logits():
    assert np.allclose(softmax(np.zeros(5, np.float32)), 0.2)


def test_softmax_extreme_logits_no_overflow():
    y = softmax(np.array([1000.0, 0.0], np.float32))
    assert np.isfinite(y).all()
    assert y[0] > 0.999 and y[1] < 1e-6


def test_softmax_rows_sum_to_one(rng):
    y = softmax(rng.normal(size=(10, 7)))
    assert np.allclose(y.sum(axis=1), 1.0, atol=1e-6)
    assert (y > 0).all()


def test_softmax_shift_invariance(rng):
    z = rng.normal(size=9)
    assert np.max(np.abs(softmax(z) - softmax(z + 123.4))) < 1e-6


def test_softmax_rejects_nonfinite():
    with pytest.raises(NumericError):
        softmax(np.array([np.nan, 1.0]))


def test_sigmoid_zero_is_half():
    assert float(sigmoid(np.float64(0.0))) == 0.5


def test_sigmoid_stable_at_extremes():
    assert float(sigmoid(np.float64(-1000.0))) == pytest.approx(0.0, abs=1e-12)
    assert float(sigmoid(np.float64(1000.0))) == pytest.approx(1.0, abs=1e-12)
