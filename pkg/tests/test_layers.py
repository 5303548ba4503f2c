import math

import numpy as np
import pytest

import gradcheck
from oracles import central_diff, conv1d_direct, maxpool_direct, rel_error
from osacnn.nn import Conv1d, Dense, Dropout, Flatten, MaxPool1d, ShapeError, out_length, softmax, softmax_cross_entropy
from osacnn.rng import SplitMix64


def _conv(w, b=None, stride=1, relu=True):
    w = np.asarray(w, dtype=np.float64)
    layer = Conv1d(w.shape[1], w.shape[0], w.shape[2], stride, relu=relu, dtype=np.float64)
    layer.params["W"][...] = w
    if b is not None:
        layer.params["b"][...] = b
    return layer


def _seq(values):
    return np.asarray(values, dtype=np.float64)[None, :, None]


@pytest.mark.parametrize(
    "length, k, s, expected",
    [(15360, 10, 2, 7676), (12, 12, 3, 1), (7676, 10, 2, 3834), (1913, 20, 2, 947)],
)
def test_out_length(length, k, s, expected):
    assert out_length(length, k, s) == expected


def test_conv_hand_examples():
    assert _conv([[[1, 0]]], stride=2).forward(_seq([1, 2, 3, 4]))[0, :, 0].tolist() == [1, 3]
    assert _conv([[[1]]]).forward(_seq([-1, 2]))[0, :, 0].tolist() == [0, 2]


def test_conv_channel_linearity():
    rng = np.random.default_rng(3)
    x = rng.standard_normal((2, 11, 1))
    w1 = rng.standard_normal((3, 1, 4))
    single = _conv(w1, relu=False).forward(x)
    double = _conv(np.concatenate([w1, w1], axis=1), relu=False).forward(np.concatenate([x, x], axis=2))
    np.testing.assert_allclose(double, 2 * single, rtol=1e-12)


@pytest.mark.parametrize("seed", range(5))
def test_conv_matches_direct_sum(seed):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((2, 19, 3))
    w = rng.standard_normal((4, 3, 5))
    b = rng.standard_normal(4)
    layer = _conv(w, b, stride=3, relu=False)
    np.testing.assert_allclose(layer.forward(x), conv1d_direct(x, w, b, 3), rtol=1e-10, atol=1e-12)


def test_conv_zero_upstream_gives_zero_gradients():
    rng = np.random.default_rng(0)
    layer = _conv(rng.standard_normal((3, 2, 3)), stride=2)
    out = layer.forward(rng.standard_normal((2, 12, 2)))
    gx = layer.backward(np.zeros_like(out))
    assert not gx.any() and not layer.grads["W"].any() and not layer.grads["b"].any()


def test_conv_single_window_is_dense():
    rng = np.random.default_rng(1)
    x = rng.standard_normal((3, 6, 2))
    w = rng.standard_normal((4, 2, 6))
    conv = _conv(w, relu=False, stride=4)
    dense = Dense(12, 4, dtype=np.float64)
    # dense input ordering (length, channel) vs conv weight (filter, channel, tap)
    dense.params["W"][...] = w.transpose(0, 2, 1).reshape(4, 12)
    g = rng.standard_normal((3, 4))
    np.testing.assert_allclose(conv.forward(x)[:, 0], dense.forward(x.reshape(3, 12)), rtol=1e-12)
    gx_conv = conv.backward(g[:, None])
    gx_dense = dense.backward(g)
    np.testing.assert_allclose(gx_conv.reshape(3, 12), gx_dense, rtol=1e-12)
    np.testing.assert_allclose(conv.grads["W"].transpose(0, 2, 1).reshape(4, 12), dense.grads["W"], rtol=1e-12)


def test_conv_small_case_gradcheck():
    rng = np.random.default_rng(7)
    while True:
        layer = _conv(rng.standard_normal((3, 2, 3)), rng.standard_normal(3) * 0.1, stride=2)
        x = rng.standard_normal((1, 12, 2))
        if np.min(np.abs(conv1d_direct(x, layer.params["W"], layer.params["b"], 2))) > 1e-6:
            break
    g = rng.standard_normal(layer.forward(x).shape)
    layer.forward(x)
    gx = layer.backward(g)
    numeric = central_diff(lambda: float(np.sum(layer.forward(x) * g)), x, 1e-5)
    assert rel_error(gx, numeric) < 1e-4


def test_conv_shape_errors():
    layer = Conv1d(2, 3, 4, name="conv1")
    with pytest.raises(ShapeError, match="conv1: expected 2 input channels"):
        layer.forward(np.zeros((1, 10, 3), dtype=np.float32))
    with pytest.raises(ShapeError, match="shorter than kernel"):
        layer.forward(np.zeros((1, 3, 2), dtype=np.float32))


def test_maxpool_example():
    pool = MaxPool1d(2, 2)
    assert pool.forward(_seq([1, 3, 2, 5]))[0, :, 0].tolist() == [3, 5]
    np.testing.assert_array_equal(pool.backward(np.ones((1, 2, 1)))[0, :, 0], [0, 1, 0, 1])


def test_maxpool_tie_goes_to_first_index():
    pool = MaxPool1d(4, 4)
    pool.forward(_seq([2, 2, 2, 2]))
    np.testing.assert_array_equal(pool.backward(np.ones((1, 1, 1)))[0, :, 0], [1, 0, 0, 0])


def test_maxpool_overlapping_windows_accumulate():
    pool = MaxPool1d(3, 1)
    pool.forward(_seq([0, 9, 0, 0]))
    np.testing.assert_array_equal(pool.backward(np.ones((1, 2, 1)))[0, :, 0], [0, 2, 0, 0])


@pytest.mark.parametrize("seed", range(5))
def test_maxpool_matches_direct(seed):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((2, 23, 3))
    expected, _ = maxpool_direct(x, 5, 3)
    np.testing.assert_array_equal(MaxPool1d(5, 3).forward(x), expected)


def test_backward_before_forward():
    for layer in (MaxPool1d(2), Conv1d(1, 1, 1), Dense(1, 1), Flatten()):
        with pytest.raises(RuntimeError, match="before forward"):
            layer.backward(np.zeros((1, 1, 1)))


def test_dense_5x4_gradcheck():
    rng = np.random.default_rng(5)
    layer = Dense(5, 4, dtype=np.float64)
    layer.params["W"][...] = rng.standard_normal((4, 5))
    layer.params["b"][...] = rng.standard_normal(4)
    x = rng.standard_normal((3, 5))
    g = rng.standard_normal((3, 4))
    layer.forward(x)
    layer.backward(g)
    numeric = central_diff(lambda: float(np.sum(layer.forward(x) * g)), layer.params["W"])
    assert rel_error(layer.grads["W"], numeric) < 1e-6


def test_dropout_identity_cases():
    x = np.random.default_rng(0).standard_normal((4, 6))
    assert Dropout(0.5).forward(x, train=False) is x
    full = Dropout(1.0)
    np.testing.assert_array_equal(full.forward(x, train=True), x)
    np.testing.assert_array_equal(full.backward(x), x)


def test_dropout_train_mode_unbiased():
    keep = 0.5
    x = np.array([[1.0, -2.0, 0.5, 3.0]])
    layer = Dropout(keep, rng=SplitMix64(2024))
    draws = layer.forward(np.repeat(x, 10_000, axis=0), train=True)
    se = np.abs(x[0]) * math.sqrt((1 - keep) / keep) / math.sqrt(10_000)
    assert np.all(np.abs(draws.mean(axis=0) - x[0]) < 3 * se)
    survivors = draws != 0
    np.testing.assert_allclose(draws[survivors], np.broadcast_to(x / keep, draws.shape)[survivors])


def test_dropout_backward_uses_same_mask():
    layer = Dropout(0.3, rng=SplitMix64(1))
    out = layer.forward(np.ones((50, 8)), train=True)
    np.testing.assert_array_equal(layer.backward(np.ones((50, 8))), out)


def test_softmax_uniform():
    p = softmax(np.zeros((1, 4)))
    np.testing.assert_allclose(p, 0.25)
    loss, _ = softmax_cross_entropy(np.zeros((1, 4)), np.array([2]))
    assert loss == pytest.approx(math.log(4), abs=1e-12)


def test_softmax_large_logit_no_overflow():
    with np.errstate(over="raise", invalid="raise"):
        loss, grad = softmax_cross_entropy(np.array([[0.0, 1000.0, 0.0, 0.0]]), np.array([1]))
    assert loss == pytest.approx(0.0, abs=1e-12)
    assert np.all(np.isfinite(grad))


def test_softmax_rows():
    logits = np.random.default_rng(4).standard_normal((100, 4)) * 50
    p = softmax(logits)
    np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-12)
    assert p.min() >= 0 and p.max() <= 1


def test_softmax_label_range():
    with pytest.raises(ValueError, match="labels"):
        softmax_cross_entropy(np.zeros((2, 4)), np.array([0, 4]))


@pytest.mark.parametrize("name", sorted(gradcheck.CHECKS))
def test_gradient_suite(name):
    check, tol = gradcheck.CHECKS[name]
    rng = np.random.default_rng([99, len(name)])
    errors = [check(rng) for _ in range(20)]
    assert max(errors) < tol, errors
