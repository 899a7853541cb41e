import numpy as np
import pytest

from services import nn_core
from services.nn_core import (
    FrozenParams, adam_init, adam_update, bce_with_logits, conv2d, conv2d_backward, dense, dense_backward,
    grad_check, gru_sequence, gru_sequence_backward, gru_step, init_gru, mse_loss, sigmoid,
    upsample2d, upsample2d_backward,
)
from utils.exceptions import DivergenceError, ImmutabilityError, ShapeMismatchError

def test_dense_worked_example():
    y = dense(np.array([1.0, 1.0]), np.array([[1.0, 2.0], [3.0, 4.0]]), np.zeros(2))
    np.testing.assert_array_equal(y, [3.0, 7.0])

def test_dense_rejects_mismatched_shapes():
    with pytest.raises(ShapeMismatchError):
        dense(np.ones(3), np.ones((2, 2)), np.zeros(2))

def test_dense_backward_matches_finite_differences(rng):
    x = rng.standard_normal((3, 4))
    params = {"W": rng.standard_normal((2, 4)), "b": rng.standard_normal(2)}
    upstream = rng.standard_normal((3, 2))
    _, dW, db = dense_backward(upstream, x, params["W"])
    report = grad_check(lambda p: float(np.sum(dense(x, p["W"], p["b"]) * upstream)), params, {"W": dW, "b": db})
    assert report.passed, report.per_param

def test_dense_forward_is_pure(rng):
    x, W, b = rng.standard_normal((2, 3)), rng.standard_normal((4, 3)), rng.standard_normal(4)
    copies = [a.copy() for a in (x, W, b)]
    dense(x, W, b)
    for before, after in zip(copies, (x, W, b)):
        np.testing.assert_array_equal(before, after)

def test_gru_with_zero_params_halves_the_state():
    params = {k: np.zeros_like(v) for k, v in init_gru(3, 4, np.random.default_rng(0)).items()}
    h_prev = np.array([[1.0, -2.0, 0.5, 4.0]])
    h, _ = gru_step(np.ones((1, 3)), h_prev, params)
    np.testing.assert_array_equal(h, 0.5 * h_prev)

def test_gru_bptt_matches_finite_differences(rng):
    params = init_gru(2, 3, rng)
    params["b_z"] = rng.standard_normal(3) * 0.1
    xs = rng.standard_normal((2, 3, 2))
    upstream = rng.standard_normal((2, 3))

    def loss(p):
        return float(np.sum(gru_sequence(xs, p)[0] * upstream))

    _, caches = gru_sequence(xs, params)
    grads, dxs = gru_sequence_backward(upstream, caches, params)
    assert dxs.shape == xs.shape
    assert grad_check(loss, params, grads, tolerance=1e-4).passed

def test_conv_is_cross_correlation():
    x = np.arange(16.0).reshape(1, 1, 4, 4)
    kernel = np.zeros((1, 1, 3, 3))
    kernel[0, 0, 0, 0] = 1.0
    out = conv2d(x, kernel)
    # Top-left tap reads the pixel up-left of each output position
    np.testing.assert_array_equal(out[0, 0, 1:, 1:], x[0, 0, :-1, :-1])
    np.testing.assert_array_equal(out[0, 0, 0, :], 0.0)

def test_conv_zero_padding_counts_neighbours():
    out = conv2d(np.ones((1, 1, 3, 3)), np.ones((1, 1, 3, 3)))
    np.testing.assert_array_equal(out[0, 0], [[4, 6, 4], [6, 9, 6], [4, 6, 4]])

def test_conv_stride_two_halves_mnist():
    x = np.zeros((2, 1, 28, 28))
    assert conv2d(x, np.zeros((8, 1, 3, 3)), stride=2).shape == (2, 8, 14, 14)
    assert conv2d(np.zeros((2, 8, 14, 14)), np.zeros((8, 8, 3, 3)), stride=2).shape == (2, 8, 7, 7)

def test_conv_backward_matches_finite_differences(rng):
    x = rng.standard_normal((1, 2, 5, 5))
    params = {"k": rng.standard_normal((2, 2, 3, 3)), "b": rng.standard_normal(2)}
    upstream = rng.standard_normal(conv2d(x, params["k"], 2).shape)
    dx, dk, db = conv2d_backward(upstream, x, params["k"], 2)
    report = grad_check(lambda p: float(np.sum(conv2d(x, p["k"], 2, None, p["b"]) * upstream)),
                        params, {"k": dk, "b": db}, tolerance=1e-6)
    assert report.passed
    inputs = {"x": x}
    assert grad_check(lambda p: float(np.sum(conv2d(p["x"], params["k"], 2) * upstream)),
                      inputs, {"x": dx}, tolerance=1e-6).passed

def test_upsample_backward_is_the_adjoint(rng):
    x = rng.standard_normal((1, 2, 3, 3))
    g = rng.standard_normal((1, 2, 6, 6))
    assert np.sum(upsample2d(x) * g) == pytest.approx(np.sum(x * upsample2d_backward(g)))

def test_losses():
    loss, grad = bce_with_logits(np.array([0.0, 0.0]), np.array([1.0, 0.0]))
    assert loss == pytest.approx(np.log(2.0))
    np.testing.assert_allclose(grad, [-0.25, 0.25])
    big, _ = bce_with_logits(np.array([800.0]), np.array([0.0]))
    assert big == pytest.approx(800.0)
    loss, grad = mse_loss(np.array([1.0, 3.0]), np.array([0.0, 0.0]))
    assert loss == pytest.approx(5.0)
    np.testing.assert_allclose(grad, [1.0, 3.0])

def test_sigmoid_is_stable():
    with np.errstate(over="raise"):
        np.testing.assert_allclose(sigmoid(np.array([-1000.0, 0.0, 1000.0])), [0.0, 0.5, 1.0])
    assert sigmoid(np.asarray(0.0)) == 0.5

def test_adam_zero_gradient_is_a_fixed_point(rng):
    params = {"w": rng.standard_normal(5)}
    state = adam_init(params, 1e-3)
    updated, state = adam_update(params, {"w": np.zeros(5)}, state)
    np.testing.assert_array_equal(updated["w"], params["w"])
    assert state.step == 1

def test_adam_first_step_moves_by_learning_rate():
    params = {"w": np.array([1.0, 1.0])}
    updated, _ = adam_update(params, {"w": np.array([0.5, -2.0])}, adam_init(params, 0.1))
    np.testing.assert_allclose(updated["w"], [0.9, 1.1], rtol=1e-6)

def test_adam_rejects_non_finite_gradients():
    params = {"w": np.ones(2)}
    state = adam_init(params, 0.1)
    with pytest.raises(DivergenceError):
        adam_update(params, {"w": np.array([np.nan, 0.0])}, state)
    assert state.step == 0

def test_frozen_params_refuse_updates(rng):
    source = {"w": rng.standard_normal(3)}
    frozen = FrozenParams(source)
    with pytest.raises(ImmutabilityError):
        frozen["w"] = np.zeros(3)
    with pytest.raises(ImmutabilityError):
        adam_update(frozen, {"w": np.ones(3)}, adam_init(source, 0.1))
    with pytest.raises(ValueError):
        frozen["w"][0] = 1.0
    source["w"][0] = 42.0
    assert frozen["w"][0] != 42.0

def test_grad_check_catches_a_wrong_gradient(rng):
    params = {"w": rng.standard_normal(4)}
    report = grad_check(lambda p: float(np.sum(p["w"] ** 2)), params, {"w": 2 * 2 * params["w"]})
    assert not report.passed
    assert report.max_rel_error == pytest.approx(1 / 3, rel=1e-4)

def test_precision_and_finite_debugging():
    nn_core.set_precision("float32")
    assert nn_core.as_tensor([1, 2]).dtype == np.float32
    nn_core.set_precision("float64", debug_finite=True)
    with pytest.raises(DivergenceError):
        dense(np.array([np.inf, 1.0]), np.ones((1, 2)), np.zeros(1))
