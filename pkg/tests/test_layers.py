import numpy as np
import pytest

from kalchas.nn import layer_suite
from kalchas.nn.layers import (
    ShapeError,
    bilstm_backward,
    bilstm_forward,
    conv2d_backward,
    conv2d_forward,
    group_norm_backward,
    group_norm_forward,
    linear_backward,
    linear_forward,
    log_softmax_backward,
    log_softmax_forward,
    lstm_forward,
    maxpool2d_backward,
    maxpool2d_forward,
    relu_backward,
    relu_forward,
)

TOLERANCE = 1e-4


# --- trivial forward examples ------------------------------------------


def test_conv2d_identity_kernel():
    x = np.arange(16, dtype=np.float64).reshape(1, 1, 4, 4)
    w = np.ones((1, 1, 1, 1))
    b = np.zeros(1)
    out, _ = conv2d_forward(x, w, b)
    np.testing.assert_array_equal(out, x)


def test_conv2d_sum_kernel():
    x = np.ones((1, 1, 3, 3))
    w = np.ones((1, 1, 3, 3))
    out, _ = conv2d_forward(x, w, np.array([0.5]))
    assert out.shape == (1, 1, 1, 1)
    assert out[0, 0, 0, 0] == pytest.approx(9.5)


def test_conv2d_padding_geometry():
    x = np.ones((2, 3, 8, 10))
    w = np.zeros((5, 3, 3, 3))
    out, _ = conv2d_forward(x, w, np.zeros(5), padding=(1, 1))
    assert out.shape == (2, 5, 8, 10)


def test_conv2d_channel_mismatch():
    with pytest.raises(ShapeError):
        conv2d_forward(np.ones((1, 2, 4, 4)), np.ones((1, 3, 3, 3)), np.zeros(1))


def test_conv2d_nontiling_stride():
    with pytest.raises(ShapeError):
        conv2d_forward(np.ones((1, 1, 5, 5)), np.ones((1, 1, 2, 2)), np.zeros(1),
                       stride=(2, 2))


def test_maxpool_simple():
    x = np.array([[1.0, 2.0], [3.0, 4.0]]).reshape(1, 1, 2, 2)
    out, _ = maxpool2d_forward(x, (2, 2))
    assert out[0, 0, 0, 0] == 4.0


def test_maxpool_tie_routes_to_first():
    x = np.full((1, 1, 2, 2), 7.0)
    out, cache = maxpool2d_forward(x, (2, 2))
    dx = maxpool2d_backward(np.ones_like(out), cache)
    # All four entries tie; the gradient goes only to the row-major first.
    np.testing.assert_array_equal(dx.ravel(), [1.0, 0.0, 0.0, 0.0])


def test_maxpool_bad_tiling():
    with pytest.raises(ShapeError):
        maxpool2d_forward(np.ones((1, 1, 3, 4)), (2, 2))


def test_group_norm_constant_input_maps_to_beta():
    x = np.full((2, 4, 3, 3), 5.0)
    gamma = np.ones(4)
    beta = np.arange(4, dtype=np.float64)
    out, _ = group_norm_forward(x, gamma, beta, groups=2)
    for c in range(4):
        np.testing.assert_allclose(out[:, c], beta[c], atol=1e-3)


def test_group_norm_normalizes_per_group():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(3, 8, 4, 5))
    out, _ = group_norm_forward(x, np.ones(8), np.zeros(8), groups=4)
    g = out.reshape(3, 4, -1)
    np.testing.assert_allclose(g.mean(axis=2), 0.0, atol=1e-10)
    np.testing.assert_allclose(g.var(axis=2), 1.0, atol=1e-4)


def test_group_norm_bad_groups():
    with pytest.raises(ShapeError):
        group_norm_forward(np.ones((1, 6, 2, 2)), np.ones(6), np.zeros(6), groups=4)


def test_group_norm_batch_independence():
    rng = np.random.default_rng(11)
    x = rng.normal(size=(4, 8, 6, 7))
    gamma = rng.normal(size=8)
    beta = rng.normal(size=8)
    full, _ = group_norm_forward(x, gamma, beta, groups=4)
    for n in range(4):
        single, _ = group_norm_forward(x[n:n + 1], gamma, beta, groups=4)
        np.testing.assert_allclose(single[0], full[n], atol=1e-6)


def test_relu_basic():
    x = np.array([-1.0, 0.0, 2.0])
    out, mask = relu_forward(x)
    np.testing.assert_array_equal(out, [0.0, 0.0, 2.0])
    np.testing.assert_array_equal(relu_backward(np.ones(3), mask), [0.0, 0.0, 1.0])


def test_lstm_zero_weights_zero_output():
    x = np.random.default_rng(1).normal(size=(5, 2, 3))
    h = 4
    out, _ = lstm_forward(
        x, np.zeros((4 * h, 3)), np.zeros((4 * h, h)), np.zeros(4 * h), np.zeros(4 * h)
    )
    np.testing.assert_array_equal(out, 0.0)


def test_lstm_scalar_hand_oracle():
    # T=1, N=1, D=1, H=1 with unit input weights and zero recurrences:
    # z = x for each gate; c = sigmoid(x) * tanh(x); h = sigmoid(x) * tanh(c).
    x_val = 0.7
    x = np.array([[[x_val]]])
    w_ih = np.ones((4, 1))
    w_hh = np.zeros((4, 1))
    out, _ = lstm_forward(x, w_ih, w_hh, np.zeros(4), np.zeros(4))
    sig = 1.0 / (1.0 + np.exp(-x_val))
    c = sig * np.tanh(x_val)
    expected = sig * np.tanh(c)
    assert out[0, 0, 0] == pytest.approx(expected, abs=1e-12)


def test_lstm_shape_error():
    with pytest.raises(ShapeError):
        lstm_forward(np.ones((2, 1, 3)), np.ones((8, 4)), np.ones((8, 2)),
                     np.zeros(8), np.zeros(8))


def make_bilstm_params(rng, d, h):
    return {
        f"{name}_{direction}": rng.normal(size=shape) * 0.4
        for direction in ("f", "b")
        for name, shape in (
            ("w_ih", (4 * h, d)),
            ("w_hh", (4 * h, h)),
            ("b_ih", (4 * h,)),
            ("b_hh", (4 * h,)),
        )
    }


def test_bilstm_reversal_symmetry():
    rng = np.random.default_rng(2)
    d, h = 3, 4
    params = make_bilstm_params(rng, d, h)
    swapped = {k[:-2] + ("_b" if k.endswith("_f") else "_f"): v for k, v in params.items()}
    x = rng.normal(size=(6, 2, d))
    out, _ = bilstm_forward(x, params)
    out_rev, _ = bilstm_forward(x[::-1].copy(), swapped)
    # Reversing time and swapping directions exchanges the two output halves.
    np.testing.assert_allclose(out_rev[::-1, :, h:], out[:, :, :h], atol=1e-12)
    np.testing.assert_allclose(out_rev[::-1, :, :h], out[:, :, h:], atol=1e-12)


def test_linear_identity():
    x = np.arange(6, dtype=np.float64).reshape(2, 1, 3)
    out, _ = linear_forward(x, np.eye(3), np.zeros(3))
    np.testing.assert_array_equal(out, x)


def test_linear_shape_error():
    with pytest.raises(ShapeError):
        linear_forward(np.ones((2, 1, 3)), np.ones((4, 5)), np.zeros(4))


def test_log_softmax_rows_normalize():
    rng = np.random.default_rng(3)
    x = rng.normal(size=(5, 7)) * 10
    out, _ = log_softmax_forward(x)
    np.testing.assert_allclose(np.exp(out).sum(axis=-1), 1.0, atol=1e-12)


def test_log_softmax_shift_invariant():
    x = np.array([[1.0, 2.0, 3.0]])
    a, _ = log_softmax_forward(x)
    b, _ = log_softmax_forward(x + 100.0)
    np.testing.assert_allclose(a, b, atol=1e-12)


# --- gradient property checks ------------------------------------------


@pytest.mark.parametrize("seed", range(20))
def test_layer_suite_seeded(seed):
    for layer, err in layer_suite(seed=seed).items():
        assert err <= TOLERANCE, f"{layer} rel error {err:.3e} at seed {seed}"


def test_bilstm_backward_matches_fd():
    rng = np.random.default_rng(23)
    d, h = 2, 3
    params = make_bilstm_params(rng, d, h)
    x = rng.normal(size=(4, 2, d))
    proj = rng.normal(size=(4, 2, 2 * h))

    def loss(x_arr, p):
        out, _ = bilstm_forward(x_arr, p)
        return float((out * proj).sum())

    out, cache = bilstm_forward(x, params)
    dx, grads = bilstm_backward(proj, cache)
    eps = 1e-6
    # Spot-check a handful of coordinates per array.
    rng2 = np.random.default_rng(0)
    for name, analytic in [("x", dx)] + list(grads.items()):
        arr = x if name == "x" else params[name]
        flat = arr.reshape(-1)
        a_flat = analytic.reshape(-1)
        for idx in rng2.choice(flat.size, size=min(5, flat.size), replace=False):
            orig = flat[idx]
            flat[idx] = orig + eps
            up = loss(x, params)
            flat[idx] = orig - eps
            down = loss(x, params)
            flat[idx] = orig
            num = (up - down) / (2 * eps)
            assert abs(a_flat[idx] - num) / max(1.0, abs(num)) < TOLERANCE


def test_conv2d_backward_matches_fd():
    rng = np.random.default_rng(4)
    x = rng.normal(size=(2, 2, 5, 6))
    w = rng.normal(size=(3, 2, 3, 3))
    b = rng.normal(size=3)
    proj = rng.normal(size=(2, 3, 5, 6))
    out, cache = conv2d_forward(x, w, b, padding=(1, 1))
    dx, dw, db = conv2d_backward(proj, cache)
    eps = 1e-6
    for arr, analytic in ((x, dx), (w, dw), (b, db)):
        flat = arr.reshape(-1)
        a_flat = analytic.reshape(-1)
        for idx in np.random.default_rng(1).choice(
            flat.size, size=min(5, flat.size), replace=False
        ):
            orig = flat[idx]
            flat[idx] = orig + eps
            up = float((conv2d_forward(x, w, b, padding=(1, 1))[0] * proj).sum())
            flat[idx] = orig - eps
            down = float((conv2d_forward(x, w, b, padding=(1, 1))[0] * proj).sum())
            flat[idx] = orig
            num = (up - down) / (2 * eps)
            assert abs(a_flat[idx] - num) / max(1.0, abs(num)) < TOLERANCE


def test_group_norm_backward_matches_fd():
    rng = np.random.default_rng(6)
    x = rng.normal(size=(2, 4, 3, 3))
    gamma = rng.normal(size=4)
    beta = rng.normal(size=4)
    proj = rng.normal(size=x.shape)
    _, cache = group_norm_forward(x, gamma, beta, groups=2)
    dx, dgamma, dbeta = group_norm_backward(proj, cache)
    eps = 1e-6
    for arr, analytic in ((x, dx), (gamma, dgamma), (beta, dbeta)):
        flat = arr.reshape(-1)
        a_flat = analytic.reshape(-1)
        for idx in np.random.default_rng(2).choice(flat.size, size=4, replace=False):
            orig = flat[idx]
            flat[idx] = orig + eps
            up = float((group_norm_forward(x, gamma, beta, 2)[0] * proj).sum())
            flat[idx] = orig - eps
            down = float((group_norm_forward(x, gamma, beta, 2)[0] * proj).sum())
            flat[idx] = orig
            num = (up - down) / (2 * eps)
            assert abs(a_flat[idx] - num) / max(1.0, abs(num)) < TOLERANCE


def test_log_softmax_backward_matches_fd():
    rng = np.random.default_rng(9)
    x = rng.normal(size=(3, 5))
    proj = rng.normal(size=(3, 5))
    out, cache = log_softmax_forward(x)
    dx = log_softmax_backward(proj, cache)
    eps = 1e-6
    for idx in range(x.size):
        flat = x.reshape(-1)
        orig = flat[idx]
        flat[idx] = orig + eps
        up = float((log_softmax_forward(x)[0] * proj).sum())
        flat[idx] = orig - eps
        down = float((log_softmax_forward(x)[0] * proj).sum())
        flat[idx] = orig
        num = (up - down) / (2 * eps)
        assert abs(dx.reshape(-1)[idx] - num) / max(1.0, abs(num)) < TOLERANCE
