"""Central finite-difference verification of the analytic backward passes."""

from __future__ import annotations

import numpy as np

from . import layers


class GradCheckError(RuntimeError):
    pass


def grad_check(func, arrays, h=1e-5):
    """Compare analytic gradients against central differences.

    func(*arrays) must return (scalar_loss, [grad_per_array]). Arrays must be
    float64 and O(1)-scaled. Returns the max of
    |analytic - numeric| / max(1, |numeric|) over every element.
    """
    loss, analytic = func(*arrays)
    if not np.isfinite(loss):
        raise GradCheckError("non-finite loss")
    worst = 0.0
    for arr, grad in zip(arrays, analytic):
        if not np.all(np.isfinite(grad)):
            raise GradCheckError("non-finite analytic gradient")
        flat = arr.ravel()
        gflat = grad.ravel()
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + h
            lp, _ = func(*arrays)
            flat[k] = orig - h
            lm, _ = func(*arrays)
            flat[k] = orig
            numeric = (lp - lm) / (2 * h)
            if not np.isfinite(numeric):
                raise GradCheckError("non-finite numeric gradient")
            err = abs(gflat[k] - numeric) / max(1.0, abs(numeric))
            worst = max(worst, err)
    return worst


def _weighted_loss(out, seed=0):
    """Project output to a scalar with fixed random weights so every output
    element influences the loss."""
    rng = np.random.default_rng(seed)
    w = rng.standard_normal(out.shape)
    return (out * w).sum(), w


def _check_conv(rng):
    x = rng.standard_normal((2, 3, 6, 7))
    w = rng.standard_normal((4, 3, 3, 3)) * 0.5
    b = rng.standard_normal(4) * 0.1

    def f(x, w, b):
        out, cache = layers.conv2d_forward(x, w, b, stride=(1, 1), padding=(1, 1))
        loss, pw = _weighted_loss(out)
        dx, dw, db = layers.conv2d_backward(pw, cache)
        return loss, [dx, dw, db]

    return grad_check(f, [x, w, b])


def _check_maxpool(rng):
    # Ties are measure-zero for continuous inputs; random values avoid the
    # nondifferentiable points.
    x = rng.standard_normal((2, 2, 4, 6))

    def f(x):
        out, cache = layers.maxpool2d_forward(x, (2, 2), (2, 1))
        loss, pw = _weighted_loss(out)
        return loss, [layers.maxpool2d_backward(pw, cache)]

    return grad_check(f, [x])


def _check_group_norm(rng):
    x = rng.standard_normal((2, 4, 3, 5))
    gamma = 1.0 + 0.1 * rng.standard_normal(4)
    beta = 0.1 * rng.standard_normal(4)

    def f(x, gamma, beta):
        out, cache = layers.group_norm_forward(x, gamma, beta, groups=2)
        loss, pw = _weighted_loss(out)
        dx, dg, db = layers.group_norm_backward(pw, cache)
        return loss, [dx, dg, db]

    return grad_check(f, [x, gamma, beta])


def _check_bilstm(rng):
    t, n, d, h = 4, 2, 3, 3
    x = rng.standard_normal((t, n, d))
    params = {}
    for suffix in ("f", "b"):
        params[f"w_ih_{suffix}"] = rng.standard_normal((4 * h, d)) * 0.4
        params[f"w_hh_{suffix}"] = rng.standard_normal((4 * h, h)) * 0.4
        params[f"b_ih_{suffix}"] = rng.standard_normal(4 * h) * 0.1
        params[f"b_hh_{suffix}"] = rng.standard_normal(4 * h) * 0.1
    names = sorted(params)

    def f(x, *weights):
        p = dict(zip(names, weights))
        out, cache = layers.bilstm_forward(x, p)
        loss, pw = _weighted_loss(out)
        dx, grads = layers.bilstm_backward(pw, cache)
        return loss, [dx] + [grads[k] for k in names]

    return grad_check(f, [x] + [params[k] for k in names])


def _check_linear(rng):
    x = rng.standard_normal((3, 2, 4))
    w = rng.standard_normal((5, 4)) * 0.5
    b = rng.standard_normal(5) * 0.1

    def f(x, w, b):
        out, cache = layers.linear_forward(x, w, b)
        loss, pw = _weighted_loss(out)
        dx, dw, db = layers.linear_backward(pw, cache)
        return loss, [dx, dw, db]

    return grad_check(f, [x, w, b])


def _check_log_softmax(rng):
    x = rng.standard_normal((3, 2, 5))

    def f(x):
        out, cache = layers.log_softmax_forward(x)
        loss, pw = _weighted_loss(out)
        return loss, [layers.log_softmax_backward(pw, cache)]

    return grad_check(f, [x])


def _check_relu(rng):
    x = rng.standard_normal((2, 3, 4)) + 0.05  # keep clear of the kink at 0

    def f(x):
        out, mask = layers.relu_forward(x)
        loss, pw = _weighted_loss(out)
        return loss, [layers.relu_backward(pw, mask)]

    return grad_check(f, [x])


LAYER_CHECKS = {
    "conv2d": _check_conv,
    "maxpool2d": _check_maxpool,
    "group_norm": _check_group_norm,
    "bilstm": _check_bilstm,
    "linear": _check_linear,
    "log_softmax": _check_log_softmax,
    "relu": _check_relu,
}


def layer_suite(seed=0):
    """Run every layer's finite-difference check; returns {layer: max_error}."""
    rng = np.random.default_rng(seed)
    return {name: check(rng) for name, check in LAYER_CHECKS.items()}
