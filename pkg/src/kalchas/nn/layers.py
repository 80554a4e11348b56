"""Forward/backward implementations of the layers the CRNN needs.

Each layer exposes `<name>_forward(...) -> (out, cache)` and
`<name>_backward(dout, cache) -> gradients`. Backwards are exact analytic
gradients, composed in reverse order by the model; there is no graph tape.
All computation stays in the dtype of the inputs (float64 for verification,
float32 for training/inference).
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class ShapeError(ValueError):
    pass


# ---------------------------------------------------------------- conv2d


def conv2d_forward(x, weight, bias, stride=(1, 1), padding=(0, 0)):
    """Cross-correlation. x: (N,Cin,H,W), weight: (Cout,Cin,kh,kw)."""
    n, cin, h, w = x.shape
    cout, cin_w, kh, kw = weight.shape
    if cin != cin_w:
        raise ShapeError(f"input channels {cin} != weight channels {cin_w}")
    sh, sw = stride
    ph, pw = padding
    if (h + 2 * ph - kh) % sh or (w + 2 * pw - kw) % sw:
        raise ShapeError("kernel/stride does not tile the padded input")
    xp = np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    windows = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::sh, ::sw]
    out = np.einsum("nchwij,ocij->nohw", windows, weight, optimize=True)
    out += bias[None, :, None, None]
    cache = (windows, weight, x.shape, stride, padding)
    return out, cache


def conv2d_backward(dout, cache):
    windows, weight, x_shape, stride, padding = cache
    sh, sw = stride
    ph, pw = padding
    n, cin, h, w = x_shape
    cout, _, kh, kw = weight.shape
    dw = np.einsum("nchwij,nohw->ocij", windows, dout, optimize=True)
    db = dout.sum(axis=(0, 2, 3))
    hp, wp = h + 2 * ph, w + 2 * pw
    dxp = np.zeros((n, cin, hp, wp), dtype=dout.dtype)
    oh, ow = dout.shape[2], dout.shape[3]
    for i in range(kh):
        for j in range(kw):
            contrib = np.einsum("nohw,oc->nchw", dout, weight[:, :, i, j], optimize=True)
            dxp[:, :, i:i + sh * oh:sh, j:j + sw * ow:sw] += contrib
    dx = dxp[:, :, ph:hp - ph, pw:wp - pw]
    return dx, dw, db


# ------------------------------------------------------------- maxpool2d


def maxpool2d_forward(x, kernel, stride=None):
    """Windowed maxima; gradient routes to the first (row-major) max."""
    kh, kw = kernel
    sh, sw = stride or kernel
    n, c, h, w = x.shape
    if (h - kh) % sh or (w - kw) % sw:
        raise ShapeError("pool window/stride does not tile the input")
    windows = sliding_window_view(x, (kh, kw), axis=(2, 3))[:, :, ::sh, ::sw]
    flat = windows.reshape(*windows.shape[:4], kh * kw)
    arg = flat.argmax(axis=-1)  # first occurrence on ties
    out = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]
    cache = (arg, x.shape, kernel, (sh, sw))
    return out, cache


def maxpool2d_backward(dout, cache):
    arg, x_shape, (kh, kw), (sh, sw) = cache
    n, c, h, w = x_shape
    oh, ow = arg.shape[2], arg.shape[3]
    dx = np.zeros(x_shape, dtype=dout.dtype)
    ni, ci, hi, wi = np.indices((n, c, oh, ow))
    rows = hi * sh + arg // kw
    cols = wi * sw + arg % kw
    np.add.at(dx, (ni, ci, rows, cols), dout)
    return dx


# ------------------------------------------------------------- group_norm


def group_norm_forward(x, gamma, beta, groups, eps=1e-5):
    """Normalize over (C/G, H, W) per sample and group, then scale/shift."""
    n, c, h, w = x.shape
    if c % groups:
        raise ShapeError(f"groups {groups} does not divide channels {c}")
    xg = x.reshape(n, groups, -1)
    mean = xg.mean(axis=2, keepdims=True)
    var = xg.var(axis=2, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = ((xg - mean) * inv_std).reshape(n, c, h, w)
    out = gamma[None, :, None, None] * xhat + beta[None, :, None, None]
    cache = (xhat, inv_std, gamma, groups)
    return out, cache


def group_norm_backward(dout, cache):
    xhat, inv_std, gamma, groups = cache
    n, c, h, w = dout.shape
    dgamma = (dout * xhat).sum(axis=(0, 2, 3))
    dbeta = dout.sum(axis=(0, 2, 3))
    dxhat = (dout * gamma[None, :, None, None]).reshape(n, groups, -1)
    xh = xhat.reshape(n, groups, -1)
    m = xh.shape[2]
    # dx = inv_std/m * (m*dxhat - sum(dxhat) - xhat*sum(dxhat*xhat))
    dx = (inv_std / m) * (
        m * dxhat
        - dxhat.sum(axis=2, keepdims=True)
        - xh * (dxhat * xh).sum(axis=2, keepdims=True)
    )
    return dx.reshape(n, c, h, w), dgamma, dbeta


# ------------------------------------------------------------------ relu


def relu_forward(x):
    mask = x > 0
    return x * mask, mask


def relu_backward(dout, mask):
    return dout * mask


# ------------------------------------------------------------------ lstm


def _sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def lstm_forward(x, w_ih, w_hh, b_ih, b_hh):
    """One-directional LSTM over x: (T,N,D); gate order i,f,g,o.

    Weights: w_ih (4H,D), w_hh (4H,H), biases (4H,). Initial h, c are zero.
    Returns outputs (T,N,H) and a cache for backward-through-time.
    """
    t_len, n, d = x.shape
    h_dim = w_hh.shape[1]
    if w_ih.shape != (4 * h_dim, d):
        raise ShapeError(f"w_ih shape {w_ih.shape} != {(4 * h_dim, d)}")
    h = np.zeros((n, h_dim), dtype=x.dtype)
    c = np.zeros((n, h_dim), dtype=x.dtype)
    outputs = np.empty((t_len, n, h_dim), dtype=x.dtype)
    steps = []
    for t in range(t_len):
        z = x[t] @ w_ih.T + h @ w_hh.T + b_ih + b_hh
        i = _sigmoid(z[:, 0 * h_dim:1 * h_dim])
        f = _sigmoid(z[:, 1 * h_dim:2 * h_dim])
        g = np.tanh(z[:, 2 * h_dim:3 * h_dim])
        o = _sigmoid(z[:, 3 * h_dim:4 * h_dim])
        c_new = f * c + i * g
        tc = np.tanh(c_new)
        h_new = o * tc
        steps.append((h, c, i, f, g, o, tc))
        h, c = h_new, c_new
        outputs[t] = h
    cache = (x, w_ih, w_hh, steps)
    return outputs, cache


def lstm_backward(dout, cache):
    x, w_ih, w_hh, steps = cache
    t_len, n, d = x.shape
    h_dim = w_hh.shape[1]
    dx = np.zeros_like(x)
    dw_ih = np.zeros_like(w_ih)
    dw_hh = np.zeros_like(w_hh)
    db = np.zeros(4 * h_dim, dtype=x.dtype)
    dh_next = np.zeros((n, h_dim), dtype=x.dtype)
    dc_next = np.zeros((n, h_dim), dtype=x.dtype)
    for t in reversed(range(t_len)):
        h_prev, c_prev, i, f, g, o, tc = steps[t]
        dh = dout[t] + dh_next
        do = dh * tc
        dc = dh * o * (1.0 - tc * tc) + dc_next
        di = dc * g
        df = dc * c_prev
        dg = dc * i
        dz = np.concatenate(
            [
                di * i * (1.0 - i),
                df * f * (1.0 - f),
                dg * (1.0 - g * g),
                do * o * (1.0 - o),
            ],
            axis=1,
        )
        dx[t] = dz @ w_ih
        dw_ih += dz.T @ x[t]
        dw_hh += dz.T @ h_prev
        db += dz.sum(axis=0)
        dh_next = dz @ w_hh
        dc_next = dc * f
    return dx, dw_ih, dw_hh, db, db.copy()


def bilstm_forward(x, params):
    """Bidirectional LSTM. params: dict with fwd/bwd weight arrays
    (w_ih_f, w_hh_f, b_ih_f, b_hh_f, and _b suffixed for the reverse pass).
    Output: (T,N,2H), forward half first."""
    out_f, cache_f = lstm_forward(
        x, params["w_ih_f"], params["w_hh_f"], params["b_ih_f"], params["b_hh_f"]
    )
    out_b, cache_b = lstm_forward(
        x[::-1], params["w_ih_b"], params["w_hh_b"], params["b_ih_b"], params["b_hh_b"]
    )
    out = np.concatenate([out_f, out_b[::-1]], axis=2)
    return out, (cache_f, cache_b)


def bilstm_backward(dout, cache):
    cache_f, cache_b = cache
    h_dim = dout.shape[2] // 2
    dx_f, dw_ih_f, dw_hh_f, db_ih_f, db_hh_f = lstm_backward(dout[:, :, :h_dim], cache_f)
    dx_b, dw_ih_b, dw_hh_b, db_ih_b, db_hh_b = lstm_backward(
        dout[::-1, :, h_dim:], cache_b
    )
    dx = dx_f + dx_b[::-1]
    grads = {
        "w_ih_f": dw_ih_f, "w_hh_f": dw_hh_f, "b_ih_f": db_ih_f, "b_hh_f": db_hh_f,
        "w_ih_b": dw_ih_b, "w_hh_b": dw_hh_b, "b_ih_b": db_ih_b, "b_hh_b": db_hh_b,
    }
    return dx, grads


# ---------------------------------------------------------------- linear


def linear_forward(x, weight, bias):
    """Affine map over the last axis. weight: (C,D), bias: (C,)."""
    if x.shape[-1] != weight.shape[1]:
        raise ShapeError(f"input dim {x.shape[-1]} != weight dim {weight.shape[1]}")
    out = x @ weight.T + bias
    return out, (x, weight)


def linear_backward(dout, cache):
    x, weight = cache
    dx = dout @ weight
    dw = np.tensordot(dout, x, axes=(range(dout.ndim - 1), range(x.ndim - 1)))
    db = dout.reshape(-1, dout.shape[-1]).sum(axis=0)
    return dx, dw, db


# ------------------------------------------------------------ log_softmax


def log_softmax_forward(x):
    """x - logsumexp(x) along the last axis, max-subtracted for stability."""
    m = x.max(axis=-1, keepdims=True)
    shifted = x - m
    lse = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    out = shifted - lse
    return out, out


def log_softmax_backward(dout, cache):
    out = cache
    return dout - np.exp(out) * dout.sum(axis=-1, keepdims=True)
