"""Minimal numpy layers with hand-written backward passes, plus Adam.

Activations use a channel-first batch layout ``(C, N, H, W)`` so that every
convolution is a single matrix product with no transposes.
"""

from __future__ import annotations

import numpy as np


def im2col(xp, k, stride, oh, ow):
    """Patches of a padded input ``(C, N, Hp, Wp)`` as ``(C*k*k, N*oh*ow)``."""
    c, n = xp.shape[:2]
    cols = np.empty((c, k, k, n, oh, ow), dtype=xp.dtype)
    for i in range(k):
        for j in range(k):
            cols[:, i, j] = xp[:, :, i:i + stride * oh:stride, j:j + stride * ow:stride]
    return cols.reshape(c * k * k, n * oh * ow)


def col2im(cols, shape, k, stride, oh, ow):
    """Adjoint of :func:`im2col`: scatter-add patches into a ``shape`` array."""
    c, n = shape[:2]
    cols = cols.reshape(c, k, k, n, oh, ow)
    out = np.zeros(shape, dtype=cols.dtype)
    for i in range(k):
        for j in range(k):
            out[:, :, i:i + stride * oh:stride, j:j + stride * ow:stride] += cols[:, i, j]
    return out


def conv_out_size(size, k, stride, pad):
    return (size + 2 * pad - k) // stride + 1


def conv2d_forward(x, w, b, stride, pad):
    """``x`` (Cin, N, H, W), ``w`` (Cout, Cin, k, k) -> (Cout, N, oh, ow)."""
    cout, _, k, _ = w.shape
    n, h, wd = x.shape[1:]
    oh, ow = conv_out_size(h, k, stride, pad), conv_out_size(wd, k, stride, pad)
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    cols = im2col(xp, k, stride, oh, ow)
    out = (w.reshape(cout, -1) @ cols).reshape(cout, n, oh, ow) + b[:, None, None, None]
    return out, (cols, x.shape, xp.shape)


def conv2d_backward(dout, w, cache, stride, pad):
    cols, x_shape, xp_shape = cache
    cout, _, k, _ = w.shape
    oh, ow = dout.shape[2:]
    d2 = dout.reshape(cout, -1)
    dw = (d2 @ cols.T).reshape(w.shape)
    db = d2.sum(axis=1)
    dxp = col2im(w.reshape(cout, -1).T @ d2, xp_shape, k, stride, oh, ow)
    h, wd = x_shape[2:]
    return dxp[:, :, pad:pad + h, pad:pad + wd], dw, db


def conv_transpose2d_forward(x, w, b, stride, pad, out_pad):
    """Adjoint of a strided convolution. ``x`` (Cin, N, h, w) and
    ``w`` (Cin, Cout, k, k); output side ``(h-1)*stride - 2*pad + k + out_pad``."""
    cin, cout, k, _ = w.shape
    n, h, wd = x.shape[1:]
    hp = (h - 1) * stride + k + out_pad
    wp = (wd - 1) * stride + k + out_pad
    x2 = x.reshape(cin, -1)
    full = col2im(w.reshape(cin, -1).T @ x2, (cout, n, hp, wp), k, stride, h, wd)
    out = full[:, :, pad:hp - pad, pad:wp - pad] + b[:, None, None, None]
    return out, (x2, (cout, n, hp, wp), h, wd)


def conv_transpose2d_backward(dout, w, cache, stride, pad):
    x2, full_shape, h, wd = cache
    cin, cout, k, _ = w.shape
    dfull = np.zeros(full_shape, dtype=dout.dtype)
    dfull[:, :, pad:full_shape[2] - pad, pad:full_shape[3] - pad] = dout
    cols = im2col(dfull, k, stride, h, wd)
    dx = (w.reshape(cin, -1) @ cols).reshape((cin,) + full_shape[1:2] + (h, wd))
    dw = (x2 @ cols.T).reshape(w.shape)
    db = dout.sum(axis=(1, 2, 3))
    return dx, dw, db


def relu(x):
    return np.maximum(x, 0)


def sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def softplus(x):
    return np.maximum(x, 0) + np.log1p(np.exp(-np.abs(x)))


def glorot_uniform(rng, shape, fan_in, fan_out, dtype):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


class Adam:
    def __init__(self, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = {}
        self.v = {}
        self.t = 0

    def step(self, params: dict, grads: dict) -> None:
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for name, g in grads.items():
            if name not in self.m:
                self.m[name] = np.zeros_like(g)
                self.v[name] = np.zeros_like(g)
            m, v = self.m[name], self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            params[name] -= (self.lr / bc1) * m / (np.sqrt(v / bc2) + self.eps)
