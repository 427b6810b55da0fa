"""Forward/backward pairs for the few layer types the network uses.

Sequences are laid out as (batch, length, channels).  Every ``*_forward``
returns the output and a cache; the matching ``*_backward`` maps the
upstream gradient and cache to input and parameter gradients.
"""

from __future__ import annotations

import numpy as np


def dense_forward(x, W, b):
    return x @ W + b, x


def dense_backward(dy, x, W):
    return dy @ W.T, x.T @ dy, dy.sum(axis=0)


def relu_forward(x):
    return np.maximum(x, 0.0), x > 0


def relu_backward(dy, mask):
    # subgradient 0 at the kink
    return dy * mask


def tanh_forward(x):
    y = np.tanh(x)
    return y, y


def tanh_backward(dy, y):
    return dy * (1.0 - y * y)


def conv_output_length(length: int, kernel: int, stride: int) -> int:
    pad = kernel // 2
    return (length + 2 * pad - kernel) // stride + 1


def conv1d_forward(x, W, b, stride: int = 1):
    """Same-padded 1-D convolution; W has shape (kernel, c_in, c_out)."""
    batch, length, c_in = x.shape
    kernel, w_in, c_out = W.shape
    if w_in != c_in:
        raise ValueError(f"conv expects {w_in} input channels, got {c_in}")
    pad = kernel // 2
    xp = np.pad(x, ((0, 0), (pad, pad), (0, 0))) if pad else x
    l_out = conv_output_length(length, kernel, stride)
    idx = (np.arange(l_out) * stride)[:, None] + np.arange(kernel)[None, :]
    cols = xp[:, idx, :].reshape(batch, l_out, kernel * c_in)
    y = cols @ W.reshape(kernel * c_in, c_out) + b
    return y, (cols, idx, x.shape, pad)


def conv1d_backward(dy, cache, W):
    cols, idx, x_shape, pad = cache
    batch, length, c_in = x_shape
    kernel, _, c_out = W.shape
    Wr = W.reshape(kernel * c_in, c_out)
    dW = (cols.reshape(-1, kernel * c_in).T @ dy.reshape(-1, c_out)).reshape(W.shape)
    db = dy.sum(axis=(0, 1))
    dcols = (dy @ Wr.T).reshape(batch, idx.shape[0], kernel, c_in)
    dxp = np.zeros((batch, length + 2 * pad, c_in))
    for j in range(kernel):
        # positions idx[:, j] are distinct for a fixed tap, so plain += accumulates correctly
        dxp[:, idx[:, j], :] += dcols[:, :, j, :]
    dx = dxp[:, pad:pad + length, :] if pad else dxp
    return dx, dW, db
