"""Convolution and LSTM primitives shared by forward and backward passes."""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from colontrack.errors import InvalidInputError

KERNEL_SIZE = 5


def sigmoid(z):
    # split by sign so large |z| never overflows exp
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def im2col(planes, k=KERNEL_SIZE):
    """Same-padding patches.

    ``planes`` is (..., C_in, H, W); returns (..., H * W, C_in * k * k) with
    patch entries ordered (channel, row, column) to match a (C, C_in, k, k) kernel.
    """
    planes = np.asarray(planes, dtype=float)
    if planes.ndim < 3:
        raise InvalidInputError("planes must be (..., C_in, H, W)")
    pad = k // 2
    widths = [(0, 0)] * (planes.ndim - 2) + [(pad, pad), (pad, pad)]
    padded = np.pad(planes, widths)
    win = sliding_window_view(padded, (k, k), axis=(-2, -1))
    # win: (..., C_in, H, W, k, k) -> (..., H, W, C_in, k, k)
    lead = planes.ndim - 3
    order = list(range(lead)) + [lead + 1, lead + 2, lead, lead + 3, lead + 4]
    win = np.transpose(win, order)
    h, w = planes.shape[-2:]
    return win.reshape(planes.shape[:-3] + (h * w, planes.shape[-3] * k * k))


def conv_forward(planes, weight, bias):
    """Same-padded 2-D convolution, bias and ReLU.

    ``planes`` is (C_in, H, W) or batched (B, C_in, H, W); ``weight`` is
    (C, C_in, 5, 5). Returns (C, H, W) or (B, C, H, W).
    """
    planes = np.asarray(planes, dtype=float)
    weight = np.asarray(weight, dtype=float)
    if weight.ndim != 4 or weight.shape[2:] != (KERNEL_SIZE, KERNEL_SIZE):
        raise InvalidInputError(f"kernel must be (C, C_in, 5, 5), got {weight.shape}")
    if planes.ndim not in (3, 4) or planes.shape[-3] != weight.shape[1]:
        raise InvalidInputError(
            f"input channels {planes.shape[-3:]} do not match kernel {weight.shape}"
        )
    h, w = planes.shape[-2:]
    patches = im2col(planes)
    z = patches @ weight.reshape(weight.shape[0], -1).T + bias
    out = np.maximum(z, 0.0)
    out = np.swapaxes(out, -1, -2)
    return out.reshape(out.shape[:-1] + (h, w))


def split_gates(z, hidden):
    """Split (.., 4H) pre-activations into input, forget, output, candidate."""
    return z[..., :hidden], z[..., hidden:2 * hidden], z[..., 2 * hidden:3 * hidden], z[..., 3 * hidden:]


def lstm_step(x, h_prev, c_prev, input_weight, recurrent_weight, bias):
    """One LSTM update. Gate columns are laid out [input, forget, output, candidate].

    Works on single vectors or on batches (leading axis).
    """
    hidden = recurrent_weight.shape[0]
    z = x @ input_weight + h_prev @ recurrent_weight + bias
    zi, zf, zo, zg = split_gates(z, hidden)
    i = sigmoid(zi)
    f = sigmoid(zf)
    o = sigmoid(zo)
    g = np.tanh(zg)
    c = f * c_prev + i * g
    h = o * np.tanh(c)
    return h, c
