"""
Forward/backward kernels in float64.

Layout conventions:

* sequence tensors are ``(..., L, C)``: any number of leading axes, then
  time, then channels. A cross-data-type frame batch is ``(B, D, L, C)`` so
  every data-type row is just another leading axis and one kernel is shared
  across all of them.
* dense weights are ``(n_in, n_out)`` and the map is ``x @ W + b``.
"""

from __future__ import annotations

from typing import Optional, Tuple

import numpy as np


class NonFiniteError(FloatingPointError):
    pass


def check_finite(x: np.ndarray, where: str) -> np.ndarray:
    if not np.all(np.isfinite(x)):
        raise NonFiniteError(f"non-finite values entering {where}")
    return x


def same_padding(width: int) -> Tuple[int, int]:
    left = (width - 1) // 2
    return left, width - 1 - left


def _columns(x: np.ndarray, width: int) -> np.ndarray:
    """(..., L, C) -> (..., L, width*C) zero-padded sliding windows."""
    left, right = same_padding(width)
    pad = [(0, 0)] * (x.ndim - 2) + [(left, right), (0, 0)]
    xp = np.pad(x, pad)
    win = np.lib.stride_tricks.sliding_window_view(xp, width, axis=-2)  # (..., L, C, width)
    win = np.swapaxes(win, -1, -2)  # (..., L, width, C)
    return win.reshape(*x.shape[:-1], width * x.shape[-1])


def conv1d_forward(x: np.ndarray, weight: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """Stride-1 same-length convolution along the time axis.

    ``y[..., t, co] = bias[co] + sum_{j, ci} weight[j, ci, co] * xpad[..., t + j, ci]``
    with ``(width - 1) // 2`` zeros padded on the left and the rest on the right.
    Leading axes (batch, data-type rows) never mix.
    """
    width, cin, cout = weight.shape
    if x.shape[-1] != cin:
        raise ValueError(f"conv expects {cin} input channels, got {x.shape[-1]}")
    cols = _columns(x, width)
    return cols @ weight.reshape(width * cin, cout) + bias


def conv1d_backward(
    dy: np.ndarray, x: np.ndarray, weight: np.ndarray
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    width, cin, cout = weight.shape
    if dy.shape != x.shape[:-1] + (cout,):
        raise ValueError(f"upstream gradient shape {dy.shape} does not match output {x.shape[:-1] + (cout,)}")
    L = x.shape[-2]
    cols = _columns(x, width)
    flat_cols = cols.reshape(-1, width * cin)
    flat_dy = dy.reshape(-1, cout)
    dw = (flat_cols.T @ flat_dy).reshape(width, cin, cout)
    db = flat_dy.sum(axis=0)

    dcols = (flat_dy @ weight.reshape(width * cin, cout).T).reshape(*x.shape[:-1], width, cin)
    left, right = same_padding(width)
    dxp = np.zeros(x.shape[:-2] + (L + width - 1, cin))
    for j in range(width):
        dxp[..., j : j + L, :] += dcols[..., j, :]
    dx = dxp[..., left : left + L, :]
    return dx, dw, db


def maxpool1d_forward(x: np.ndarray, window: int) -> Tuple[np.ndarray, np.ndarray]:
    """Non-overlapping max over time windows; a short last window is allowed.

    Returns the pooled tensor and the argmax offset within each window
    (lowest index on ties).
    """
    L = x.shape[-2]
    n_out = -(-L // window)
    pad = n_out * window - L
    if pad:
        widths = [(0, 0)] * (x.ndim - 2) + [(0, pad), (0, 0)]
        x = np.pad(x, widths, constant_values=-np.inf)
    xw = x.reshape(*x.shape[:-2], n_out, window, x.shape[-1])
    arg = np.argmax(xw, axis=-2)
    out = np.take_along_axis(xw, arg[..., None, :], axis=-2)[..., 0, :]
    return out, arg


def maxpool1d_backward(dy: np.ndarray, arg: np.ndarray, window: int, length: int) -> np.ndarray:
    n_out = dy.shape[-2]
    dxw = np.zeros(dy.shape[:-2] + (n_out, window, dy.shape[-1]))
    np.put_along_axis(dxw, arg[..., None, :], dy[..., None, :], axis=-2)
    dx = dxw.reshape(*dy.shape[:-2], n_out * window, dy.shape[-1])
    return dx[..., :length, :]


def dense_forward(x: np.ndarray, weight: np.ndarray, bias: np.ndarray) -> np.ndarray:
    if x.shape[-1] != weight.shape[0]:
        raise ValueError(f"dense expects {weight.shape[0]} inputs, got {x.shape[-1]}")
    return x @ weight + bias


def dense_backward(dy: np.ndarray, x: np.ndarray, weight: np.ndarray):
    x2 = x.reshape(-1, x.shape[-1])
    dy2 = dy.reshape(-1, dy.shape[-1])
    return dy @ weight.T, x2.T @ dy2, dy2.sum(axis=0)


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def relu_backward(dy: np.ndarray, x: np.ndarray) -> np.ndarray:
    return dy * (x > 0)


def dropout(
    x: np.ndarray, keep_prob: float, rng: Optional[np.random.Generator], training: bool
) -> Tuple[np.ndarray, Optional[np.ndarray]]:
    """Inverted dropout. Outside training (or keep_prob == 1) it is the identity
    and draws nothing from ``rng``."""
    if not 0.0 < keep_prob <= 1.0:
        raise ValueError("keep_prob must be in (0, 1]")
    if not training or keep_prob == 1.0:
        return x, None
    mask = (rng.random(x.shape) < keep_prob) / keep_prob
    return x * mask, mask


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_cross_entropy(logits: np.ndarray, labels) -> Tuple[float, np.ndarray]:
    """Mean negative log-likelihood over the batch and its gradient.

    Accepts a single logit vector with an integer label, or ``(B, K)``
    logits with ``B`` labels.
    """
    single = logits.ndim == 1
    z = np.atleast_2d(logits)
    y = np.atleast_1d(np.asarray(labels))
    k = z.shape[-1]
    if y.shape[0] != z.shape[0] or np.any((y < 0) | (y >= k)):
        raise ValueError(f"labels must be integers in [0, {k})")
    shifted = z - z.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(shifted).sum(axis=1))
    logp = shifted[np.arange(z.shape[0]), y] - logsum
    loss = float(-logp.mean())
    grad = np.exp(shifted - logsum[:, None])
    grad[np.arange(z.shape[0]), y] -= 1.0
    grad /= z.shape[0]
    return loss, grad[0] if single else grad
