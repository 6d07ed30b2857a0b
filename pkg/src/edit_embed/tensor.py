"""Dense 1D layers with hand-written reverse-mode gradients.

Activations are (batch, channels, width) arrays. A 2D (channels, width)
input is accepted everywhere and returned without the batch axis.
Forward functions return ``(output, cache)``; the matching ``*_backward``
takes the upstream gradient and that cache.
"""

from __future__ import annotations

import numpy as np

KERNEL_SIZE = 3


def _batched(x):
    x = np.asarray(x)
    if x.ndim == 2:
        return x[None], True
    if x.ndim != 3:
        raise ValueError(f"expected (C, W) or (B, C, W), got shape {x.shape}")
    return x, False


def _unbatch(y, squeeze):
    return y[0] if squeeze else y


# --- convolution ---------------------------------------------------------


def conv1d_forward(x, w, b):
    """Width-preserving convolution, kernel 3, one zero pad on each side."""
    x, squeeze = _batched(x)
    out_ch, in_ch, k = w.shape
    if k != KERNEL_SIZE:
        raise ValueError(f"kernel width must be {KERNEL_SIZE}, got {k}")
    if x.shape[1] != in_ch:
        raise ValueError(f"input has {x.shape[1]} channels, kernels expect {in_ch}")
    if x.shape[2] < 1:
        raise ValueError("input width must be >= 1")
    B, width = x.shape[0], x.shape[2]
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1)))
    # cols[b, t, i, kappa] = x[b, i, t + kappa - 1], flattened to (B*W, C*k) for one matmul.
    cols = np.stack([xp[:, :, j : j + width] for j in range(k)], axis=-1).transpose(0, 2, 1, 3)
    cols = cols.reshape(B * width, in_ch * k)
    out = (cols @ w.reshape(out_ch, -1).T).reshape(B, width, out_ch).transpose(0, 2, 1) + b[None, :, None]
    return _unbatch(out, squeeze), (cols, w, B, width, squeeze)


def conv1d_backward(dout, cache):
    """Returns (dx, dw, db)."""
    cols, w, B, width, squeeze = cache
    dout, _ = _batched(dout)
    out_ch, in_ch, k = w.shape
    d2 = dout.transpose(0, 2, 1).reshape(B * width, out_ch)
    dw = (d2.T @ cols).reshape(w.shape)
    db = dout.sum(axis=(0, 2))
    dcols = (d2 @ w.reshape(out_ch, -1)).reshape(B, width, in_ch, k)
    dxp = np.zeros((B, in_ch, width + 2), dtype=dcols.dtype)
    for j in range(KERNEL_SIZE):
        dxp[:, :, j : j + width] += dcols[..., j].transpose(0, 2, 1)
    return _unbatch(dxp[:, :, 1:-1], squeeze), dw, db


# --- pooling -------------------------------------------------------------


def _check_pool(size, stride):
    if size != stride:
        raise ValueError("pool size and stride must be equal")
    if size < 2:
        raise ValueError(f"pool factor must be >= 2, got {size}")


def pooled_width(width: int, factor: int) -> int:
    return -(-width // factor)


def maxpool1d(x, size: int, stride: int | None = None):
    """Windowed max; a trailing partial window pools over what it has."""
    stride = size if stride is None else stride
    _check_pool(size, stride)
    x, squeeze = _batched(x)
    B, C, W = x.shape
    if W < 1:
        raise ValueError("input width must be >= 1")
    wo = pooled_width(W, size)
    padded = np.full((B, C, wo * size), -np.inf, dtype=np.result_type(x.dtype, np.float64))
    padded[:, :, :W] = x
    windows = padded.reshape(B, C, wo, size)
    arg = windows.argmax(axis=-1)  # first maximal index on ties
    out = np.take_along_axis(windows, arg[..., None], axis=-1)[..., 0].astype(x.dtype, copy=False)
    return _unbatch(out, squeeze), (arg, W, size, squeeze)


def maxpool1d_backward(dout, cache):
    arg, W, size, squeeze = cache
    dout, _ = _batched(dout)
    B, C, wo = dout.shape
    dx = np.zeros((B, C, wo, size), dtype=dout.dtype)
    np.put_along_axis(dx, arg[..., None], dout[..., None], axis=-1)
    return _unbatch(dx.reshape(B, C, wo * size)[:, :, :W], squeeze)


def _window_counts(W, size):
    wo = pooled_width(W, size)
    counts = np.full(wo, size, dtype=np.float64)
    counts[-1] = W - (wo - 1) * size
    return counts


def avgpool1d(x, size: int, stride: int | None = None):
    stride = size if stride is None else stride
    _check_pool(size, stride)
    x, squeeze = _batched(x)
    B, C, W = x.shape
    if W < 1:
        raise ValueError("input width must be >= 1")
    wo = pooled_width(W, size)
    padded = np.zeros((B, C, wo * size), dtype=np.result_type(x.dtype, np.float64))
    padded[:, :, :W] = x
    counts = _window_counts(W, size)
    out = padded.reshape(B, C, wo, size).sum(axis=-1) / counts
    return _unbatch(out, squeeze), (W, size, squeeze)


def avgpool1d_backward(dout, cache):
    W, size, squeeze = cache
    dout, _ = _batched(dout)
    counts = _window_counts(W, size)
    dx = np.repeat(dout / counts, size, axis=-1)[:, :, :W]
    return _unbatch(dx, squeeze)


# --- dense ---------------------------------------------------------------


def linear(x, W, b):
    """x @ W.T + b for x of shape (m,) or (B, m)."""
    x = np.asarray(x)
    if x.shape[-1] != W.shape[1]:
        raise ValueError(f"input dim {x.shape[-1]} != weight columns {W.shape[1]}")
    if b.shape != (W.shape[0],):
        raise ValueError(f"bias shape {b.shape} != ({W.shape[0]},)")
    return x @ W.T + b, (x, W)


def linear_backward(dout, cache):
    """Returns (dx, dW, db)."""
    x, W = cache
    x2 = np.atleast_2d(x)
    d2 = np.atleast_2d(dout)
    return dout @ W, d2.T @ x2, d2.sum(axis=0)


def relu(x):
    x = np.asarray(x)
    mask = x > 0
    return np.where(mask, x, 0.0), mask


def relu_backward(dout, mask):
    return np.where(mask, dout, 0.0)
