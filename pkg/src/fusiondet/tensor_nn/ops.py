"""Forward and backward kernels on NCHW arrays.

Kernels compute in the dtype of their inputs: float32 for training,
float64 for gradient checks.
"""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import ShapeMismatch, SpatialMismatch


def conv_output_size(size: int, kernel: int, stride: int, pad: int) -> int:
    return (size + 2 * pad - kernel) // stride + 1


def _check4(x, name="input"):
    if x.ndim != 4:
        raise ShapeMismatch(f"{name} must be 4D (N, C, H, W), got shape {x.shape}")


def _windows(x, k, stride, pad):
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    return sliding_window_view(x, (k, k), axis=(2, 3))[:, :, ::stride, ::stride]


def _conv_dims(x, weights, bias, stride, pad):
    _check4(x)
    f, c, kh, kw = weights.shape
    if kh != kw:
        raise ShapeMismatch("only square kernels are supported")
    if x.shape[1] != c:
        raise ShapeMismatch(f"input has {x.shape[1]} channels, weights expect {c}")
    if bias is not None and bias.shape != (f,):
        raise ShapeMismatch(f"bias shape {bias.shape} does not match {f} filters")
    ho = conv_output_size(x.shape[2], kh, stride, pad)
    wo = conv_output_size(x.shape[3], kw, stride, pad)
    if ho < 1 or wo < 1:
        raise ShapeMismatch(f"input {x.shape[2:]} too small for kernel {kh} stride {stride} pad {pad}")
    return ho, wo


def im2col(x, k: int, stride: int, pad: int, ho: int, wo: int):
    """Patch matrix of shape ``(C * k * k, N * Ho * Wo)``."""
    n, c = x.shape[:2]
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x
    cols = np.empty((c, k, k, n, ho, wo), dtype=x.dtype)
    for i in range(k):
        for j in range(k):
            cols[:, i, j] = xp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride].transpose(1, 0, 2, 3)
    return cols.reshape(c * k * k, n * ho * wo)


def conv2d_forward(x, weights, bias, stride: int = 1, pad: int = 0, return_cols: bool = False):
    """Cross-correlation; ``weights`` is ``(F, C, k, k)``, ``bias`` is ``(F,)``."""
    ho, wo = _conv_dims(x, weights, bias, stride, pad)
    f, _, k, _ = weights.shape
    cols = im2col(x, k, stride, pad, ho, wo)
    out = weights.reshape(f, -1) @ cols
    out += bias[:, None]
    out = np.ascontiguousarray(out.reshape(f, x.shape[0], ho, wo).transpose(1, 0, 2, 3))
    return (out, cols) if return_cols else out


def conv2d_backward(grad_out, x, weights, stride: int = 1, pad: int = 0, cols=None, input_grad: bool = True):
    """Returns ``(grad_input, grad_weights, grad_bias)``; ``grad_input`` is None when not requested."""
    _check4(grad_out, "grad_out")
    f, c, k, _ = weights.shape
    n, _, ho, wo = grad_out.shape
    if grad_out.shape[1] != f or x.shape[0] != n or (ho, wo) != _conv_dims(x, weights, None, stride, pad):
        raise ShapeMismatch("upstream gradient does not match layer shape")
    if cols is None:
        cols = im2col(x, k, stride, pad, ho, wo)
    g2 = grad_out.transpose(1, 0, 2, 3).reshape(f, -1)
    grad_b = g2.sum(axis=1)
    grad_w = (g2 @ cols.T).reshape(weights.shape)
    if not input_grad:
        return None, grad_w, grad_b
    gcols = (weights.reshape(f, -1).T @ g2).reshape(c, k, k, n, ho, wo)
    hp, wp = x.shape[2] + 2 * pad, x.shape[3] + 2 * pad
    gxp = np.zeros((n, c, hp, wp), dtype=grad_out.dtype)
    for i in range(k):
        for j in range(k):
            gxp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += gcols[:, i, j].transpose(1, 0, 2, 3)
    grad_x = gxp[:, :, pad:pad + x.shape[2], pad:pad + x.shape[3]] if pad else gxp
    return np.ascontiguousarray(grad_x), grad_w, grad_b


def maxpool_forward(x, window: int = 2, stride: int = 2):
    """Returns ``(out, argmax)``; ties resolve to the first row-major position."""
    _check4(x)
    ho = (x.shape[2] - window) // stride + 1
    wo = (x.shape[3] - window) // stride + 1
    if ho < 1 or wo < 1:
        raise ShapeMismatch(f"input {x.shape[2:]} smaller than pooling window {window}")
    n, c = x.shape[:2]
    if stride == window:
        crop = x[:, :, :ho * window, :wo * window]
        flat = crop.reshape(n, c, ho, window, wo, window).transpose(0, 1, 2, 4, 3, 5)
        flat = flat.reshape(n, c, ho, wo, window * window)
    else:
        win = _windows(x, window, stride, 0)[:, :, :ho, :wo]
        flat = win.reshape(n, c, ho, wo, window * window)
    arg = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]
    return out, arg


def maxpool_backward(grad_out, argmax, input_shape, window: int = 2, stride: int = 2):
    if grad_out.shape != argmax.shape:
        raise ShapeMismatch("gradient and argmax shapes differ")
    n, c, ho, wo = grad_out.shape
    gx = np.zeros(input_shape, dtype=grad_out.dtype)
    if stride == window:
        hit = argmax[..., None] == np.arange(window * window)
        blocks = np.where(hit, grad_out[..., None], 0).astype(grad_out.dtype)
        blocks = blocks.reshape(n, c, ho, wo, window, window).transpose(0, 1, 2, 4, 3, 5)
        gx[:, :, :ho * window, :wo * window] = blocks.reshape(n, c, ho * window, wo * window)
        return gx
    for i in range(window):
        for j in range(window):
            hit = argmax == i * window + j
            gx[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += np.where(hit, grad_out, 0)
    return gx


def relu_forward(x):
    return np.maximum(x, 0)


def relu_backward(grad_out, x):
    return np.where(x > 0, grad_out, 0).astype(grad_out.dtype)


def concat_channels_forward(a, b):
    _check4(a, "a")
    _check4(b, "b")
    if a.shape[0] != b.shape[0] or a.shape[2:] != b.shape[2:]:
        raise SpatialMismatch(
            f"cannot concatenate {a.shape} and {b.shape}: batch and spatial dims must match"
        )
    return np.concatenate([a, b], axis=1)


def concat_channels_backward(grad_out, channels_a: int):
    return grad_out[:, :channels_a], grad_out[:, channels_a:]


def resize_nearest(x, height: int, width: int):
    """Nearest-neighbour spatial resampling, returns ``(out, row_idx, col_idx)``."""
    rows = np.minimum((np.arange(height) * x.shape[2]) // height, x.shape[2] - 1)
    cols = np.minimum((np.arange(width) * x.shape[3]) // width, x.shape[3] - 1)
    return x[:, :, rows][:, :, :, cols], rows, cols


def resize_nearest_backward(grad_out, rows, cols, input_shape):
    gx = np.zeros(input_shape, dtype=grad_out.dtype)
    g_rows = np.zeros((*input_shape[:2], input_shape[2], grad_out.shape[3]), dtype=grad_out.dtype)
    np.add.at(g_rows, (slice(None), slice(None), rows), grad_out)
    np.add.at(gx, (slice(None), slice(None), slice(None), cols), g_rows)
    return gx
