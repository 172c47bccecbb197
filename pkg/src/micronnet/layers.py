"""Layer forward and backward passes: convolution, max-pooling, fully
connected, ReLU, and softmax cross-entropy.

All functions are pure and operate on float32 numpy arrays in (n, c, h, w)
layout (vectors as (n, m)). Convolution uses floor output sizing; pooling
uses ceil sizing with windows truncated at the input edge, which is the
convention the default architecture's shape chain requires.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError


@dataclass(frozen=True)
class ConvParams:
    out_channels: int
    kernel: tuple[int, int]
    stride: int = 1
    pad: int = 0

    def __post_init__(self) -> None:
        kh, kw = self.kernel
        if self.out_channels < 1 or kh < 1 or kw < 1:
            raise ValueError(f"conv filter counts and kernel dims must be >= 1: {self}")
        if self.stride < 1 or self.pad < 0:
            raise ValueError(f"conv stride must be >= 1 and pad >= 0: {self}")


@dataclass(frozen=True)
class PoolParams:
    kernel: tuple[int, int]
    stride: int

    def __post_init__(self) -> None:
        kh, kw = self.kernel
        if kh < 1 or kw < 1 or self.stride < 1:
            raise ValueError(f"pool kernel dims and stride must be >= 1: {self}")


def conv_output_size(in_size: int, kernel: int, stride: int, pad: int) -> int:
    return (in_size + 2 * pad - kernel) // stride + 1


def pool_output_size(in_size: int, kernel: int, stride: int) -> int:
    # ceil rounding; the last window may be truncated at the edge
    return -(-(in_size - kernel) // stride) + 1


def _as_f32(x) -> np.ndarray:
    return np.ascontiguousarray(x, dtype=np.float32)


def _im2col(x: np.ndarray, kh: int, kw: int, stride: int, pad: int):
    n, c, h, w = x.shape
    oh = conv_output_size(h, kh, stride, pad)
    ow = conv_output_size(w, kw, stride, pad)
    if pad > 0:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    cols = np.empty((n, c, kh, kw, oh, ow), dtype=np.float32)
    for i in range(kh):
        for j in range(kw):
            cols[:, :, i, j] = x[:, :, i : i + stride * oh : stride, j : j + stride * ow : stride]
    return cols.transpose(0, 4, 5, 1, 2, 3).reshape(n * oh * ow, c * kh * kw), oh, ow


def _col2im(cols2d: np.ndarray, x_shape, kh: int, kw: int, stride: int, pad: int) -> np.ndarray:
    n, c, h, w = x_shape
    oh = conv_output_size(h, kh, stride, pad)
    ow = conv_output_size(w, kw, stride, pad)
    cols = cols2d.reshape(n, oh, ow, c, kh, kw).transpose(0, 3, 4, 5, 1, 2)
    buf = np.zeros((n, c, h + 2 * pad, w + 2 * pad), dtype=np.float32)
    for i in range(kh):
        for j in range(kw):
            buf[:, :, i : i + stride * oh : stride, j : j + stride * ow : stride] += cols[:, :, i, j]
    if pad == 0:
        return buf
    return np.ascontiguousarray(buf[:, :, pad : pad + h, pad : pad + w])


def _check_conv_shapes(x: np.ndarray, w: np.ndarray, b: np.ndarray, p: ConvParams) -> None:
    if x.ndim != 4 or w.ndim != 4:
        raise DimensionError(f"conv expects 4-D input/weights, got {x.shape} / {w.shape}")
    cout, cin, kh, kw = w.shape
    if (cout, (kh, kw)) != (p.out_channels, tuple(p.kernel)):
        raise DimensionError(f"weights {w.shape} do not match {p}")
    if x.shape[1] != cin:
        raise DimensionError(f"input has {x.shape[1]} channels, weights expect {cin}")
    if b.shape != (cout,):
        raise DimensionError(f"bias shape {b.shape} != ({cout},)")
    oh = conv_output_size(x.shape[2], kh, p.stride, p.pad)
    ow = conv_output_size(x.shape[3], kw, p.stride, p.pad)
    if oh < 1 or ow < 1:
        raise DimensionError(f"kernel {kh}x{kw} too large for input {x.shape[2]}x{x.shape[3]}")


def conv2d_forward(x, w, b, p: ConvParams) -> np.ndarray:
    """out[n,o,y,x] = b[o] + sum_{c,i,j} x[n,c,y*s+i-pad,x*s+j-pad] * w[o,c,i,j]."""
    x, w, b = _as_f32(x), _as_f32(w), _as_f32(b)
    _check_conv_shapes(x, w, b, p)
    n = x.shape[0]
    cout, _, kh, kw = w.shape
    cols, oh, ow = _im2col(x, kh, kw, p.stride, p.pad)
    out = cols @ w.reshape(cout, -1).T + b
    return np.ascontiguousarray(out.reshape(n, oh, ow, cout).transpose(0, 3, 1, 2))


def conv2d_backward(x, w, grad_out, p: ConvParams):
    """Gradients of conv2d_forward w.r.t. input, weights, and bias."""
    x, w, grad_out = _as_f32(x), _as_f32(w), _as_f32(grad_out)
    cout, _, kh, kw = w.shape
    _check_conv_shapes(x, w, np.zeros(cout, np.float32), p)
    n = x.shape[0]
    oh = conv_output_size(x.shape[2], kh, p.stride, p.pad)
    ow = conv_output_size(x.shape[3], kw, p.stride, p.pad)
    if grad_out.shape != (n, cout, oh, ow):
        raise DimensionError(f"grad_out shape {grad_out.shape} != {(n, cout, oh, ow)}")
    cols, _, _ = _im2col(x, kh, kw, p.stride, p.pad)
    g2 = grad_out.transpose(0, 2, 3, 1).reshape(-1, cout)
    grad_w = (g2.T @ cols).reshape(w.shape)
    grad_b = g2.sum(axis=0)
    grad_cols = g2 @ w.reshape(cout, -1)
    grad_x = _col2im(grad_cols, x.shape, kh, kw, p.stride, p.pad)
    return grad_x, grad_w, grad_b


def maxpool_forward(x, p: PoolParams):
    """Max over each window; returns (output, argmax plane indices).

    Windows that would extend past the input edge are truncated there.
    Ties break toward the smallest row-major index within the window.
    """
    x = _as_f32(x)
    if x.ndim != 4:
        raise DimensionError(f"pool expects 4-D input, got {x.shape}")
    n, c, h, w = x.shape
    kh, kw = p.kernel
    if kh > h or kw > w:
        raise DimensionError(f"pool kernel {kh}x{kw} larger than input {h}x{w}")
    oh = pool_output_size(h, kh, p.stride)
    ow = pool_output_size(w, kw, p.stride)
    if (oh - 1) * p.stride >= h or (ow - 1) * p.stride >= w:
        raise DimensionError("pool stride skips past the input edge")
    # Pad bottom/right with -inf so edge-truncated windows become full
    # k x k windows whose padded cells can never win the max; within a
    # window the real cells keep their row-major order, so the
    # first-maximum tie-break is unchanged.
    ph = (oh - 1) * p.stride + kh - h
    pw = (ow - 1) * p.stride + kw - w
    xp = x
    if ph > 0 or pw > 0:
        xp = np.pad(x, ((0, 0), (0, 0), (0, ph), (0, pw)), constant_values=-np.inf)
    win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
    flat = win[:, :, :: p.stride, :: p.stride].reshape(n, c, oh, ow, kh * kw)
    idx = flat.argmax(axis=4)
    out = np.take_along_axis(flat, idx[..., None], axis=4)[..., 0]
    oy = np.arange(oh, dtype=np.int64)[:, None] * p.stride
    ox = np.arange(ow, dtype=np.int64)[None, :] * p.stride
    argmax = (oy + idx // kw) * w + (ox + idx % kw)
    return np.ascontiguousarray(out), argmax


def maxpool_backward(grad_out, argmax, input_shape) -> np.ndarray:
    """Route each output gradient to its argmax source, accumulating overlaps."""
    grad_out = _as_f32(grad_out)
    n, c, h, w = input_shape
    if argmax.shape != grad_out.shape:
        raise DimensionError(f"argmax shape {argmax.shape} != grad_out shape {grad_out.shape}")
    flat_idx = argmax.reshape(n * c, -1)
    if flat_idx.size and (flat_idx.min() < 0 or flat_idx.max() >= h * w):
        raise ValueError("argmax indices outside the input plane")
    grad_in = np.zeros((n * c, h * w), dtype=np.float32)
    rows = np.repeat(np.arange(n * c), flat_idx.shape[1])
    np.add.at(grad_in, (rows, flat_idx.ravel()), grad_out.reshape(n * c, -1).ravel())
    return grad_in.reshape(n, c, h, w)


def fc_forward(x, w, b) -> np.ndarray:
    """Affine map: (n, m) @ (m, k) + (k,)."""
    x, w, b = _as_f32(x), _as_f32(w), _as_f32(b)
    if x.ndim != 2 or w.ndim != 2 or x.shape[1] != w.shape[0] or b.shape != (w.shape[1],):
        raise DimensionError(f"fc shapes inconsistent: x {x.shape}, w {w.shape}, b {b.shape}")
    return x @ w + b


def fc_backward(x, w, grad_out):
    x, w, grad_out = _as_f32(x), _as_f32(w), _as_f32(grad_out)
    if grad_out.shape != (x.shape[0], w.shape[1]):
        raise DimensionError(f"grad_out shape {grad_out.shape} != {(x.shape[0], w.shape[1])}")
    return grad_out @ w.T, x.T @ grad_out, grad_out.sum(axis=0)


def relu(x) -> np.ndarray:
    return np.maximum(_as_f32(x), np.float32(0))


def relu_backward(grad_out, x) -> np.ndarray:
    # gradient at exactly 0 is defined as 0
    return _as_f32(grad_out) * (_as_f32(x) > 0)


def softmax(logits) -> np.ndarray:
    """Row-stabilized softmax over (n, K) logits."""
    z = _as_f32(logits)
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def softmax_cross_entropy(logits, labels):
    """Per-sample cross-entropy of stabilized softmax.

    Returns (loss (n,), probabilities (n, K), grad_logits (n, K)) where the
    gradient is of the per-sample loss: probs - onehot(label).
    """
    z = _as_f32(logits)
    if z.ndim != 2 or z.shape[1] < 2:
        raise ValueError(f"logits must be (n, K) with K >= 2, got {z.shape}")
    labels = np.asarray(labels)
    if labels.ndim == 0:
        labels = labels.reshape(1)
    labels = labels.astype(np.int64)
    n, k = z.shape
    if labels.shape != (n,):
        raise ValueError(f"labels shape {labels.shape} != ({n},)")
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise ValueError(f"label out of range [0, {k})")
    zs = z - z.max(axis=1, keepdims=True)
    # the reduction runs in float64 so tiny loss differences stay resolvable;
    # probabilities and gradients remain float32 like the rest of the stack
    e = np.exp(zs.astype(np.float64))
    sums = e.sum(axis=1, keepdims=True)
    probs = (e / sums).astype(np.float32)
    rows = np.arange(n)
    # log-sum-exp form avoids log(0) for confident wrong predictions
    loss = np.log(sums[:, 0]) - zs[rows, labels].astype(np.float64)
    grad = probs.copy()
    grad[rows, labels] -= np.float32(1)
    return loss, probs, grad
