"""Differentiable operations on :class:`~depthseed.tensor.Tensor`.

All image tensors are laid out N x C x H x W. Convolution is
cross-correlation (kernels are not flipped).
"""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ContractError, DataError, DimensionError, ParameterError
from .tensor import Tensor, as_tensor, make_result


def conv_output_size(size: int, kernel: int, stride: int, pad: int) -> int:
    return (size + 2 * pad - kernel) // stride + 1


def _require_ndim(x: Tensor, ndim: int, what: str) -> None:
    if x.ndim != ndim:
        raise DimensionError(f"{what} expects a {ndim}-d tensor, got shape {x.shape}", axis="ndim")


def conv2d(x, weight, bias, stride: int = 1, pad: int = 0) -> Tensor:
    """2-D cross-correlation of an N x C x H x W batch with K x C x kh x kw kernels."""
    x, weight, bias = as_tensor(x), as_tensor(weight), as_tensor(bias)
    _require_ndim(x, 4, "conv2d input")
    _require_ndim(weight, 4, "conv2d weight")
    if stride <= 0 or pad < 0:
        raise ParameterError(f"conv2d needs stride > 0 and pad >= 0, got stride={stride}, pad={pad}")
    n, c, h, w = x.shape
    k, cw, kh, kw = weight.shape
    if cw != c:
        raise DimensionError(f"conv2d weight has {cw} input channels, input has {c}", axis="C")
    if bias.shape != (k,):
        raise DimensionError(f"conv2d bias must have shape ({k},), got {bias.shape}", axis="K")
    if kh > h + 2 * pad:
        raise DimensionError(f"kernel height {kh} exceeds padded input height {h + 2 * pad}", axis="H")
    if kw > w + 2 * pad:
        raise DimensionError(f"kernel width {kw} exceeds padded input width {w + 2 * pad}", axis="W")

    ho = conv_output_size(h, kh, stride, pad)
    wo = conv_output_size(w, kw, stride, pad)
    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x.data
    windows = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    cols = windows.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, c * kh * kw)
    w2 = weight.data.reshape(k, -1)
    out = cols @ w2.T
    out += bias.data
    out = out.reshape(n, ho, wo, k).transpose(0, 3, 1, 2)

    def backward(g):
        g2 = g.transpose(0, 2, 3, 1).reshape(-1, k)
        gw = (g2.T @ cols).reshape(weight.shape) if weight.requires_grad else None
        gb = g2.sum(axis=0) if bias.requires_grad else None
        gx = None
        if x.requires_grad:
            dcols = (g2 @ w2).reshape(n, ho, wo, c, kh, kw)
            gxp = np.zeros(xp.shape, dtype=g.dtype)
            h_end, w_end = stride * (ho - 1) + 1, stride * (wo - 1) + 1
            for i in range(kh):
                for j in range(kw):
                    gxp[:, :, i:i + h_end:stride, j:j + w_end:stride] += dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
            gx = gxp[:, :, pad:pad + h, pad:pad + w] if pad else gxp
        return gx, gw, gb

    return make_result(out, (x, weight, bias), backward, "conv2d")


def _pool(x: Tensor, win: tuple, stride: tuple, out_hw: tuple, op: str) -> Tensor:
    """Max over windows; the first row-major maximum wins ties."""
    n, c, h, w = x.shape
    (wh, ww), (sh, sw), (oh, ow) = win, stride, out_hw
    view = sliding_window_view(x.data, (wh, ww), axis=(2, 3))[:, :, ::sh, ::sw][:, :, :oh, :ow]
    flat = view.reshape(n, c, oh, ow, wh * ww)
    arg = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]

    def backward(g):
        rows = np.arange(oh)[:, None] * sh + arg // ww
        cols = np.arange(ow)[None, :] * sw + arg % ww
        base = (np.arange(n * c) * (h * w)).reshape(n, c, 1, 1)
        index = (base + rows * w + cols).ravel()
        gx = np.bincount(index, weights=g.ravel(), minlength=n * c * h * w)
        return (gx.reshape(x.shape).astype(g.dtype),)

    return make_result(out, (x,), backward, op)


def maxpool2d(x, win: int, stride: int) -> Tensor:
    x = as_tensor(x)
    _require_ndim(x, 4, "maxpool2d input")
    if win <= 0 or stride <= 0:
        raise ParameterError(f"maxpool2d needs win > 0 and stride > 0, got win={win}, stride={stride}")
    _, _, h, w = x.shape
    if win > h or win > w:
        raise ParameterError(f"pooling window {win} larger than input {h}x{w}")
    oh, ow = (h - win) // stride + 1, (w - win) // stride + 1
    return _pool(x, (win, win), (stride, stride), (oh, ow), "maxpool2d")


def spp_geometry(size: int, level: int) -> tuple:
    """(window, stride) for one pyramid level over a side of ``size`` pixels."""
    if level <= 0:
        raise ParameterError(f"pyramid level must be positive, got {level}")
    if level > size:
        raise ParameterError(f"pyramid level {level} exceeds input size {size}")
    return math.ceil(size / level), size // level


def spp(x, levels: Sequence[int]) -> Tensor:
    """Spatial pyramid max pooling.

    Level ``n`` pools with window ``ceil(a/n)`` and stride ``floor(a/n)`` and
    keeps the first ``n`` windows per axis, so each level contributes exactly
    ``n*n`` cells per channel whatever the input resolution. Levels are
    concatenated in the given order, channel-major within a level.
    """
    x = as_tensor(x)
    _require_ndim(x, 4, "spp input")
    if not levels:
        raise ParameterError("spp needs at least one level")
    n, c, h, w = x.shape
    parts = []
    for level in levels:
        wh, sh = spp_geometry(h, level)
        ww, sw = spp_geometry(w, level)
        parts.append(flatten(_pool(x, (wh, ww), (sh, sw), (level, level), "spp")))
    return concat(parts, axis=1) if len(parts) > 1 else parts[0]


def relu(x) -> Tensor:
    x = as_tensor(x)
    mask = x.data > 0
    out = x.data * mask

    def backward(g):
        return (g * mask,)

    return make_result(out, (x,), backward, "relu")


def linear(x, weight, bias) -> Tensor:
    """y = x W^T + b for an N x D batch and an M x D weight."""
    x, weight, bias = as_tensor(x), as_tensor(weight), as_tensor(bias)
    _require_ndim(x, 2, "linear input")
    _require_ndim(weight, 2, "linear weight")
    m, d = weight.shape
    if x.shape[1] != d:
        raise DimensionError(f"linear weight expects {d} input features, got {x.shape[1]}", axis="D")
    if bias.shape != (m,):
        raise DimensionError(f"linear bias must have shape ({m},), got {bias.shape}", axis="M")
    out = x.data @ weight.data.T + bias.data

    def backward(g):
        gx = g @ weight.data if x.requires_grad else None
        gw = g.T @ x.data if weight.requires_grad else None
        gb = g.sum(axis=0) if bias.requires_grad else None
        return gx, gw, gb

    return make_result(out, (x, weight, bias), backward, "linear")


def flatten(x) -> Tensor:
    x = as_tensor(x)
    shape = x.shape
    out = x.data.reshape(shape[0], -1)

    def backward(g):
        return (g.reshape(shape),)

    return make_result(out, (x,), backward, "flatten")


def concat(tensors: Sequence, axis: int = 1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ContractError("concat needs at least one tensor")
    out = np.concatenate([t.data for t in tensors], axis=axis)
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=axis))

    return make_result(out, tuple(tensors), backward, "concat")


def total(x) -> Tensor:
    """Sum of all elements as a scalar tensor."""
    x = as_tensor(x)
    out = np.asarray(x.data.sum(dtype=np.float64))

    def backward(g):
        return (np.broadcast_to(g, x.shape).astype(x.data.dtype),)

    return make_result(out, (x,), backward, "sum")


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits.astype(np.float64)
    z = z - z.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def softmax_cross_entropy(logits, labels) -> Tensor:
    """Mean negative log-likelihood of integer labels under softmax(logits).

    Computed in float64 with max subtraction.
    """
    logits = as_tensor(logits)
    _require_ndim(logits, 2, "softmax_cross_entropy logits")
    labels = np.asarray(labels)
    n, k = logits.shape
    if labels.shape != (n,):
        raise DimensionError(f"expected {n} labels, got shape {labels.shape}", axis="N")
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise DataError(f"labels must lie in [0, {k}), got range [{labels.min()}, {labels.max()}]")
    labels = labels.astype(np.int64)
    logp = log_softmax(logits.data)
    rows = np.arange(n)
    loss = -logp[rows, labels].mean()

    def backward(g):
        grad = np.exp(logp)
        grad[rows, labels] -= 1.0
        grad *= float(g) / n
        return (grad.astype(logits.data.dtype),)

    return make_result(np.asarray(loss), (logits,), backward, "softmax_cross_entropy")
