"""Differentiable operations on :class:`~crossres.tensor.core.Tensor`.

Feature maps use the ``C x H x W`` layout throughout. Every function is pure:
it never mutates its inputs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .core import ShapeError, Tensor, as_tensor, record


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# -- elementwise -------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return record(a.data + b.data, (a, b),
                  lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return record(a.data - b.data, (a, b),
                  lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data
    return record(ad * bd, (a, b),
                  lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)))


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return record(np.where(mask, x.data, 0).astype(x.dtype), (x,), lambda g: (g * mask,))


def sigmoid(x: Tensor) -> Tensor:
    # split by sign so large |x| never overflows exp
    d = x.data
    e = np.exp(-np.abs(d))
    y = np.where(d >= 0, 1 / (1 + e), e / (1 + e)).astype(x.dtype)
    return record(y, (x,), lambda g: (g * y * (1 - y),))


def sum_all(x: Tensor) -> Tensor:
    shape = x.shape
    return record(np.asarray(x.data.sum(), dtype=x.dtype), (x,),
                  lambda g: (np.broadcast_to(g, shape).astype(g.dtype),))


def sum_axis(x: Tensor, axis: int) -> Tensor:
    """Sum along ``axis``, keeping it as a length-1 dimension."""
    shape = x.shape
    return record(x.data.sum(axis=axis, keepdims=True), (x,),
                  lambda g: (np.broadcast_to(g, shape).copy(),))


def mean(x: Tensor) -> Tensor:
    n = x.size
    shape = x.shape
    return record(np.asarray(x.data.mean(), dtype=x.dtype), (x,),
                  lambda g: (np.full(shape, g / n, dtype=g.dtype),))


def l1_loss(pred: Tensor, target) -> Tensor:
    """Mean absolute error; the subgradient at zero difference is 0."""
    target = as_tensor(target)
    diff = pred.data - target.data
    n = diff.size
    sign = np.sign(diff)
    return record(np.asarray(np.abs(diff).mean(), dtype=pred.dtype), (pred, target),
                  lambda g: (g * sign / n, -g * sign / n))


# -- shape manipulation -------------------------------------------------------

def reshape(x: Tensor, shape) -> Tensor:
    old = x.shape
    return record(x.data.reshape(shape), (x,), lambda g: (g.reshape(old),))


def transpose(x: Tensor, axes) -> Tensor:
    inv = np.argsort(axes)
    return record(np.ascontiguousarray(x.data.transpose(axes)), (x,),
                  lambda g: (g.transpose(inv),))


def getitem(x: Tensor, index) -> Tensor:
    shape, dtype = x.shape, x.dtype

    def backward(g):
        out = np.zeros(shape, dtype=g.dtype)
        out[index] = g
        return (out,)

    return record(np.array(x.data[index]), (x,), backward)


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=axis))

    return record(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), backward)


def take_rows(x: Tensor, index) -> Tensor:
    """Select rows of a 2-d tensor; repeated indices accumulate gradient."""
    index = np.asarray(index, dtype=np.int64)
    shape = x.shape

    def backward(g):
        out = np.zeros(shape, dtype=g.dtype)
        np.add.at(out, index, g)
        return (out,)

    return record(x.data[index], (x,), backward)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    ad, bd = a.data, b.data
    return record(ad @ bd, (a, b), lambda g: (g @ bd.T, ad.T @ g))


# -- padding -----------------------------------------------------------------

_NP_PAD_MODES = {"zeros": "constant", "replicate": "edge", "reflect": "reflect",
                 "symmetric": "symmetric"}


def _pad_index(n: int, p: int, mode: str) -> np.ndarray:
    """Source index for every position of an axis padded by ``p`` on both sides."""
    return np.pad(np.arange(n), p, mode=_NP_PAD_MODES[mode])


def pad(x: Tensor, p: int, mode: str = "zeros") -> Tensor:
    """Pad the two trailing (spatial) axes by ``p`` on every side."""
    if p < 0:
        raise ValueError("padding must be non-negative")
    if p == 0:
        return x
    if mode not in _NP_PAD_MODES:
        raise ValueError(f"unknown padding mode {mode!r}")
    h, w = x.shape[-2:]
    lead = ((0, 0),) * (x.ndim - 2)
    if mode == "zeros":
        out = np.pad(x.data, lead + ((p, p), (p, p)))
        return record(out, (x,), lambda g: (g[..., p:p + h, p:p + w],))
    if mode == "reflect" and (p >= h or p >= w):
        raise ShapeError(f"reflect padding {p} needs spatial dims > {p}, got {h}x{w}",
                         axis="height" if p >= h else "width")
    ih, iw = _pad_index(h, p, mode), _pad_index(w, p, mode)
    out = x.data[..., ih, :][..., iw]

    def backward(g):
        gh = np.zeros(g.shape[:-2] + (h, g.shape[-1]), dtype=g.dtype)
        np.add.at(gh, (..., ih, slice(None)), g)
        gw = np.zeros(g.shape[:-2] + (h, w), dtype=g.dtype)
        np.add.at(gw, (..., iw), gh)
        return (gw,)

    return record(out, (x,), backward)


# -- convolution ---------------------------------------------------------------

@dataclass
class ConvParams:
    """Weights ``[C_out, C_in, k, k]``, bias ``[C_out]``, stride and zero padding."""

    weight: Tensor
    bias: Tensor | None = None
    stride: int = 1
    padding: int = 1
    padding_mode: str = "zeros"

    @property
    def out_channels(self) -> int:
        return self.weight.shape[0]

    @property
    def in_channels(self) -> int:
        return self.weight.shape[1]

    @property
    def kernel_size(self) -> int:
        return self.weight.shape[2]


def _im2col(xp: np.ndarray, k: int, stride: int) -> np.ndarray:
    c = xp.shape[0]
    win = sliding_window_view(xp, (k, k), axis=(1, 2))[:, ::stride, ::stride]
    ho, wo = win.shape[1:3]
    # (C, k, k, Ho, Wo) so rows follow the weight layout [C_in, k, k]
    return np.ascontiguousarray(win.transpose(0, 3, 4, 1, 2)).reshape(c * k * k, ho * wo), ho, wo


def _col2im(cols: np.ndarray, c: int, k: int, stride: int, hp: int, wp: int,
            ho: int, wo: int) -> np.ndarray:
    out = np.zeros((c, hp, wp), dtype=cols.dtype)
    cols = cols.reshape(c, k, k, ho, wo)
    for i in range(k):
        for j in range(k):
            out[:, i:i + stride * ho:stride, j:j + stride * wo:stride] += cols[:, i, j]
    return out


def conv2d(x: Tensor, params: ConvParams) -> Tensor:
    """2-d cross-correlation of a ``C x H x W`` tensor."""
    w = params.weight
    if x.ndim != 3:
        raise ShapeError(f"conv2d expects C x H x W input, got shape {x.shape}", axis="rank")
    cout, cin, kh, kw = w.shape
    if kh != kw:
        raise ShapeError("only square kernels are supported", axis="kernel")
    if x.shape[0] != cin:
        raise ShapeError(
            f"conv2d input has {x.shape[0]} channels, weight expects {cin}", axis="channels")
    s, p, k = params.stride, params.padding, kh
    if s <= 0 or p < 0:
        raise ValueError(f"invalid stride {s} / padding {p}")
    h, wd = x.shape[1:]
    if h + 2 * p < k:
        raise ShapeError(f"height {h} too small for kernel {k} with padding {p}", axis="height")
    if wd + 2 * p < k:
        raise ShapeError(f"width {wd} too small for kernel {k} with padding {p}", axis="width")

    xp_t = pad(x, p, params.padding_mode)
    xp = xp_t.data
    cols, ho, wo = _im2col(xp, k, s)
    w2 = w.data.reshape(cout, -1)
    out = w2 @ cols
    b = params.bias
    if b is not None:
        out += b.data[:, None]
    out = out.reshape(cout, ho, wo)
    hp, wp = xp.shape[1:]

    def backward(g):
        g2 = g.reshape(cout, -1)
        cols_b, _, _ = _im2col(xp, k, s)
        dw = (g2 @ cols_b.T).reshape(w.shape)
        dx = _col2im(w2.T @ g2, cin, k, s, hp, wp, ho, wo)
        grads = [dx, dw]
        if b is not None:
            grads.append(g2.sum(axis=1))
        return grads

    inputs = (xp_t, w) if b is None else (xp_t, w, b)
    return record(out, inputs, backward)


def residual_block(x: Tensor, p1: ConvParams, p2: ConvParams) -> Tensor:
    """``x + conv2(relu(conv1(x)))`` with no normalization layers."""
    for p in (p1, p2):
        if p.stride != 1 or p.padding != p.kernel_size // 2 or p.out_channels != p.in_channels:
            raise ShapeError("residual block convolutions must preserve shape", axis="channels")
    return add(x, conv2d(relu(conv2d(x, p1)), p2))


def pixel_shuffle(x: Tensor, r: int) -> Tensor:
    """Sub-pixel rearrangement ``(C*r*r, H, W) -> (C, H*r, W*r)``."""
    c, h, w = x.shape
    if c % (r * r):
        raise ShapeError(f"{c} channels not divisible by {r * r}", axis="channels")
    co = c // (r * r)
    out = x.data.reshape(co, r, r, h, w).transpose(0, 3, 1, 4, 2).reshape(co, h * r, w * r)

    def backward(g):
        return (g.reshape(co, h, r, w, r).transpose(0, 2, 4, 1, 3).reshape(c, h, w),)

    return record(np.ascontiguousarray(out), (x,), backward)


def separable_linear(x: Tensor, mh: np.ndarray, mw: np.ndarray) -> Tensor:
    """Apply ``mh`` along rows and ``mw`` along columns: ``mh @ x[c] @ mw.T``.

    Used for fixed linear resamplers (bicubic, bilinear) inside the graph.
    """
    if x.shape[-2] != mh.shape[1] or x.shape[-1] != mw.shape[1]:
        raise ShapeError(
            f"resampling matrices {mh.shape}, {mw.shape} do not fit input {x.shape}",
            axis="height" if x.shape[-2] != mh.shape[1] else "width")
    mh = mh.astype(x.dtype, copy=False)
    mw = mw.astype(x.dtype, copy=False)
    out = np.matmul(np.matmul(mh, x.data), mw.T)
    return record(out, (x,), lambda g: (np.matmul(np.matmul(mh.T, g), mw),))


# -- sampling ------------------------------------------------------------------

def bilinear_sample(feat: Tensor, coords: Tensor) -> Tensor:
    """Bilinearly sample ``feat`` (C x H x W) at real (y, x) positions.

    ``coords`` has shape ``(2, *out)``; the result has shape ``(C, *out)``.
    Positions outside the frame are clamped to the border, so the gradient
    with respect to a clamped coordinate is zero.
    """
    if feat.ndim != 3:
        raise ShapeError(f"feat must be C x H x W, got {feat.shape}", axis="rank")
    if coords.ndim < 2 or coords.shape[0] != 2:
        raise ShapeError(f"coords must have shape (2, ...), got {coords.shape}", axis="coords")
    c, h, w = feat.shape
    out_shape = coords.shape[1:]
    y = coords.data[0].reshape(-1)
    x = coords.data[1].reshape(-1)
    yc = np.clip(y, 0, h - 1)
    xc = np.clip(x, 0, w - 1)
    y0 = np.minimum(np.floor(yc).astype(np.int64), h - 1)
    x0 = np.minimum(np.floor(xc).astype(np.int64), w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    wy = (yc - y0).astype(feat.dtype)
    wx = (xc - x0).astype(feat.dtype)
    f = feat.data.reshape(c, -1)
    i00, i01, i10, i11 = y0 * w + x0, y0 * w + x1, y1 * w + x0, y1 * w + x1
    v00, v01, v10, v11 = f[:, i00], f[:, i01], f[:, i10], f[:, i11]
    top = v00 + (v01 - v00) * wx
    bot = v10 + (v11 - v10) * wx
    out = top + (bot - top) * wy
    inside_y = ((y >= 0) & (y <= h - 1)).astype(feat.dtype)
    inside_x = ((x >= 0) & (x <= w - 1)).astype(feat.dtype)

    def backward(g):
        g = g.reshape(c, -1)
        a00 = (1 - wy) * (1 - wx)
        a01 = (1 - wy) * wx
        a10 = wy * (1 - wx)
        a11 = wy * wx
        # bincount per channel is much faster than np.add.at on 2-d targets
        n = h * w
        offs = (np.arange(c) * n)[:, None]
        flat = np.zeros(c * n, dtype=np.float64)
        for idx, a in ((i00, a00), (i01, a01), (i10, a10), (i11, a11)):
            flat += np.bincount((offs + idx[None, :]).ravel(), weights=(g * a).ravel(),
                                minlength=c * n)
        df = flat.reshape(c, n).astype(g.dtype)
        dy = ((bot - top) * g).sum(axis=0) * inside_y
        dx = (((v01 - v00) * (1 - wy) + (v11 - v10) * wy) * g).sum(axis=0) * inside_x
        dcoords = np.stack([dy, dx]).reshape((2,) + out_shape).astype(g.dtype)
        return (df.reshape(c, h, w), dcoords)

    return record(out.reshape((c,) + out_shape), (feat, coords), backward)


# -- patches -------------------------------------------------------------------

def default_patch_padding(k: int, stride: int) -> int:
    """Padding that makes the patch grid equal ``ceil(H / stride)`` for the
    (k, stride) pairs used by the texture network: (3,1)->1, (6,2)->2, (12,4)->4."""
    return (k - stride) // 2


def patch_grid(h: int, w: int, k: int, stride: int, padding: int) -> tuple[int, int]:
    return (h + 2 * padding - k) // stride + 1, (w + 2 * padding - k) // stride + 1


def unfold(x: Tensor, k: int, stride: int, padding: int | None = None,
           mode: str = "zeros") -> Tensor:
    """Extract sliding ``k x k`` windows as rows of a ``[N_patches, C*k*k]`` matrix.

    Rows follow raster-scan order of the window grid; columns follow the
    ``(channel, row, col)`` order of a convolution weight.
    """
    if k <= 0 or stride <= 0:
        raise ValueError(f"kernel size and stride must be positive, got k={k}, stride={stride}")
    if padding is None:
        padding = default_patch_padding(k, stride)
    c, h, w = x.shape
    gh, gw = patch_grid(h, w, k, stride, padding)
    if gh <= 0 or gw <= 0:
        raise ShapeError(f"input {h}x{w} too small for k={k}, padding={padding}", axis="height")
    xp = pad(x, padding, mode)
    cols, _, _ = _im2col(xp.data, k, stride)
    hp, wp = xp.shape[1:]

    def backward(g):
        return (_col2im(np.ascontiguousarray(g.T), c, k, stride, hp, wp, gh, gw),)

    return record(np.ascontiguousarray(cols.T), (xp,), backward)


def fold(patches: Tensor, k: int, stride: int, out_hw: tuple[int, int],
         padding: int | None = None, embed: ConvParams | None = None) -> Tensor:
    """Overlap-add patches back onto a ``C x H x W`` canvas.

    Each output pixel is divided by the number of windows covering it, which
    makes ``fold(unfold(x))`` reproduce ``x``. Window parts landing in the
    padding border are discarded. When ``embed`` is given, that convolution is
    applied to the folded result.
    """
    if k <= 0 or stride <= 0:
        raise ValueError(f"kernel size and stride must be positive, got k={k}, stride={stride}")
    if padding is None:
        padding = default_patch_padding(k, stride)
    h, w = out_hw
    gh, gw = patch_grid(h, w, k, stride, padding)
    n, d = patches.shape
    if n != gh * gw:
        raise ShapeError(f"{n} patches do not match the {gh}x{gw} grid of a {h}x{w} output",
                         axis="patches")
    if d % (k * k):
        raise ShapeError(f"patch length {d} is not a multiple of k*k={k * k}", axis="patches")
    c = d // (k * k)
    hp, wp = h + 2 * padding, w + 2 * padding
    ones = np.ones((k * k, gh * gw), dtype=patches.dtype)
    count = _col2im(ones, 1, k, stride, hp, wp, gh, gw)[:, padding:padding + h, padding:padding + w]
    inv = np.where(count > 0, 1.0 / np.maximum(count, 1), 0.0).astype(patches.dtype)
    canvas = _col2im(np.ascontiguousarray(patches.data.T), c, k, stride, hp, wp, gh, gw)
    out = canvas[:, padding:padding + h, padding:padding + w] * inv

    def backward(g):
        gp = np.zeros((c, hp, wp), dtype=g.dtype)
        gp[:, padding:padding + h, padding:padding + w] = g * inv
        cols, _, _ = _im2col(gp, k, stride)
        return (np.ascontiguousarray(cols.T),)

    folded = record(out, (patches,), backward)
    if embed is not None:
        folded = conv2d(folded, embed)
    return folded
