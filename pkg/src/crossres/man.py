"""Motion alignment and aggregation network.

Given a temporal window of LR inter frames, every frame is mapped to deep
features, aligned to the center frame by a modulated deformable 3x3
convolution whose offsets come from a three-level pyramid, and the aligned
stacks are merged by temporal then spatial attention.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .resample import bilinear_matrix
from .tensor import (
    ShapeError,
    Tensor,
    add,
    bilinear_sample,
    concat,
    conv2d,
    getitem,
    matmul,
    mul,
    relu,
    reshape,
    residual_block,
    separable_linear,
    sigmoid,
    sum_axis,
    transpose,
)
from .weights import ModelConfig, ParamSpec, Scope, conv_specs, resblock_specs

KERNEL = 3
TAPS = KERNEL * KERNEL


@dataclass
class TemporalWindow:
    """``T = 2M + 1`` LR frames (``C_in x h x w`` tensors) around ``center``."""

    frames: list[Tensor]
    center: int

    def __post_init__(self):
        if not self.frames:
            raise ValueError("temporal window is empty")
        if not 0 <= self.center < len(self.frames):
            raise IndexError(f"center {self.center} outside window of {len(self.frames)}")
        shapes = {f.shape for f in self.frames}
        if len(shapes) != 1:
            raise ShapeError(f"window frames differ in shape: {sorted(shapes)}", axis="frames")

    @classmethod
    def around(cls, frames: list[Tensor], m: int, radius: int = 1) -> "TemporalWindow":
        """Window of ``frames`` centered on index ``m``; edges replicate the
        nearest available frame."""
        n = len(frames)
        picked = [frames[min(max(i, 0), n - 1)] for i in range(m - radius, m + radius + 1)]
        return cls(picked, radius)

    @property
    def center_frame(self) -> Tensor:
        return self.frames[self.center]


@dataclass
class OffsetPyramid:
    """Per-level offsets ``(2*9) x h x w`` and masks ``9 x h x w``, finest first.

    Offset channel ``2k`` is the row displacement of tap ``k`` and ``2k + 1``
    its column displacement, in pixels of that level.
    """

    offsets: list[Tensor]
    masks: list[Tensor]

    @property
    def finest(self) -> tuple[Tensor, Tensor]:
        return self.offsets[0], self.masks[0]


def param_specs(cfg: ModelConfig, cin: int, prefix: str) -> list[ParamSpec]:
    c = cfg.channels
    specs = conv_specs(f"{prefix}.fe.conv_in", c, cin)
    for i in range(cfg.fe_blocks):
        specs += resblock_specs(f"{prefix}.fe.rb{i}", c)
    specs += conv_specs(f"{prefix}.msn.fuse", c, 2 * c)
    for lvl in range(cfg.msn_levels):
        if lvl:
            specs += conv_specs(f"{prefix}.msn.down{lvl}", c, c)
        for j in range(cfg.msn_blocks):
            specs += resblock_specs(f"{prefix}.msn.l{lvl}.rb{j}", c)
        specs += conv_specs(f"{prefix}.msn.head{lvl}", 3 * TAPS, c, init="zeros")
    specs += conv_specs(f"{prefix}.dcn", c, c)
    specs += conv_specs(f"{prefix}.ta.embed_self", c, c)
    specs += conv_specs(f"{prefix}.ta.embed_nbr", c, c)
    specs += conv_specs(f"{prefix}.ta.fuse", c, cfg.window * c)
    specs += conv_specs(f"{prefix}.sa.conv1", c, c)
    specs += conv_specs(f"{prefix}.sa.down", c, c)
    specs += conv_specs(f"{prefix}.sa.conv2", c, c)
    specs += conv_specs(f"{prefix}.sa.out", c, c)
    return specs


def _blocks(x: Tensor, w: Scope, name: str, n: int) -> Tensor:
    for i in range(n):
        x = residual_block(x, w.conv(f"{name}{i}.conv1"), w.conv(f"{name}{i}.conv2"))
    return x


def upsample2(x: Tensor, size: tuple[int, int]) -> Tensor:
    """Co-sited bilinear x2 onto a grid of ``size`` (coarse ``i`` sits on fine ``2i``)."""
    h, w = x.shape[1:]
    mh = bilinear_matrix(h, 2)[:size[0]]
    mw = bilinear_matrix(w, 2)[:size[1]]
    return separable_linear(x, mh, mw)


def extract_features(frame: Tensor, w: Scope) -> Tensor:
    """Input conv and residual blocks; shared by every frame of the window."""
    x = relu(conv2d(frame, w.conv("fe.conv_in")))
    return _blocks(x, w, "fe.rb", w.config.fe_blocks)


def compute_offsets(feat_cur: Tensor, feat_nbr: Tensor, w: Scope) -> OffsetPyramid:
    """Pyramid offset estimation, refined from the coarsest level down."""
    if feat_cur.shape != feat_nbr.shape:
        raise ShapeError(f"feature shapes differ: {feat_cur.shape} vs {feat_nbr.shape}",
                         axis="features")
    cfg = w.config
    g = relu(conv2d(concat([feat_cur, feat_nbr], axis=0), w.conv("msn.fuse")))
    levels = []
    for lvl in range(cfg.msn_levels):
        if lvl:
            g = relu(conv2d(g, w.conv(f"msn.down{lvl}", stride=2)))
        g = _blocks(g, w, f"msn.l{lvl}.rb", cfg.msn_blocks)
        levels.append(g)

    offsets: list[Tensor] = [None] * cfg.msn_levels
    masks: list[Tensor] = [None] * cfg.msn_levels
    coarser = None
    for lvl in reversed(range(cfg.msn_levels)):
        head = conv2d(levels[lvl], w.conv(f"msn.head{lvl}"))
        off = getitem(head, slice(0, 2 * TAPS))
        if coarser is not None:
            # a displacement of one coarse pixel spans two fine pixels
            off = add(off, mul(upsample2(coarser, off.shape[1:]), 2.0))
        offsets[lvl] = off
        masks[lvl] = sigmoid(getitem(head, slice(2 * TAPS, 3 * TAPS)))
        coarser = off
    return OffsetPyramid(offsets, masks)


def _base_grid(h: int, w: int, dtype) -> np.ndarray:
    ky, kx = np.divmod(np.arange(TAPS), KERNEL)
    ys = np.arange(h)[None, :, None] + (ky - KERNEL // 2)[:, None, None]
    xs = np.arange(w)[None, None, :] + (kx - KERNEL // 2)[:, None, None]
    return np.stack(np.broadcast_arrays(ys, xs)).astype(dtype)  # (2, 9, h, w)


def dcn_align(feat_nbr: Tensor, off: OffsetPyramid, w: Scope) -> Tensor:
    """Modulated deformable 3x3 convolution at the finest pyramid level.

    Taps falling outside the frame read the nearest border sample.
    """
    offsets, masks = off.finest
    c, h, wd = feat_nbr.shape
    if offsets.shape != (2 * TAPS, h, wd) or masks.shape != (TAPS, h, wd):
        raise ShapeError(f"offsets {offsets.shape} / masks {masks.shape} do not match "
                         f"features {feat_nbr.shape}", axis="offsets")
    params = w.conv("dcn")
    delta = transpose(reshape(offsets, (TAPS, 2, h, wd)), (1, 0, 2, 3))
    coords = add(_base_grid(h, wd, feat_nbr.dtype), delta)
    sampled = bilinear_sample(feat_nbr, coords)  # (C, 9, h, w)
    modulated = mul(sampled, reshape(masks, (1, TAPS, h, wd)))
    cols = reshape(modulated, (c * TAPS, h * wd))
    out = matmul(reshape(params.weight, (params.out_channels, c * TAPS)), cols)
    if params.bias is not None:
        out = add(out, reshape(params.bias, (params.out_channels, 1)))
    return reshape(out, (params.out_channels, h, wd))


def temporal_masks(aligned: list[Tensor], self_idx: int, w: Scope) -> list[Tensor | None]:
    """Sigmoid of the per-pixel embedded dot product; ``None`` for the self stack."""
    ref = conv2d(aligned[self_idx], w.conv("ta.embed_self"))
    out = []
    for i, a in enumerate(aligned):
        if i == self_idx:
            out.append(None)
            continue
        emb = conv2d(a, w.conv("ta.embed_nbr"))
        out.append(sigmoid(sum_axis(mul(ref, emb), 0)))
    return out


def spatial_attention(x: Tensor, w: Scope) -> Tensor:
    s1 = relu(conv2d(x, w.conv("sa.conv1")))
    s2 = relu(conv2d(s1, w.conv("sa.down", stride=2)))
    s2 = relu(conv2d(s2, w.conv("sa.conv2")))
    merged = add(s1, upsample2(s2, s1.shape[1:]))
    return sigmoid(conv2d(merged, w.conv("sa.out")))


def aggregate(aligned: list[Tensor], self_idx: int, w: Scope) -> Tensor:
    """Temporal attention on neighbor stacks, conv fusion, then spatial attention."""
    if len(aligned) != w.config.window:
        raise ValueError(f"expected {w.config.window} aligned stacks, got {len(aligned)}")
    masks = temporal_masks(aligned, self_idx, w)
    stacks = [a if m is None else mul(a, m) for a, m in zip(aligned, masks)]
    fused = conv2d(concat(stacks, axis=0), w.conv("ta.fuse"))
    return mul(fused, spatial_attention(fused, w))


def man_forward(win: TemporalWindow, w: Scope) -> Tensor:
    """Aggregated motion features ``C x h x w`` for the window's center frame."""
    feats = [extract_features(f, w) for f in win.frames]
    cur = feats[win.center]
    aligned = [dcn_align(f, compute_offsets(cur, f, w), w) for f in feats]
    return aggregate(aligned, win.center, w)


__all__ = [
    "OffsetPyramid", "TemporalWindow", "aggregate", "compute_offsets", "dcn_align",
    "extract_features", "man_forward", "param_specs", "spatial_attention", "temporal_masks",
    "upsample2",
]
