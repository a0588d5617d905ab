"""Texture compensation network.

Multiscale features of the decoded intra frame (values), its re-degraded
copy (keys) and the upsampled inter frame (queries) are compared patch by
patch at the coarsest scale. Each query patch picks its most similar key
patch by cosine similarity; the matching value patches at all three scales
are gathered and folded back into texture maps.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .resample import bilinear_matrix
from .tensor import (
    ShapeError,
    Tensor,
    conv2d,
    fold,
    record,
    relu,
    reshape,
    residual_block,
    separable_linear,
    take_rows,
    unfold,
)
from .weights import ModelConfig, ParamSpec, Scope, conv_specs, resblock_specs

NORM_EPS = 1e-12
# (kernel, stride) of the patch grids at scales 1/4, 1/2 and 1 of the HR frame;
# all three grids have (H/4) x (W/4) windows
PATCHES = ((3, 1), (6, 2), (12, 4))
PAD_MODE = "reflect"


@dataclass
class MultiScaleFeatures:
    full: Tensor  # C x H x W
    half: Tensor  # C x H/2 x W/2
    quarter: Tensor  # C x H/4 x W/4

    @property
    def scales(self) -> tuple[Tensor, Tensor, Tensor]:
        return self.quarter, self.half, self.full


@dataclass
class AffinityResult:
    """Best cosine similarity ``A`` and matching key index ``P`` per query patch."""

    A: Tensor  # (N,)
    P: np.ndarray  # (N,) int64
    grid: tuple[int, int]

    def __len__(self) -> int:
        return len(self.P)

    def as_map(self) -> Tensor:
        return reshape(self.A, (1,) + self.grid)


@dataclass
class TextureBundle:
    F: Tensor  # C x H/4 x W/4
    FL: Tensor  # C x H/2 x W/2
    FH: Tensor  # C x H x W
    A: Tensor  # 1 x H/4 x W/4
    AL: Tensor  # 1 x H/2 x W/2
    AH: Tensor  # 1 x H x W
    P: np.ndarray


def param_specs(cfg: ModelConfig, cin: int, prefix: str) -> list[ParamSpec]:
    c = cfg.channels
    specs = conv_specs(f"{prefix}.mfe.conv_in", c, cin)
    for i in range(cfg.mfe_blocks):
        specs += resblock_specs(f"{prefix}.mfe.rb{i}", c)
    specs += conv_specs(f"{prefix}.mfe.down1", c, c)
    specs += conv_specs(f"{prefix}.mfe.down2", c, c)
    specs += conv_specs(f"{prefix}.embed_l", c, c)
    specs += conv_specs(f"{prefix}.embed_h", c, c)
    return specs


def mfe(frame: Tensor, w: Scope) -> MultiScaleFeatures:
    """Shared multiscale extractor: full-resolution trunk plus two stride-2 convs."""
    _, h, wd = frame.shape
    if h % 4 or wd % 4:
        raise ShapeError(f"texture features need H, W divisible by 4, got {h}x{wd}",
                         axis="height" if h % 4 else "width")
    x = relu(conv2d(frame, w.conv("mfe.conv_in")))
    for i in range(w.config.mfe_blocks):
        x = residual_block(x, w.conv(f"mfe.rb{i}.conv1"), w.conv(f"mfe.rb{i}.conv2"))
    half = conv2d(x, w.conv("mfe.down1", stride=2))
    quarter = conv2d(half, w.conv("mfe.down2", stride=2))
    return MultiScaleFeatures(x, half, quarter)


def _normalize(rows: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    norm = np.sqrt(np.einsum("ij,ij->i", rows, rows))
    safe = norm > NORM_EPS
    unit = np.where(safe[:, None], rows / np.where(safe, norm, 1.0)[:, None], 0.0)
    return unit, norm


def _gathered_cosine(keys: Tensor, queries: Tensor) -> tuple[Tensor, np.ndarray]:
    """Differentiable ``A_j = cos(k_{P_j}, q_j)`` with ``P_j = argmax_i cos(k_i, q_j)``.

    Similarities are accumulated in float64. ``np.argmax`` returns the first
    maximum, so ties go to the lowest key index. Zero-norm patches have
    similarity 0 with everything.
    """
    k = keys.data.astype(np.float64)
    q = queries.data.astype(np.float64)
    kh, kn = _normalize(k)
    qh, qn = _normalize(q)
    sim = kh @ qh.T  # (N_keys, N_queries)
    P = np.argmax(sim, axis=0)
    cols = np.arange(q.shape[0])
    A = np.clip(sim[P, cols], -1.0, 1.0)
    dtype = queries.dtype

    def backward(g):
        g = g.astype(np.float64)
        kp = kh[P]
        with np.errstate(divide="ignore", invalid="ignore"):
            dq = np.where((qn > NORM_EPS)[:, None],
                          (kp - A[:, None] * qh) / qn[:, None], 0.0) * g[:, None]
            kpn = kn[P]
            dkp = np.where((kpn > NORM_EPS)[:, None],
                           (qh - A[:, None] * kp) / kpn[:, None], 0.0) * g[:, None]
        dk = np.zeros_like(k)
        np.add.at(dk, P, dkp)
        return dk.astype(keys.dtype), dq.astype(dtype)

    return record(A.astype(dtype), (keys, queries), backward), P


def build_affinity(K: Tensor, Q: Tensor) -> AffinityResult:
    """Patchwise (3x3, stride 1) cosine matching of queries against keys."""
    if K.shape != Q.shape:
        raise ShapeError(f"key {K.shape} and query {Q.shape} features differ", axis="features")
    k, s = PATCHES[0]
    kp = unfold(K, k, s, mode=PAD_MODE)
    qp = unfold(Q, k, s, mode=PAD_MODE)
    A, P = _gathered_cosine(kp, qp)
    return AffinityResult(A, P, tuple(K.shape[1:]))


def transfer_textures(V: MultiScaleFeatures, P: np.ndarray, w: Scope) -> tuple[Tensor, Tensor, Tensor]:
    """Gather value patches by ``P`` at each scale and fold them back."""
    P = np.asarray(P)
    outs = []
    embeds = (None, w.conv("embed_l"), w.conv("embed_h"))
    for feat, (k, s), embed in zip(V.scales, PATCHES, embeds):
        patches = unfold(feat, k, s, mode=PAD_MODE)
        if patches.shape[0] != len(P):
            raise ShapeError(f"position map has {len(P)} entries but the {k}x{k}/{s} patch "
                             f"grid of {feat.shape} has {patches.shape[0]}", axis="patches")
        if len(P) and (P.min() < 0 or P.max() >= patches.shape[0]):
            raise IndexError("position map index out of range")
        outs.append(fold(take_rows(patches, P), k, s, feat.shape[1:], embed=embed))
    return tuple(outs)


def interpolate_affinity(A: Tensor, factor: int) -> Tensor:
    """Co-sited bilinear enlargement of a ``1 x h x w`` affinity map."""
    _, h, w = A.shape
    return separable_linear(A, bilinear_matrix(h, factor), bilinear_matrix(w, factor))


def tcn_forward(S_hat: Tensor, S_tilde: Tensor, T_up: Tensor, w: Scope) -> TextureBundle:
    """Texture bundle for one intra reference.

    ``S_hat`` is the decoded intra frame, ``S_tilde`` its degraded copy and
    ``T_up`` the upsampled inter frame, all on the HR grid.
    """
    if not S_hat.shape == S_tilde.shape == T_up.shape:
        raise ShapeError(f"inputs differ in shape: {S_hat.shape}, {S_tilde.shape}, "
                         f"{T_up.shape}", axis="frames")
    V = mfe(S_hat, w)
    K = mfe(S_tilde, w).quarter
    Q = mfe(T_up, w).quarter
    aff = build_affinity(K, Q)
    F, FL, FH = transfer_textures(V, aff.P, w)
    A = aff.as_map()
    return TextureBundle(F, FL, FH, A, interpolate_affinity(A, 2), interpolate_affinity(A, 4),
                         aff.P)


__all__ = [
    "AffinityResult", "MultiScaleFeatures", "NORM_EPS", "PATCHES", "TextureBundle",
    "build_affinity", "interpolate_affinity", "mfe", "param_specs", "tcn_forward",
    "transfer_textures",
]
