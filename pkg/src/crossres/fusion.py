"""Similarity-driven fusion and full-model assembly.

The fusion works at two scales. At H/2 the aggregated motion features meet
the mid-scale textures of every intra reference, each gated by its affinity
map; a sub-pixel convolution lifts the result to H where the full-scale
textures and features of the upsampled inter frame join. A zero-initialized
projection adds a correction on top of the upsampled inter frame, so an
untrained model reproduces bicubic upsampling exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import man, tcn
from .man import TemporalWindow, man_forward
from .resample import downsample_matrix, upsample_matrix
from .tcn import TextureBundle, tcn_forward
from .tensor import (
    AdamState,
    GradTape,
    ShapeError,
    Tensor,
    adam_step,
    add,
    concat,
    conv2d,
    l1_loss,
    mul,
    pixel_shuffle,
    relu,
    residual_block,
    separable_linear,
)
from .weights import BRANCH_CHANNELS, ModelConfig, ParamSpec, Scope, Weights, conv_specs, resblock_specs


@dataclass
class FusionInputs:
    motion: Tensor  # F^L_t, C x H/2 x W/2
    bundles: list[TextureBundle]
    upsampled: Tensor  # bicubic-upsampled inter frame, C_in x H x W

    def check(self) -> None:
        _, h, w = self.upsampled.shape
        if self.motion.shape[1:] != (h // 2, w // 2):
            raise ShapeError(f"motion features {self.motion.shape} do not sit on the H/2 grid "
                             f"of a {h}x{w} frame", axis="height")
        for b in self.bundles:
            if b.FL.shape[1:] != (h // 2, w // 2) or b.FH.shape[1:] != (h, w):
                raise ShapeError("texture bundle grids do not match the frame", axis="height")
            if b.AL.shape[1:] != b.FL.shape[1:] or b.AH.shape[1:] != b.FH.shape[1:]:
                raise ShapeError("affinity maps do not match their textures", axis="height")


def fusion_param_specs(cfg: ModelConfig, cin: int, prefix: str) -> list[ParamSpec]:
    c, r = cfg.channels, cfg.n_refs
    specs = conv_specs(f"{prefix}.lift", 4 * c, c)
    specs += conv_specs(f"{prefix}.low.conv_in", c, c + r * (2 * c + 1))
    for i in range(cfg.fusion_blocks):
        specs += resblock_specs(f"{prefix}.low.rb{i}", c)
    specs += conv_specs(f"{prefix}.low.up", 4 * c, c)
    specs += conv_specs(f"{prefix}.tup", c, cin)
    specs += conv_specs(f"{prefix}.high.conv_in", c, 2 * c + r * (c + 1))
    for i in range(cfg.fusion_blocks):
        specs += resblock_specs(f"{prefix}.high.rb{i}", c)
    specs += conv_specs(f"{prefix}.high.proj", cin, c, init="zeros")
    return specs


def branch_param_specs(cfg: ModelConfig, branch: str) -> list[ParamSpec]:
    cin = BRANCH_CHANNELS[branch]
    return (man.param_specs(cfg, cin, f"{branch}.man")
            + tcn.param_specs(cfg, cin, f"{branch}.tcn")
            + fusion_param_specs(cfg, cin, f"{branch}.fusion"))


def model_param_specs(cfg: ModelConfig) -> list[ParamSpec]:
    specs = []
    for branch in cfg.branches:
        specs += branch_param_specs(cfg, branch)
    return specs


def init_weights(cfg: ModelConfig | None = None, seed: int = 0) -> Weights:
    """Seeded initialization of every parameter named by ``model_param_specs``."""
    cfg = cfg or ModelConfig()
    return Weights.initialize(model_param_specs(cfg), cfg, seed)


def _stage(x: Tensor, w: Scope, name: str, n: int) -> Tensor:
    x = relu(conv2d(x, w.conv(f"{name}.conv_in")))
    for i in range(n):
        x = residual_block(x, w.conv(f"{name}.rb{i}.conv1"), w.conv(f"{name}.rb{i}.conv2"))
    return x


def fuse(inp: FusionInputs, w: Scope) -> Tensor:
    """Two-scale fusion; returns ``C_in x H x W`` (``projection + upsampled``)."""
    inp.check()
    cfg = w.config
    if len(inp.bundles) != cfg.n_refs:
        raise ValueError(f"model fuses {cfg.n_refs} texture bundles, got {len(inp.bundles)}")
    low = [inp.motion]
    for b in inp.bundles:
        lifted = pixel_shuffle(conv2d(b.F, w.conv("lift")), 2)
        low += [mul(b.FL, b.AL), b.AL, mul(lifted, b.AL)]
    x = _stage(concat(low, axis=0), w, "low", cfg.fusion_blocks)
    up = pixel_shuffle(conv2d(x, w.conv("low.up")), 2)

    high = [up, relu(conv2d(inp.upsampled, w.conv("tup")))]
    for b in inp.bundles:
        high += [mul(b.FH, b.AH), b.AH]
    y = _stage(concat(high, axis=0), w, "high", cfg.fusion_blocks)
    return add(inp.upsampled, conv2d(y, w.conv("high.proj")))


# -- resampling inside the graph ---------------------------------------------------

def bicubic_up_tensor(x: Tensor) -> Tensor:
    _, h, w = x.shape
    return separable_linear(x, upsample_matrix(h), upsample_matrix(w))


def degrade_tensor(x: Tensor) -> Tensor:
    _, h, w = x.shape
    mh = upsample_matrix(h // 2) @ downsample_matrix(h)
    mw = upsample_matrix(w // 2) @ downsample_matrix(w)
    return separable_linear(x, mh, mw)


def crs_forward(window: TemporalWindow, intra_refs: list[Tensor], w: Scope) -> Tensor:
    """Synthesize the HR version of the window's center frame.

    ``intra_refs`` holds decoded HR intra planes (preceding first). A
    two-reference model given one reference uses it for both bundles.
    """
    cfg = w.config
    if not intra_refs:
        raise ValueError("at least one intra reference is required")
    if len(intra_refs) > cfg.n_refs:
        raise ValueError(f"model takes at most {cfg.n_refs} intra references, "
                         f"got {len(intra_refs)}")
    refs = list(intra_refs) + [intra_refs[-1]] * (cfg.n_refs - len(intra_refs))
    center = window.center_frame
    _, h, wd = center.shape
    for r in refs:
        if r.shape != (center.shape[0], 2 * h, 2 * wd):
            raise ShapeError(f"intra reference {r.shape} is not twice the LR frame {center.shape}",
                             axis="height")
    motion = man_forward(window, w.scope("man"))
    t_up = bicubic_up_tensor(center)
    tw = w.scope("tcn")
    bundles = [tcn_forward(r, degrade_tensor(r), t_up, tw) for r in refs]
    return fuse(FusionInputs(motion, bundles, t_up), w.scope("fusion"))


# -- training ------------------------------------------------------------------------

@dataclass
class TrainSample:
    window: TemporalWindow
    intra_refs: list[Tensor]
    target: Tensor


def train_step(batch: list[TrainSample], weights: Weights, state: AdamState, branch: str = "luma",
               lr: float = 1e-4) -> tuple[float, AdamState]:
    """One Adam step on the mean L1 loss over ``batch``; returns the pre-step loss."""
    if not batch:
        raise ValueError("empty batch")
    names = [n for n in weights.names if n.startswith(f"{branch}.")]
    params = [weights[n] for n in names]
    scope = weights.scope(branch)
    with GradTape() as tape:
        tape.watch(*params)
        losses = [l1_loss(crs_forward(s.window, s.intra_refs, scope), s.target) for s in batch]
        total = losses[0]
        for extra in losses[1:]:
            total = add(total, extra)
        loss = mul(total, 1.0 / len(batch))
    value = float(loss.data)
    if not np.isfinite(value):
        per_item = [float(x.data) for x in losses]
        raise FloatingPointError(f"non-finite loss {value} (per-sample losses {per_item}) "
                                 f"at optimizer step {state.step}")
    grads = tape.gradient(loss, params)
    state = adam_step(params, grads, state, lr=lr, names=names)
    return value, state


__all__ = [
    "FusionInputs", "TrainSample", "bicubic_up_tensor", "branch_param_specs", "crs_forward",
    "degrade_tensor", "fuse", "fusion_param_specs", "init_weights", "model_param_specs",
    "train_step",
]
