"""Finite-difference gradient checks of every synthesis sub-network.

The checks run a narrow float64 copy of the model whose parameters are all
random, zero-initialized heads included, so every path carries gradient.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from .fusion import FusionInputs, crs_forward, fuse, init_weights
from .man import TemporalWindow, man_forward
from .tcn import TextureBundle, interpolate_affinity, mfe, tcn_forward
from .tensor import Tensor, grad_check, mul
from .weights import ModelConfig, Weights

CHECK_CONFIG = ModelConfig(channels=4, fe_blocks=1, msn_blocks=1, mfe_blocks=1, fusion_blocks=1,
                           branches=("luma",))
TOLERANCE = 1e-3
EPS = 1e-4  # starting step; refined near kinks down to EPS / 10**REFINE
REFINE = 3


def randomize(weights: Weights, seed: int = 0, scale: float = float(np.sqrt(6)),
              head_scale: float = 0.005) -> Weights:
    """Float64 copy with every parameter (zero-initialized heads included) random.

    Gradient checks need offsets away from integer sample positions and
    projections that actually carry signal. The default bound matches the
    Kaiming-uniform init so activations stay well away from ReLU kinks.
    Offset heads get the smaller ``head_scale`` and their offset biases are
    set so the finest offsets sit near half a pixel. That keeps bilinear
    sample points away from cell boundaries, where the interpolation has a
    kink that a finite difference would straddle.
    """
    rng = np.random.default_rng(seed)
    tensors = {}
    for name, t in weights.tensors.items():
        # biases share their convolution's fan-in so they do not swamp the
        # features; bias-dominated features make patch cosines nearly tie
        shape = weights[name[:-len("bias")] + "weight"].shape if name.endswith(".bias") else t.shape
        fan_in = int(np.prod(shape[1:]))
        bound = scale * (head_scale if ".msn.head" in name else 1.0)
        data = rng.uniform(-bound, bound, t.shape) / np.sqrt(fan_in)
        if ".msn.head" in name and name.endswith(".bias"):
            # offsets accumulate as head_0 + 2 head_1 + 4 head_2 + ...
            data[:18] = 0.5 / (2 ** weights.config.msn_levels - 1)
        tensors[name] = Tensor(data, name=name)
    return Weights(tensors, weights.config, weights.seed)


def rebind(weights: Weights, names, tensors) -> Weights:
    """Copy of ``weights`` with the named tensors replaced."""
    table = dict(weights.tensors)
    table.update(zip(names, tensors))
    return Weights(table, weights.config, weights.seed)


Check = tuple[Callable[..., Tensor], list[Tensor]]


def _man(weights: Weights, size: int, rng) -> Check:
    names = ["luma.man.dcn.weight", "luma.man.msn.head0.weight", "luma.man.ta.embed_nbr.weight"]
    frames = [Tensor(rng.random((1, size, size))) for _ in range(3)]

    def f(a, b, c, *params):
        w = rebind(weights, names, params).scope("luma.man")
        return man_forward(TemporalWindow([a, b, c], 1), w)

    return f, frames + [weights[n] for n in names]


def _mfe(weights: Weights, size: int, rng) -> Check:
    names = ["luma.tcn.mfe.conv_in.weight", "luma.tcn.mfe.down2.weight"]

    def f(x, *params):
        # the quarter scale depends on the whole trunk
        return mfe(x, rebind(weights, names, params).scope("luma.tcn")).quarter

    return f, [Tensor(rng.random((1, size, size)))] + [weights[n] for n in names]


def _tcn(weights: Weights, size: int, rng) -> Check:
    names = ["luma.tcn.mfe.conv_in.weight", "luma.tcn.embed_l.weight", "luma.tcn.embed_h.weight"]

    def f(s_hat, s_tilde, t_up, *params):
        b = tcn_forward(s_hat, s_tilde, t_up, rebind(weights, names, params).scope("luma.tcn"))
        return mul(b.FH, b.AH)

    planes = [Tensor(rng.random((1, size, size))) for _ in range(3)]
    return f, planes + [weights[n] for n in names]


def _fusion(weights: Weights, size: int, rng) -> Check:
    c = weights.config.channels
    names = ["luma.fusion.lift.weight", "luma.fusion.low.conv_in.weight",
             "luma.fusion.high.proj.weight"]
    q = size // 4
    inputs = [Tensor(rng.random((c, size // 2, size // 2))), Tensor(rng.random((1, size, size))),
              Tensor(rng.normal(size=(c, q, q))), Tensor(rng.normal(size=(c, 2 * q, 2 * q))),
              Tensor(rng.normal(size=(c, size, size))), Tensor(rng.uniform(0.1, 0.9, (1, q, q)))]

    def f(motion, t_up, F, FL, FH, A, *params):
        bundle = TextureBundle(F, FL, FH, A, interpolate_affinity(A, 2),
                               interpolate_affinity(A, 4), np.arange(q * q))
        w = rebind(weights, names, params).scope("luma.fusion")
        return fuse(FusionInputs(motion, [bundle], t_up), w)

    return f, inputs + [weights[n] for n in names]


def _crs(weights: Weights, size: int, rng) -> Check:
    names = ["luma.fusion.high.proj.weight", "luma.fusion.lift.weight", "luma.tcn.embed_l.weight",
             "luma.man.fe.conv_in.weight"]
    frames = [Tensor(rng.random((1, size, size))) for _ in range(3)]
    ref = Tensor(rng.random((1, 2 * size, 2 * size)))

    def f(a, b, c, r, *params):
        w = rebind(weights, names, params).scope("luma")
        return crs_forward(TemporalWindow([a, b, c], 1), [r], w)

    return f, frames + [ref] + [weights[n] for n in names]


CHECKS = {"man": _man, "mfe": _mfe, "tcn": _tcn, "fusion": _fusion, "crs": _crs}


def run_gradchecks(size: int = 16, seed: int = 0, max_elements: int = 6,
                   only=None) -> dict[str, float]:
    """Worst relative error per sub-network, in ``CHECKS`` order."""
    if size % 4:
        raise ValueError(f"check size must be a multiple of 4, got {size}")
    weights = randomize(init_weights(CHECK_CONFIG, seed=seed), seed=seed + 1)
    results = {}
    for k, (name, build) in enumerate(CHECKS.items()):
        if only is not None and name not in only:
            continue
        f, inputs = build(weights, size, np.random.default_rng(seed + 10 + k))
        results[name] = grad_check(f, inputs, eps=EPS, max_elements=max_elements, seed=seed,
                                   refine=REFINE)
    return results


__all__ = ["CHECKS", "CHECK_CONFIG", "EPS", "REFINE", "TOLERANCE", "randomize", "rebind", "run_gradchecks"]
