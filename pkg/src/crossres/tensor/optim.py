"""Adam optimizer operating in place on parameter tensors."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .core import Tensor


@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)


def adam_step(params: Sequence[Tensor], grads: Sequence[np.ndarray], state: AdamState,
              lr: float = 1e-4, names: Sequence[str] | None = None) -> AdamState:
    """One bias-corrected Adam update.

    Parameters are updated in place (their ``data`` arrays are replaced) and
    ``state`` is advanced and returned. Non-finite gradients abort before any
    parameter is touched.
    """
    if len(params) != len(grads):
        raise ValueError(f"{len(params)} parameters but {len(grads)} gradients")
    for i, (p, g) in enumerate(zip(params, grads)):
        if g.shape != p.shape:
            raise ValueError(f"gradient {i} has shape {g.shape}, parameter {p.shape}")
        if not np.all(np.isfinite(g)):
            label = names[i] if names is not None else f"#{i} {p.name or ''}".strip()
            bad = int(np.count_nonzero(~np.isfinite(g)))
            raise FloatingPointError(
                f"non-finite gradient for parameter {label}: {bad} of {g.size} entries")
    if not state.m:
        state.m = [np.zeros_like(p.data) for p in params]
        state.v = [np.zeros_like(p.data) for p in params]
    elif len(state.m) != len(params):
        raise ValueError("optimizer state does not match the parameter list")

    state.step += 1
    b1, b2, t = state.beta1, state.beta2, state.step
    c1 = 1 - b1 ** t
    c2 = 1 - b2 ** t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        if lr == 0:
            continue
        update = lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
        p.data = (p.data - update).astype(p.dtype, copy=False)
    return state
