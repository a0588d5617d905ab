"""Finite-difference verification of reverse-mode gradients."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .core import GradTape, Tensor


def _scalar(out: Tensor) -> float:
    return float(np.asarray(out.data, dtype=np.float64).sum())


def _central(f, xs, flat, i, eps) -> float:
    orig = flat[i]
    flat[i] = orig + eps
    fp = _scalar(f(*xs))
    flat[i] = orig - eps
    fm = _scalar(f(*xs))
    flat[i] = orig
    return (fp - fm) / (2 * eps)


def grad_check(f: Callable[..., Tensor], inputs: Sequence[Tensor], eps: float = 1e-3,
               floor: float = 1e-6, max_elements: int | None = None,
               seed: int = 0, refine: int = 0, agree: float = 1e-5) -> float:
    """Worst elementwise relative error between tape and central differences.

    ``f`` is evaluated on float64 copies of ``inputs`` and its output is
    sum-reduced. The relative error of one element is
    ``|g_tape - g_fd| / max(|g_tape|, |g_fd|, floor)``. With ``max_elements``
    set, each input is checked on a seeded random subset of its elements.

    Piecewise-smooth functions (ReLU, bilinear cell boundaries, argmax) have
    kinks; a central difference whose step straddles one measures a blend of
    two slopes. With ``refine > 0`` the step is divided by 10, up to
    ``refine`` times, until two successive central differences agree within
    ``agree`` (relative) plus the rounding noise expected at the finer step.
    The refinement only compares differences with each other, never with the
    tape gradient.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    xs = [Tensor(np.array(t.data, dtype=np.float64), requires_grad=True) for t in inputs]
    with GradTape() as tape:
        out = f(*xs)
    analytic = tape.gradient(out, xs)
    # cancellation error of a central difference is about ulp(f) / step
    ulp = 4 * np.finfo(np.float64).eps * max(abs(_scalar(out)), 1.0)

    rng = np.random.default_rng(seed)
    worst = 0.0
    for x, g in zip(xs, analytic):
        flat = x.data.reshape(-1)
        idx = np.arange(flat.size)
        if max_elements is not None and flat.size > max_elements:
            idx = np.sort(rng.choice(flat.size, size=max_elements, replace=False))
        gflat = g.reshape(-1)
        for i in idx:
            numeric = _central(f, xs, flat, i, eps)
            step = eps
            for _ in range(refine):
                step /= 10
                finer = _central(f, xs, flat, i, step)
                tol = agree * max(abs(finer), abs(numeric), floor) + ulp / step
                settled = abs(finer - numeric) <= tol
                numeric = finer
                if settled:
                    break
            denom = max(abs(gflat[i]), abs(numeric), floor)
            worst = max(worst, abs(gflat[i] - numeric) / denom)
    return worst
