"""Bicubic down/up-sampling by a factor of 2 and the down-then-up degradation.

Coordinate convention (center-aligned grid): output sample ``i`` of a
resampling by scale ``s = n_out / n_in`` sits at input position

    x = (i + 0.5) / s - 0.5

For downsampling the cubic kernel is stretched by the factor ``d`` (taps at
``k((x - j) / d)``), which anti-aliases. Samples beyond the border are taken
from a half-sample symmetric extension (``x[-1] = x[0]``). Every row of taps
is normalized to sum to one. Filtering runs in float64; rounding to 8 bits
happens only when a :class:`~crossres.frame.Frame` is returned.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .frame import Frame

CATMULL_ROM_A = -0.5


def cubic_kernel(t, a: float = CATMULL_ROM_A):
    """Keys cubic convolution kernel with sharpness ``a``."""
    t = np.abs(np.asarray(t, dtype=np.float64))
    t2, t3 = t * t, t * t * t
    near = (a + 2) * t3 - (a + 3) * t2 + 1
    far = a * t3 - 5 * a * t2 + 8 * a * t - 4 * a
    return np.where(t <= 1, near, np.where(t < 2, far, 0.0))


@dataclass(frozen=True)
class BicubicKernel:
    a: float = CATMULL_ROM_A

    def taps(self, position: float, stretch: float = 1.0) -> tuple[np.ndarray, np.ndarray]:
        """Integer sample indices and normalized weights for one output position."""
        support = 2 * stretch
        lo = int(np.floor(position - support)) + 1
        hi = int(np.ceil(position + support)) - 1
        idx = np.arange(lo, hi + 1)
        w = cubic_kernel((position - idx) / stretch, self.a)
        keep = w != 0
        idx, w = idx[keep], w[keep]
        return idx, w / w.sum()

    def phase_taps(self, d: int = 2, down: bool = True) -> list[np.ndarray]:
        """Normalized tap weights for every distinct sampling phase."""
        if down:
            return [self.taps((0 + 0.5) * d - 0.5, stretch=d)[1]]
        return [self.taps((i + 0.5) / d - 0.5)[1] for i in range(d)]


def _reflect_index(idx: np.ndarray, n: int) -> np.ndarray:
    period = 2 * n
    m = np.mod(idx, period)
    return np.where(m < n, m, period - 1 - m)


def _matrix(n_in: int, n_out: int, kernel: BicubicKernel) -> np.ndarray:
    scale = n_out / n_in
    stretch = max(1.0, 1.0 / scale)
    mat = np.zeros((n_out, n_in))
    for i in range(n_out):
        idx, w = kernel.taps((i + 0.5) / scale - 0.5, stretch)
        np.add.at(mat[i], _reflect_index(idx, n_in), w)
    return mat


@lru_cache(maxsize=64)
def downsample_matrix(n: int, d: int = 2, a: float = CATMULL_ROM_A) -> np.ndarray:
    """``(n/d) x n`` bicubic decimation operator."""
    if n % d:
        raise ValueError(f"length {n} is not divisible by {d}")
    m = _matrix(n, n // d, BicubicKernel(a))
    m.setflags(write=False)
    return m


@lru_cache(maxsize=64)
def upsample_matrix(n: int, d: int = 2, a: float = CATMULL_ROM_A) -> np.ndarray:
    """``(n*d) x n`` bicubic interpolation operator."""
    m = _matrix(n, n * d, BicubicKernel(a))
    m.setflags(write=False)
    return m


@lru_cache(maxsize=64)
def bilinear_matrix(n: int, factor: int) -> np.ndarray:
    """``(n*factor) x n`` linear interpolation with co-sited samples.

    Output ``factor*i`` coincides with input ``i``; positions past the last
    input sample hold its value.
    """
    out = n * factor
    pos = np.minimum(np.arange(out) / factor, n - 1)
    i0 = np.floor(pos).astype(int)
    i1 = np.minimum(i0 + 1, n - 1)
    frac = pos - i0
    m = np.zeros((out, n))
    m[np.arange(out), i0] += 1 - frac
    m[np.arange(out), i1] += frac
    m.setflags(write=False)
    return m


@lru_cache(maxsize=64)
def half_pixel_bilinear_matrix(n: int, factor: int) -> np.ndarray:
    """``(n*factor) x n`` linear interpolation on the center-aligned grid."""
    out = n * factor
    pos = np.clip((np.arange(out) + 0.5) / factor - 0.5, 0, n - 1)
    i0 = np.floor(pos).astype(int)
    i1 = np.minimum(i0 + 1, n - 1)
    frac = pos - i0
    m = np.zeros((out, n))
    m[np.arange(out), i0] += 1 - frac
    m[np.arange(out), i1] += frac
    m.setflags(write=False)
    return m


def _check_d(d: int) -> None:
    if d != 2:
        raise ValueError(f"only a factor of 2 is supported, got {d}")


def downsample_plane(plane: np.ndarray, d: int = 2) -> np.ndarray:
    """Real-valued bicubic decimation of one plane."""
    _check_d(d)
    h, w = plane.shape
    if h % d or w % d:
        raise ValueError(f"plane {w}x{h} has odd dimensions; pad before downsampling")
    return downsample_matrix(h, d) @ np.asarray(plane, np.float64) @ downsample_matrix(w, d).T


def upsample_plane(plane: np.ndarray, d: int = 2) -> np.ndarray:
    """Real-valued bicubic interpolation of one plane."""
    _check_d(d)
    h, w = plane.shape
    return upsample_matrix(h, d) @ np.asarray(plane, np.float64) @ upsample_matrix(w, d).T


def degrade_plane(plane: np.ndarray) -> np.ndarray:
    return upsample_plane(downsample_plane(plane))


def bicubic_down(f: Frame, d: int = 2) -> Frame:
    """Half-resolution frame; chroma planes are decimated with the same kernel."""
    _check_d(d)
    if f.width % 4 or f.height % 4:
        raise ValueError(
            f"{f.width}x{f.height} frame: 4:2:0 downsampling needs dimensions divisible by 4")
    return Frame.from_planes([downsample_plane(p, d) for p in f.planes], tier="LR")


def bicubic_up(f: Frame, d: int = 2) -> Frame:
    _check_d(d)
    return Frame.from_planes([upsample_plane(p, d) for p in f.planes], tier="HR")


def degrade(f: Frame) -> Frame:
    """Down- then up-sample without intermediate rounding."""
    if f.width % 4 or f.height % 4:
        raise ValueError(f"{f.width}x{f.height} frame: dimensions must be divisible by 4")
    return Frame.from_planes([degrade_plane(p) for p in f.planes], tier=f.tier)
