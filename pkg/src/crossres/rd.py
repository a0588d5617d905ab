"""Rate-distortion measurement: PSNR, Bjontegaard deltas and QP allocation."""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .frame import Frame

PSNR_CAP = 99.0
QP_DELTA = 5
QP_MAX = 51


def psnr_plane(a: np.ndarray, b: np.ndarray, peak: float = 255.0) -> float:
    if a.shape != b.shape:
        raise ValueError(f"plane shapes differ: {a.shape} vs {b.shape}")
    mse = np.mean((np.asarray(a, np.float64) - np.asarray(b, np.float64)) ** 2)
    if mse == 0:
        return PSNR_CAP
    return min(PSNR_CAP, float(10 * np.log10(peak * peak / mse)))


def psnr(a: Frame, b: Frame, plane: str = "y") -> float:
    """PSNR of one plane (``"y"``, ``"u"`` or ``"v"``) of two 8-bit frames.

    Zero error reports :data:`PSNR_CAP`.
    """
    if (a.width, a.height) != (b.width, b.height):
        raise ValueError(f"frame sizes differ: {a.width}x{a.height} vs {b.width}x{b.height}")
    return psnr_plane(a.plane(plane), b.plane(plane))


class RdCurve:
    """Operating points ``(kbps, dB)`` of one codec configuration.

    Points are sorted by rate; both coordinates must then increase strictly.
    """

    def __init__(self, points):
        pts = sorted((float(r), float(q)) for r, q in points)
        if len(pts) < 4:
            raise ValueError(f"an R-D curve needs at least 4 points, got {len(pts)}")
        rates = np.array([p[0] for p in pts])
        quality = np.array([p[1] for p in pts])
        if np.any(rates <= 0):
            raise ValueError("bitrates must be positive")
        if np.any(np.diff(rates) <= 0):
            raise ValueError("bitrates must be strictly increasing")
        if np.any(np.diff(quality) <= 0):
            raise ValueError("PSNR must increase strictly with bitrate")
        self.rates = rates
        self.psnrs = quality

    @property
    def points(self) -> list[tuple[float, float]]:
        return list(zip(self.rates.tolist(), self.psnrs.tolist()))

    def __len__(self) -> int:
        return len(self.rates)

    def __repr__(self) -> str:
        return f"RdCurve({self.points!r})"


def _overlap(a: np.ndarray, b: np.ndarray) -> tuple[float, float]:
    lo = max(a.min(), b.min())
    hi = min(a.max(), b.max())
    if hi <= lo:
        raise ValueError("curves do not overlap")
    return float(lo), float(hi)


def _mean_poly_gap(x_a, y_a, x_b, y_b) -> float:
    lo, hi = _overlap(x_a, x_b)
    pa = np.polyint(np.polyfit(x_a, y_a, 3))
    pb = np.polyint(np.polyfit(x_b, y_b, 3))
    ia = np.polyval(pa, hi) - np.polyval(pa, lo)
    ib = np.polyval(pb, hi) - np.polyval(pb, lo)
    return (ib - ia) / (hi - lo)


def bd_rate(anchor: RdCurve, test: RdCurve) -> float:
    """Average bitrate difference in percent at equal PSNR (negative = saving).

    Cubic fit of log10(rate) against PSNR, integrated over the common PSNR range.
    """
    gap = _mean_poly_gap(anchor.psnrs, np.log10(anchor.rates), test.psnrs, np.log10(test.rates))
    return float((10 ** gap - 1) * 100)


def bd_psnr(anchor: RdCurve, test: RdCurve) -> float:
    """Average PSNR difference in dB at equal rate."""
    return float(_mean_poly_gap(np.log10(anchor.rates), anchor.psnrs,
                                np.log10(test.rates), test.psnrs))


@dataclass(frozen=True)
class QpSchedule:
    qp_intra: int
    delta: int = QP_DELTA

    @property
    def qp_inter(self) -> int:
        return max(0, self.qp_intra - self.delta)


def allocate_qp(qp_intra: int, delta: int = QP_DELTA) -> QpSchedule:
    """Finer quantization for low-resolution inter frames: ``qp_intra - delta``."""
    if not 0 <= qp_intra <= QP_MAX:
        raise ValueError(f"QP {qp_intra} outside [0, {QP_MAX}]")
    return QpSchedule(int(qp_intra), delta)


def comparison_record(anchor: RdCurve, test: RdCurve, label_anchor: str = "anchor",
                      label_test: str = "test") -> dict:
    """One JSON-ready comparison between two curves."""
    return {
        "anchor_label": label_anchor,
        "test_label": label_test,
        "anchor": [list(p) for p in anchor.points],
        "test": [list(p) for p in test.points],
        "bd_rate": bd_rate(anchor, test),
        "bd_psnr": bd_psnr(anchor, test),
    }


def dumps_record(record: dict) -> str:
    return json.dumps(record, sort_keys=True, indent=2) + "\n"
