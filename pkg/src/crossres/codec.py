"""Deterministic codec stand-in and an adapter for external encoders.

The simulator is not a codec: it produces no bitstream. It reproduces the
noise sources a hybrid codec injects so the synthesis pipeline can be tested
without reference software:

* intra coding: 8x8 orthonormal DCT, uniform scalar quantization with step
  ``2 ** ((qp - 4) / 6)``, inverse DCT, rounding to 8 bits;
* inter coding: integer-pel block motion compensation from one reference
  followed by the same transform path on the residual.

Rate is an entropy proxy. Per 8x8 block with ``n`` nonzero levels ``l``::

    bits = 1 + log2(1 + n) + sum(2 * floor(log2 |l|) + 2)

(a coded-block flag, the level count, and an Exp-Golomb magnitude plus sign
per level). Each motion vector component ``v`` costs the signed Exp-Golomb
length ``2 * floor(log2(k + 1)) + 1`` with ``k = 2|v| - (v > 0)``.
"""

from __future__ import annotations

import contextlib
import fcntl
import glob
import os
import shlex
import shutil
import subprocess
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.fft import dctn, idctn

from .frame import Frame, to_uint8

BLOCK = 8


@dataclass(frozen=True)
class QpModel:
    qp: int
    block: int = BLOCK

    @property
    def step(self) -> float:
        return 2.0 ** ((self.qp - 4) / 6.0)


@dataclass
class MotionField:
    """Integer (dy, dx) per luma block; prediction reads ``ref[y + dy, x + dx]``."""

    block_size: int
    vectors: np.ndarray  # (rows, cols, 2) int

    @property
    def grid(self) -> tuple[int, int]:
        return self.vectors.shape[:2]


@dataclass
class CodecRun:
    """One coded frame: role, QP, rate proxy and reconstruction."""

    index: int
    role: str  # "intra" | "inter"
    qp: int
    bits: float
    recon: Frame | None = None
    meta: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        tier = self.recon.tier if self.recon is not None else ("HR" if self.role == "intra" else "LR")
        return {"index": self.index, "role": self.role, "qp": self.qp, "bits": self.bits,
                "tier": tier, **self.meta}


# -- transform coding ------------------------------------------------------------

def _pad_to_block(plane: np.ndarray, b: int) -> np.ndarray:
    h, w = plane.shape
    ph, pw = (-h) % b, (-w) % b
    if ph or pw:
        plane = np.pad(plane, ((0, ph), (0, pw)), mode="edge")
    return plane


def _blocks(plane: np.ndarray, b: int) -> np.ndarray:
    h, w = plane.shape
    return plane.reshape(h // b, b, w // b, b).transpose(0, 2, 1, 3)


def _unblocks(blocks: np.ndarray) -> np.ndarray:
    nr, nc, b, _ = blocks.shape
    return blocks.transpose(0, 2, 1, 3).reshape(nr * b, nc * b)


def quantize(coef: np.ndarray, step: float) -> np.ndarray:
    """Uniform quantizer, rounding half away from zero."""
    return (np.sign(coef) * np.floor(np.abs(coef) / step + 0.5)).astype(np.int64)


def level_bits(levels: np.ndarray) -> float:
    """Rate proxy for a ``(rows, cols, b, b)`` array of quantized levels."""
    nz = levels != 0
    nnz = nz.sum(axis=(2, 3))
    mag = np.abs(levels[nz])
    level_cost = float(np.sum(2 * np.floor(np.log2(mag)) + 2)) if mag.size else 0.0
    return float(nnz.size + np.sum(np.log2(1 + nnz)) + level_cost)


def code_plane(signal: np.ndarray, step: float, block: int = BLOCK) -> tuple[np.ndarray, float]:
    """Transform, quantize and reconstruct one real-valued plane.

    Returns the dequantized signal (same shape, not rounded) and its bits.
    """
    h, w = signal.shape
    padded = _pad_to_block(np.asarray(signal, np.float64), block)
    coef = dctn(_blocks(padded, block), axes=(2, 3), norm="ortho")
    levels = quantize(coef, step)
    recon = idctn(levels * step, axes=(2, 3), norm="ortho")
    return _unblocks(recon)[:h, :w], level_bits(levels)


def simulate_intra(s: Frame, qp: QpModel) -> tuple[Frame, float]:
    """Code every plane of ``s`` independently: ``recon = s + quantization noise``."""
    out, bits = [], 0.0
    for p in s.planes:
        rec, b = code_plane(p, qp.step, qp.block)
        out.append(rec)
        bits += b
    return Frame.from_planes(out, tier=s.tier), bits


# -- motion ------------------------------------------------------------------------

def _candidates(search: int) -> list[tuple[int, int]]:
    r = range(-search, search + 1)
    return sorted(((dy, dx) for dy in r for dx in r), key=lambda v: (abs(v[0]) + abs(v[1]), v))


def estimate_motion(cur: Frame, ref: Frame, search: int, block: int = BLOCK) -> MotionField:
    """Full-search SAD block matching on luma.

    Candidate blocks must lie entirely inside the reference. Ties go to the
    smaller ``|dy| + |dx|``, then to raster order of ``(dy, dx)``.
    """
    if search < 0:
        raise ValueError("search radius must be non-negative")
    if cur.y.shape != ref.y.shape:
        raise ValueError(f"frame sizes differ: {cur.y.shape} vs {ref.y.shape}")
    h, w = cur.y.shape
    if h % block or w % block:
        raise ValueError(f"luma {w}x{h} is not a multiple of the {block}-pixel block")
    c = cur.y.astype(np.int64)
    r = ref.y.astype(np.int64)
    nr, nc = h // block, w // block
    by = np.arange(nr)[:, None] * block
    bx = np.arange(nc)[None, :] * block
    best = np.full((nr, nc), np.iinfo(np.int64).max)
    vec = np.zeros((nr, nc, 2), np.int64)
    for dy, dx in _candidates(search):
        # valid source rows/cols for this displacement
        y0, y1 = max(0, -dy), min(h, h - dy)
        x0, x1 = max(0, -dx), min(w, w - dx)
        shifted = np.zeros_like(c)
        shifted[y0:y1, x0:x1] = r[y0 + dy:y1 + dy, x0 + dx:x1 + dx]
        sad = np.abs(c - shifted).reshape(nr, block, nc, block).sum(axis=(1, 3))
        valid = ((by + dy >= 0) & (by + dy + block <= h)) & ((bx + dx >= 0) & (bx + dx + block <= w))
        better = valid & (sad < best)
        best = np.where(better, sad, best)
        vec[better] = (dy, dx)
    return MotionField(block, vec)


def _predict_plane(ref: np.ndarray, vectors: np.ndarray, block: int) -> np.ndarray:
    out = np.empty_like(ref, dtype=np.float64)
    nr, nc = vectors.shape[:2]
    for i in range(nr):
        for j in range(nc):
            dy, dx = vectors[i, j]
            y, x = i * block, j * block
            out[y:y + block, x:x + block] = ref[y + dy:y + dy + block, x + dx:x + dx + block]
    return out


def predict(ref: Frame, motion: MotionField) -> list[np.ndarray]:
    """Motion-compensated prediction of all planes.

    Chroma uses the luma vectors halved toward zero on half-size blocks.
    """
    b = motion.block_size
    luma = _predict_plane(ref.y, motion.vectors, b)
    chroma_vec = np.trunc(motion.vectors / 2).astype(np.int64)
    return [luma] + [_predict_plane(p, chroma_vec, b // 2) for p in (ref.u, ref.v)]


def _se_bits(v: np.ndarray) -> float:
    k = 2 * np.abs(v) - (v > 0)
    return float(np.sum(2 * np.floor(np.log2(k + 1)) + 1))


def simulate_inter(t: Frame, ref: Frame, qp: QpModel, search: int = 4) -> tuple[Frame, float]:
    """Predict ``t`` from ``ref`` by block motion, then code the residual."""
    if t.y.shape != ref.y.shape:
        raise ValueError(f"inter frame {t.width}x{t.height} and reference "
                         f"{ref.width}x{ref.height} differ in size")
    motion = estimate_motion(t, ref, search, qp.block)
    pred = predict(ref, motion)
    bits = _se_bits(motion.vectors)
    out = []
    for p, cur in zip(pred, t.planes):
        res, b = code_plane(cur.astype(np.float64) - p, qp.step, qp.block)
        out.append(p + res)
        bits += b
    return Frame.from_planes(out, tier=t.tier), bits


# -- external encoders -------------------------------------------------------------

class CodecError(RuntimeError):
    pass


class EncoderNotFoundError(CodecError):
    pass


class EncoderFailedError(CodecError):
    pass


class EncoderOutputError(CodecError):
    pass


@dataclass
class EncoderConfig:
    """External encoder invocation.

    ``args`` is a template with ``{input} {output} {qp} {width} {height}``
    (and optionally ``{frames}``) placeholders. ``rate_log`` is a glob,
    relative to the per-call working directory, matching a text file with one
    ``<frame> <bits>`` line per coded frame (``#`` starts a comment).
    """

    binary: str
    args: str
    rate_log: str
    workdir: str | None = None

    @classmethod
    def from_file(cls, path) -> "EncoderConfig":
        values = {}
        for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected key = value")
            key, value = (s.strip() for s in line.split("=", 1))
            values[key] = value
        missing = {"binary", "args", "rate_log"} - values.keys()
        if missing:
            raise ValueError(f"{path}: missing keys {sorted(missing)}")
        unknown = values.keys() - {"binary", "args", "rate_log", "workdir"}
        if unknown:
            raise ValueError(f"{path}: unknown keys {sorted(unknown)}")
        return cls(**values)


def _resolve_binary(binary: str) -> str:
    if os.sep in binary:
        if os.path.isfile(binary) and os.access(binary, os.X_OK):
            return os.path.abspath(binary)
        raise EncoderNotFoundError(f"encoder not found: {binary}")
    found = shutil.which(binary)
    if found is None:
        raise EncoderNotFoundError(f"encoder not found: {binary}")
    return found


def parse_rate_log(path: Path, expected: int) -> list[float]:
    bits: dict[int, float] = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        text = line.split("#", 1)[0].strip()
        if not text:
            continue
        parts = text.split()
        try:
            if len(parts) != 2:
                raise ValueError
            idx, value = int(parts[0]), float(parts[1])
            if value < 0 or not np.isfinite(value):
                raise ValueError
        except ValueError:
            raise EncoderOutputError(
                f"{path}:{lineno}: expected '<frame> <bits>', got {line!r}") from None
        bits[idx] = value
    if sorted(bits) != list(range(expected)):
        raise EncoderOutputError(
            f"{path}: expected bits for frames 0..{expected - 1}, got {sorted(bits)}")
    return [bits[i] for i in range(expected)]


def read_raw_frames(path: Path, width: int, height: int, count: int, tier: str) -> list[Frame]:
    size = width * height * 3 // 2
    data = Path(path).read_bytes()
    if len(data) < size * count:
        raise EncoderOutputError(
            f"{path}: reconstruction holds {len(data)} bytes, expected {size * count}")
    frames = []
    for k in range(count):
        buf = np.frombuffer(data, np.uint8, size, k * size)
        y = buf[:width * height].reshape(height, width)
        u = buf[width * height:width * height * 5 // 4].reshape(height // 2, width // 2)
        v = buf[width * height * 5 // 4:].reshape(height // 2, width // 2)
        frames.append(Frame(y.copy(), u.copy(), v.copy(), tier))
    return frames


@contextlib.contextmanager
def _dir_lock(directory: Path):
    directory.mkdir(parents=True, exist_ok=True)
    with open(directory / ".lock", "w") as fh:
        fcntl.flock(fh, fcntl.LOCK_EX)
        try:
            yield
        finally:
            fcntl.flock(fh, fcntl.LOCK_UN)


class ExternalEncoder:
    """Runs an external encoder once per coded segment."""

    def __init__(self, cfg: EncoderConfig, workdir=None):
        self.cfg = cfg
        self.binary = _resolve_binary(cfg.binary)
        self.workdir = Path(workdir or cfg.workdir or "crossres-encoder-work")
        self._calls = 0

    def encode(self, frames: list[Frame], qp: int, tier: str) -> tuple[list[Frame], list[float]]:
        w, h = frames[0].width, frames[0].height
        with _dir_lock(self.workdir):
            call_dir = self.workdir / f"call_{self._calls:04d}"
            self._calls += 1
            if call_dir.exists():
                shutil.rmtree(call_dir)
            call_dir.mkdir(parents=True)
            src = call_dir / "input.yuv"
            dst = call_dir / "recon.yuv"
            src.write_bytes(b"".join(f.to_bytes() for f in frames))
            fields = {"input": str(src), "output": str(dst), "qp": qp, "width": w, "height": h,
                      "frames": len(frames)}
            try:
                argv = [self.binary] + [a.format(**fields) for a in shlex.split(self.cfg.args)]
            except (KeyError, IndexError) as exc:
                raise ValueError(f"bad placeholder in encoder args: {exc}") from None
            proc = subprocess.run(argv, cwd=call_dir, capture_output=True, text=True)
            if proc.returncode != 0:
                raise EncoderFailedError(
                    f"{argv[0]} exited with status {proc.returncode}: {proc.stderr.strip()[-500:]}")
            logs = sorted(glob.glob(str(call_dir / self.cfg.rate_log)))
            if not logs:
                raise EncoderOutputError(f"no rate log matching {self.cfg.rate_log!r} in {call_dir}")
            bits = parse_rate_log(Path(logs[0]), len(frames))
            if not dst.exists():
                raise EncoderOutputError(f"encoder wrote no reconstruction at {dst}")
            recon = read_raw_frames(dst, w, h, len(frames), tier)
        return recon, bits


def external_encode(seq, gop, cfg: EncoderConfig, workdir=None) -> list[CodecRun]:
    """Code a sequence with an external encoder following the GoP structure.

    ``gop`` is one GopStructure or a list of them. Each HR intra frame is one
    call at ``qp_intra``; the inter frames of a GoP are bicubic-downscaled and
    sent as one LR call at ``qp_inter``.
    """
    from .resample import bicubic_down

    gops = [gop] if hasattr(gop, "inter_indices") else list(gop)
    enc = ExternalEncoder(cfg, workdir)
    runs: list[CodecRun] = []
    for gop in gops:
        intra = seq.frames[gop.intra_index]
        (rec,), (bits,) = enc.encode([intra], gop.schedule.qp_intra, "HR")
        runs.append(CodecRun(gop.intra_index, "intra", gop.schedule.qp_intra, bits, rec))
        if gop.inter_indices:
            lr = [bicubic_down(seq.frames[i]) for i in gop.inter_indices]
            recs, bits = enc.encode(lr, gop.schedule.qp_inter, "LR")
            for i, r, b in zip(gop.inter_indices, recs, bits):
                runs.append(CodecRun(i, "inter", gop.schedule.qp_inter, b, r))
    return sorted(runs, key=lambda r: r.index)


__all__ = [
    "BLOCK", "CodecError", "CodecRun", "EncoderConfig", "EncoderFailedError",
    "EncoderNotFoundError", "EncoderOutputError", "ExternalEncoder", "MotionField", "QpModel",
    "code_plane", "estimate_motion", "external_encode", "level_bits", "parse_rate_log",
    "predict", "quantize", "read_raw_frames", "simulate_inter", "simulate_intra", "to_uint8",
]
