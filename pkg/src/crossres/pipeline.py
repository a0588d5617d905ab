"""End-to-end orchestration: YUV I/O, coding, synthesis and evaluation.

The coded representation of a sequence is a :class:`DecodedStream`: HR
reconstructions of the intra frames, LR reconstructions of the inter
frames and one :class:`~crossres.codec.CodecRun` per frame. ``encode``
produces it and ``synthesize`` turns it back into a full-resolution
sequence.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .codec import CodecRun, EncoderConfig, QpModel, external_encode, simulate_inter, simulate_intra
from .frame import PLANES, Frame, Sequence
from .fusion import TrainSample, crs_forward, model_param_specs, train_step
from .gop import GopStructure, structure_gop
from .man import TemporalWindow
from .rd import RdCurve, comparison_record, psnr_plane
from .resample import bicubic_down, bicubic_up
from .tensor import AdamState, Tensor, l1_loss
from .weights import Weights

ALIGN = 16  # LR planes must hold whole 8x8 codec blocks
SEARCH = 4  # motion search radius on the LR grid


# -- YUV files ---------------------------------------------------------------------

def frame_size(width: int, height: int) -> int:
    return width * height * 3 // 2


def _pad_plane(p: np.ndarray, h: int, w: int) -> np.ndarray:
    ph, pw = h - p.shape[0], w - p.shape[1]
    if ph == 0 and pw == 0:
        return p
    return np.pad(p, ((0, ph), (0, pw)), mode="symmetric")


def pad_frame(f: Frame, width: int, height: int) -> Frame:
    """Mirror-extend ``f`` on the right and bottom to ``width x height``."""
    return Frame(_pad_plane(f.y, height, width), _pad_plane(f.u, height // 2, width // 2),
                 _pad_plane(f.v, height // 2, width // 2), f.tier)


def crop_frame(f: Frame, width: int, height: int) -> Frame:
    return Frame(f.y[:height, :width].copy(), f.u[:height // 2, :width // 2].copy(),
                 f.v[:height // 2, :width // 2].copy(), f.tier)


def aligned(n: int, align: int = ALIGN) -> int:
    return -(-n // align) * align


def load_yuv(path, width: int, height: int, count: int | None = None, align: int = ALIGN,
             fps: float = 30.0) -> Sequence:
    """Read 8-bit planar 4:2:0 frames and pad them to a multiple of ``align``."""
    if width <= 0 or height <= 0:
        raise ValueError(f"frame dimensions must be positive, got {width}x{height}")
    if width % 2 or height % 2:
        raise ValueError(f"4:2:0 needs even dimensions, got {width}x{height}")
    data = Path(path).read_bytes()
    size = frame_size(width, height)
    if count is None:
        if len(data) % size:
            raise ValueError(f"{path}: {len(data)} bytes is not a whole number of "
                             f"{width}x{height} frames")
        count = len(data) // size
    if count <= 0:
        raise ValueError("frame count must be positive")
    pw, ph = aligned(width, align), aligned(height, align)
    frames = []
    for k in range(count):
        chunk = data[k * size:(k + 1) * size]
        if len(chunk) < size:
            raise ValueError(f"{path}: short read at frame {k} "
                             f"({len(chunk)} of {size} bytes)")
        buf = np.frombuffer(chunk, np.uint8)
        y = buf[:width * height].reshape(height, width)
        u = buf[width * height:width * height * 5 // 4].reshape(height // 2, width // 2)
        v = buf[width * height * 5 // 4:].reshape(height // 2, width // 2)
        frames.append(pad_frame(Frame(y.copy(), u.copy(), v.copy()), pw, ph))
    return Sequence(frames, width, height, fps)


def write_yuv(path, seq: Sequence) -> None:
    """Write frames cropped back to the sequence's original dimensions."""
    with open(path, "wb") as fh:
        for f in seq.frames:
            fh.write(crop_frame(f, seq.width, seq.height).to_bytes())


def read_frames(path, width: int, height: int, tier: str) -> list[Frame]:
    seq = load_yuv(path, width, height, align=2)
    for f in seq.frames:
        f.tier = tier
    return seq.frames


def write_frames(path, frames: list[Frame]) -> None:
    with open(path, "wb") as fh:
        for f in frames:
            fh.write(f.to_bytes())


# -- coding ------------------------------------------------------------------------

@dataclass
class DecodedStream:
    """Decoder-side view of a coded sequence (padded geometry)."""

    width: int  # original dimensions
    height: int
    padded_width: int
    padded_height: int
    fps: float
    gop_len: int
    mode: str
    qp_intra: int
    intra: dict[int, Frame]
    inter: dict[int, Frame]
    runs: list[CodecRun]

    @property
    def n_frames(self) -> int:
        return len(self.intra) + len(self.inter)

    @property
    def gops(self) -> list[GopStructure]:
        return structure_gop(self.n_frames, self.gop_len, self.mode, self.qp_intra)

    def manifest(self) -> dict:
        return {
            "format": "crossres-stream-1",
            "width": self.width, "height": self.height,
            "padded_width": self.padded_width, "padded_height": self.padded_height,
            "fps": self.fps, "gop": self.gop_len, "mode": self.mode, "qp": self.qp_intra,
            "frames": [r.to_dict() for r in self.runs],
        }

    def save(self, prefix) -> list[Path]:
        """Write ``prefix.hr.yuv``, ``prefix.lr.yuv`` and ``prefix.json``."""
        prefix = Path(prefix)
        paths = [Path(f"{prefix}.hr.yuv"), Path(f"{prefix}.lr.yuv"), Path(f"{prefix}.json")]
        write_frames(paths[0], [self.intra[i] for i in sorted(self.intra)])
        write_frames(paths[1], [self.inter[i] for i in sorted(self.inter)])
        paths[2].write_text(json.dumps(self.manifest(), indent=2, sort_keys=True) + "\n")
        return paths

    @classmethod
    def load(cls, prefix) -> "DecodedStream":
        prefix = Path(prefix)
        meta = json.loads(Path(f"{prefix}.json").read_text())
        if meta.get("format") != "crossres-stream-1":
            raise ValueError(f"{prefix}.json is not a stream manifest")
        pw, ph = meta["padded_width"], meta["padded_height"]
        roles = meta["frames"]
        intra_idx = [r["index"] for r in roles if r["role"] == "intra"]
        inter_idx = [r["index"] for r in roles if r["role"] == "inter"]
        hr = read_frames(f"{prefix}.hr.yuv", pw, ph, "HR") if intra_idx else []
        lr = read_frames(f"{prefix}.lr.yuv", pw // 2, ph // 2, "LR") if inter_idx else []
        if len(hr) != len(intra_idx) or len(lr) != len(inter_idx):
            raise ValueError(f"{prefix}: tier files hold {len(hr)} HR / {len(lr)} LR frames, "
                             f"manifest lists {len(intra_idx)} / {len(inter_idx)}")
        runs = [CodecRun(r["index"], r["role"], r["qp"], r["bits"]) for r in roles]
        return cls(meta["width"], meta["height"], pw, ph, meta["fps"], meta["gop"], meta["mode"],
                   meta["qp"], dict(zip(intra_idx, hr)), dict(zip(inter_idx, lr)), runs)


def encode_sequence(seq: Sequence, gop_len: int, mode: str, qp_intra: int,
                    codec: str = "sim", encoder: EncoderConfig | None = None,
                    workdir=None, search: int = SEARCH) -> DecodedStream:
    """Code ``seq``: HR intra frames, then an LR inter chain per GoP.

    Each inter frame is predicted from the previous LR reconstruction; the
    first one in a GoP predicts from the downscaled intra reconstruction.
    """
    gops = structure_gop(seq, gop_len, mode, qp_intra)
    if seq.padded_width % ALIGN or seq.padded_height % ALIGN:
        raise ValueError(f"padded size {seq.padded_width}x{seq.padded_height} is not a "
                         f"multiple of {ALIGN}")
    if codec == "external":
        if encoder is None:
            raise ValueError("the external codec needs an encoder config")
        runs = external_encode(seq, gops, encoder, workdir)
    elif codec == "sim":
        runs = []
        for gop in gops:
            qi, qp = gop.schedule.qp_intra, gop.schedule.qp_inter
            rec, bits = simulate_intra(seq[gop.intra_index], QpModel(qi))
            runs.append(CodecRun(gop.intra_index, "intra", qi, bits, rec))
            ref = bicubic_down(rec)
            for i in gop.inter_indices:
                rec_lr, bits = simulate_inter(bicubic_down(seq[i]), ref, QpModel(qp), search)
                runs.append(CodecRun(i, "inter", qp, bits, rec_lr))
                ref = rec_lr
    else:
        raise ValueError(f"unknown codec {codec!r}")
    intra = {r.index: r.recon for r in runs if r.role == "intra"}
    inter = {r.index: r.recon for r in runs if r.role == "inter"}
    return DecodedStream(seq.width, seq.height, seq.padded_width, seq.padded_height, seq.fps,
                         gop_len, mode, qp_intra, intra, inter, runs)


# -- synthesis -----------------------------------------------------------------------

def luma_tensor(f: Frame) -> Tensor:
    return Tensor((f.y.astype(np.float32) / 255.0)[None])


def chroma_tensor(f: Frame) -> Tensor:
    return Tensor(np.stack([f.u, f.v]).astype(np.float32) / 255.0)


def _branch_planes(frames_lr: list[Frame], m: int, refs: list[Frame], weights: Weights,
                   branch: str, to_tensor) -> np.ndarray:
    lr = [to_tensor(f) for f in frames_lr]
    window = TemporalWindow.around(lr, m, weights.config.window // 2)
    out = crs_forward(window, [to_tensor(r) for r in refs], weights.scope(branch))
    return out.data.astype(np.float64) * 255.0


def synthesize_frame(frames_lr: list[Frame], m: int, refs: list[Frame],
                     weights: Weights | None) -> Frame:
    """HR frame for LR frame ``m`` of ``frames_lr`` (the inter frames of one GoP)."""
    if weights is None:
        return bicubic_up(frames_lr[m])
    fallback = bicubic_up(frames_lr[m])
    branches = weights.config.branches
    y = (_branch_planes(frames_lr, m, refs, weights, "luma", luma_tensor)[0]
         if "luma" in branches else fallback.y)
    if "chroma" in branches:
        u, v = _branch_planes(frames_lr, m, refs, weights, "chroma", chroma_tensor)
    else:
        u, v = fallback.u, fallback.v
    return Frame.from_planes([y, u, v], tier="HR")


def synthesize(stream: DecodedStream, weights: Weights | None) -> Sequence:
    """Rebuild the full-resolution sequence; ``weights=None`` gives bicubic upsampling.

    Intra frames pass through unchanged. Inter frames only see LR frames of
    their own GoP and the intra references named by the GoP structure.
    """
    if weights is not None:
        weights.validate(model_param_specs(weights.config))
    frames: dict[int, Frame] = dict(stream.intra)
    for gop in stream.gops:
        inter = gop.inter_indices
        if not inter:
            continue
        lr = [stream.inter[i] for i in inter]
        refs = [stream.intra[r] for r in gop.intra_refs]
        if weights is not None:
            refs = refs[:weights.config.n_refs]
        for m, i in enumerate(inter):
            frames[i] = synthesize_frame(lr, m, refs, weights)
    ordered = [frames[i] for i in range(stream.n_frames)]
    return Sequence(ordered, stream.width, stream.height, stream.fps)


def run_pipeline(seq: Sequence, gop_len: int, mode: str, qp_intra: int,
                 weights: Weights | None, codec: str = "sim",
                 encoder: EncoderConfig | None = None) -> tuple[Sequence, list[CodecRun]]:
    stream = encode_sequence(seq, gop_len, mode, qp_intra, codec, encoder)
    return synthesize(stream, weights), stream.runs


# -- training ------------------------------------------------------------------------

BRANCH_TENSORS = {"luma": luma_tensor, "chroma": chroma_tensor}


def training_samples(seq: Sequence, stream: DecodedStream, gop_index: int = 0,
                     branch: str = "luma", n_refs: int = 1, window: int = 3) -> list[TrainSample]:
    """One sample per inter frame of a GoP: decoded inputs, original HR target."""
    to_tensor = BRANCH_TENSORS[branch]
    gop = stream.gops[gop_index]
    if not gop.inter_indices:
        raise ValueError(f"GoP {gop_index} has no inter frames to learn from")
    lr = [to_tensor(stream.inter[i]) for i in gop.inter_indices]
    refs = [to_tensor(stream.intra[r]) for r in gop.intra_refs][:n_refs]
    return [TrainSample(TemporalWindow.around(lr, m, window // 2), refs, to_tensor(seq[i]))
            for m, i in enumerate(gop.inter_indices)]


def batch_loss(samples: list[TrainSample], weights: Weights, branch: str = "luma") -> float:
    scope = weights.scope(branch)
    losses = [float(l1_loss(crs_forward(s.window, s.intra_refs, scope), s.target).data)
              for s in samples]
    return float(np.mean(losses))


def overfit(samples: list[TrainSample], weights: Weights, steps: int, lr: float = 1e-4,
            branch: str = "luma", every: int = 50, log=None) -> dict[int, float]:
    """Run ``steps`` Adam steps; returns the loss after every ``every`` updates.

    ``weights`` is updated in place.
    """
    state = AdamState()
    checkpoints = {}
    for k in range(steps):
        loss, state = train_step(samples, weights, state, branch, lr)
        if k % every == 0:
            checkpoints[k] = loss
            if log is not None:
                log(f"step {k} loss {loss:.6f}")
    checkpoints[steps] = batch_loss(samples, weights, branch)
    if log is not None:
        log(f"step {steps} loss {checkpoints[steps]:.6f}")
    return checkpoints


# -- evaluation ----------------------------------------------------------------------

@dataclass
class RdReport:
    """Per-frame and mean PSNR per plane, rate and optional BD comparison."""

    frames: list[dict]
    mean_psnr: dict[str, float]
    total_bits: float | None = None
    bitrate_kbps: float | None = None
    comparison: dict | None = None

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "RdReport":
        return cls(**json.loads(text))

    def rd_point(self) -> tuple[float, float]:
        if self.bitrate_kbps is None:
            raise ValueError("report carries no rate")
        return self.bitrate_kbps, self.mean_psnr["y"]


def evaluate(original: Sequence, recon: Sequence, runs: list[CodecRun] | None = None,
             comparison: tuple | None = None) -> RdReport:
    """PSNR of ``recon`` against ``original`` on the original (cropped) area.

    ``comparison`` is ``(anchor_label, anchor_points, test_label, test_points)``
    and adds BD-rate / BD-PSNR fields.
    """
    if len(original) != len(recon):
        raise ValueError(f"frame counts differ: {len(original)} vs {len(recon)}")
    rows = []
    for i, (a, b) in enumerate(zip(original.frames, recon.frames)):
        a = crop_frame(a, original.width, original.height)
        b = crop_frame(b, original.width, original.height)
        row = {"index": i, **{p: round(psnr_plane(a.plane(p), b.plane(p)), 6) for p in PLANES}}
        rows.append(row)
    mean = {p: round(float(np.mean([r[p] for r in rows])), 6) for p in PLANES}
    total = kbps = None
    if runs:
        total = float(sum(r.bits for r in runs))
        kbps = round(total * original.fps / len(original) / 1000.0, 6)
        by_index = {r.index: r for r in runs}
        for row in rows:
            run = by_index.get(row["index"])
            if run is not None:
                row.update(role=run.role, qp=run.qp, bits=run.bits)
    cmp = None
    if comparison is not None:
        la, pa, lt, pt = comparison
        cmp = comparison_record(RdCurve(pa), RdCurve(pt), la, lt)
    return RdReport(rows, mean, total, kbps, cmp)


__all__ = [
    "ALIGN", "DecodedStream", "RdReport", "SEARCH", "aligned", "batch_loss", "chroma_tensor",
    "crop_frame", "encode_sequence", "evaluate", "frame_size", "load_yuv", "luma_tensor",
    "overfit", "pad_frame", "run_pipeline", "structure_gop", "synthesize", "synthesize_frame",
    "training_samples", "write_yuv",
]
