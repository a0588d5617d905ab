import json

import numpy as np
import pytest
from conftest import SMALL, randomize
from test_codec import make_stub

from crossres.frame import Frame, Sequence
from crossres.fusion import init_weights
from crossres.pipeline import (
    DecodedStream,
    RdReport,
    encode_sequence,
    evaluate,
    load_yuv,
    run_pipeline,
    synthesize,
    write_yuv,
)
from crossres.rd import RdCurve, bd_psnr, bd_rate
from crossres.resample import bicubic_up
from crossres.weights import MissingWeightsError, ModelConfig, Weights

BOTH = ModelConfig(**{**SMALL.to_dict(), "branches": ("luma", "chroma")})


def raw_frames(n, w, h, seed=0):
    rng = np.random.default_rng(seed)
    return rng.integers(0, 256, n * w * h * 3 // 2, dtype=np.uint8).tobytes()


def moving_sequence(n=4, w=32, h=32, seed=0):
    """Smooth texture panning one pixel per frame."""
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:h, 0:w + n]
    base = 128 + 60 * np.sin(xx / 3.0 + rng.uniform(0, 6)) * np.cos(yy / 4.0)
    frames = []
    for i in range(n):
        y = base[:, i:i + w]
        frames.append(Frame.from_planes([y, y[::2, ::2] * 0.5 + 60, 200 - y[::2, ::2] * 0.3]))
    return Sequence(frames, w, h)


def test_load_two_frames(tmp_path):
    path = tmp_path / "a.yuv"
    path.write_bytes(raw_frames(2, 16, 16))
    assert path.stat().st_size == 768
    seq = load_yuv(path, 16, 16)
    assert len(seq) == 2 and (seq.width, seq.height) == (16, 16)
    assert seq[1].y.shape == (16, 16) and seq[1].u.shape == (8, 8)


def test_short_read(tmp_path):
    path = tmp_path / "a.yuv"
    path.write_bytes(raw_frames(2, 16, 16)[:700])
    with pytest.raises(ValueError, match="short read at frame 1"):
        load_yuv(path, 16, 16, count=2)
    with pytest.raises(ValueError, match="whole number"):
        load_yuv(path, 16, 16)


@pytest.mark.parametrize("w,h", [(0, 16), (16, 0), (15, 16)])
def test_bad_dimensions(tmp_path, w, h):
    path = tmp_path / "a.yuv"
    path.write_bytes(raw_frames(1, 16, 16))
    with pytest.raises(ValueError):
        load_yuv(path, w, h)


@pytest.mark.parametrize("w,h", [(32, 16), (20, 18), (34, 22)])
def test_yuv_round_trip(tmp_path, w, h):
    src, dst = tmp_path / "a.yuv", tmp_path / "b.yuv"
    src.write_bytes(raw_frames(3, w, h, seed=w))
    seq = load_yuv(src, w, h)
    assert seq.padded_width % 16 == 0 and seq.padded_height % 16 == 0
    write_yuv(dst, seq)
    assert dst.read_bytes() == src.read_bytes()


def test_padding_mirrors_edge(tmp_path):
    path = tmp_path / "a.yuv"
    path.write_bytes(raw_frames(1, 20, 18))
    f = load_yuv(path, 20, 18)[0]
    np.testing.assert_array_equal(f.y[:18, 20:24], f.y[:18, 19:15:-1])
    np.testing.assert_array_equal(f.y[18:, :20], f.y[17:3:-1, :20])


def test_encode_tiers_and_chain():
    seq = moving_sequence(5)
    stream = encode_sequence(seq, 3, "ldp", 32)
    assert sorted(stream.intra) == [0, 3] and sorted(stream.inter) == [1, 2, 4]
    assert all(f.y.shape == (32, 32) for f in stream.intra.values())
    assert all(f.y.shape == (16, 16) for f in stream.inter.values())
    assert [r.index for r in stream.runs] == list(range(5))
    assert [r.qp for r in stream.runs] == [32, 27, 27, 32, 27]


def test_stream_save_load(tmp_path):
    stream = encode_sequence(moving_sequence(4), 2, "ra", 37)
    paths = stream.save(tmp_path / "s")
    again = DecodedStream.load(tmp_path / "s")
    assert again.manifest() == stream.manifest()
    assert again.intra == stream.intra and again.inter == stream.inter
    assert json.loads(paths[2].read_text())["mode"] == "ra"


def test_unknown_codec():
    with pytest.raises(ValueError, match="codec"):
        encode_sequence(moving_sequence(2), 2, "ldp", 32, codec="x265")


def test_constant_video_fine_step_is_lossless():
    seq = Sequence([Frame.constant(32, 32, 90 + i) for i in range(4)], 32, 32)
    # qp 9 on intras means qp 4 (unit step) on inter frames
    out, runs = run_pipeline(seq, 4, "ldp", 9, init_weights(BOTH, seed=0))
    for a, b in zip(seq.frames, out.frames):
        for p, q in zip(a.planes, b.planes):
            assert np.abs(p.astype(int) - q.astype(int)).max() <= 1


def test_two_frame_gop_smoke():
    seq = moving_sequence(2, 64, 64)
    out, runs = run_pipeline(seq, 2, "ldp", 37, init_weights(seed=0))
    assert len(out) == 2 and out[0] == encode_sequence(seq, 2, "ldp", 37).intra[0]
    assert out[1].y.shape == (64, 64) and [r.role for r in runs] == ["intra", "inter"]


def test_output_cropped_to_original():
    frames = moving_sequence(3, 40, 36).frames
    padded = [Frame(f.y[:36, :40].copy(), f.u[:18, :20].copy(), f.v[:18, :20].copy())
              for f in frames]
    from crossres.pipeline import pad_frame
    seq = Sequence([pad_frame(f, 48, 48) for f in padded], 40, 36)
    out, _ = run_pipeline(seq, 3, "ldp", 32, None)
    assert (out.width, out.height) == (40, 36)
    report = evaluate(seq, out)
    assert report.mean_psnr["y"] > 20


def test_untrained_model_matches_bicubic():
    seq = moving_sequence(3)
    stream = encode_sequence(seq, 3, "ldp", 32)
    net = synthesize(stream, init_weights(BOTH, seed=1))
    bic = synthesize(stream, None)
    assert net.frames == bic.frames
    assert bic[1] == bicubic_up(stream.inter[1])


def test_missing_weights_enumerated():
    weights = init_weights(SMALL, seed=0)
    table = dict(weights.tensors)
    del table["luma.fusion.high.proj.weight"]
    stream = encode_sequence(moving_sequence(2), 2, "ldp", 32)
    with pytest.raises(MissingWeightsError, match="luma.fusion.high.proj.weight"):
        synthesize(stream, Weights(table, SMALL))


def _float32(weights):
    from crossres.tensor import Tensor
    return Weights({n: Tensor(t.data.astype(np.float32)) for n, t in weights.tensors.items()},
                   weights.config)


@pytest.mark.parametrize("mode,n_refs", [("ldp", 1), ("ra", 2)])
def test_gop_independence(mode, n_refs):
    cfg = ModelConfig(**{**SMALL.to_dict(), "n_refs": n_refs})
    weights = _float32(randomize(init_weights(cfg, seed=0), seed=3))
    seq = moving_sequence(7)
    base = synthesize(encode_sequence(seq, 3, mode, 32), weights)
    # GoPs are [0..2], [3..5], [6]; an inter frame of the second GoP is
    # invisible to the first and third
    edited = Sequence([f.copy() for f in seq.frames], 32, 32)
    edited.frames[4] = Frame.constant(32, 32, 10)
    out = synthesize(encode_sequence(edited, 3, mode, 32), weights)
    assert out.frames[:4] == base.frames[:4] and out.frames[6] == base.frames[6]
    assert out.frames[5] != base.frames[5]
    # the next GoP's intra frame is a reference only under random access
    edited = Sequence([f.copy() for f in seq.frames], 32, 32)
    edited.frames[3] = Frame.constant(32, 32, 10)
    out = synthesize(encode_sequence(edited, 3, mode, 32), weights)
    assert (out.frames[1:3] == base.frames[1:3]) == (mode == "ldp")


def test_evaluate_identity_cap():
    seq = moving_sequence(3)
    report = evaluate(seq, seq)
    assert report.mean_psnr == {"y": 99.0, "u": 99.0, "v": 99.0}
    assert report.total_bits is None


def test_evaluate_count_mismatch():
    seq = moving_sequence(3)
    with pytest.raises(ValueError, match="frame counts"):
        evaluate(seq, Sequence(seq.frames[:2], 32, 32))


def test_report_round_trip():
    seq = moving_sequence(4)
    out, runs = run_pipeline(seq, 2, "ldp", 37, None)
    curve_a = [(100.0, 30.0), (160.0, 33.0), (250.0, 36.0), (400.0, 39.0)]
    curve_t = [(90.0, 30.2), (150.0, 33.1), (230.0, 36.3), (380.0, 39.0)]
    report = evaluate(seq, out, runs, ("anchor", curve_a, "crs", curve_t))
    text = report.to_json()
    assert RdReport.from_json(text).to_json() == text
    assert report.total_bits == sum(r.bits for r in runs)
    assert report.frames[1]["role"] == "inter"
    assert report.comparison["bd_rate"] == bd_rate(RdCurve(curve_a), RdCurve(curve_t))
    assert report.comparison["bd_psnr"] == bd_psnr(RdCurve(curve_a), RdCurve(curve_t))


def test_external_codec_path(tmp_path):
    cfg = make_stub(tmp_path)
    seq = moving_sequence(4)
    stream = encode_sequence(seq, 2, "ldp", 32, codec="external", encoder=cfg,
                             workdir=tmp_path / "work")
    assert [r.role for r in stream.runs] == ["intra", "inter", "intra", "inter"]
    out = synthesize(stream, None)
    assert len(out) == 4
    with pytest.raises(ValueError, match="encoder config"):
        encode_sequence(seq, 2, "ldp", 32, codec="external")
