import math
import os
import stat
import sys

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from crossres.codec import (
    CodecRun,
    EncoderConfig,
    EncoderFailedError,
    EncoderNotFoundError,
    EncoderOutputError,
    QpModel,
    code_plane,
    estimate_motion,
    external_encode,
    simulate_inter,
    simulate_intra,
)
from crossres.frame import Frame, Sequence
from crossres.gop import structure_gop
from crossres.rd import psnr, psnr_plane
from crossres.resample import degrade


def dct_matrix(n=8):
    """Orthonormal DCT-II basis written out from its definition."""
    m = np.zeros((n, n))
    for k in range(n):
        for i in range(n):
            scale = math.sqrt(1 / n) if k == 0 else math.sqrt(2 / n)
            m[k, i] = scale * math.cos(math.pi * (2 * i + 1) * k / (2 * n))
    return m


def oracle_code_plane(plane, step):
    d = dct_matrix()
    out = np.zeros_like(plane, dtype=float)
    for y in range(0, plane.shape[0], 8):
        for x in range(0, plane.shape[1], 8):
            c = d @ plane[y:y + 8, x:x + 8] @ d.T
            q = np.sign(c) * np.floor(np.abs(c) / step + 0.5)
            out[y:y + 8, x:x + 8] = d.T @ (q * step) @ d
    return out


def smooth_frame(w=64, h=64, seed=0):
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:h, 0:w]
    fx, fy, ph = rng.uniform(0.5, 3, 3)
    y = 128 + 50 * np.sin(2 * np.pi * fx * xx / w + ph) * np.cos(2 * np.pi * fy * yy / h)
    y += rng.normal(0, 6, y.shape)
    cy, cx = np.mgrid[0:h // 2, 0:w // 2]
    u = 128 + 20 * np.sin(2 * np.pi * cx / (w // 2))
    v = 128 + 20 * np.cos(2 * np.pi * cy / (h // 2))
    return Frame.from_planes([y, u, v])


def test_qp_step():
    assert QpModel(4).step == 1.0
    assert QpModel(10).step == 2.0
    steps = [QpModel(q).step for q in range(52)]
    assert all(b > a for a, b in zip(steps, steps[1:]))


@pytest.mark.parametrize("step", [1.0, 3.5, 20.0])
def test_code_plane_matches_matrix_dct(step):
    rng = np.random.default_rng(1)
    plane = rng.integers(0, 256, (16, 24)).astype(float)
    rec, bits = code_plane(plane, step)
    np.testing.assert_allclose(rec, oracle_code_plane(plane, step), atol=1e-9)
    assert bits >= 0


def test_intra_qp4_high_fidelity():
    f = smooth_frame()
    rec, bits = simulate_intra(f, QpModel(4))
    assert psnr(f, rec) > 45
    assert bits > 0


def test_constant_frame_exact_and_cheap():
    f = Frame.constant(32, 32, 77)
    rec, bits = simulate_intra(f, QpModel(4))
    assert rec == f
    # luma: 16 blocks, chroma: 2 planes x 4 blocks, each block one DC level
    blocks = 16 + 8
    rich, rich_bits = simulate_intra(smooth_frame(32, 32), QpModel(4))
    assert bits < rich_bits
    dc_level = 8 * 77
    per_block = 1 + math.log2(2) + 2 * math.floor(math.log2(dc_level)) + 2
    assert bits == pytest.approx(blocks * per_block)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_monotone_in_qp(seed):
    f = smooth_frame(seed=seed)
    lo, b_lo = simulate_intra(f, QpModel(27))
    hi, b_hi = simulate_intra(f, QpModel(42))
    assert b_hi < b_lo
    assert psnr(f, hi) < psnr(f, lo)


def test_odd_block_geometry_is_cropped_back():
    f = smooth_frame(24, 20)
    rec, _ = simulate_intra(f, QpModel(22))
    assert (rec.width, rec.height) == (24, 20)


def test_motion_zero_for_identical():
    f = smooth_frame()
    mf = estimate_motion(f, f, 4)
    assert mf.vectors.shape == (8, 8, 2)
    assert not mf.vectors.any()


def test_motion_search_zero():
    a, b = smooth_frame(seed=0), smooth_frame(seed=5)
    assert not estimate_motion(a, b, 0).vectors.any()


def oracle_sad_field(cur, ref, search):
    h, w = cur.shape
    out = np.zeros((h // 8, w // 8, 2), int)
    for i in range(h // 8):
        for j in range(w // 8):
            best = None
            for dy in range(-search, search + 1):
                for dx in range(-search, search + 1):
                    y, x = i * 8 + dy, j * 8 + dx
                    if y < 0 or x < 0 or y + 8 > h or x + 8 > w:
                        continue
                    sad = np.abs(cur[i * 8:i * 8 + 8, j * 8:j * 8 + 8].astype(int)
                                 - ref[y:y + 8, x:x + 8].astype(int)).sum()
                    key = (sad, abs(dy) + abs(dx), dy, dx)
                    if best is None or key < best:
                        best = key
            out[i, j] = best[2:]
    return out


def test_motion_global_shift():
    base = smooth_frame(72, 64, seed=3)
    cur = base
    # ref sampled 3 pixels to the right: ref[y, x] = cur[y, x + 3]
    planes = [np.roll(p, -3 if k == 0 else -1, axis=1) for k, p in enumerate(base.planes)]
    ref = Frame(*planes)
    mf = estimate_motion(cur, ref, 4)
    # columns 1..7 are clear of the wrapped band and the left border
    assert (mf.vectors[:, 1:-1] == (0, -3)).all()
    np.testing.assert_array_equal(mf.vectors, oracle_sad_field(cur.y, ref.y, 4))


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 10_000), search=st.integers(0, 3))
def test_motion_matches_sad_oracle(seed, search):
    rng = np.random.default_rng(seed)
    cur = Frame(rng.integers(0, 4, (24, 32), dtype=np.uint8),
                np.zeros((12, 16), np.uint8), np.zeros((12, 16), np.uint8))
    ref = Frame(rng.integers(0, 4, (24, 32), dtype=np.uint8),
                np.zeros((12, 16), np.uint8), np.zeros((12, 16), np.uint8))
    np.testing.assert_array_equal(estimate_motion(cur, ref, search).vectors,
                                  oracle_sad_field(cur.y, ref.y, search))


def test_inter_identical_is_exact():
    f = smooth_frame(32, 32)
    rec, bits = simulate_inter(f, f, QpModel(4), 2)
    assert rec == f
    # every block: coded flag only, plus a zero vector (1 bit per component)
    assert bits == pytest.approx(16 * 2 + (16 + 8) * 1)


def test_inter_size_mismatch():
    with pytest.raises(ValueError):
        simulate_inter(Frame.constant(32, 32), Frame.constant(16, 16), QpModel(30), 2)


def test_inter_large_qp_keeps_prediction():
    ref = smooth_frame(seed=4)
    rng = np.random.default_rng(0)
    t = Frame.from_planes([p + rng.normal(0, 2, p.shape) for p in ref.planes])
    rec, bits = simulate_inter(t, ref, QpModel(47), 2)
    assert np.mean(np.abs(rec.y.astype(int) - ref.y.astype(int))) < 0.5
    _, fine_bits = simulate_inter(t, ref, QpModel(22), 2)
    assert bits < fine_bits


def test_noise_propagation_single_case():
    s = smooth_frame(seed=9)
    t = Frame(*[np.roll(p, 1, axis=0) for p in s.planes])
    noisy = Frame.from_planes([p + np.random.default_rng(1).normal(0, 8, p.shape)
                               for p in degrade(s).planes])
    good, _ = simulate_inter(t, s, QpModel(32), 4)
    bad, _ = simulate_inter(t, noisy, QpModel(32), 4)
    intra, _ = simulate_intra(t, QpModel(32))
    assert psnr(t, bad) <= psnr(t, good)
    # the degraded-reference error stays above the intra quantization floor
    assert psnr(t, bad) <= psnr(t, intra) + 1.0


def test_determinism():
    f = smooth_frame(seed=7)
    g = smooth_frame(seed=8)
    a = simulate_inter(f, g, QpModel(30), 3)
    b = simulate_inter(f, g, QpModel(30), 3)
    assert a[0] == b[0] and a[0].to_bytes() == b[0].to_bytes() and a[1] == b[1]


# -- external encoder -------------------------------------------------------------

STUB = """#!{python}
import shutil, sys
src, dst, frames, mode = sys.argv[1], sys.argv[2], int(sys.argv[3]), sys.argv[4]
shutil.copyfile(src, dst)
with open("rate.log", "w") as fh:
    fh.write("# frame bits\\n")
    for i in range(frames):
        fh.write(f"{{i}} 1234\\n" if mode == "ok" else "0 lots\\n")
sys.exit(3 if mode == "fail" else 0)
"""


def make_stub(tmp_path, mode="ok"):
    script = tmp_path / "stub_encoder.py"
    script.write_text(STUB.format(python=sys.executable))
    script.chmod(script.stat().st_mode | stat.S_IEXEC)
    cfg = tmp_path / "enc.cfg"
    cfg.write_text(f"# stub\nbinary = {script}\n"
                   f"args = {{input}} {{output}} {{frames}} {mode}\nrate_log = *.log\n")
    return EncoderConfig.from_file(cfg)


def tiny_sequence(n=3):
    frames = [smooth_frame(32, 32, seed=i) for i in range(n)]
    return Sequence(frames, 32, 32)


def test_external_stub_round_trip(tmp_path):
    cfg = make_stub(tmp_path)
    seq = tiny_sequence()
    gops = structure_gop(seq, 3, "ldp", 37)
    runs = external_encode(seq, gops, cfg, workdir=tmp_path / "work")
    assert [r.role for r in runs] == ["intra", "inter", "inter"]
    assert all(isinstance(r, CodecRun) and r.bits == 1234 for r in runs)
    assert runs[0].recon == seq[0] and runs[0].qp == 37
    assert runs[1].qp == 32 and (runs[1].recon.width, runs[1].recon.height) == (16, 16)


def test_external_missing_binary(tmp_path):
    cfg = EncoderConfig(str(tmp_path / "does-not-exist"), "{input}", "*.log")
    with pytest.raises(EncoderNotFoundError, match="encoder not found"):
        external_encode(tiny_sequence(), structure_gop(3, 3, "ldp", 37), cfg)


def test_external_malformed_log(tmp_path):
    cfg = make_stub(tmp_path, "bad")
    with pytest.raises(EncoderOutputError, match=r"rate\.log:2"):
        external_encode(tiny_sequence(), structure_gop(3, 3, "ldp", 37), cfg,
                        workdir=tmp_path / "work")


def test_external_nonzero_exit(tmp_path):
    cfg = make_stub(tmp_path, "fail")
    with pytest.raises(EncoderFailedError, match="status 3"):
        external_encode(tiny_sequence(), structure_gop(3, 3, "ldp", 37), cfg,
                        workdir=tmp_path / "work")


def test_config_rejects_missing_keys(tmp_path):
    p = tmp_path / "c.cfg"
    p.write_text("binary = x\n")
    with pytest.raises(ValueError, match="missing"):
        EncoderConfig.from_file(p)
    assert os.path.exists(p)
