import numpy as np
import pytest
from conftest import SMALL, randomize, rebind
from hypothesis import given, settings
from hypothesis import strategies as st

from crossres.fusion import init_weights
from crossres.man import (
    OffsetPyramid,
    TemporalWindow,
    aggregate,
    compute_offsets,
    dcn_align,
    extract_features,
    man_forward,
    temporal_masks,
)
from crossres.tensor import ConvParams, Tensor, conv2d, grad_check
from crossres.weights import ModelConfig, Weights


def fixed_offsets(h, w, dy=0.0, dx=0.0, mask=1.0, dtype=np.float32):
    off = np.zeros((18, h, w), dtype)
    off[0::2] = dy
    off[1::2] = dx
    return OffsetPyramid([Tensor(off)], [Tensor(np.full((9, h, w), mask, dtype))])


def seeded_dcn(weights, seed, c):
    rng = np.random.default_rng(seed)
    wt = rng.normal(0, 0.2, (c, c, 3, 3)).astype(np.float32)
    b = rng.normal(0, 0.1, c).astype(np.float32)
    w = rebind(weights, ["luma.man.dcn.weight", "luma.man.dcn.bias"], [Tensor(wt), Tensor(b)])
    return w.scope("luma.man"), ConvParams(Tensor(wt), Tensor(b))


def test_extract_features_shape():
    w = init_weights(ModelConfig(branches=("luma",)), seed=0).scope("luma.man")
    x = Tensor(np.random.default_rng(0).random((1, 32, 32), dtype=np.float32))
    assert extract_features(x, w).shape == (64, 32, 32)


def test_extract_features_zero_weights(small_weights):
    zeros = {n: Tensor(np.zeros(t.shape, np.float32)) if ".fe." in n else t
             for n, t in small_weights.tensors.items()}
    w = Weights(zeros, SMALL).scope("luma.man")
    x = Tensor(np.random.default_rng(0).random((1, 16, 16), dtype=np.float32))
    assert not extract_features(x, w).data.any()


def test_extract_features_shared(small_weights):
    w = small_weights.scope("luma.man")
    x = Tensor(np.random.default_rng(0).random((1, 16, 16), dtype=np.float32))
    np.testing.assert_array_equal(extract_features(x, w).data,
                                  extract_features(Tensor(x.data.copy()), w).data)


def test_offsets_start_at_zero_with_half_masks():
    cfg = ModelConfig(branches=("luma",))
    w = init_weights(cfg, seed=3).scope("luma.man")
    f = Tensor(np.random.default_rng(0).normal(size=(64, 32, 32)).astype(np.float32))
    pyr = compute_offsets(f, f, w)
    assert [o.shape for o in pyr.offsets] == [(18, 32, 32), (18, 16, 16), (18, 8, 8)]
    assert [m.shape for m in pyr.masks] == [(9, 32, 32), (9, 16, 16), (9, 8, 8)]
    for o, m in zip(pyr.offsets, pyr.masks):
        assert not o.data.any()
        assert (m.data == 0.5).all()
    again = compute_offsets(f, f, w)
    np.testing.assert_array_equal(again.masks[1].data, pyr.masks[1].data)


@pytest.mark.parametrize("seed", range(5))
def test_dcn_degenerates_to_conv(seed):
    weights = init_weights(ModelConfig(branches=("luma",)), seed=0)
    w, conv = seeded_dcn(weights, seed, 64)
    feat = Tensor(np.random.default_rng(100 + seed).normal(size=(64, 12, 14)).astype(np.float32))
    out = dcn_align(feat, fixed_offsets(12, 14), w).data
    conv.padding_mode = "replicate"
    np.testing.assert_allclose(out, conv2d(feat, conv).data, atol=1e-5)
    # away from the border the padding rule is irrelevant
    conv.padding_mode = "zeros"
    np.testing.assert_allclose(out[:, 1:-1, 1:-1], conv2d(feat, conv).data[:, 1:-1, 1:-1],
                               atol=1e-5)


def test_dcn_integer_offset_realigns(small_weights):
    w, conv = seeded_dcn(small_weights, 7, 4)
    rng = np.random.default_rng(0)
    cur = rng.normal(size=(4, 16, 20)).astype(np.float32)
    nbr = np.roll(cur, 2, axis=2)  # nbr[y, x] = cur[y, x - 2]
    target = conv2d(Tensor(cur), conv).data
    plain = conv2d(Tensor(nbr), conv).data
    aligned = dcn_align(Tensor(nbr), fixed_offsets(16, 20, dx=2.0), w).data
    inner = (slice(None), slice(1, -1), slice(1, -3))
    err_aligned = np.abs(aligned - target)[inner].mean()
    err_plain = np.abs(plain - target)[inner].mean()
    assert err_aligned < 1e-5 < err_plain


def test_dcn_far_taps_clamp_to_border(small_weights):
    w, conv = seeded_dcn(small_weights, 1, 4)
    feat = Tensor(np.random.default_rng(0).normal(size=(4, 8, 8)).astype(np.float32))
    out = dcn_align(feat, fixed_offsets(8, 8, dy=-100.0, dx=250.0), w).data
    assert np.isfinite(out).all()
    # every tap reads the top-right corner
    corner = feat.data[:, 0, 7]
    expected = conv.weight.data.sum(axis=(2, 3)) @ corner + conv.bias.data
    np.testing.assert_allclose(out, np.broadcast_to(expected[:, None, None], out.shape),
                               atol=1e-5)


def test_aggregate_masks_and_shape(small_weights):
    w = randomize(small_weights, seed=2).scope("luma.man")
    rng = np.random.default_rng(0)
    stacks = [Tensor(rng.normal(size=(4, 8, 10))) for _ in range(3)]
    masks = temporal_masks(stacks, 1, w)
    assert masks[1] is None
    for m in (masks[0], masks[2]):
        assert m.shape == (1, 8, 10)
        assert ((m.data > 0) & (m.data < 1)).all()
    assert aggregate(stacks, 1, w).shape == (4, 8, 10)
    with pytest.raises(ValueError):
        aggregate(stacks[:2], 1, w)


def test_identical_stacks_give_identical_masks(small_weights):
    w = randomize(small_weights, seed=4).scope("luma.man")
    s = Tensor(np.random.default_rng(3).normal(size=(4, 8, 8)))
    masks = temporal_masks([s, s, s], 1, w)
    np.testing.assert_array_equal(masks[0].data, masks[2].data)


def test_swapping_neighbours_swaps_only_their_branches(small_weights):
    w = randomize(small_weights, seed=5).scope("luma.man")
    rng = np.random.default_rng(8)
    a, b, c = (Tensor(rng.normal(size=(4, 8, 8))) for _ in range(3))
    m1 = temporal_masks([a, b, c], 1, w)
    m2 = temporal_masks([c, b, a], 1, w)
    assert m1[1] is None and m2[1] is None
    np.testing.assert_array_equal(m1[0].data, m2[2].data)
    np.testing.assert_array_equal(m1[2].data, m2[0].data)


def test_window_edge_replication():
    frames = [Tensor(np.full((1, 8, 8), i, np.float32)) for i in range(3)]
    first = TemporalWindow.around(frames, 0)
    assert [f.data[0, 0, 0] for f in first.frames] == [0, 0, 1]
    last = TemporalWindow.around(frames, 2)
    assert [f.data[0, 0, 0] for f in last.frames] == [1, 2, 2]
    single = TemporalWindow.around(frames[:1], 0)
    assert all(f is frames[0] for f in single.frames)


def test_static_window_runs(small_weights):
    w = small_weights.scope("luma.man")
    x = Tensor(np.random.default_rng(0).random((1, 16, 16), dtype=np.float32))
    out = man_forward(TemporalWindow([x, x, x], 1), w)
    assert out.shape == (4, 16, 16) and np.isfinite(out.data).all()


@settings(max_examples=6, deadline=None)
@given(h=st.integers(8, 13).map(lambda v: 2 * v), w=st.integers(8, 13).map(lambda v: 2 * v))
def test_man_shape_contract(h, w):
    weights = init_weights(SMALL, seed=0)
    x = Tensor(np.random.default_rng(h * w).random((1, h, w), dtype=np.float32))
    out = man_forward(TemporalWindow([x, x, x], 1), weights.scope("luma.man"))
    assert out.shape == (SMALL.channels, h, w)


def test_man_gradcheck(small_weights):
    weights = randomize(small_weights, seed=11)
    rng = np.random.default_rng(2)
    frames = [Tensor(rng.random((1, 8, 8))) for _ in range(3)]
    names = ["luma.man.dcn.weight", "luma.man.msn.head0.weight", "luma.man.ta.embed_nbr.weight"]

    def f(a, b, c, *params):
        w = rebind(weights, names, params).scope("luma.man")
        return man_forward(TemporalWindow([a, b, c], 1), w)

    err = grad_check(f, frames + [weights[n] for n in names], max_elements=12, eps=1e-4, refine=3)
    assert err < 1e-3
