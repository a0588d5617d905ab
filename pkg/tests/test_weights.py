import hashlib

import numpy as np
import pytest
from conftest import SMALL

from crossres.fusion import init_weights, model_param_specs
from crossres.weights import (
    MAGIC,
    MissingWeightsError,
    ModelConfig,
    WeightFormatError,
    Weights,
)


def test_round_trip_is_byte_identical(tmp_path, small_weights):
    path = tmp_path / "w.crsw"
    small_weights.save(path)
    loaded = Weights.load(path)
    assert loaded.names == small_weights.names
    assert loaded.config == small_weights.config and loaded.seed == small_weights.seed
    for n in small_weights.names:
        np.testing.assert_array_equal(loaded[n].data, small_weights[n].data)
    assert loaded.to_bytes() == path.read_bytes()


def test_layout_header_and_checksum(small_weights):
    blob = small_weights.to_bytes()
    assert blob[:4] == MAGIC
    hlen = int.from_bytes(blob[14:18], "little")
    payload = blob[18 + hlen:-32]
    assert hashlib.sha256(payload).digest() == blob[-32:]
    assert len(payload) == 4 * sum(t.size for t in small_weights.tensors.values())


def test_corruption_detected(small_weights):
    blob = bytearray(small_weights.to_bytes())
    blob[-40] ^= 0xFF
    with pytest.raises(WeightFormatError, match="checksum"):
        Weights.from_bytes(bytes(blob))
    with pytest.raises(WeightFormatError, match="magic"):
        Weights.from_bytes(b"XXXX" + bytes(blob[4:]))


def test_seeded_init_is_reproducible():
    a, b = init_weights(SMALL, seed=5), init_weights(SMALL, seed=5)
    assert a.to_bytes() == b.to_bytes()
    assert init_weights(SMALL, seed=6).to_bytes() != a.to_bytes()


def test_heads_start_at_zero(small_weights):
    for name in small_weights.names:
        if ".msn.head" in name or ".high.proj" in name or name.endswith(".bias"):
            assert not small_weights[name].data.any(), name


def test_every_name_exactly_once():
    cfg = ModelConfig(channels=4, fe_blocks=1, msn_blocks=1, mfe_blocks=1, fusion_blocks=1)
    names = [s.name for s in model_param_specs(cfg)]
    assert len(names) == len(set(names))
    assert any(n.startswith("chroma.") for n in names)
    assert init_weights(cfg).tensors["chroma.man.fe.conv_in.weight"].shape == (4, 2, 3, 3)


def test_missing_names_are_enumerated(small_weights):
    table = dict(small_weights.tensors)
    del table["luma.man.dcn.weight"]
    del table["luma.tcn.embed_h.bias"]
    partial = Weights(table, SMALL)
    with pytest.raises(MissingWeightsError) as err:
        partial.validate(model_param_specs(SMALL))
    assert "luma.man.dcn.weight" in str(err.value) and "luma.tcn.embed_h.bias" in str(err.value)
    assert err.value.missing == ["luma.man.dcn.weight", "luma.tcn.embed_h.bias"]


def test_shape_mismatch_rejected(small_weights):
    table = dict(small_weights.tensors)
    from crossres.tensor import Tensor
    table["luma.man.dcn.bias"] = Tensor(np.zeros(3, np.float32))
    with pytest.raises(WeightFormatError, match="luma.man.dcn.bias"):
        Weights(table, SMALL).validate(model_param_specs(SMALL))
