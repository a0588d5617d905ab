"""Named model parameters, seeded initialization and the weight-file format.

Parameters live in a flat ordered mapping from dotted names such as
``luma.man.fe.conv_in.weight`` to :class:`Tensor`. Network code reads them
through :class:`Scope` views so a sub-network only knows its local names.

Weight file layout (all integers little-endian)::

    b"CRSW"  u16 version  u64 seed  u32 header_len  header(JSON, UTF-8)
    payload: float32 tensors back to back, in header order
    sha256(payload)  (32 bytes)

The JSON header holds the model config and a table of
``{"name", "shape", "offset"}`` entries (offset in bytes into the payload).
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterable

import numpy as np

from .tensor import ConvParams, Tensor

MAGIC = b"CRSW"
VERSION = 1


@dataclass(frozen=True)
class ModelConfig:
    """Architecture hyper-parameters shared by every branch."""

    channels: int = 64
    n_refs: int = 1  # 1 for LDP, 2 for RA
    window: int = 3  # temporal window length T = 2M + 1
    fe_blocks: int = 4
    msn_levels: int = 3
    msn_blocks: int = 2
    mfe_blocks: int = 4
    fusion_blocks: int = 8
    branches: tuple[str, ...] = ("luma", "chroma")

    def __post_init__(self):
        if self.n_refs not in (1, 2):
            raise ValueError(f"n_refs must be 1 or 2, got {self.n_refs}")
        if self.window < 1 or self.window % 2 == 0:
            raise ValueError(f"temporal window must be odd, got {self.window}")
        unknown = set(self.branches) - set(BRANCH_CHANNELS)
        if unknown:
            raise ValueError(f"unknown branches {sorted(unknown)}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["branches"] = list(self.branches)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        if "branches" in d:
            d["branches"] = tuple(d["branches"])
        return cls(**d)


# input planes per branch: luma alone, or U and V stacked
BRANCH_CHANNELS = {"luma": 1, "chroma": 2}


@dataclass(frozen=True)
class ParamSpec:
    name: str
    shape: tuple[int, ...]
    init: str  # "kaiming" | "residual" | "zeros"


def conv_specs(name: str, cout: int, cin: int, k: int = 3, init: str = "kaiming",
               bias: bool = True) -> list[ParamSpec]:
    specs = [ParamSpec(f"{name}.weight", (cout, cin, k, k), init)]
    if bias:
        specs.append(ParamSpec(f"{name}.bias", (cout,), "zeros"))
    return specs


def resblock_specs(name: str, c: int) -> list[ParamSpec]:
    # the second conv starts small so deep residual stacks stay near identity
    return conv_specs(f"{name}.conv1", c, c) + conv_specs(f"{name}.conv2", c, c, init="residual")


RESIDUAL_INIT_SCALE = 0.1


def init_tensor(spec: ParamSpec, rng: np.random.Generator) -> np.ndarray:
    if spec.init == "zeros":
        return np.zeros(spec.shape, np.float32)
    fan_in = int(np.prod(spec.shape[1:]))
    bound = np.sqrt(6.0 / fan_in)
    data = rng.uniform(-bound, bound, spec.shape)
    if spec.init == "residual":
        data *= RESIDUAL_INIT_SCALE
    elif spec.init != "kaiming":
        raise ValueError(f"unknown init {spec.init!r} for {spec.name}")
    return data.astype(np.float32)


class MissingWeightsError(KeyError):
    def __init__(self, missing: Iterable[str], unexpected: Iterable[str] = ()):
        self.missing = sorted(missing)
        self.unexpected = sorted(unexpected)
        parts = []
        if self.missing:
            parts.append(f"missing {len(self.missing)} parameters: {', '.join(self.missing)}")
        if self.unexpected:
            parts.append(f"unexpected parameters: {', '.join(self.unexpected)}")
        super().__init__("; ".join(parts))

    def __str__(self) -> str:
        return self.args[0]


class WeightFormatError(ValueError):
    pass


class Weights:
    """Ordered parameter table plus the config and seed that produced it."""

    def __init__(self, tensors: dict[str, Tensor], config: ModelConfig, seed: int = 0):
        self.tensors = dict(tensors)
        self.config = config
        self.seed = seed

    @classmethod
    def initialize(cls, specs: list[ParamSpec], config: ModelConfig, seed: int = 0) -> "Weights":
        rng = np.random.default_rng(seed)
        tensors = {}
        for spec in specs:
            if spec.name in tensors:
                raise ValueError(f"duplicate parameter name {spec.name}")
            tensors[spec.name] = Tensor(init_tensor(spec, rng), name=spec.name)
        return cls(tensors, config, seed)

    def __getitem__(self, name: str) -> Tensor:
        try:
            return self.tensors[name]
        except KeyError:
            raise MissingWeightsError([name]) from None

    def __contains__(self, name: str) -> bool:
        return name in self.tensors

    def __len__(self) -> int:
        return len(self.tensors)

    @property
    def names(self) -> list[str]:
        return list(self.tensors)

    def parameters(self, prefix: str = "") -> list[Tensor]:
        return [t for n, t in self.tensors.items() if n.startswith(prefix)]

    def named(self, prefix: str = "") -> list[tuple[str, Tensor]]:
        return [(n, t) for n, t in self.tensors.items() if n.startswith(prefix)]

    def scope(self, prefix: str) -> "Scope":
        return Scope(self, prefix)

    def copy(self) -> "Weights":
        return Weights({n: Tensor(t.data.copy(), name=n) for n, t in self.tensors.items()},
                       self.config, self.seed)

    def validate(self, specs: list[ParamSpec]) -> None:
        """Check names and shapes against ``specs``; enumerate every problem."""
        expected = {s.name: s.shape for s in specs}
        missing = expected.keys() - self.tensors.keys()
        unexpected = self.tensors.keys() - expected.keys()
        if missing or unexpected:
            raise MissingWeightsError(missing, unexpected)
        bad = [f"{n}: {self.tensors[n].shape} != {shape}" for n, shape in expected.items()
               if self.tensors[n].shape != shape]
        if bad:
            raise WeightFormatError("shape mismatch: " + "; ".join(bad))

    # -- serialization ------------------------------------------------------------

    def to_bytes(self) -> bytes:
        table, chunks, offset = [], [], 0
        for name, t in self.tensors.items():
            buf = np.ascontiguousarray(t.data, dtype="<f4").tobytes()
            table.append({"name": name, "shape": list(t.shape), "offset": offset})
            chunks.append(buf)
            offset += len(buf)
        payload = b"".join(chunks)
        header = json.dumps({"config": self.config.to_dict(), "tensors": table},
                            sort_keys=True, separators=(",", ":")).encode()
        return (MAGIC + struct.pack("<HQI", VERSION, self.seed, len(header)) + header
                + payload + hashlib.sha256(payload).digest())

    @classmethod
    def from_bytes(cls, blob: bytes, source: str = "<bytes>") -> "Weights":
        fixed = len(MAGIC) + struct.calcsize("<HQI")
        if len(blob) < fixed + 32 or blob[:4] != MAGIC:
            raise WeightFormatError(f"{source}: not a weight file (bad magic)")
        version, seed, hlen = struct.unpack_from("<HQI", blob, 4)
        if version != VERSION:
            raise WeightFormatError(f"{source}: unsupported version {version}")
        try:
            header = json.loads(blob[fixed:fixed + hlen])
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise WeightFormatError(f"{source}: corrupt header ({exc})") from None
        payload = blob[fixed + hlen:-32]
        if hashlib.sha256(payload).digest() != blob[-32:]:
            raise WeightFormatError(f"{source}: checksum mismatch")
        config = ModelConfig.from_dict(header["config"])
        tensors = {}
        for entry in header["tensors"]:
            name, shape, off = entry["name"], tuple(entry["shape"]), entry["offset"]
            if name in tensors:
                raise WeightFormatError(f"{source}: parameter {name} appears twice")
            n = int(np.prod(shape)) if shape else 1
            if off + 4 * n > len(payload):
                raise WeightFormatError(f"{source}: tensor {name} runs past the payload")
            data = np.frombuffer(payload, "<f4", n, off).reshape(shape).astype(np.float32)
            tensors[name] = Tensor(data, name=name)
        return cls(tensors, config, seed)

    def save(self, path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path) -> "Weights":
        return cls.from_bytes(Path(path).read_bytes(), str(path))


class Scope:
    """Prefix view over :class:`Weights` used by the network code."""

    def __init__(self, weights: Weights, prefix: str):
        self.weights = weights
        self.prefix = prefix.rstrip(".")

    def _full(self, name: str) -> str:
        return f"{self.prefix}.{name}" if self.prefix else name

    def scope(self, name: str) -> "Scope":
        return Scope(self.weights, self._full(name))

    def tensor(self, name: str) -> Tensor:
        return self.weights[self._full(name)]

    def conv(self, name: str, stride: int = 1, padding: int | None = None,
             padding_mode: str = "zeros") -> ConvParams:
        full = self._full(name)
        w = self.weights[f"{full}.weight"]
        b = self.weights.tensors.get(f"{full}.bias")
        if padding is None:
            padding = w.shape[2] // 2
        return ConvParams(w, b, stride=stride, padding=padding, padding_mode=padding_mode)

    @property
    def config(self) -> ModelConfig:
        return self.weights.config


__all__ = [
    "BRANCH_CHANNELS", "MAGIC", "MissingWeightsError", "ModelConfig", "ParamSpec",
    "RESIDUAL_INIT_SCALE", "Scope", "VERSION", "WeightFormatError", "Weights", "conv_specs",
    "init_tensor", "resblock_specs",
]
