"""Planar 8-bit YUV 4:2:0 pictures."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

PLANES = ("y", "u", "v")


@dataclass
class Frame:
    """One 4:2:0 picture; chroma planes are half size on both axes.

    ``tier`` is ``"HR"`` or ``"LR"`` and only documents where the frame sits in
    the pipeline.
    """

    y: np.ndarray
    u: np.ndarray
    v: np.ndarray
    tier: str = "HR"

    def __post_init__(self):
        h, w = self.y.shape
        if h % 2 or w % 2:
            raise ValueError(f"4:2:0 frames need even dimensions, got {w}x{h}")
        for name in ("u", "v"):
            if getattr(self, name).shape != (h // 2, w // 2):
                raise ValueError(
                    f"{name} plane is {getattr(self, name).shape}, expected {(h // 2, w // 2)}")

    @property
    def width(self) -> int:
        return self.y.shape[1]

    @property
    def height(self) -> int:
        return self.y.shape[0]

    @property
    def planes(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return self.y, self.u, self.v

    def plane(self, name: str) -> np.ndarray:
        return getattr(self, name)

    @classmethod
    def from_planes(cls, planes, tier: str = "HR") -> "Frame":
        """Build a frame from real-valued planes, rounding and clipping to 8 bits."""
        return cls(*(to_uint8(p) for p in planes), tier=tier)

    @classmethod
    def constant(cls, width: int, height: int, value: int = 128, tier: str = "HR") -> "Frame":
        return cls(np.full((height, width), value, np.uint8),
                   np.full((height // 2, width // 2), value, np.uint8),
                   np.full((height // 2, width // 2), value, np.uint8), tier)

    def copy(self) -> "Frame":
        return Frame(self.y.copy(), self.u.copy(), self.v.copy(), self.tier)

    def to_bytes(self) -> bytes:
        return b"".join(np.ascontiguousarray(p, dtype=np.uint8).tobytes() for p in self.planes)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Frame):
            return NotImplemented
        return all(np.array_equal(a, b) for a, b in zip(self.planes, other.planes))


def to_uint8(plane: np.ndarray) -> np.ndarray:
    """Round half away from zero and clip to [0, 255]."""
    p = np.asarray(plane, dtype=np.float64)
    return np.clip(np.sign(p) * np.floor(np.abs(p) + 0.5), 0, 255).astype(np.uint8)


@dataclass
class Sequence:
    """A list of equally sized frames plus the pre-padding geometry."""

    frames: list[Frame]
    width: int
    height: int
    fps: float = 30.0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.frames:
            shape = self.frames[0].y.shape
            for i, f in enumerate(self.frames):
                if f.y.shape != shape:
                    raise ValueError(f"frame {i} is {f.y.shape}, expected {shape}")

    def __len__(self) -> int:
        return len(self.frames)

    def __getitem__(self, i) -> Frame:
        return self.frames[i]

    @property
    def padded_width(self) -> int:
        return self.frames[0].width if self.frames else self.width

    @property
    def padded_height(self) -> int:
        return self.frames[0].height if self.frames else self.height
