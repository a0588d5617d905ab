"""Group-of-pictures layout: frame roles, reference topology and QPs."""

from __future__ import annotations

from dataclasses import dataclass, field

from .rd import QpSchedule, allocate_qp

MODES = ("ldp", "ra")


@dataclass(frozen=True)
class GopStructure:
    """One GoP: an HR intra frame at ``start`` followed by LR inter frames.

    ``refs`` maps each inter frame to the intra frames its synthesis uses.
    In RA mode the next GoP's intra is the second reference when it exists.
    """

    start: int
    gop_len: int
    mode: str
    n_frames: int  # frames actually present (the last GoP may be short)
    schedule: QpSchedule
    refs: dict = field(default_factory=dict)

    @property
    def intra_index(self) -> int:
        return self.start

    @property
    def inter_indices(self) -> list[int]:
        return list(range(self.start + 1, self.start + self.n_frames))

    @property
    def indices(self) -> list[int]:
        return list(range(self.start, self.start + self.n_frames))

    def role(self, index: int) -> str:
        if index == self.start:
            return "intra"
        if index in self.inter_indices:
            return "inter"
        raise IndexError(f"frame {index} is outside GoP starting at {self.start}")

    @property
    def intra_refs(self) -> tuple[int, ...]:
        """Intra frames referenced by this GoP's inter frames (preceding first)."""
        if self.inter_indices:
            return self.refs[self.inter_indices[0]]
        return (self.start,)


def structure_gop(seq, gop_len: int, mode: str, qp_intra: int) -> list[GopStructure]:
    """Split ``seq`` (or a frame count) into GoPs of ``gop_len`` frames."""
    if gop_len < 2:
        raise ValueError(f"gop_len must be at least 2, got {gop_len}")
    mode = mode.lower()
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    n = seq if isinstance(seq, int) else len(seq)
    schedule = allocate_qp(qp_intra)
    gops = []
    for start in range(0, n, gop_len):
        count = min(gop_len, n - start)
        nxt = start + gop_len
        anchors = (start, nxt) if mode == "ra" and nxt < n else (start,)
        refs = {i: anchors for i in range(start + 1, start + count)}
        gops.append(GopStructure(start, gop_len, mode, count, schedule, refs))
    return gops


__all__ = ["MODES", "GopStructure", "structure_gop"]
