"""Multimodal rotary position IDs and rotary application.

Every token of a mixed text/image/video sequence gets a ``(t, h, w)`` triple.
Text tokens use the same value in all three components; visual tokens keep a
per-tube temporal ID and spatial IDs offset by their merged-grid row/column.
Each new segment starts one past the largest ID used so far.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, List, NamedTuple, Sequence, Tuple, Union

import numpy as np

from .errors import LengthMismatch
from .patchify import PatchGrid


class PositionTriple(NamedTuple):
    t: int
    h: int
    w: int


@dataclass(frozen=True)
class TextSegment:
    length: int

    def __post_init__(self):
        if self.length < 1:
            raise ValueError("text segments need length >= 1")

    @property
    def num_tokens(self) -> int:
        return self.length


@dataclass(frozen=True)
class ImageSegment:
    grid: PatchGrid

    def __post_init__(self):
        if self.grid.grid_t != 1:
            raise ValueError(f"still images have grid_t == 1, got {self.grid.grid_t}")

    @property
    def num_tokens(self) -> int:
        return self.grid.num_tokens


@dataclass(frozen=True)
class VideoSegment:
    grid: PatchGrid

    @property
    def num_tokens(self) -> int:
        return self.grid.num_tokens


SegmentDescriptor = Union[TextSegment, ImageSegment, VideoSegment]


@dataclass(frozen=True, eq=False)
class PositionPlan:
    """Per-token position IDs, stored as an ``(n_tokens, 3)`` int64 array."""

    ids: np.ndarray
    segment_spans: Tuple[Tuple[int, int], ...]

    @property
    def triples(self) -> List[PositionTriple]:
        return [PositionTriple(*map(int, row)) for row in self.ids]

    def __len__(self):
        return self.ids.shape[0]

    def __eq__(self, other):
        if not isinstance(other, PositionPlan):
            return NotImplemented
        return self.segment_spans == other.segment_spans and np.array_equal(self.ids, other.ids)

    def shifted(self, offset: int) -> "PositionPlan":
        return PositionPlan(self.ids + offset, self.segment_spans)

    def dumps(self) -> str:
        """One ``idx t h w`` line per token."""
        return "".join(f"{i} {t} {h} {w}\n" for i, (t, h, w) in enumerate(self.ids.tolist()))

    @classmethod
    def loads(cls, text: str) -> "PositionPlan":
        rows = []
        for n, line in enumerate(text.splitlines()):
            if not line.strip():
                continue
            idx, t, h, w = map(int, line.split())
            if idx != n:
                raise ValueError(f"line {n} has index {idx}")
            rows.append((t, h, w))
        ids = np.array(rows, dtype=np.int64).reshape(-1, 3)
        return cls(ids, ((0, len(ids)),))


def assign_positions(segments: Sequence[SegmentDescriptor]) -> PositionPlan:
    if not segments:
        raise ValueError("need at least one segment")
    blocks = []
    spans = []
    start = 0
    base = 0
    for seg in segments:
        if isinstance(seg, TextSegment):
            k = np.arange(seg.length, dtype=np.int64) + base
            block = np.stack([k, k, k], axis=1)
        elif isinstance(seg, (ImageSegment, VideoSegment)):
            gt, gh, gw = seg.grid.shape
            t, h, w = np.meshgrid(
                np.arange(gt, dtype=np.int64),
                np.arange(gh, dtype=np.int64),
                np.arange(gw, dtype=np.int64),
                indexing="ij",
            )
            block = np.stack([t.ravel(), h.ravel(), w.ravel()], axis=1) + base
        else:
            raise TypeError(f"unknown segment {seg!r}")
        blocks.append(block)
        spans.append((start, start + len(block)))
        start += len(block)
        base = int(block.max()) + 1
    return PositionPlan(np.concatenate(blocks), tuple(spans))


def max_position(plan: PositionPlan) -> int:
    return int(plan.ids.max())


def sequential_max_position(plan: PositionPlan) -> int:
    """Largest ID plain 1D numbering would give the same tokens."""
    return len(plan) - 1


def assign_positions_2d(patch_h: int, patch_w: int, tubes: int = 1) -> List[Tuple[int, int]]:
    """Row-major ``(row, col)`` patch positions for the vision encoder.

    Positions repeat for every tube; the encoder's 2D rotary only sees
    spatial layout.
    """
    if min(patch_h, patch_w, tubes) < 1:
        raise ValueError("grid dimensions must be >= 1")
    one = [(r, c) for r in range(patch_h) for c in range(patch_w)]
    return one * tubes


def vision_positions(grid: PatchGrid, merge_size: int = 2) -> List[Tuple[int, int]]:
    return assign_positions_2d(*grid.patch_shape(merge_size)[1:], tubes=grid.grid_t)


@dataclass(frozen=True)
class RotaryConfig:
    head_dim: int = 128
    theta: float = 10000.0
    sections: Tuple[int, int, int] = None

    def __post_init__(self):
        if self.head_dim < 2 or self.head_dim % 2:
            raise ValueError(f"head_dim must be even and >= 2, got {self.head_dim}")
        if self.sections is None:
            object.__setattr__(self, "sections", default_sections(self.head_dim))
        secs = tuple(int(s) for s in self.sections)
        object.__setattr__(self, "sections", secs)
        if len(secs) != 3 or min(secs) < 1 or sum(secs) != self.head_dim // 2:
            raise ValueError(
                f"sections {secs} must be three positive counts summing to {self.head_dim // 2}"
            )

    @property
    def pairs(self) -> int:
        return self.head_dim // 2

    def frequencies(self) -> np.ndarray:
        k = np.arange(self.pairs, dtype=np.float64)
        return self.theta ** (-2.0 * k / self.head_dim)

    def section_index(self) -> np.ndarray:
        """Which triple component (0=t, 1=h, 2=w) drives each rotation pair."""
        return np.repeat(np.arange(3), self.sections)


def default_sections(head_dim: int) -> Tuple[int, int, int]:
    """Height and width get ``pairs // 3`` each; temporal takes the rest."""
    pairs = head_dim // 2
    hw = pairs // 3
    if hw < 1:
        raise ValueError(f"head_dim {head_dim} is too small to split into three sections")
    return pairs - 2 * hw, hw, hw


def rotary_angles(p, cfg: RotaryConfig) -> np.ndarray:
    """Angles for one triple or an ``(n, 3)`` array of triples."""
    ids = np.asarray(p, dtype=np.float64)
    sel = ids[..., cfg.section_index()]
    return sel * cfg.frequencies()


def rotary_angles_1d(positions, head_dim: int, theta: float = 10000.0) -> np.ndarray:
    """Standard rotary angles: one sequence index drives every pair."""
    pos = np.asarray(positions, dtype=np.float64)
    k = np.arange(head_dim // 2, dtype=np.float64)
    return pos[..., None] * theta ** (-2.0 * k / head_dim)


def rotary_angles_2d(row: int, col: int, head_dim: int, theta: float = 10000.0) -> np.ndarray:
    """Vision-encoder 2D rotary: rows drive the first half of the pairs, columns the rest."""
    pairs = head_dim // 2
    half = pairs // 2
    ids = np.array([row] * half + [col] * (pairs - half), dtype=np.float64)
    return ids * theta ** (-2.0 * np.arange(pairs) / head_dim)


def rotate_pairs(v, angles) -> np.ndarray:
    """Rotate adjacent channel pairs ``(2k, 2k+1)`` by ``angles[..., k]``."""
    v = np.asarray(v, dtype=np.float64)
    angles = np.asarray(angles, dtype=np.float64)
    if v.shape[-1] != 2 * angles.shape[-1]:
        raise LengthMismatch(f"vector length {v.shape[-1]} needs {v.shape[-1] // 2} angles")
    cos, sin = np.cos(angles), np.sin(angles)
    even, odd = v[..., 0::2], v[..., 1::2]
    lead = np.broadcast_shapes(v.shape[:-1], angles.shape[:-1])
    out = np.empty(lead + (v.shape[-1],), dtype=np.float64)
    out[..., 0::2] = even * cos - odd * sin
    out[..., 1::2] = even * sin + odd * cos
    return out


def apply_rotary(v, p, cfg: RotaryConfig) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    if v.shape[-1] != cfg.head_dim:
        raise LengthMismatch(f"vector length {v.shape[-1]} != head_dim {cfg.head_dim}")
    return rotate_pairs(v, rotary_angles(p, cfg))


def parse_segment_spec(spec: str, merge_size: int = 2) -> List[SegmentDescriptor]:
    """Parse ``"text:3,image:1x2x2,video:2x4x4"`` into segment descriptors.

    Visual grids are merged-token ``TxHxW``; ``image:HxW`` is also accepted.
    """
    segments: List[SegmentDescriptor] = []
    if not spec.strip():
        raise ValueError("empty segment spec")
    for part in spec.split(","):
        kind, sep, arg = part.strip().partition(":")
        if not sep:
            raise ValueError(f"segment {part!r} lacks ':'")
        kind = kind.strip().lower()
        if kind == "text":
            if not arg.strip().isdigit():
                raise ValueError(f"bad text length {arg!r}")
            segments.append(TextSegment(int(arg)))
            continue
        dims = arg.strip().lower().split("x")
        if not all(d.isdigit() for d in dims) or len(dims) not in (2, 3):
            raise ValueError(f"bad grid {arg!r}")
        dims = [int(d) for d in dims]
        if len(dims) == 2:
            dims = [1] + dims
        grid = PatchGrid(*dims)
        if kind == "image":
            segments.append(ImageSegment(grid))
        elif kind == "video":
            segments.append(VideoSegment(grid))
        else:
            raise ValueError(f"unknown segment kind {kind!r}")
    return segments


def with_vision_delimiters(segments: Iterable[SegmentDescriptor]) -> List[SegmentDescriptor]:
    """Surround every visual segment by one-token text segments for its delimiters."""
    out: List[SegmentDescriptor] = []
    for seg in segments:
        if isinstance(seg, TextSegment):
            out.append(seg)
        else:
            out.extend([TextSegment(1), seg, TextSegment(1)])
    return out
