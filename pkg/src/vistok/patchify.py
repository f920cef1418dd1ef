"""Patch and merged-token grids for images and videos.

Pixel buffers are ``(height, width, channels)`` float64 arrays with values in
[0, 1]. Each merged token's feature vector is laid out as
``(temporal, merge_row, merge_col, channel, patch_row, patch_col)`` flattened in
C order, so its length is ``temporal_patch * merge_size**2 * channels * patch_size**2``.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence, Tuple

import numpy as np

from .errors import DimensionMismatch, NonUniformFrames, UnsupportedImageFormat
from .resize import ResizePlan, ResizeSpec


@dataclass(frozen=True, eq=False)
class PixelBuffer:
    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.ndim == 2:
            arr = arr[:, :, None]
        if arr.ndim != 3 or arr.shape[0] < 1 or arr.shape[1] < 1 or arr.shape[2] < 1:
            raise DimensionMismatch(f"expected (height, width, channels), got shape {arr.shape}")
        object.__setattr__(self, "data", arr)

    @classmethod
    def from_flat(cls, values, height: int, width: int, channels: int = 3) -> "PixelBuffer":
        values = np.asarray(values, dtype=np.float64)
        if values.size != height * width * channels:
            raise DimensionMismatch(
                f"{values.size} values cannot fill {height}x{width}x{channels}"
            )
        return cls(values.reshape(height, width, channels))

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    def flat(self) -> np.ndarray:
        return self.data.reshape(-1)

    def __eq__(self, other):
        if not isinstance(other, PixelBuffer):
            return NotImplemented
        return self.data.shape == other.data.shape and np.array_equal(self.data, other.data)


@dataclass(frozen=True, eq=False)
class PatchGrid:
    grid_t: int
    grid_h: int
    grid_w: int
    patch_vectors: Optional[np.ndarray] = None

    def __post_init__(self):
        if min(self.grid_t, self.grid_h, self.grid_w) < 1:
            raise ValueError(f"grid dimensions must be >= 1, got {self.shape}")
        if self.patch_vectors is not None and self.patch_vectors.shape[0] != self.num_tokens:
            raise DimensionMismatch(
                f"{self.patch_vectors.shape[0]} vectors for {self.num_tokens} tokens"
            )

    @property
    def shape(self) -> Tuple[int, int, int]:
        return self.grid_t, self.grid_h, self.grid_w

    @property
    def num_tokens(self) -> int:
        return self.grid_t * self.grid_h * self.grid_w

    def patch_shape(self, merge_size: int = 2) -> Tuple[int, int, int]:
        """Pre-merge ``(tubes, patch_rows, patch_cols)`` seen by the vision encoder."""
        return self.grid_t, self.grid_h * merge_size, self.grid_w * merge_size

    def __eq__(self, other):
        if not isinstance(other, PatchGrid):
            return NotImplemented
        if self.shape != other.shape:
            return False
        if self.patch_vectors is None or other.patch_vectors is None:
            return self.patch_vectors is None and other.patch_vectors is None
        return np.array_equal(self.patch_vectors, other.patch_vectors)


def resample(img: PixelBuffer, target_h: int, target_w: int) -> PixelBuffer:
    """Bilinear resize with corner-aligned sampling.

    Output pixel ``i`` samples source coordinate ``i * (src - 1) / (dst - 1)``,
    so the first and last rows/columns map exactly onto the source corners.
    """
    if target_h < 1 or target_w < 1:
        raise ValueError("targets must be >= 1")
    src = img.data
    if (target_h, target_w) == src.shape[:2]:
        return PixelBuffer(src.copy())

    def axis(n_src, n_dst):
        if n_dst == 1 or n_src == 1:
            pos = np.zeros(n_dst)
        else:
            pos = np.arange(n_dst) * ((n_src - 1) / (n_dst - 1))
        i0 = np.minimum(np.floor(pos).astype(int), n_src - 1)
        i1 = np.minimum(i0 + 1, n_src - 1)
        return i0, i1, pos - i0

    y0, y1, fy = axis(src.shape[0], target_h)
    x0, x1, fx = axis(src.shape[1], target_w)
    fy = fy[:, None, None]
    fx = fx[None, :, None]
    top = src[y0][:, x0] * (1 - fx) + src[y0][:, x1] * fx
    bottom = src[y1][:, x0] * (1 - fx) + src[y1][:, x1] * fx
    return PixelBuffer(top * (1 - fy) + bottom * fy)


def _tokens_from_frames(frames: np.ndarray, spec: ResizeSpec) -> np.ndarray:
    # frames: (T_total, H, W, C) with T_total a multiple of temporal_patch
    tp, m, p = spec.temporal_patch, spec.merge_size, spec.patch_size
    t_total, height, width, c = frames.shape
    gt, gh, gw = t_total // tp, height // (p * m), width // (p * m)
    x = frames.reshape(gt, tp, gh, m, p, gw, m, p, c)
    # -> (gt, gh, gw, tp, mr, mc, c, pr, pc)
    x = x.transpose(0, 2, 5, 1, 3, 6, 8, 4, 7)
    return np.ascontiguousarray(x).reshape(gt * gh * gw, tp * m * m * c * p * p)


def _check_plan(plan: ResizePlan, spec: ResizeSpec) -> None:
    f = spec.factor
    if plan.target_h % f or plan.target_w % f or plan.target_h < f or plan.target_w < f:
        raise DimensionMismatch(
            f"plan target {plan.target_h}x{plan.target_w} is not aligned to {f}"
        )


def _prepare(img: PixelBuffer, plan: ResizePlan) -> np.ndarray:
    if (img.height, img.width) != (plan.source_h, plan.source_w):
        raise DimensionMismatch(
            f"image is {img.height}x{img.width}, plan expects {plan.source_h}x{plan.source_w}"
        )
    return resample(img, plan.target_h, plan.target_w).data


def patchify_image(img: PixelBuffer, plan: ResizePlan, spec: ResizeSpec = ResizeSpec()) -> PatchGrid:
    """Resample a still image and cut it into merged tokens (one tube of identical frames)."""
    _check_plan(plan, spec)
    frame = _prepare(img, plan)
    frames = np.broadcast_to(frame, (spec.temporal_patch,) + frame.shape)
    vecs = _tokens_from_frames(frames, spec)
    f = spec.factor
    return PatchGrid(1, plan.target_h // f, plan.target_w // f, vecs)


def patchify_video(
    frames: Sequence[PixelBuffer], plan: ResizePlan, spec: ResizeSpec = ResizeSpec()
) -> PatchGrid:
    """Cut already sampled frames into depth-``temporal_patch`` tubes.

    ``frames`` may hold either the sampled frames or the padded sequence;
    missing padding repeats the last frame.
    """
    _check_plan(plan, spec)
    if not frames:
        raise DimensionMismatch("no frames given")
    shape = (frames[0].height, frames[0].width, frames[0].channels)
    for fr in frames[1:]:
        if (fr.height, fr.width, fr.channels) != shape:
            raise NonUniformFrames(
                f"frame of shape {(fr.height, fr.width, fr.channels)} differs from {shape}"
            )
    padded = plan.padded_frame_count
    if padded is None:
        padded = -(-len(frames) // spec.temporal_patch) * spec.temporal_patch
    if len(frames) > padded or padded % spec.temporal_patch:
        raise DimensionMismatch(f"{len(frames)} frames do not fit {padded} padded frames")
    resized = [_prepare(fr, plan) for fr in frames]
    resized += [resized[-1]] * (padded - len(resized))
    vecs = _tokens_from_frames(np.stack(resized), spec)
    f = spec.factor
    return PatchGrid(padded // spec.temporal_patch, plan.target_h // f, plan.target_w // f, vecs)


def read_image_size(path) -> Tuple[int, int]:
    """``(height, width)`` from a PNG or JPEG header without decoding pixels."""
    with open(Path(path), "rb") as fh:
        head = fh.read(26)
        if head[:8] == b"\x89PNG\r\n\x1a\n":
            if head[12:16] != b"IHDR":
                raise UnsupportedImageFormat("PNG without leading IHDR chunk")
            width, height = struct.unpack(">II", head[16:24])
            return height, width
        if head[:2] != b"\xff\xd8":
            raise UnsupportedImageFormat(f"{path}: not a PNG or JPEG file")
        fh.seek(2)
        while True:
            byte = fh.read(1)
            while byte and byte != b"\xff":
                byte = fh.read(1)
            while byte == b"\xff":
                byte = fh.read(1)
            if not byte:
                break
            marker = byte[0]
            if marker in (0xD8, 0x01) or 0xD0 <= marker <= 0xD7:
                continue
            if marker == 0xD9:
                break
            seg_len = struct.unpack(">H", fh.read(2))[0]
            # SOF0..SOF15 except DHT (C4), JPG (C8) and DAC (CC)
            if 0xC0 <= marker <= 0xCF and marker not in (0xC4, 0xC8, 0xCC):
                _, height, width = struct.unpack(">BHH", fh.read(5))
                return height, width
            fh.seek(seg_len - 2, 1)
    raise UnsupportedImageFormat(f"{path}: no SOF marker found")
