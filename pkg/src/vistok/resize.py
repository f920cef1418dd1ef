"""Dynamic-resolution resize planning for images and videos.

Target sizes are aligned to ``patch_size * merge_size`` (28 px at defaults) so
that each side splits into whole merged tokens. All rounding is done in exact
integer arithmetic; the only floating point inputs are frame rates, which are
converted to :class:`fractions.Fraction` before use.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from fractions import Fraction
from typing import Iterable, Optional, Sequence, Tuple

from .errors import AspectRatioTooExtreme, InfeasibleBounds, MisalignedDimensions

MAX_ASPECT_RATIO = 200
VISION_DELIMITERS = 2  # <|vision_start|> and <|vision_end|>


@dataclass(frozen=True)
class ResizeSpec:
    patch_size: int = 14
    merge_size: int = 2
    min_pixels: int = 100 * 28 * 28
    max_pixels: int = 16384 * 28 * 28
    video_token_budget: int = 16384
    sample_fps: float = 2
    temporal_patch: int = 2

    def __post_init__(self):
        for name in ("patch_size", "merge_size", "temporal_patch", "video_token_budget"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.min_pixels <= 0 or self.max_pixels <= 0:
            raise ValueError("min_pixels and max_pixels must be positive")
        if self.min_pixels > self.max_pixels:
            raise ValueError(
                f"min_pixels ({self.min_pixels}) exceeds max_pixels ({self.max_pixels})"
            )
        if self.sample_fps <= 0:
            raise ValueError("sample_fps must be positive")

    @property
    def factor(self) -> int:
        """Side length in pixels of one merged token."""
        return self.patch_size * self.merge_size


@dataclass(frozen=True)
class ResizePlan:
    source_h: int
    source_w: int
    target_h: int
    target_w: int
    sampled_frame_indices: Optional[Tuple[int, ...]] = None
    padded_frame_count: Optional[int] = None

    @property
    def is_video(self) -> bool:
        return self.sampled_frame_indices is not None

    def grid(self, spec: ResizeSpec) -> Tuple[int, int, int]:
        """Merged token grid ``(grid_t, grid_h, grid_w)`` for this plan."""
        f = spec.factor
        grid_t = 1 if not self.is_video else self.padded_frame_count // spec.temporal_patch
        return grid_t, self.target_h // f, self.target_w // f

    def total_merged_tokens(self, spec: ResizeSpec) -> int:
        t, h, w = self.grid(spec)
        return t * h * w

    def as_dict(self) -> dict:
        out = {
            "source_h": self.source_h,
            "source_w": self.source_w,
            "target_h": self.target_h,
            "target_w": self.target_w,
        }
        if self.is_video:
            out["sampled_frames"] = len(self.sampled_frame_indices)
            out["sampled_frame_indices"] = list(self.sampled_frame_indices)
            out["padded_frame_count"] = self.padded_frame_count
        return out


@dataclass(frozen=True)
class TokenCount:
    patches: int
    merged: int
    with_delimiters: int

    def as_dict(self) -> dict:
        return {
            "patches": self.patches,
            "merged": self.merged,
            "with_delimiters": self.with_delimiters,
        }


def _ceil_sqrt_ratio(num: int, den: int) -> int:
    """Smallest n >= 0 with n*n*den >= num."""
    n = math.isqrt(num // den)
    while n * n * den < num:
        n += 1
    return n


def _floor_sqrt_ratio(num: int, den: int) -> int:
    return math.isqrt(num // den)


def _check_aspect(h: int, w: int) -> None:
    if h < 1 or w < 1:
        raise ValueError(f"dimensions must be >= 1, got {h}x{w}")
    if max(h, w) > MAX_ASPECT_RATIO * min(h, w):
        raise AspectRatioTooExtreme(
            f"aspect ratio {max(h, w) / min(h, w):.2f} exceeds {MAX_ASPECT_RATIO}"
        )


def _nearest_aspect_in_bounds(h: int, w: int, factor: int, min_pixels: int, max_pixels: int):
    """Aligned rectangle in bounds whose aspect ratio is closest to h/w.

    Only used when the rounding rule lands outside the pixel bounds, which
    needs a very narrow [min_pixels, max_pixels] window.
    """
    unit = factor * factor
    lo_cells = -(-min_pixels // unit)
    hi_cells = max_pixels // unit
    target = math.log(h / w)
    best = None
    for gh in range(1, hi_cells + 1):
        gw_lo = max(1, -(-lo_cells // gh))
        gw_hi = hi_cells // gh
        if gw_lo > gw_hi:
            continue
        ideal = gh * w / h
        for gw in {min(max(math.floor(ideal), gw_lo), gw_hi), min(max(math.ceil(ideal), gw_lo), gw_hi)}:
            dev = abs(math.log(gh / gw) - target)
            key = (dev, abs(gh * gw * unit - h * w), gh)
            if best is None or key < best[0]:
                best = (key, gh, gw)
    if best is None:
        raise InfeasibleBounds(
            f"no {factor}-aligned rectangle has area in [{min_pixels}, {max_pixels}]"
        )
    return best[1] * factor, best[2] * factor


def smart_resize(h: int, w: int, spec: ResizeSpec = ResizeSpec()) -> Tuple[int, int]:
    """Pick factor-aligned target dimensions inside the pixel budget.

    Each side is rounded to the nearest multiple of the factor (half up). If
    the area then exceeds ``max_pixels`` both sides are scaled by
    ``sqrt(max_pixels / (h*w))`` and floored to the factor; if it falls short
    of ``min_pixels`` they are scaled by ``sqrt(min_pixels / (h*w))`` and
    ceiled. Sides are never smaller than one factor.
    """
    h, w = int(h), int(w)
    _check_aspect(h, w)
    f = spec.factor
    th = (2 * h + f) // (2 * f) * f
    tw = (2 * w + f) // (2 * f) * f
    if th * tw > spec.max_pixels:
        # floor(side * sqrt(max/(h*w)) / f) == isqrt(side^2 * max / (h*w*f^2))
        th = _floor_sqrt_ratio(h * spec.max_pixels, w * f * f) * f
        tw = _floor_sqrt_ratio(w * spec.max_pixels, h * f * f) * f
    elif th * tw < spec.min_pixels:
        th = _ceil_sqrt_ratio(h * spec.min_pixels, w * f * f) * f
        tw = _ceil_sqrt_ratio(w * spec.min_pixels, h * f * f) * f
    th, tw = max(th, f), max(tw, f)
    if not spec.min_pixels <= th * tw <= spec.max_pixels:
        th, tw = _nearest_aspect_in_bounds(h, w, f, spec.min_pixels, spec.max_pixels)
    return th, tw


def token_count(target_h: int, target_w: int, spec: ResizeSpec = ResizeSpec()) -> TokenCount:
    f = spec.factor
    if target_h < f or target_w < f or target_h % f or target_w % f:
        raise MisalignedDimensions(
            f"{target_h}x{target_w} is not a positive multiple of {f} on both sides"
        )
    patches = (target_h // spec.patch_size) * (target_w // spec.patch_size)
    merged = patches // (spec.merge_size**2)
    return TokenCount(patches, merged, merged + VISION_DELIMITERS)


def fixed_token_grid(h: int, w: int, n_merged_tokens: int) -> Tuple[int, int]:
    """Merged grid ``(gh, gw)`` with about ``n_merged_tokens`` cells and h:w shape.

    The short side ``s`` is enumerated; the long side is restricted to
    ``floor`` or ``ceil`` of ``s * long/short`` so the aspect ratio is only
    disturbed by quantization. Among those, the count closest to the target
    wins, then the smaller area, then the smaller ``gh``.
    """
    if n_merged_tokens < 1:
        raise ValueError("n_merged_tokens must be >= 1")
    if h < 1 or w < 1:
        raise ValueError(f"dimensions must be >= 1, got {h}x{w}")
    short, long_ = (h, w) if h <= w else (w, h)
    best = None
    s = 1
    while True:
        lo = s * long_ // short
        candidates = {max(1, lo), max(1, -(-s * long_ // short))}
        for big in candidates:
            gh, gw = (s, big) if h <= w else (big, s)
            key = (abs(gh * gw - n_merged_tokens), gh * gw, gh)
            if best is None or key < best:
                best = key
        # counts only grow with s from here on
        if s * max(1, lo) > n_merged_tokens:
            break
        s += 1
    _, area, gh = best
    return gh, area // gh


def fixed_token_resize(
    h: int, w: int, n_merged_tokens: int, spec: ResizeSpec = ResizeSpec()
) -> Tuple[int, int]:
    """Aligned dimensions giving (as close as possible) a fixed merged-token count.

    Pixel bounds are ignored: the point is a constant token count per image.
    When ``n_merged_tokens`` is too small for the aspect ratio the smallest
    aspect-preserving grid is returned; use :func:`token_count` on the result
    to see the achieved count.
    """
    gh, gw = fixed_token_grid(h, w, n_merged_tokens)
    return gh * spec.factor, gw * spec.factor


def sample_frame_indices(frame_count: int, native_fps: float, sample_fps: float = 2) -> Tuple[int, ...]:
    """Source frame indices for uniform sampling at ``sample_fps``.

    ``ceil(duration * sample_fps)`` sample times are taken; the k-th maps to
    frame ``round(k * native_fps / sample_fps)`` (half up), clamped to the
    last frame, with duplicates dropped.
    """
    if frame_count < 1:
        raise ValueError("frame_count must be >= 1")
    if native_fps <= 0:
        raise ValueError("native_fps must be positive")
    step = Fraction(native_fps) / Fraction(sample_fps)
    n_samples = math.ceil(frame_count / step)
    indices = []
    for k in range(n_samples):
        idx = min(math.floor(k * step + Fraction(1, 2)), frame_count - 1)
        if not indices or idx != indices[-1]:
            indices.append(idx)
    return tuple(indices)


def plan_image(h: int, w: int, spec: ResizeSpec = ResizeSpec()) -> ResizePlan:
    th, tw = smart_resize(h, w, spec)
    return ResizePlan(h, w, th, tw)


def plan_video(
    frame_count: int, native_fps: float, h: int, w: int, spec: ResizeSpec = ResizeSpec()
) -> ResizePlan:
    """Sample, pad and size a video so its merged tokens fit the video budget.

    All frames share one target size. The per-frame ``max_pixels`` is lowered
    to what the budget allows per tube; if that drops below ``min_pixels`` the
    lower bound follows it down.
    """
    indices = sample_frame_indices(frame_count, native_fps, spec.sample_fps)
    tp = spec.temporal_patch
    padded = -(-len(indices) // tp) * tp
    tubes = padded // tp
    per_tube = spec.video_token_budget // tubes
    if per_tube < 1:
        raise InfeasibleBounds(
            f"{tubes} tubes cannot fit a budget of {spec.video_token_budget} tokens"
        )
    cell = spec.merge_size**2 * spec.patch_size**2
    eff_max = min(spec.max_pixels, per_tube * cell)
    frame_spec = replace(spec, max_pixels=eff_max, min_pixels=min(spec.min_pixels, eff_max))
    th, tw = smart_resize(h, w, frame_spec)
    return ResizePlan(h, w, th, tw, tuple(indices), padded)


def padded_frame_sequence(plan: ResizePlan) -> Tuple[int, ...]:
    """Source frame index for every padded frame; padding repeats the last one."""
    idx = plan.sampled_frame_indices
    return idx + (idx[-1],) * (plan.padded_frame_count - len(idx))


def min_pixels_sweep(
    sizes: Sequence[Tuple[int, int]],
    min_pixels_values: Iterable[int],
    spec: ResizeSpec = ResizeSpec(),
) -> list:
    """Mean merged tokens per image for each ``min_pixels`` setting."""
    rows = []
    for mp in min_pixels_values:
        s = replace(spec, min_pixels=mp, max_pixels=max(mp, spec.max_pixels))
        counts = [token_count(*smart_resize(h, w, s), s).merged for h, w in sizes]
        rows.append({"min_pixels": mp, "mean_tokens": sum(counts) / len(counts)})
    return rows


def fixed_vs_dynamic(
    sizes: Sequence[Tuple[int, int]],
    fixed_counts: Iterable[int],
    spec: ResizeSpec = ResizeSpec(),
) -> list:
    """Token bookkeeping for fixed-count resizing against dynamic resolution."""
    rows = []
    for n in fixed_counts:
        counts = [token_count(*fixed_token_resize(h, w, n, spec), spec).merged for h, w in sizes]
        rows.append({"mode": f"fixed-{n}", "mean_tokens": sum(counts) / len(counts)})
    dyn = [token_count(*smart_resize(h, w, spec), spec).merged for h, w in sizes]
    rows.append({"mode": "dynamic", "mean_tokens": sum(dyn) / len(dyn)})
    return rows
