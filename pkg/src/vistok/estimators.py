"""scikit-learn style wrappers so tokenization can sit inside a Pipeline."""
from __future__ import annotations

from typing import Iterable, List, Optional

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .patchify import PatchGrid, PixelBuffer, patchify_image
from .resize import ResizePlan, ResizeSpec, fixed_token_resize, smart_resize, token_count


def check_image(img, allow_out_of_range: bool = False) -> PixelBuffer:
    """Coerce an ``(H, W)`` / ``(H, W, C)`` array or a PixelBuffer into a PixelBuffer."""
    buf = img if isinstance(img, PixelBuffer) else PixelBuffer(np.asarray(img, dtype=np.float64))
    if not np.isfinite(buf.data).all():
        raise ValueError("image contains NaN or infinite values")
    if not allow_out_of_range and (buf.data.min() < 0 or buf.data.max() > 1):
        raise ValueError("pixel intensities must lie in [0, 1]")
    return buf


class DynamicResolutionTokenizer(TransformerMixin, BaseEstimator):
    """Resize images to patch-aligned sizes and cut them into merged tokens.

    ``fit`` only validates the parameters; the transform is stateless. With
    ``fixed_tokens`` set, every image is resized to about that many merged
    tokens instead of using the pixel bounds.

    Parameters
    ----------
    patch_size, merge_size, temporal_patch : int
        Patch side in pixels, merge window in patches, and frames per tube.
    min_pixels, max_pixels : int
        Area bounds for dynamic resolution.
    fixed_tokens : int or None
        Target merged-token count for fixed-token resizing.
    """

    def __init__(
        self,
        patch_size: int = 14,
        merge_size: int = 2,
        temporal_patch: int = 2,
        min_pixels: int = 100 * 28 * 28,
        max_pixels: int = 16384 * 28 * 28,
        fixed_tokens: Optional[int] = None,
    ):
        self.patch_size = patch_size
        self.merge_size = merge_size
        self.temporal_patch = temporal_patch
        self.min_pixels = min_pixels
        self.max_pixels = max_pixels
        self.fixed_tokens = fixed_tokens

    def _spec(self) -> ResizeSpec:
        return ResizeSpec(
            patch_size=self.patch_size,
            merge_size=self.merge_size,
            temporal_patch=self.temporal_patch,
            min_pixels=self.min_pixels,
            max_pixels=self.max_pixels,
        )

    def fit(self, X=None, y=None):
        self.spec_ = self._spec()
        if self.fixed_tokens is not None and self.fixed_tokens < 1:
            raise ValueError("fixed_tokens must be >= 1")
        return self

    def plan(self, height: int, width: int) -> ResizePlan:
        check_is_fitted(self, "spec_")
        if self.fixed_tokens is not None:
            th, tw = fixed_token_resize(height, width, self.fixed_tokens, self.spec_)
        else:
            th, tw = smart_resize(height, width, self.spec_)
        return ResizePlan(height, width, th, tw)

    def transform(self, X: Iterable) -> List[PatchGrid]:
        check_is_fitted(self, "spec_")
        grids = []
        for img in X:
            buf = check_image(img)
            grids.append(patchify_image(buf, self.plan(buf.height, buf.width), self.spec_))
        return grids

    def token_counts(self, X: Iterable) -> np.ndarray:
        """Merged tokens per image (without delimiters), computed from shapes only."""
        check_is_fitted(self, "spec_")
        out = []
        for img in X:
            h, w = np.shape(img.data if isinstance(img, PixelBuffer) else img)[:2]
            plan = self.plan(h, w)
            out.append(token_count(plan.target_h, plan.target_w, self.spec_).merged)
        return np.asarray(out, dtype=np.int64)
