"""Per-pixel normalization and channel concatenation of feature sources.

Each source is normalized independently so both contribute at the same scale,
then the channel vectors are concatenated. Zero pixel vectors stay zero.
"""
from __future__ import annotations

import numpy as np

from .types import FeatureMap, FusedFeatureMap


def _first_bad_pixel(values: np.ndarray) -> tuple[int, int, int]:
    idx = np.argwhere(~np.isfinite(values))[0]
    return int(idx[0]), int(idx[1]), int(idx[2])


def l2_normalize_pixelwise(fmap: FeatureMap) -> FeatureMap:
    """Divide each pixel's channel vector by its L2 norm (zero-safe)."""
    values = np.asarray(fmap.values, dtype=np.float64)
    if not np.isfinite(values).all():
        c, r, col = _first_bad_pixel(values)
        raise ValueError(f"non-finite feature value at channel {c}, "
                         f"grid position ({r}, {col})")
    norms = np.linalg.norm(values, axis=0, keepdims=True)
    scale = np.divide(1.0, norms, out=np.zeros_like(norms), where=norms > 0)
    return FeatureMap(values=values * scale, grid_h=fmap.grid_h, grid_w=fmap.grid_w,
                      image_h=fmap.image_h, image_w=fmap.image_w,
                      backend_id=fmap.backend_id)


def fuse(low_level: FeatureMap | None, high_level: FeatureMap) -> FusedFeatureMap:
    """Concatenate the normalized low-level and high-level sources.

    Grids must already agree; resample the coarser map first (this module
    never resamples silently). low_level=None is the high-level-only ablation:
    the result is exactly the normalized high-level map with a (0, C) split.
    """
    norm_high = l2_normalize_pixelwise(high_level)
    if low_level is None:
        return FusedFeatureMap(values=norm_high.values,
                               grid_h=high_level.grid_h, grid_w=high_level.grid_w,
                               image_h=high_level.image_h, image_w=high_level.image_w,
                               backend_id="fused",
                               source_channel_split=(0, high_level.channels))

    if low_level.grid_shape != high_level.grid_shape:
        raise ValueError(
            f"grid mismatch: low-level {low_level.values.shape} vs "
            f"high-level {high_level.values.shape}; resample the coarser map first")
    norm_low = l2_normalize_pixelwise(low_level)
    return FusedFeatureMap(
        values=np.concatenate([norm_low.values, norm_high.values], axis=0),
        grid_h=high_level.grid_h, grid_w=high_level.grid_w,
        image_h=high_level.image_h, image_w=high_level.image_w,
        backend_id="fused",
        source_channel_split=(low_level.channels, high_level.channels))
