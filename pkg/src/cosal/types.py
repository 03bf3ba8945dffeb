"""Core value types passed between pipeline stages.

Everything here is a plain dataclass around numpy arrays. Validation happens
at construction so downstream stages can assume the invariants hold.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image


@dataclass(eq=False)
class ImageRecord:
    """One member of an image group, loaded as 8-bit RGB."""

    image_id: str
    group_id: str
    pixel_data: np.ndarray  # (H, W, 3) uint8
    height: int
    width: int

    def __post_init__(self) -> None:
        if self.height < 1 or self.width < 1:
            raise ValueError(f"image {self.image_id!r}: empty dimensions "
                             f"{self.height}x{self.width}")
        if self.pixel_data.dtype != np.uint8:
            raise ValueError(f"image {self.image_id!r}: pixel data must be uint8, "
                             f"got {self.pixel_data.dtype}")
        if self.pixel_data.shape != (self.height, self.width, 3):
            raise ValueError(f"image {self.image_id!r}: pixel data shape "
                             f"{self.pixel_data.shape} does not match "
                             f"{(self.height, self.width, 3)}")

    @classmethod
    def from_file(cls, path: Path | str, group_id: str) -> "ImageRecord":
        path = Path(path)
        with Image.open(path) as img:
            rgb = np.asarray(img.convert("RGB"), dtype=np.uint8)
        h, w = rgb.shape[:2]
        return cls(image_id=path.stem, group_id=group_id, pixel_data=rgb,
                   height=h, width=w)


@dataclass(eq=False)
class GroupRecord:
    """A named image group; members sorted and unique by image_id."""

    group_id: str
    members: list[ImageRecord]

    def __post_init__(self) -> None:
        if not self.members:
            raise ValueError(f"group {self.group_id!r} has no members")
        ids = [m.image_id for m in self.members]
        if len(set(ids)) != len(ids):
            dupes = sorted({i for i in ids if ids.count(i) > 1})
            raise ValueError(f"group {self.group_id!r} has duplicate image ids: {dupes}")
        if ids != sorted(ids):
            raise ValueError(f"group {self.group_id!r}: members must be sorted by image_id")

    def __len__(self) -> int:
        return len(self.members)


@dataclass(eq=False)
class SaliencyMap:
    """Per-pixel score in [0, 1] at source-image resolution.

    Carries both ground-truth masks and predictions; group_id is kept so
    prediction files can be routed to their group directory.
    """

    values: np.ndarray  # (H, W) float in [0, 1]
    image_id: str
    group_id: str = ""

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise ValueError(f"saliency map {self.image_id!r}: expected 2-D values, "
                             f"got shape {self.values.shape}")
        if not np.isfinite(self.values).all():
            raise ValueError(f"saliency map {self.image_id!r}: non-finite values")
        lo, hi = float(self.values.min()), float(self.values.max())
        if lo < 0.0 or hi > 1.0:
            raise ValueError(f"saliency map {self.image_id!r}: values outside [0, 1] "
                             f"(min={lo}, max={hi})")

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape  # type: ignore[return-value]


@dataclass(eq=False)
class FeatureMap:
    """Dense per-image feature grid of shape (C, H, W).

    grid_h/grid_w mirror the array shape; image_h/image_w record the source
    image geometry so grid positions can be mapped back to pixels.
    """

    values: np.ndarray  # (C, grid_h, grid_w)
    grid_h: int
    grid_w: int
    image_h: int
    image_w: int
    backend_id: str

    def __post_init__(self) -> None:
        if self.values.ndim != 3:
            raise ValueError(f"feature map: expected (C, H, W) values, "
                             f"got shape {self.values.shape}")
        c, h, w = self.values.shape
        if c < 1 or h < 1 or w < 1:
            raise ValueError(f"feature map: degenerate shape {self.values.shape}")
        if (h, w) != (self.grid_h, self.grid_w):
            raise ValueError(f"feature map: grid ({self.grid_h}, {self.grid_w}) does "
                             f"not match values shape {self.values.shape}")
        if self.image_h < 1 or self.image_w < 1:
            raise ValueError("feature map: image dimensions must be positive")
        if not np.isfinite(self.values).all():
            raise ValueError("feature map: non-finite values")

    @property
    def channels(self) -> int:
        return self.values.shape[0]

    @property
    def grid_shape(self) -> tuple[int, int]:
        return (self.grid_h, self.grid_w)

    @property
    def image_shape(self) -> tuple[int, int]:
        return (self.image_h, self.image_w)


@dataclass(eq=False)
class FusedFeatureMap(FeatureMap):
    """Channel concatenation of two per-pixel-normalized feature sources."""

    source_channel_split: tuple[int, int] = field(default=(0, 0))

    def __post_init__(self) -> None:
        super().__post_init__()
        if sum(self.source_channel_split) != self.channels:
            raise ValueError(f"channel split {self.source_channel_split} does not sum "
                             f"to channel count {self.channels}")
