"""Group prompt generation.

Pipeline: filter each image's feature grid down to its salient pixels,
average every salient embedding in the group into a single center vector,
score each image's salient pixels against that center by dot product, and
keep the top-K positions per image, mapped back to source-pixel coordinates.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .backends.ops import area_downsample
from .types import FeatureMap, SaliencyMap


@dataclass(eq=False)
class SalientPixels:
    """Salient grid positions and their embeddings for one image."""

    image_index: int
    positions: np.ndarray   # (M, 2) int, rows of (grid_row, grid_col)
    embeddings: np.ndarray  # (M, C) float

    def __post_init__(self) -> None:
        self.positions = np.asarray(self.positions, dtype=np.intp).reshape(-1, 2)
        self.embeddings = np.asarray(self.embeddings, dtype=np.float64)
        if self.embeddings.shape[0] != self.positions.shape[0]:
            raise ValueError(f"{self.positions.shape[0]} positions vs "
                             f"{self.embeddings.shape[0]} embeddings")

    def __len__(self) -> int:
        return self.positions.shape[0]


@dataclass(eq=False)
class GroupCenterProxy:
    """Mean embedding over all salient pixels of the group."""

    vector: np.ndarray
    contributing_pixel_count: int

    def __post_init__(self) -> None:
        self.vector = np.asarray(self.vector, dtype=np.float64)
        if self.contributing_pixel_count < 1:
            raise ValueError("proxy must average at least one pixel")
        if not np.isfinite(self.vector).all():
            raise ValueError("proxy vector has non-finite entries")


@dataclass(frozen=True)
class PromptPoint:
    """One positive point prompt in image pixel coordinates."""

    x: int  # pixel column
    y: int  # pixel row
    score: float


@dataclass(eq=False)
class PromptSet:
    """Per-image prompt points, aligned with the group's member order."""

    points_per_image: list[list[PromptPoint]]
    k: int

    def __post_init__(self) -> None:
        if self.k < 1:
            raise ValueError("k must be >= 1")
        for points in self.points_per_image:
            if len(points) > self.k:
                raise ValueError(f"{len(points)} points exceed k={self.k}")
            scores = [p.score for p in points]
            if any(a < b for a, b in zip(scores, scores[1:])):
                raise ValueError("prompt scores must be non-increasing")


def binarize_saliency(saliency: SaliencyMap, grid_shape: tuple[int, int],
                      policy: str = "adaptive", tau: float | None = None) -> np.ndarray:
    """Threshold a saliency map on the feature grid.

    The map is area-averaged down to grid resolution first. The adaptive
    policy uses tau = min(2 * mean, 1.0); pixels are salient iff strictly
    above tau. An empty result falls back to the all-pixels mask so the
    group average never starves.
    """
    grid_values = area_downsample(saliency.values, grid_shape)
    if policy == "adaptive":
        threshold = min(2.0 * float(grid_values.mean()), 1.0)
    elif policy == "fixed":
        if tau is None:
            raise ValueError("fixed policy needs an explicit tau")
        threshold = float(tau)
    else:
        raise ValueError(f"unknown policy {policy!r}; use 'adaptive' or 'fixed'")
    mask = grid_values > threshold
    if not mask.any():
        return np.ones(grid_shape, dtype=bool)
    return mask


def salient_pixels(fmap: FeatureMap, mask: np.ndarray,
                   image_index: int) -> SalientPixels:
    """Gather the masked grid positions and their channel vectors."""
    if mask.shape != fmap.grid_shape:
        raise ValueError(f"mask shape {mask.shape} does not match grid "
                         f"{fmap.grid_shape}")
    positions = np.argwhere(mask)
    embeddings = fmap.values[:, mask].T
    return SalientPixels(image_index=image_index, positions=positions,
                         embeddings=embeddings)


def compute_center_proxy(pixel_sets: list[SalientPixels]) -> GroupCenterProxy:
    """Unweighted mean over every salient pixel embedding in the group."""
    non_empty = [p.embeddings for p in pixel_sets if len(p) > 0]
    if not non_empty:
        raise ValueError("cannot average an empty salient-pixel set")
    stacked = np.concatenate(non_empty, axis=0)
    return GroupCenterProxy(vector=stacked.mean(axis=0),
                            contributing_pixel_count=stacked.shape[0])


def score_pixels(proxy: GroupCenterProxy, pixels: SalientPixels) -> np.ndarray:
    """Correlation of each pixel embedding with the group center (dot product)."""
    if pixels.embeddings.shape[1] != proxy.vector.shape[0]:
        raise ValueError(f"embedding dim {pixels.embeddings.shape[1]} does not "
                         f"match proxy dim {proxy.vector.shape[0]}")
    return pixels.embeddings @ proxy.vector


def select_topk(scores: np.ndarray, positions: np.ndarray, k: int,
                grid_w: int) -> list[tuple[tuple[int, int], float]]:
    """Pick the k highest-scoring grid positions.

    Descending by score; ties broken by the smaller row-major linear index.
    Returns fewer than k pairs when fewer candidates exist.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    scores = np.asarray(scores, dtype=np.float64)
    positions = np.asarray(positions, dtype=np.intp).reshape(-1, 2)
    if scores.shape[0] != positions.shape[0]:
        raise ValueError("scores and positions are not aligned")
    if scores.size == 0:
        raise ValueError("no candidate pixels to select from")
    linear = positions[:, 0] * grid_w + positions[:, 1]
    order = np.lexsort((linear, -scores))
    picked = order[:min(k, scores.size)]
    return [((int(positions[i, 0]), int(positions[i, 1])), float(scores[i]))
            for i in picked]


def grid_to_image_coords(pos: tuple[int, int], grid: tuple[int, int],
                         image: tuple[int, int]) -> tuple[int, int]:
    """Map a grid cell to the source pixel under its center: (x, y)."""
    row, col = pos
    grid_h, grid_w = grid
    image_h, image_w = image
    if not (0 <= row < grid_h and 0 <= col < grid_w):
        raise ValueError(f"position {pos} outside grid {grid}")
    x = min(math.floor((col + 0.5) * image_w / grid_w), image_w - 1)
    y = min(math.floor((row + 0.5) * image_h / grid_h), image_h - 1)
    return x, y


def generate_prompts(group_maps: list[FeatureMap],
                     saliency: list[SaliencyMap], k: int,
                     policy: str = "adaptive") -> PromptSet:
    """Full prompt generation for one image group.

    One saliency map per feature map, aligned by position. Returns up to k
    image-space points per image, highest correlation first.
    """
    if not group_maps:
        raise ValueError("empty group")
    if len(saliency) != len(group_maps):
        raise ValueError(f"{len(group_maps)} feature maps vs "
                         f"{len(saliency)} saliency maps")

    pixel_sets = []
    for index, (fmap, smap) in enumerate(zip(group_maps, saliency)):
        mask = binarize_saliency(smap, fmap.grid_shape, policy=policy)
        pixel_sets.append(salient_pixels(fmap, mask, index))

    proxy = compute_center_proxy(pixel_sets)

    points_per_image: list[list[PromptPoint]] = []
    for fmap, pixels in zip(group_maps, pixel_sets):
        scores = score_pixels(proxy, pixels)
        top = select_topk(scores, pixels.positions, k, fmap.grid_w)
        points = [PromptPoint(*grid_to_image_coords(pos, fmap.grid_shape,
                                                    fmap.image_shape), score)
                  for pos, score in top]
        points_per_image.append(points)
    return PromptSet(points_per_image=points_per_image, k=k)
