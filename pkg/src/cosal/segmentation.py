"""Prompt-driven segmentation producing one co-saliency map per image.

All prompt points for an image are passed jointly as positive point prompts
in a single prediction call; the candidate mask with the highest quality
score becomes the output map.
"""
from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from .errors import BackendError, ConfigurationError
from .prompts import PromptPoint
from .types import ImageRecord, SaliencyMap

SAM_CHECKPOINT_ENV = "COSAL_SAM_CHECKPOINT"

SEGMENTER_KINDS = ("sam-vitb", "oracle")


@dataclass(eq=False)
class SegmenterResult:
    """Candidate masks and aligned quality scores for one image."""

    image_id: str
    group_id: str
    candidate_masks: list[np.ndarray]  # each (H, W) bool
    quality_scores: list[float]

    def __post_init__(self) -> None:
        if not self.candidate_masks:
            raise ValueError(f"image {self.image_id!r}: segmenter returned no candidates")
        if len(self.candidate_masks) != len(self.quality_scores):
            raise ValueError(f"image {self.image_id!r}: {len(self.candidate_masks)} masks "
                             f"vs {len(self.quality_scores)} scores")
        shape = self.candidate_masks[0].shape
        if any(m.shape != shape for m in self.candidate_masks):
            raise ValueError(f"image {self.image_id!r}: candidate masks disagree on shape")


def select_mask(result: SegmenterResult) -> SaliencyMap:
    """Keep the highest-quality candidate as a {0,1}-valued map (ties: first)."""
    best = int(np.argmax(result.quality_scores))
    values = result.candidate_masks[best].astype(np.float64)
    return SaliencyMap(values=values, image_id=result.image_id,
                       group_id=result.group_id)


def _check_prompts(image: ImageRecord, prompts: list[PromptPoint]) -> None:
    if not prompts:
        raise ValueError(f"image {image.image_id!r}: no prompt points")
    for p in prompts:
        if not (0 <= p.x < image.width and 0 <= p.y < image.height):
            raise ValueError(f"image {image.image_id!r}: prompt ({p.x}, {p.y}) outside "
                             f"{image.width}x{image.height}")


def oracle_segment(image: ImageRecord, prompts: list[PromptPoint],
                   planted_regions: list[np.ndarray]) -> SegmenterResult:
    """Test-double segmenter with known ground-truth regions.

    Returns the union of the planted regions hit by at least one prompt
    (score 1.0), or an all-empty mask with score 0.0 if nothing is hit.
    """
    _check_prompts(image, prompts)
    hit = [region for region in planted_regions
           if any(region[p.y, p.x] for p in prompts)]
    if not hit:
        empty = np.zeros((image.height, image.width), dtype=bool)
        return SegmenterResult(image_id=image.image_id, group_id=image.group_id,
                               candidate_masks=[empty], quality_scores=[0.0])
    union = np.logical_or.reduce(hit)
    return SegmenterResult(image_id=image.image_id, group_id=image.group_id,
                           candidate_masks=[union], quality_scores=[1.0])


@dataclass(eq=False)
class OracleSegmenter:
    """Oracle segmenter bound to a per-image planted-region lookup."""

    regions: dict[tuple[str, str], list[np.ndarray]]
    segmenter_kind: str = "oracle"

    def ensure_ready(self) -> None:
        if not self.regions:
            raise ConfigurationError("oracle segmenter has no planted regions loaded")

    def segment(self, image: ImageRecord,
                prompts: list[PromptPoint]) -> SegmenterResult:
        key = (image.group_id, image.image_id)
        if key not in self.regions:
            raise BackendError(f"no planted regions for image {key}")
        return oracle_segment(image, prompts, self.regions[key])


@dataclass(eq=False)
class SamSegmenter:
    """Promptable segmentation via a frozen SAM model (vit-b by default)."""

    checkpoint: str | Path | None = None
    model_type: str = "vit_b"
    device: str = "cpu"
    segmenter_kind: str = "sam-vitb"
    _predictor: Any = field(default=None, repr=False)

    def resolved_checkpoint(self) -> str | None:
        if self.checkpoint is not None:
            return str(self.checkpoint)
        return os.environ.get(SAM_CHECKPOINT_ENV)

    def ensure_ready(self) -> None:
        if self._predictor is not None:
            return
        try:
            from segment_anything import SamPredictor, sam_model_registry
        except ImportError as exc:
            raise ConfigurationError(
                "the SAM segmenter needs the segment_anything package; install it "
                "and download a vit-b checkpoint") from exc
        ckpt = self.resolved_checkpoint()
        if ckpt is None or not Path(ckpt).is_file():
            raise ConfigurationError(
                f"SAM checkpoint not found ({ckpt!r}); download sam_vit_b and point "
                f"at it with the {SAM_CHECKPOINT_ENV} environment variable or the "
                f"sam_checkpoint config field")
        model = sam_model_registry[self.model_type](checkpoint=ckpt)
        model.to(self.device)
        model.eval()
        self._predictor = SamPredictor(model)

    def segment(self, image: ImageRecord,
                prompts: list[PromptPoint]) -> SegmenterResult:
        self.ensure_ready()
        _check_prompts(image, prompts)
        coords = np.array([[p.x, p.y] for p in prompts], dtype=np.float64)
        labels = np.ones(len(prompts), dtype=np.int64)
        try:
            self._predictor.set_image(image.pixel_data)
            masks, scores, _ = self._predictor.predict(
                point_coords=coords, point_labels=labels, multimask_output=True)
        except RuntimeError as exc:
            raise BackendError(f"SAM inference failed on image "
                               f"{image.image_id!r}: {exc}") from exc
        if masks.shape[0] == 0:
            raise BackendError(f"SAM returned no candidate masks for "
                               f"{image.image_id!r}")
        return SegmenterResult(
            image_id=image.image_id, group_id=image.group_id,
            candidate_masks=[masks[i].astype(bool) for i in range(masks.shape[0])],
            quality_scores=[float(s) for s in scores])
