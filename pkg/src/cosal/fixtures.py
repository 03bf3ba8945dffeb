"""Planted-pattern fixture generation.

Writes a miniature group dataset whose correct segmentation is known by
construction: each image carries one rectangle of "common object" cells on a
uniform background. The same geometry drives the synthetic feature backend,
the ground-truth masks, and the oracle segmenter, so a correct pipeline
recovers the ground truth exactly.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .backends.synthetic import (SyntheticGroupSpec, planted_mask_image,
                                 save_synthetic_specs)

# Embedding geometry: the common vector is orthogonal to and longer than the
# background vector, so planted cells win the correlation ranking even when
# the salient-pixel filter falls back to all pixels. Both scales are exactly
# representable in float32.
_COMMON_SCALE = 1.0
_BACKGROUND_SCALE = 0.25


@dataclass(frozen=True)
class FixturePaths:
    root: Path
    dataset_root: Path
    gt_root: Path
    spec_path: Path
    saliency_root: Path | None = None


def _render_image(region: np.ndarray) -> np.ndarray:
    rgb = np.full(region.shape + (3,), 40, dtype=np.uint8)
    rgb[region] = (200, 190, 60)
    return rgb


def build_planted_fixture(root: Path | str, *, n_groups: int = 5,
                          images_per_group: int = 4,
                          grid: tuple[int, int] = (16, 16),
                          channels: int = 8, image_scale: int = 4,
                          rect_size: tuple[int, int] = (6, 6),
                          noise_amplitude: float = 0.0, seed: int = 7,
                          write_saliency: bool = False) -> FixturePaths:
    """Create dataset/, gt/ and synthetic_spec.json under root.

    Rectangle placement is drawn from a generator seeded with `seed`, so the
    fixture is reproducible byte for byte.
    """
    root = Path(root)
    dataset_root = root / "dataset"
    gt_root = root / "gt"
    saliency_root = root / "saliency" if write_saliency else None
    rng = np.random.default_rng(seed)

    grid_h, grid_w = grid
    rect_h, rect_w = rect_size
    if rect_h > grid_h or rect_w > grid_w:
        raise ValueError(f"rect {rect_size} does not fit grid {grid}")
    image_h, image_w = grid_h * image_scale, grid_w * image_scale

    common = np.zeros(channels)
    common[0] = _COMMON_SCALE
    background = np.zeros(channels)
    background[1 % channels] = _BACKGROUND_SCALE

    specs: dict[str, SyntheticGroupSpec] = {}
    for g in range(n_groups):
        group_id = f"group{g:02d}"
        planted = {}
        for i in range(images_per_group):
            image_id = f"im{i:02d}"
            r0 = int(rng.integers(0, grid_h - rect_h + 1))
            c0 = int(rng.integers(0, grid_w - rect_w + 1))
            rect = (r0, c0, r0 + rect_h - 1, c0 + rect_w - 1)
            planted[image_id] = rect

            region = planted_mask_image(rect, grid, (image_h, image_w))
            img_dir = dataset_root / group_id
            img_dir.mkdir(parents=True, exist_ok=True)
            Image.fromarray(_render_image(region)).save(img_dir / f"{image_id}.png")

            mask_dir = gt_root / group_id
            mask_dir.mkdir(parents=True, exist_ok=True)
            mask = (region * 255).astype(np.uint8)
            Image.fromarray(mask, mode="L").save(mask_dir / f"{image_id}.png")

            if saliency_root is not None:
                sal_dir = saliency_root / group_id
                sal_dir.mkdir(parents=True, exist_ok=True)
                Image.fromarray(mask, mode="L").save(sal_dir / f"{image_id}.png")

        specs[group_id] = SyntheticGroupSpec(
            group_id=group_id, grid_h=grid_h, grid_w=grid_w, channels=channels,
            common_embedding=common, background_embedding=background,
            planted_regions=planted, noise_amplitude=noise_amplitude,
            seed=seed + g, image_h=image_h, image_w=image_w)

    spec_path = root / "synthetic_spec.json"
    root.mkdir(parents=True, exist_ok=True)
    save_synthetic_specs(specs, spec_path)
    return FixturePaths(root=root, dataset_root=dataset_root, gt_root=gt_root,
                        spec_path=spec_path, saliency_root=saliency_root)
