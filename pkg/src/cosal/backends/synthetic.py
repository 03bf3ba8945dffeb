"""Deterministic synthetic feature backend.

Builds feature grids with a known planted rectangle per image: background
embedding everywhere, a common embedding inside the rectangle, and optional
seeded uniform noise. The planted geometry doubles as ground truth, which
makes the backend usable as an end-to-end oracle substrate.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..errors import BackendError
from ..types import FeatureMap, GroupRecord

BACKEND_ID = "synthetic"

# Inclusive rectangle in grid coordinates: (row0, col0, row1, col1).
Rect = tuple[int, int, int, int]


@dataclass(eq=False)
class SyntheticGroupSpec:
    """Recipe for one group's synthetic features."""

    group_id: str
    grid_h: int
    grid_w: int
    channels: int
    common_embedding: np.ndarray
    background_embedding: np.ndarray
    planted_regions: dict[str, Rect]  # image_id -> inclusive grid rect
    noise_amplitude: float = 0.0
    seed: int = 0
    image_h: int | None = None  # source geometry when used standalone
    image_w: int | None = None

    def __post_init__(self) -> None:
        self.common_embedding = np.asarray(self.common_embedding, dtype=np.float64)
        self.background_embedding = np.asarray(self.background_embedding, dtype=np.float64)
        if self.grid_h < 1 or self.grid_w < 1 or self.channels < 1:
            raise ValueError(f"group {self.group_id!r}: degenerate grid/channel spec")
        for vec, name in ((self.common_embedding, "common"),
                          (self.background_embedding, "background")):
            if vec.shape != (self.channels,):
                raise ValueError(f"group {self.group_id!r}: {name} embedding has shape "
                                 f"{vec.shape}, expected ({self.channels},)")
        if np.array_equal(self.common_embedding, self.background_embedding):
            raise ValueError(f"group {self.group_id!r}: common and background "
                             f"embeddings must differ")
        if self.noise_amplitude < 0:
            raise ValueError(f"group {self.group_id!r}: negative noise amplitude")
        if not self.planted_regions:
            raise ValueError(f"group {self.group_id!r}: no planted regions")
        for image_id, rect in self.planted_regions.items():
            r0, c0, r1, c1 = rect
            if not (0 <= r0 <= r1 < self.grid_h and 0 <= c0 <= c1 < self.grid_w):
                raise ValueError(f"group {self.group_id!r}, image {image_id!r}: "
                                 f"rect {rect} outside {self.grid_h}x{self.grid_w} grid")

    def to_dict(self) -> dict:
        return {
            "group_id": self.group_id,
            "grid_h": self.grid_h,
            "grid_w": self.grid_w,
            "channels": self.channels,
            "common_embedding": self.common_embedding.tolist(),
            "background_embedding": self.background_embedding.tolist(),
            "noise_amplitude": self.noise_amplitude,
            "seed": self.seed,
            "image_h": self.image_h,
            "image_w": self.image_w,
            "images": [{"image_id": i, "planted": list(r)}
                       for i, r in sorted(self.planted_regions.items())],
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "SyntheticGroupSpec":
        return cls(
            group_id=raw["group_id"],
            grid_h=raw["grid_h"],
            grid_w=raw["grid_w"],
            channels=raw["channels"],
            common_embedding=np.asarray(raw["common_embedding"], dtype=np.float64),
            background_embedding=np.asarray(raw["background_embedding"], dtype=np.float64),
            planted_regions={item["image_id"]: tuple(item["planted"])  # type: ignore[misc]
                             for item in raw["images"]},
            noise_amplitude=raw.get("noise_amplitude", 0.0),
            seed=raw.get("seed", 0),
            image_h=raw.get("image_h"),
            image_w=raw.get("image_w"),
        )


def load_synthetic_specs(path: Path | str) -> dict[str, SyntheticGroupSpec]:
    """Read a JSON fixture file into specs keyed by group id."""
    raw = json.loads(Path(path).read_text())
    specs = [SyntheticGroupSpec.from_dict(item) for item in raw["groups"]]
    return {s.group_id: s for s in specs}


def save_synthetic_specs(specs: dict[str, SyntheticGroupSpec], path: Path | str) -> None:
    payload = {"groups": [specs[k].to_dict() for k in sorted(specs)]}
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True))


def planted_mask_grid(rect: Rect, grid_shape: tuple[int, int]) -> np.ndarray:
    """Boolean grid mask of an inclusive rectangle."""
    r0, c0, r1, c1 = rect
    mask = np.zeros(grid_shape, dtype=bool)
    mask[r0:r1 + 1, c0:c1 + 1] = True
    return mask


def planted_mask_image(rect: Rect, grid_shape: tuple[int, int],
                       image_shape: tuple[int, int]) -> np.ndarray:
    """Project a grid rectangle to image space.

    An image pixel belongs to the region iff the grid cell containing it
    does, i.e. cell = floor(pixel * grid / image). Both the fixture GT writer
    and the oracle segmenter use this mapping, so they agree bit-exactly.
    """
    grid_h, grid_w = grid_shape
    image_h, image_w = image_shape
    rows = (np.arange(image_h) * grid_h) // image_h
    cols = (np.arange(image_w) * grid_w) // image_w
    r0, c0, r1, c1 = rect
    return ((rows >= r0) & (rows <= r1))[:, None] & ((cols >= c0) & (cols <= c1))[None, :]


def _grid_values(spec: SyntheticGroupSpec, image_id: str,
                 image_index: int) -> np.ndarray:
    rect = spec.planted_regions.get(image_id)
    if rect is None:
        raise BackendError(f"group {spec.group_id!r}: no synthetic spec entry for "
                           f"image {image_id!r}")
    values = np.broadcast_to(
        spec.background_embedding[:, None, None],
        (spec.channels, spec.grid_h, spec.grid_w)).copy()
    mask = planted_mask_grid(rect, (spec.grid_h, spec.grid_w))
    values[:, mask] = spec.common_embedding[:, None]
    if spec.noise_amplitude > 0:
        rng = np.random.default_rng([spec.seed, image_index])
        values += rng.uniform(-spec.noise_amplitude, spec.noise_amplitude,
                              size=values.shape)
    return values.astype(np.float32)


def synthetic_extract(spec: SyntheticGroupSpec) -> list[FeatureMap]:
    """Standalone extraction for one spec, images in sorted id order."""
    image_h = spec.image_h if spec.image_h is not None else spec.grid_h
    image_w = spec.image_w if spec.image_w is not None else spec.grid_w
    maps = []
    for index, image_id in enumerate(sorted(spec.planted_regions)):
        maps.append(FeatureMap(values=_grid_values(spec, image_id, index),
                               grid_h=spec.grid_h, grid_w=spec.grid_w,
                               image_h=image_h, image_w=image_w,
                               backend_id=BACKEND_ID))
    return maps


@dataclass(eq=False)
class SyntheticBackend:
    """Pipeline-facing backend serving features straight from specs."""

    specs: dict[str, SyntheticGroupSpec] = field(default_factory=dict)
    backend_kind: str = BACKEND_ID

    def ensure_ready(self) -> None:
        if not self.specs:
            raise BackendError("synthetic backend has no group specs loaded")

    def extract_group(self, group: GroupRecord) -> list[FeatureMap]:
        spec = self.specs.get(group.group_id)
        if spec is None:
            raise BackendError(f"no synthetic spec for group {group.group_id!r}")
        maps = []
        for index, member in enumerate(group.members):
            maps.append(FeatureMap(
                values=_grid_values(spec, member.image_id, index),
                grid_h=spec.grid_h, grid_w=spec.grid_w,
                image_h=member.height, image_w=member.width,
                backend_id=BACKEND_ID))
        return maps
