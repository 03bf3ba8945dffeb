"""Feature backends: interchangeable producers of per-image feature grids.

Selection strings: "vit" (high-level patch tokens), "diffusion" (low-level
U-Net features), "fused" (both, normalized and concatenated), "synthetic"
(deterministic planted-pattern grids for testing).
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from typing import Protocol, runtime_checkable

from ..errors import ConfigurationError
from ..fusion import fuse
from ..types import FeatureMap, GroupRecord
from .diffusion import DiffusionBackend, DiffusionBackendConfig, combine_group_layers
from .ops import NoiseSchedule, PcaModel, add_noise, area_downsample, reduce_pca, upsample_bilinear
from .synthetic import (SyntheticBackend, SyntheticGroupSpec, load_synthetic_specs,
                        planted_mask_grid, planted_mask_image, save_synthetic_specs,
                        synthetic_extract)
from .vit import VitBackend, patch_grid

BACKEND_KINDS = ("vit", "diffusion", "fused", "synthetic")

__all__ = [
    "BACKEND_KINDS", "DiffusionBackend", "DiffusionBackendConfig", "FeatureBackend",
    "FusedBackend", "NoiseSchedule", "PcaModel", "SyntheticBackend",
    "SyntheticGroupSpec", "VitBackend", "add_noise", "area_downsample",
    "backend_cache_id", "combine_group_layers", "load_synthetic_specs", "patch_grid",
    "planted_mask_grid", "planted_mask_image", "reduce_pca", "save_synthetic_specs",
    "synthetic_extract", "upsample_bilinear",
]


@runtime_checkable
class FeatureBackend(Protocol):
    backend_kind: str

    def ensure_ready(self) -> None: ...

    def extract_group(self, group: GroupRecord) -> list[FeatureMap]: ...


def backend_cache_id(kind: str, settings: dict) -> str:
    """Cache directory name for a backend configuration.

    Any change to the settings (timestep, layers, PCA dims, seed, model refs,
    spec file digest) yields a different id, invalidating stale features.
    """
    blob = json.dumps(settings, sort_keys=True, default=str).encode("utf-8")
    return f"{kind}-{hashlib.sha256(blob).hexdigest()[:12]}"


@dataclass(eq=False)
class FusedBackend:
    """Composite backend: low-level + high-level sources, fused per pixel.

    Before fusion the coarser of the two grids is bilinearly upsampled to the
    finer one, per image.
    """

    low_backend: FeatureBackend
    high_backend: FeatureBackend
    backend_kind: str = "fused"

    def ensure_ready(self) -> None:
        self.low_backend.ensure_ready()
        self.high_backend.ensure_ready()

    def extract_group(self, group: GroupRecord) -> list[FeatureMap]:
        lows = self.low_backend.extract_group(group)
        highs = self.high_backend.extract_group(group)
        fused = []
        for low, high in zip(lows, highs):
            low, high = _align_grids(low, high)
            fused.append(fuse(low, high))
        return fused


def _align_grids(low: FeatureMap, high: FeatureMap) -> tuple[FeatureMap, FeatureMap]:
    if low.grid_shape == high.grid_shape:
        return low, high
    low_area = low.grid_h * low.grid_w
    high_area = high.grid_h * high.grid_w
    if low_area < high_area:
        return _resample(low, high.grid_shape), high
    return low, _resample(high, low.grid_shape)


def _resample(fmap: FeatureMap, grid_shape: tuple[int, int]) -> FeatureMap:
    values = upsample_bilinear(fmap.values, grid_shape)
    return FeatureMap(values=values, grid_h=grid_shape[0], grid_w=grid_shape[1],
                      image_h=fmap.image_h, image_w=fmap.image_w,
                      backend_id=fmap.backend_id)


def create_backend(kind: str, *, synthetic_specs=None, vit_model=None,
                   sd_model=None, diffusion_config: DiffusionBackendConfig | None = None,
                   vit_layer: int = 11, device: str = "cpu") -> FeatureBackend:
    """Instantiate a backend from a selection string."""
    if kind == "synthetic":
        if not synthetic_specs:
            raise ConfigurationError(
                "the synthetic backend needs a spec file (synthetic_spec config "
                "field or --synthetic-spec)")
        return SyntheticBackend(specs=synthetic_specs)
    if kind == "vit":
        return VitBackend(model_ref=vit_model, layer=vit_layer, device=device)
    if kind == "diffusion":
        return DiffusionBackend(model_ref=sd_model,
                                config=diffusion_config or DiffusionBackendConfig(),
                                device=device)
    if kind == "fused":
        return FusedBackend(
            low_backend=DiffusionBackend(
                model_ref=sd_model,
                config=diffusion_config or DiffusionBackendConfig(),
                device=device),
            high_backend=VitBackend(model_ref=vit_model, layer=vit_layer,
                                    device=device))
    raise ConfigurationError(f"unknown backend {kind!r}; choose from {BACKEND_KINDS}")
