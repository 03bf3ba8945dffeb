"""Self-supervised ViT adapter producing high-level patch-token feature grids.

The heavy dependencies (torch, transformers) are imported lazily so the rest
of the package works without them; a missing package or missing weights is a
ConfigurationError telling the user how to point at a model.
"""
from __future__ import annotations

import os
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from ..errors import BackendError, ConfigurationError
from ..types import FeatureMap, GroupRecord, ImageRecord

VIT_MODEL_ENV = "COSAL_VIT_MODEL"
DEFAULT_VIT_MODEL = "facebook/dinov2-base"

# ImageNet channel statistics used by the preprocessing resize/normalize.
_MEAN = (0.485, 0.456, 0.406)
_STD = (0.229, 0.224, 0.225)


def patch_grid(height: int, width: int, patch_size: int) -> tuple[int, int]:
    """Token-grid shape for an input of the given pixel size."""
    if height < patch_size or width < patch_size:
        raise ValueError(f"input {height}x{width} smaller than patch size {patch_size}")
    return height // patch_size, width // patch_size


@dataclass(eq=False)
class VitBackend:
    """Dense features from one transformer block of a frozen ViT.

    layer is 1-based: layer=11 takes the output of the 11th block. Inputs are
    resized to input_size x input_size (a multiple of the patch size), so the
    grid is input_size/patch per side regardless of source geometry.
    """

    model_ref: str | None = None
    layer: int = 11
    input_size: int = 518
    device: str = "cpu"
    backend_kind: str = "vit"
    _model: Any = field(default=None, repr=False)
    _patch_size: int = field(default=14, repr=False)

    def resolved_model_ref(self) -> str:
        return self.model_ref or os.environ.get(VIT_MODEL_ENV, DEFAULT_VIT_MODEL)

    def ensure_ready(self) -> None:
        """Load the model once; translate missing deps/weights into config errors."""
        if self._model is not None:
            return
        try:
            import torch  # noqa: F401
            from transformers import AutoModel
        except ImportError as exc:
            raise ConfigurationError(
                "the ViT backend needs torch and transformers; install the "
                "'models' extra (pip install cosal[models])") from exc

        ref = self.resolved_model_ref()
        try:
            model = AutoModel.from_pretrained(ref)
        except (OSError, EnvironmentError, ValueError) as exc:
            raise ConfigurationError(
                f"cannot load ViT weights from {ref!r}; download the model and point "
                f"at it with the {VIT_MODEL_ENV} environment variable or the "
                f"vit_model config field") from exc
        model.eval()
        model.to(self.device)
        patch = getattr(getattr(model, "config", None), "patch_size", 14)
        if self.input_size % patch != 0:
            raise ConfigurationError(
                f"input size {self.input_size} is not a multiple of the model patch "
                f"size {patch}")
        n_layers = getattr(model.config, "num_hidden_layers", None)
        if n_layers is not None and not 1 <= self.layer <= n_layers:
            raise ConfigurationError(
                f"layer {self.layer} out of range for a {n_layers}-block backbone")
        self._model = model
        self._patch_size = patch

    def _preprocess(self, image: ImageRecord):
        import torch

        tensor = torch.from_numpy(image.pixel_data.astype(np.float32) / 255.0)
        tensor = tensor.permute(2, 0, 1)[None]
        tensor = torch.nn.functional.interpolate(
            tensor, size=(self.input_size, self.input_size), mode="bilinear",
            align_corners=False)
        mean = torch.tensor(_MEAN).view(1, 3, 1, 1)
        std = torch.tensor(_STD).view(1, 3, 1, 1)
        return ((tensor - mean) / std).to(self.device)

    def extract(self, image: ImageRecord) -> FeatureMap:
        self.ensure_ready()
        import torch

        grid_h, grid_w = patch_grid(self.input_size, self.input_size, self._patch_size)
        with torch.inference_mode():
            try:
                outputs = self._model(self._preprocess(image), output_hidden_states=True)
            except RuntimeError as exc:
                raise BackendError(f"ViT inference failed on image "
                                   f"{image.image_id!r}: {exc}") from exc
        hidden = outputs.hidden_states[self.layer]  # (1, tokens, C)
        tokens = hidden.shape[1]
        prefix = tokens - grid_h * grid_w  # CLS plus any register tokens
        if prefix < 0:
            raise BackendError(f"token count {tokens} smaller than expected grid "
                               f"{grid_h}x{grid_w}")
        patches = hidden[0, prefix:, :].reshape(grid_h, grid_w, -1)
        values = patches.permute(2, 0, 1).float().cpu().numpy()
        return FeatureMap(values=values, grid_h=grid_h, grid_w=grid_w,
                          image_h=image.height, image_w=image.width,
                          backend_id=self.backend_kind)

    def extract_group(self, group: GroupRecord) -> list[FeatureMap]:
        return [self.extract(member) for member in group.members]
