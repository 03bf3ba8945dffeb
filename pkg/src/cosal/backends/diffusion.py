"""Latent-diffusion feature adapter producing low-level multi-scale grids.

Per image: encode to a latent, noise it at the configured timestep, run one
denoising U-Net pass, and capture activations at selected up-path blocks.
Per group: reduce each captured layer with PCA fitted jointly over every
pixel of every image in the group, upsample the coarser layers to the finest
layer's resolution, and concatenate along channels.

The torch/diffusers pieces are lazy; the group-level reduction
(combine_group_layers) is pure numpy and tested without weights.
"""
from __future__ import annotations

import hashlib
import os
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from ..errors import BackendError, ConfigurationError
from ..types import FeatureMap, GroupRecord, ImageRecord
from .ops import NoiseSchedule, add_noise, reduce_pca, upsample_bilinear

SD_MODEL_ENV = "COSAL_SD_MODEL"
DEFAULT_SD_MODEL = "runwayml/stable-diffusion-v1-5"


@dataclass(frozen=True)
class DiffusionBackendConfig:
    """Knobs for the diffusion feature extraction.

    unet_decoder_layers are 1-based indices into the flattened sequence of
    up-path resnet outputs, enumerated in forward order (for the SD v1.x
    U-Net that sequence has 12 entries: 4 up blocks x 3 resnets).
    """

    timestep: int = 50
    unet_decoder_layers: tuple[int, ...] = (2, 5, 8)
    pca_dims_per_layer: int = 256
    prompt_text: str = ""
    seed: int = 0

    def __post_init__(self) -> None:
        if self.timestep < 0:
            raise ValueError(f"timestep must be >= 0, got {self.timestep}")
        layers = tuple(self.unet_decoder_layers)
        if not layers:
            raise ValueError("need at least one decoder layer index")
        if any(l < 1 for l in layers):
            raise ValueError(f"layer indices are 1-based, got {layers}")
        if list(layers) != sorted(set(layers)):
            raise ValueError(f"layer indices must be distinct and ascending, got {layers}")
        if self.pca_dims_per_layer < 1:
            raise ValueError("pca_dims_per_layer must be positive")


def combine_group_layers(layer_stacks: list[list[np.ndarray]],
                         pca_dims: int) -> list[np.ndarray]:
    """Reduce + align multi-layer captures for one image group.

    layer_stacks[l][i] is image i's activation at layer l, shaped
    (C_l, h_l, w_l); every image must share a layer's shape. Each layer is
    PCA-reduced over the pixels of all images jointly (shared basis), coarser
    layers are bilinearly upsampled to the finest layer's grid, and channels
    are concatenated. Returns one (k_total, H, W) array per image.
    """
    if not layer_stacks or not layer_stacks[0]:
        raise ValueError("need at least one layer and one image")
    n_images = len(layer_stacks[0])
    shapes = []
    for l, stack in enumerate(layer_stacks):
        if len(stack) != n_images:
            raise ValueError(f"layer {l} has {len(stack)} images, expected {n_images}")
        shape = stack[0].shape
        if any(m.shape != shape for m in stack):
            raise ValueError(f"layer {l}: images disagree on activation shape")
        shapes.append(shape)
    target = max(((h, w) for _, h, w in shapes), key=lambda s: s[0] * s[1])

    reduced: list[list[np.ndarray]] = []
    for stack, (c, h, w) in zip(layer_stacks, shapes):
        pixels = np.concatenate([m.reshape(c, h * w).T for m in stack], axis=0)
        k = min(pca_dims, pixels.shape[0] - 1, c)
        proj, _ = reduce_pca(pixels, k)
        per_image = proj.reshape(n_images, h, w, k).transpose(0, 3, 1, 2)
        reduced.append([upsample_bilinear(per_image[i], target)
                        for i in range(n_images)])

    return [np.concatenate([layer[i] for layer in reduced], axis=0)
            for i in range(n_images)]


def _image_noise_seed(base_seed: int, group_id: str, image_id: str) -> list[int]:
    digest = hashlib.sha256(f"{group_id}/{image_id}".encode("utf-8")).digest()
    return [base_seed, int.from_bytes(digest[:8], "little")]


@dataclass(eq=False)
class DiffusionBackend:
    """Group-level diffusion feature extraction behind the generic backend API."""

    model_ref: str | None = None
    config: DiffusionBackendConfig = field(default_factory=DiffusionBackendConfig)
    device: str = "cpu"
    input_size: int = 512
    backend_kind: str = "diffusion"
    _pipe: Any = field(default=None, repr=False)
    _schedule: NoiseSchedule | None = field(default=None, repr=False)
    _layer_modules: list[Any] = field(default_factory=list, repr=False)

    def resolved_model_ref(self) -> str:
        return self.model_ref or os.environ.get(SD_MODEL_ENV, DEFAULT_SD_MODEL)

    def ensure_ready(self) -> None:
        if self._pipe is not None:
            return
        try:
            import torch  # noqa: F401
            from diffusers import StableDiffusionPipeline
        except ImportError as exc:
            raise ConfigurationError(
                "the diffusion backend needs torch and diffusers; install the "
                "'models' extra (pip install cosal[models])") from exc

        ref = self.resolved_model_ref()
        try:
            pipe = StableDiffusionPipeline.from_pretrained(ref, safety_checker=None)
        except (OSError, EnvironmentError, ValueError) as exc:
            raise ConfigurationError(
                f"cannot load diffusion weights from {ref!r}; download the model and "
                f"point at it with the {SD_MODEL_ENV} environment variable or the "
                f"sd_model config field") from exc
        pipe.to(self.device)
        pipe.unet.eval()
        pipe.vae.eval()

        # Flatten the up-path resnets in forward order; 1-based indexing.
        modules = [resnet for block in pipe.unet.up_blocks for resnet in block.resnets]
        bad = [l for l in self.config.unet_decoder_layers if l > len(modules)]
        if bad:
            raise ConfigurationError(
                f"decoder layer indices {bad} invalid for this backbone; valid "
                f"indices are 1..{len(modules)}")
        self._layer_modules = [modules[l - 1] for l in self.config.unet_decoder_layers]

        # Schedule indexed so that abar[0] == 1 (timestep 0 = clean latent).
        abar = np.concatenate([[1.0],
                               pipe.scheduler.alphas_cumprod.cpu().numpy()])
        self._schedule = NoiseSchedule(abar=abar)
        if self.config.timestep > self._schedule.max_t:
            raise ConfigurationError(
                f"timestep {self.config.timestep} beyond schedule length "
                f"{self._schedule.max_t}")
        self._pipe = pipe

    def _encode_latent(self, image: ImageRecord) -> np.ndarray:
        import torch

        tensor = torch.from_numpy(image.pixel_data.astype(np.float32) / 255.0)
        tensor = tensor.permute(2, 0, 1)[None]
        tensor = torch.nn.functional.interpolate(
            tensor, size=(self.input_size, self.input_size), mode="bilinear",
            align_corners=False)
        tensor = (tensor * 2.0 - 1.0).to(self.device)
        with torch.inference_mode():
            dist = self._pipe.vae.encode(tensor).latent_dist
        # Deterministic: take the distribution mean instead of sampling.
        return (dist.mean * self._pipe.vae.config.scaling_factor)[0].cpu().numpy()

    def _prompt_embedding(self):
        import torch

        pipe = self._pipe
        tokens = pipe.tokenizer(self.config.prompt_text, padding="max_length",
                                max_length=pipe.tokenizer.model_max_length,
                                truncation=True, return_tensors="pt")
        with torch.inference_mode():
            return pipe.text_encoder(tokens.input_ids.to(self.device))[0]

    def _capture_layers(self, image: ImageRecord,
                        prompt_emb) -> list[np.ndarray]:
        import torch

        z0 = self._encode_latent(image)
        t = self.config.timestep
        rng = np.random.default_rng(
            _image_noise_seed(self.config.seed, image.group_id, image.image_id))
        eps = rng.standard_normal(z0.shape).astype(np.float32)
        zt = add_noise(z0, t, eps, self._schedule)

        captured: list[Any] = []
        hooks = [module.register_forward_hook(
                     lambda _m, _inp, out, store=captured: store.append(out))
                 for module in self._layer_modules]
        try:
            with torch.inference_mode():
                self._pipe.unet(
                    torch.from_numpy(zt[None]).to(self.device),
                    torch.tensor([max(t - 1, 0)], device=self.device),
                    encoder_hidden_states=prompt_emb)
        except RuntimeError as exc:
            raise BackendError(f"U-Net inference failed on image "
                               f"{image.image_id!r}: {exc}") from exc
        finally:
            for hook in hooks:
                hook.remove()
        if len(captured) != len(self._layer_modules):
            raise BackendError(f"captured {len(captured)} activations, expected "
                               f"{len(self._layer_modules)}")
        return [act[0].float().cpu().numpy() for act in captured]

    def extract_group(self, group: GroupRecord) -> list[FeatureMap]:
        self.ensure_ready()
        prompt_emb = self._prompt_embedding()
        captures = [self._capture_layers(member, prompt_emb)
                    for member in group.members]
        layer_stacks = [[captures[i][l] for i in range(len(group.members))]
                        for l in range(len(self._layer_modules))]
        combined = combine_group_layers(layer_stacks, self.config.pca_dims_per_layer)
        maps = []
        for member, values in zip(group.members, combined):
            _, h, w = values.shape
            maps.append(FeatureMap(values=values.astype(np.float32),
                                   grid_h=h, grid_w=w,
                                   image_h=member.height, image_w=member.width,
                                   backend_id=self.backend_kind))
        return maps
