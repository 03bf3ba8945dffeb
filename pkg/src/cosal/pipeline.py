"""End-to-end orchestration: extract -> fuse -> prompt -> segment -> evaluate.

Groups are processed independently (optionally in a worker pool); a failure
in one group is recorded and the rest continue. All randomness is derived
from the config seed, so a run is a deterministic function of its inputs.
"""
from __future__ import annotations

import hashlib
import json
import logging
import shutil
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import backends
from .backends import FeatureBackend, backend_cache_id, create_backend
from .backends.diffusion import DiffusionBackendConfig
from .dataset import DatasetScan, FeatureCache, load_saliency_map, scan_dataset, write_prediction
from .errors import ConfigurationError, CosalError
from .evaluation import EvalResult, evaluate_dataset, write_report
from .fusion import l2_normalize_pixelwise
from .prompts import PromptSet, generate_prompts
from .segmentation import SEGMENTER_KINDS, SamSegmenter, oracle_segment, select_mask
from .types import FeatureMap, GroupRecord, SaliencyMap

logger = logging.getLogger(__name__)

REPORT_NAME = "report.json"
TIMING_NAME = "timing.json"


@dataclass
class PipelineConfig:
    """Everything a run needs; field names double as config-file keys."""

    dataset_root: Path
    output_dir: Path
    gt_root: Path | None = None
    cache_dir: Path | None = None
    backend: str = "fused"
    segmenter: str = "sam-vitb"
    topk: int = 2
    timestep: int = 50
    pca_dims: int = 256
    seed: int = 0
    workers: int = 1
    saliency_dir: Path | None = None
    synthetic_spec: Path | None = None
    vit_model: str | None = None
    sd_model: str | None = None
    sam_checkpoint: str | None = None
    vit_layer: int = 11
    unet_layers: tuple[int, ...] = (2, 5, 8)
    prompt_text: str = ""
    device: str = "cpu"

    def __post_init__(self) -> None:
        for name in ("dataset_root", "output_dir", "gt_root", "cache_dir",
                     "saliency_dir", "synthetic_spec"):
            value = getattr(self, name)
            if value is not None:
                setattr(self, name, Path(value))
        self.unet_layers = tuple(self.unet_layers)
        if self.topk < 1:
            raise ConfigurationError(f"topk must be >= 1, got {self.topk}")
        if self.timestep < 0:
            raise ConfigurationError(f"timestep must be >= 0, got {self.timestep}")
        if self.workers < 1:
            raise ConfigurationError(f"workers must be >= 1, got {self.workers}")
        if self.backend not in backends.BACKEND_KINDS:
            raise ConfigurationError(f"unknown backend {self.backend!r}; choose from "
                                     f"{backends.BACKEND_KINDS}")
        if self.segmenter not in SEGMENTER_KINDS:
            raise ConfigurationError(f"unknown segmenter {self.segmenter!r}; choose "
                                     f"from {SEGMENTER_KINDS}")

    def to_dict(self) -> dict:
        out = {}
        for key, value in self.__dict__.items():
            if isinstance(value, Path):
                value = str(value)
            elif isinstance(value, tuple):
                value = list(value)
            out[key] = value
        return out


@dataclass
class GroupResult:
    group_id: str
    image_ids: list[str]
    prompts: dict[str, list[list[float]]]  # image_id -> [[x, y, score], ...]
    prediction_files: list[str]
    failed: bool = False
    error: str | None = None


@dataclass
class RunReport:
    config: dict
    groups: list[GroupResult]
    cache: dict
    weights_checksum_before: dict
    weights_checksum_after: dict
    metrics: dict | None = None
    failed_groups: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "config": self.config,
            "groups": [{"group_id": g.group_id, "image_ids": g.image_ids,
                        "prompts": g.prompts,
                        "prediction_files": g.prediction_files,
                        "failed": g.failed, "error": g.error}
                       for g in self.groups],
            "cache": self.cache,
            "weights_checksum_before": self.weights_checksum_before,
            "weights_checksum_after": self.weights_checksum_after,
            "metrics": self.metrics,
            "failed_groups": self.failed_groups,
        }


def _weight_files(cfg: PipelineConfig) -> list[Path]:
    files: list[Path] = []
    for ref in (cfg.sam_checkpoint, cfg.vit_model, cfg.sd_model):
        if ref is None:
            continue
        path = Path(ref)
        if path.is_file():
            files.append(path)
        elif path.is_dir():
            files.extend(sorted(p for p in path.rglob("*") if p.is_file()))
    return files


def _checksum_weights(cfg: PipelineConfig) -> dict[str, str]:
    out = {}
    for path in _weight_files(cfg):
        digest = hashlib.sha256()
        with open(path, "rb") as fh:
            for chunk in iter(lambda: fh.read(1 << 20), b""):
                digest.update(chunk)
        out[str(path)] = digest.hexdigest()
    return out


def _backend_settings(cfg: PipelineConfig) -> dict:
    settings = {"backend": cfg.backend, "seed": cfg.seed}
    if cfg.backend in ("vit", "fused"):
        settings["vit_model"] = cfg.vit_model or "default"
        settings["vit_layer"] = cfg.vit_layer
    if cfg.backend in ("diffusion", "fused"):
        settings.update({"sd_model": cfg.sd_model or "default",
                         "timestep": cfg.timestep,
                         "unet_layers": list(cfg.unet_layers),
                         "pca_dims": cfg.pca_dims,
                         "prompt_text": cfg.prompt_text})
    if cfg.backend == "synthetic" and cfg.synthetic_spec is not None:
        settings["spec_digest"] = hashlib.sha256(
            cfg.synthetic_spec.read_bytes()).hexdigest()
    return settings


def _build_backend(cfg: PipelineConfig) -> FeatureBackend:
    synthetic_specs = None
    if cfg.backend == "synthetic":
        if cfg.synthetic_spec is None or not cfg.synthetic_spec.is_file():
            raise ConfigurationError(
                f"backend 'synthetic' needs an existing spec file, got "
                f"{cfg.synthetic_spec}")
        synthetic_specs = backends.load_synthetic_specs(cfg.synthetic_spec)
    diffusion_config = DiffusionBackendConfig(
        timestep=cfg.timestep, unet_decoder_layers=cfg.unet_layers,
        pca_dims_per_layer=cfg.pca_dims, prompt_text=cfg.prompt_text,
        seed=cfg.seed)
    return create_backend(cfg.backend, synthetic_specs=synthetic_specs,
                          vit_model=cfg.vit_model, sd_model=cfg.sd_model,
                          diffusion_config=diffusion_config,
                          vit_layer=cfg.vit_layer, device=cfg.device)


def _build_segmenter(cfg: PipelineConfig):
    if cfg.segmenter == "oracle":
        if cfg.synthetic_spec is None or not cfg.synthetic_spec.is_file():
            raise ConfigurationError(
                "the oracle segmenter needs the synthetic spec file for its "
                "planted regions (--synthetic-spec)")
        specs = backends.load_synthetic_specs(cfg.synthetic_spec)
        return _OracleFromSpecs(specs)
    return SamSegmenter(checkpoint=cfg.sam_checkpoint, device=cfg.device)


class _OracleFromSpecs:
    """Oracle segmenter that projects spec rectangles to each image's geometry."""

    segmenter_kind = "oracle"

    def __init__(self, specs: dict[str, backends.SyntheticGroupSpec]):
        self._specs = specs

    def ensure_ready(self) -> None:
        if not self._specs:
            raise ConfigurationError("oracle segmenter has no planted regions loaded")

    def segment(self, image, prompts):
        spec = self._specs.get(image.group_id)
        if spec is None or image.image_id not in spec.planted_regions:
            raise ConfigurationError(f"no planted region for image "
                                     f"({image.group_id!r}, {image.image_id!r})")
        region = backends.planted_mask_image(
            spec.planted_regions[image.image_id],
            (spec.grid_h, spec.grid_w), (image.height, image.width))
        return oracle_segment(image, prompts, [region])


def _load_group_saliency(cfg: PipelineConfig, group: GroupRecord) -> list[SaliencyMap]:
    maps = []
    for member in group.members:
        if cfg.saliency_dir is not None:
            path = cfg.saliency_dir / group.group_id / f"{member.image_id}.png"
            if not path.is_file():
                raise ConfigurationError(f"saliency map missing for "
                                         f"{group.group_id}/{member.image_id}: {path}")
            maps.append(load_saliency_map(path, image_id=member.image_id,
                                          group_id=group.group_id))
        else:
            # Uniform map: the adaptive threshold then falls back to all pixels.
            maps.append(SaliencyMap(
                values=np.full((member.height, member.width), 0.5),
                image_id=member.image_id, group_id=group.group_id))
    return maps


def _group_features(cfg: PipelineConfig, backend: FeatureBackend,
                    cache: FeatureCache | None, group: GroupRecord,
                    stats: dict) -> list[FeatureMap]:
    if cache is not None:
        # All-or-nothing: group-fitted reductions make per-image entries
        # interdependent, so any miss re-extracts the whole group.
        cached = [cache.load_features(f"{group.group_id}/{m.image_id}")
                  for m in group.members]
        if all(fmap is not None for fmap in cached):
            stats["hits"] += len(cached)
            return cached  # type: ignore[return-value]
    maps = backend.extract_group(group)
    if cfg.backend in ("vit", "diffusion"):
        # Single-source runs score on unit pixel vectors, matching the fused
        # path's per-source normalization. Synthetic features stay raw.
        maps = [l2_normalize_pixelwise(m) for m in maps]
    for fmap in maps:
        # The cache stores f32; truncate up front so cold and warm runs score
        # bit-identical features.
        if fmap.values.dtype != np.float32:
            fmap.values = np.ascontiguousarray(fmap.values, dtype=np.float32)
    stats["misses"] += len(maps)
    if cache is not None:
        for member, fmap in zip(group.members, maps):
            cache.save_features(f"{group.group_id}/{member.image_id}", fmap)
    return maps


def _process_group(cfg: PipelineConfig, backend: FeatureBackend, segmenter,
                   cache: FeatureCache | None, group: GroupRecord,
                   stats: dict, extract_only: bool = False) -> GroupResult:
    maps = _group_features(cfg, backend, cache, group, stats)
    image_ids = [m.image_id for m in group.members]
    if extract_only:
        return GroupResult(group_id=group.group_id, image_ids=image_ids,
                           prompts={}, prediction_files=[])

    saliency = _load_group_saliency(cfg, group)
    prompt_set: PromptSet = generate_prompts(maps, saliency, cfg.topk)

    prompts_out: dict[str, list[list[float]]] = {}
    prediction_files: list[str] = []
    for member, points in zip(group.members, prompt_set.points_per_image):
        prompts_out[member.image_id] = [[p.x, p.y, p.score] for p in points]
        result = segmenter.segment(member, points)
        pred = select_mask(result)
        path = write_prediction(pred, cfg.output_dir / "predictions")
        prediction_files.append(str(path.relative_to(cfg.output_dir)))
    return GroupResult(group_id=group.group_id, image_ids=image_ids,
                       prompts=prompts_out, prediction_files=prediction_files)


def run_pipeline(cfg: PipelineConfig, *, extract_only: bool = False,
                 evaluate: bool | None = None) -> RunReport:
    """Execute the full pipeline and write report.json/timing.json.

    evaluate defaults to "gt_root is set". extract_only stops after feature
    extraction (populating the cache), producing no predictions or metrics.
    """
    if extract_only and cfg.cache_dir is None:
        raise ConfigurationError("extract-only runs need --cache-dir")
    evaluate = (cfg.gt_root is not None) if evaluate is None else evaluate
    if evaluate and cfg.gt_root is None:
        raise ConfigurationError("evaluation requested but no gt_root configured")

    # Fail fast on configuration problems before touching the dataset.
    backend = _build_backend(cfg)
    backend.ensure_ready()
    segmenter = None
    if not extract_only:
        segmenter = _build_segmenter(cfg)
        segmenter.ensure_ready()

    checksum_before = _checksum_weights(cfg)
    scan: DatasetScan = scan_dataset(cfg.dataset_root,
                                     cfg.gt_root if evaluate else None)

    cache = None
    if cfg.cache_dir is not None:
        cache = FeatureCache(cfg.cache_dir,
                             backend_cache_id(cfg.backend, _backend_settings(cfg)))

    stats = {"hits": 0, "misses": 0}
    results: dict[str, GroupResult] = {}
    timings: dict[str, float] = {}
    lock = threading.Lock()
    local = threading.local()

    def worker_instances():
        # Model-holding instances are single-caller; pool threads get their
        # own via the initializer below, the sequential path uses the shared ones.
        if not hasattr(local, "backend"):
            local.backend = backend
            local.segmenter = segmenter
        return local.backend, local.segmenter

    def handle(group: GroupRecord) -> None:
        start = time.perf_counter()
        group_stats = {"hits": 0, "misses": 0}
        try:
            wb, ws = worker_instances()
            result = _process_group(cfg, wb, ws, cache, group, group_stats,
                                    extract_only=extract_only)
        except Exception as exc:  # isolate per-group failures
            logger.exception("group %s failed", group.group_id)
            result = GroupResult(
                group_id=group.group_id,
                image_ids=[m.image_id for m in group.members],
                prompts={}, prediction_files=[], failed=True,
                error=f"{type(exc).__name__}: {exc}")
        elapsed = time.perf_counter() - start
        with lock:
            results[group.group_id] = result
            timings[group.group_id] = elapsed
            stats["hits"] += group_stats["hits"]
            stats["misses"] += group_stats["misses"]

    if cfg.workers == 1 or cache is not None:
        # The cache has a single-writer contract; keep writes serialized.
        for group in scan.groups:
            handle(group)
    else:
        def make_worker_locals():
            local.backend = _build_backend(cfg)
            local.segmenter = None if extract_only else _build_segmenter(cfg)

        with ThreadPoolExecutor(max_workers=cfg.workers,
                                initializer=make_worker_locals) as pool:
            list(pool.map(handle, scan.groups))

    ordered = [results[g.group_id] for g in scan.groups]
    failed = [g.group_id for g in ordered if g.failed]

    metrics = None
    if evaluate and not extract_only:
        ok_groups = {g.group_id for g in ordered if not g.failed}
        if ok_groups:
            eval_result = _evaluate_subset(cfg, ok_groups)
            metrics = eval_result.to_dict()
            write_report(eval_result,
                         cfg.output_dir / "eval_report.json",
                         cfg.output_dir / "eval_report.txt")

    checksum_after = _checksum_weights(cfg)
    if checksum_after != checksum_before:
        raise CosalError("model weight files changed during the run")

    report = RunReport(config=cfg.to_dict(), groups=ordered, cache=dict(stats),
                       weights_checksum_before=checksum_before,
                       weights_checksum_after=checksum_after,
                       metrics=metrics, failed_groups=failed)
    cfg.output_dir.mkdir(parents=True, exist_ok=True)
    (cfg.output_dir / REPORT_NAME).write_text(
        json.dumps(report.to_dict(), indent=2, sort_keys=True))
    (cfg.output_dir / TIMING_NAME).write_text(
        json.dumps({"per_group_seconds": timings,
                    "total_seconds": sum(timings.values())},
                   indent=2, sort_keys=True))
    return report


def _evaluate_subset(cfg: PipelineConfig, group_ids: set[str]) -> EvalResult:
    """Evaluate predictions, restricted to groups that completed."""
    pred_dir = cfg.output_dir / "predictions"
    assert cfg.gt_root is not None
    all_groups = {p.name for p in cfg.gt_root.iterdir() if p.is_dir()}
    if group_ids >= all_groups:
        return evaluate_dataset(pred_dir, cfg.gt_root, dataset_id=cfg.gt_root.name)
    # Stage a filtered GT view so evaluate_dataset's completeness check
    # applies only to the groups that produced predictions.
    staged = cfg.output_dir / "_eval_gt_subset"
    if staged.exists():
        shutil.rmtree(staged)
    for group_id in sorted(group_ids & all_groups):
        target = staged / group_id
        target.mkdir(parents=True, exist_ok=True)
        for mask in (cfg.gt_root / group_id).glob("*.png"):
            data = mask.read_bytes()
            (target / mask.name).write_bytes(data)
    return evaluate_dataset(pred_dir, staged, dataset_id=cfg.gt_root.name)
