"""Training-free co-salient object detection.

Per image group: extract dense features from frozen vision models, fuse
high- and low-level sources, average the group's salient pixel embeddings
into a center proxy, pick the top-K best-correlated pixels per image as
point prompts, and drive a promptable segmenter to produce co-saliency maps.
Includes a saliency benchmark toolkit (S-measure, mean F-measure, MAE).
"""
from .backends import (DiffusionBackend, DiffusionBackendConfig, FusedBackend,
                       NoiseSchedule, SyntheticBackend, SyntheticGroupSpec,
                       VitBackend, add_noise, area_downsample, combine_group_layers,
                       create_backend, load_synthetic_specs, reduce_pca,
                       synthetic_extract, upsample_bilinear)
from .dataset import (DatasetScan, FeatureCache, FeatureCacheEntry, binarize_mask,
                      load_saliency_map, scan_dataset, write_prediction)
from .errors import (BackendError, CacheCorruptionError, ConfigurationError,
                     CosalError, DatasetError, EvaluationError)
from .evaluation import (EvalResult, evaluate_dataset, f_measure_mean, mae,
                         s_measure, write_report)
from .fixtures import build_planted_fixture
from .fusion import fuse, l2_normalize_pixelwise
from .pipeline import PipelineConfig, RunReport, run_pipeline
from .prompts import (GroupCenterProxy, PromptPoint, PromptSet, binarize_saliency,
                      compute_center_proxy, generate_prompts, grid_to_image_coords,
                      salient_pixels, score_pixels, select_topk)
from .segmentation import (OracleSegmenter, SamSegmenter, SegmenterResult,
                           oracle_segment, select_mask)
from .types import FeatureMap, FusedFeatureMap, GroupRecord, ImageRecord, SaliencyMap

__version__ = "0.1.0"

__all__ = [
    "BackendError", "CacheCorruptionError", "ConfigurationError", "CosalError",
    "DatasetError", "DatasetScan", "DiffusionBackend", "DiffusionBackendConfig",
    "EvalResult", "EvaluationError", "FeatureCache", "FeatureCacheEntry",
    "FeatureMap", "FusedBackend", "FusedFeatureMap", "GroupCenterProxy",
    "GroupRecord", "ImageRecord", "NoiseSchedule", "OracleSegmenter",
    "PipelineConfig", "PromptPoint", "PromptSet", "RunReport", "SaliencyMap",
    "SamSegmenter", "SegmenterResult", "SyntheticBackend", "SyntheticGroupSpec",
    "VitBackend", "add_noise", "area_downsample", "binarize_mask",
    "binarize_saliency", "build_planted_fixture", "combine_group_layers",
    "compute_center_proxy", "create_backend", "evaluate_dataset", "f_measure_mean",
    "fuse", "generate_prompts", "grid_to_image_coords", "l2_normalize_pixelwise",
    "load_saliency_map", "load_synthetic_specs", "mae", "oracle_segment",
    "reduce_pca", "run_pipeline", "s_measure", "salient_pixels", "scan_dataset",
    "score_pixels", "select_mask", "select_topk", "synthetic_extract",
    "upsample_bilinear", "write_prediction", "write_report",
]
