"""Saliency benchmark metrics and dataset-level aggregation.

Three per-image metrics with pinned, brute-force-verifiable conventions:

* mae      - mean absolute per-pixel difference.
* f_measure_mean - harmonic precision/recall mean after binarizing the
  prediction at the self-adaptive threshold min(2 * mean, 1), strictly
  greater-than. beta^2 defaults to 0.3. Degenerate cases: no predicted
  positives -> 0; empty GT -> 1 if the binarized prediction is also empty,
  else 0.
* s_measure - structure measure S = alpha * S_object + (1 - alpha) * S_region.
  The object term compares foreground/background mean and spread; the region
  term splits both maps into four blocks about the GT centroid and scores
  each block with an SSIM-style similarity, weighted by block area. Sample
  statistics use the N-1 normalization (0 when a block has <= 1 pixel).
  Degenerate GT: all-background -> 1 - mean(pred); all-foreground ->
  mean(pred). The result is clamped to [0, 1].

Dataset aggregation is the unweighted per-image mean (not a mean of
per-group means).
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .backends.ops import upsample_bilinear
from .dataset import GT_BINARY_THRESHOLD, load_saliency_map
from .errors import EvaluationError
from .types import SaliencyMap


def _values(m: SaliencyMap | np.ndarray) -> np.ndarray:
    arr = m.values if isinstance(m, SaliencyMap) else np.asarray(m, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"expected a 2-D map, got shape {arr.shape}")
    return arr


def _check_pair(pred: np.ndarray, gt: np.ndarray) -> None:
    if pred.shape != gt.shape:
        raise ValueError(f"prediction shape {pred.shape} does not match "
                         f"ground truth shape {gt.shape}")
    if pred.min() < 0 or pred.max() > 1:
        raise ValueError("prediction values must lie in [0, 1]")


def _check_binary(gt: np.ndarray) -> None:
    if not np.logical_or(gt == 0.0, gt == 1.0).all():
        raise ValueError("ground truth must be binary (exactly 0 or 1)")


def mae(pred: SaliencyMap | np.ndarray, gt: SaliencyMap | np.ndarray) -> float:
    """Mean absolute difference over all pixels."""
    p, g = _values(pred), _values(gt)
    _check_pair(p, g)
    if g.min() < 0 or g.max() > 1:
        raise ValueError("ground truth values must lie in [0, 1]")
    return float(np.abs(p - g).mean())


def adaptive_threshold(pred: np.ndarray) -> float:
    """Self-adaptive binarization threshold: twice the mean, capped at 1."""
    return min(2.0 * float(pred.mean()), 1.0)


def f_measure_mean(pred: SaliencyMap | np.ndarray, gt: SaliencyMap | np.ndarray,
                   beta_sq: float = 0.3) -> float:
    """F-measure at the self-adaptive threshold."""
    p, g = _values(pred), _values(gt)
    _check_pair(p, g)
    _check_binary(g)

    binary = p > adaptive_threshold(p)
    gt_pos = g == 1.0
    if not gt_pos.any():
        return 1.0 if not binary.any() else 0.0

    tp = float(np.logical_and(binary, gt_pos).sum())
    fp = float(np.logical_and(binary, ~gt_pos).sum())
    fn = float(np.logical_and(~binary, gt_pos).sum())
    if tp + fp == 0:
        return 0.0
    precision = tp / (tp + fp)
    recall = tp / (tp + fn)
    denom = beta_sq * precision + recall
    if denom == 0:
        return 0.0
    return (1.0 + beta_sq) * precision * recall / denom


def _sample_std(v: np.ndarray) -> float:
    return float(v.std(ddof=1)) if v.size > 1 else 0.0


def _object_similarity(region_values: np.ndarray) -> float:
    x = float(region_values.mean())
    return 2.0 * x / (x * x + 1.0 + _sample_std(region_values))


def _object_score(pred: np.ndarray, gt: np.ndarray) -> float:
    fg_mask = gt == 1.0
    u = float(gt.mean())
    score_fg = _object_similarity(pred[fg_mask])
    score_bg = _object_similarity((1.0 - pred)[~fg_mask])
    return u * score_fg + (1.0 - u) * score_bg


def _block_ssim(pred: np.ndarray, gt: np.ndarray) -> float:
    n = pred.size
    if n == 0:
        return 0.0
    x, y = float(pred.mean()), float(gt.mean())
    if n > 1:
        sigma_x = float(pred.var(ddof=1))
        sigma_y = float(gt.var(ddof=1))
        sigma_xy = float(((pred - x) * (gt - y)).sum() / (n - 1))
    else:
        sigma_x = sigma_y = sigma_xy = 0.0
    num = 4.0 * x * y * sigma_xy
    den = (x * x + y * y) * (sigma_x + sigma_y)
    if num != 0.0:
        return num / den  # den > 0 whenever num != 0
    return 1.0 if den == 0.0 else 0.0


def _gt_centroid(gt: np.ndarray) -> tuple[int, int]:
    """Split point (row, col) in [1..h] x [1..w] about the foreground centroid."""
    h, w = gt.shape
    coords = np.argwhere(gt == 1.0)
    if coords.size == 0:
        return int(round(h / 2)) + 1, int(round(w / 2)) + 1
    cy, cx = coords.mean(axis=0).round().astype(int)
    return int(cy) + 1, int(cx) + 1


def _region_score(pred: np.ndarray, gt: np.ndarray) -> float:
    h, w = gt.shape
    cy, cx = _gt_centroid(gt)
    area = float(h * w)
    blocks = [(slice(0, cy), slice(0, cx)),
              (slice(0, cy), slice(cx, w)),
              (slice(cy, h), slice(0, cx)),
              (slice(cy, h), slice(cx, w))]
    weights = [cy * cx / area, cy * (w - cx) / area, (h - cy) * cx / area]
    weights.append(1.0 - sum(weights))
    return sum(wt * _block_ssim(pred[rows, cols], gt[rows, cols])
               for wt, (rows, cols) in zip(weights, blocks))


def s_measure(pred: SaliencyMap | np.ndarray, gt: SaliencyMap | np.ndarray,
              alpha: float = 0.5) -> float:
    """Structure measure between a soft prediction and a binary ground truth."""
    p, g = _values(pred), _values(gt)
    _check_pair(p, g)
    _check_binary(g)

    gt_mean = float(g.mean())
    if gt_mean == 0.0:        # all background
        score = 1.0 - float(p.mean())
    elif gt_mean == 1.0:      # all foreground
        score = float(p.mean())
    else:
        score = alpha * _object_score(p, g) + (1.0 - alpha) * _region_score(p, g)
    return min(max(score, 0.0), 1.0)


@dataclass(frozen=True)
class ImageEval:
    group_id: str
    image_id: str
    s_measure: float
    f_measure: float
    mae: float


@dataclass(eq=False)
class EvalResult:
    """Per-dataset aggregate plus the per-image score table."""

    dataset_id: str
    s_measure: float
    f_measure_mean: float
    mae: float
    per_image: list[ImageEval]

    def to_dict(self) -> dict:
        return {
            "dataset_id": self.dataset_id,
            "aggregate": {"s_measure": self.s_measure,
                          "f_measure_mean": self.f_measure_mean,
                          "mae": self.mae},
            "image_count": len(self.per_image),
            "per_image": [{"group_id": e.group_id, "image_id": e.image_id,
                           "s_measure": e.s_measure, "f_measure": e.f_measure,
                           "mae": e.mae} for e in self.per_image],
        }


def _gt_mask_paths(gt_dir: Path) -> list[tuple[str, str, Path]]:
    out = []
    for group_dir in sorted((p for p in gt_dir.iterdir() if p.is_dir()),
                            key=lambda p: p.name):
        for mask in sorted(group_dir.glob("*.png"), key=lambda p: p.stem):
            out.append((group_dir.name, mask.stem, mask))
    return out


def evaluate_dataset(pred_dir: Path | str, gt_dir: Path | str,
                     dataset_id: str | None = None) -> EvalResult:
    """Score every prediction against the GT tree and average per image.

    GT masks are binarized at the benchmark threshold; predictions stay
    soft and are bilinearly resized to GT dimensions when they differ.
    Missing predictions are collected into one error.
    """
    pred_dir, gt_dir = Path(pred_dir), Path(gt_dir)
    if not gt_dir.is_dir():
        raise EvaluationError(f"ground-truth directory {gt_dir} does not exist")
    if not pred_dir.is_dir():
        raise EvaluationError(f"prediction directory {pred_dir} does not exist")

    masks = _gt_mask_paths(gt_dir)
    if not masks:
        raise EvaluationError(f"no ground-truth masks found under {gt_dir}")

    missing = [f"{g}/{s}" for g, s, _ in masks
               if not (pred_dir / g / f"{s}.png").is_file()]
    if missing:
        raise EvaluationError(f"missing predictions for {len(missing)} images: "
                              f"{', '.join(missing[:20])}"
                              + (" ..." if len(missing) > 20 else ""))

    rows = []
    for group_id, stem, mask_path in masks:
        gt_map = load_saliency_map(mask_path, image_id=stem, group_id=group_id)
        gt_binary = (gt_map.values > GT_BINARY_THRESHOLD).astype(np.float64)
        pred_map = load_saliency_map(pred_dir / group_id / f"{stem}.png",
                                     image_id=stem, group_id=group_id)
        pred = pred_map.values
        if pred.shape != gt_binary.shape:
            pred = np.clip(upsample_bilinear(pred, gt_binary.shape), 0.0, 1.0)
        rows.append(ImageEval(group_id=group_id, image_id=stem,
                              s_measure=s_measure(pred, gt_binary),
                              f_measure=f_measure_mean(pred, gt_binary),
                              mae=mae(pred, gt_binary)))

    return EvalResult(
        dataset_id=dataset_id if dataset_id is not None else gt_dir.name,
        s_measure=float(np.mean([r.s_measure for r in rows])),
        f_measure_mean=float(np.mean([r.f_measure for r in rows])),
        mae=float(np.mean([r.mae for r in rows])),
        per_image=rows)


def format_report_table(result: EvalResult) -> str:
    """Fixed-width aggregate table for terminals and logs."""
    lines = [
        f"dataset: {result.dataset_id} ({len(result.per_image)} images)",
        f"{'S-measure':>10}  {'F-measure':>10}  {'MAE':>10}",
        f"{result.s_measure:>10.4f}  {result.f_measure_mean:>10.4f}  "
        f"{result.mae:>10.4f}",
    ]
    return "\n".join(lines)


def write_report(result: EvalResult, json_path: Path | str,
                 text_path: Path | str | None = None) -> None:
    """Persist the machine-readable report and, optionally, the text table."""
    json_path = Path(json_path)
    json_path.parent.mkdir(parents=True, exist_ok=True)
    json_path.write_text(json.dumps(result.to_dict(), indent=2, sort_keys=True))
    if text_path is not None:
        Path(text_path).write_text(format_report_table(result) + "\n")
