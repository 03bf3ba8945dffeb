"""Command-line interface.

Subcommands:
    run           extract + predict + (optionally) evaluate
    extract       populate the feature cache only
    predict       write prediction maps without evaluating
    evaluate      score an existing prediction directory against GT
    make-fixture  generate the bundled planted-pattern demo dataset

Flags mirror PipelineConfig fields; values from --config <file> (JSON) are
overridden by explicit flags. Exit codes: 0 success, 1 runtime failure,
2 usage error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .errors import CosalError
from .evaluation import evaluate_dataset, format_report_table, write_report
from .fixtures import build_planted_fixture
from .pipeline import PipelineConfig, run_pipeline

logger = logging.getLogger(__name__)


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {value}")
    return value


def _non_negative_int(text: str) -> int:
    value = int(text)
    if value < 0:
        raise argparse.ArgumentTypeError(f"must be >= 0, got {value}")
    return value


def _add_pipeline_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--dataset-root", type=Path, default=None,
                        help="root directory with one subdirectory per image group")
    parser.add_argument("--gt-root", type=Path, default=None,
                        help="ground-truth masks mirroring the dataset layout")
    parser.add_argument("--output", type=Path, default=None,
                        help="output directory for predictions and reports")
    parser.add_argument("--cache-dir", type=Path, default=None,
                        help="feature cache directory")
    parser.add_argument("--backend", choices=("vit", "diffusion", "fused", "synthetic"),
                        default=None, help="feature backend")
    parser.add_argument("--segmenter", choices=("sam-vitb", "oracle"), default=None,
                        help="prompt-based segmenter")
    parser.add_argument("--topk", type=_positive_int, default=None,
                        help="prompt points per image (default 2)")
    parser.add_argument("--timestep", type=_non_negative_int, default=None,
                        help="forward-noising timestep for the diffusion backend "
                             "(default 50)")
    parser.add_argument("--pca-dims", type=_positive_int, default=None,
                        help="PCA dimensions per diffusion layer (default 256)")
    parser.add_argument("--seed", type=int, default=None, help="run seed (default 0)")
    parser.add_argument("--workers", type=_positive_int, default=None,
                        help="parallel group workers (default 1)")
    parser.add_argument("--saliency-dir", type=Path, default=None,
                        help="external per-image saliency maps (optional)")
    parser.add_argument("--synthetic-spec", type=Path, default=None,
                        help="synthetic group spec JSON (synthetic backend / oracle)")
    parser.add_argument("--config", type=Path, default=None,
                        help="JSON config file; explicit flags take precedence")


_FLAG_TO_FIELD = {
    "dataset_root": "dataset_root",
    "gt_root": "gt_root",
    "output": "output_dir",
    "cache_dir": "cache_dir",
    "backend": "backend",
    "segmenter": "segmenter",
    "topk": "topk",
    "timestep": "timestep",
    "pca_dims": "pca_dims",
    "seed": "seed",
    "workers": "workers",
    "saliency_dir": "saliency_dir",
    "synthetic_spec": "synthetic_spec",
}


def _build_config(args: argparse.Namespace, *, need_dataset: bool = True,
                  need_output: bool = True) -> PipelineConfig:
    values: dict = {}
    if args.config is not None:
        if not args.config.is_file():
            raise CosalError(f"config file not found: {args.config}")
        values.update(json.loads(args.config.read_text()))
    for flag, field in _FLAG_TO_FIELD.items():
        flag_value = getattr(args, flag, None)
        if flag_value is not None:
            values[field] = flag_value

    if need_dataset and not values.get("dataset_root"):
        raise CosalError("missing --dataset-root (or dataset_root in --config)")
    if need_output and not values.get("output_dir"):
        raise CosalError("missing --output (or output_dir in --config)")
    values.setdefault("output_dir", values.get("cache_dir") or ".")
    values.setdefault("dataset_root", values["output_dir"])  # unused by evaluate
    try:
        return PipelineConfig(**values)
    except TypeError:
        known = set(PipelineConfig.__dataclass_fields__)
        unknown = sorted(set(values) - known)
        raise CosalError(f"unknown config keys: {', '.join(unknown)}") from None


def _cmd_run(args: argparse.Namespace) -> int:
    cfg = _build_config(args)
    report = run_pipeline(cfg)
    if report.metrics is not None:
        agg = report.metrics["aggregate"]
        print(f"S-measure={agg['s_measure']:.4f}  "
              f"F-measure={agg['f_measure_mean']:.4f}  MAE={agg['mae']:.4f}")
    if report.failed_groups:
        print(f"failed groups: {', '.join(report.failed_groups)}", file=sys.stderr)
        return 1
    return 0


def _cmd_extract(args: argparse.Namespace) -> int:
    cfg = _build_config(args)
    if cfg.cache_dir is None:
        raise CosalError("extract needs --cache-dir")
    report = run_pipeline(cfg, extract_only=True)
    return 1 if report.failed_groups else 0


def _cmd_predict(args: argparse.Namespace) -> int:
    cfg = _build_config(args)
    report = run_pipeline(cfg, evaluate=False)
    if report.failed_groups:
        print(f"failed groups: {', '.join(report.failed_groups)}", file=sys.stderr)
        return 1
    return 0


def _cmd_evaluate(args: argparse.Namespace) -> int:
    cfg = _build_config(args, need_dataset=False)
    if cfg.gt_root is None:
        raise CosalError("evaluate needs --gt-root")
    pred_dir = cfg.output_dir / "predictions"
    if not pred_dir.is_dir():
        pred_dir = cfg.output_dir
    result = evaluate_dataset(pred_dir, cfg.gt_root)
    write_report(result, cfg.output_dir / "eval_report.json",
                 cfg.output_dir / "eval_report.txt")
    print(format_report_table(result))
    return 0


def _cmd_make_fixture(args: argparse.Namespace) -> int:
    paths = build_planted_fixture(
        args.output, n_groups=args.groups, images_per_group=args.images,
        grid=(args.grid, args.grid), channels=args.channels,
        noise_amplitude=args.noise, seed=args.seed if args.seed is not None else 7,
        write_saliency=args.write_saliency)
    print(f"dataset: {paths.dataset_root}")
    print(f"gt:      {paths.gt_root}")
    print(f"spec:    {paths.spec_path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cosal",
        description="Training-free co-salient object detection pipeline")
    sub = parser.add_subparsers(dest="command", required=True)

    for name, fn, doc in (
            ("run", _cmd_run, "extract, predict and (with --gt-root) evaluate"),
            ("extract", _cmd_extract, "populate the feature cache only"),
            ("predict", _cmd_predict, "write predictions without evaluating"),
            ("evaluate", _cmd_evaluate, "score predictions in --output against --gt-root")):
        p = sub.add_parser(name, help=doc)
        _add_pipeline_flags(p)
        p.set_defaults(handler=fn)

    fixture = sub.add_parser("make-fixture",
                             help="generate the planted-pattern demo dataset")
    fixture.add_argument("--output", type=Path, required=True)
    fixture.add_argument("--groups", type=_positive_int, default=5)
    fixture.add_argument("--images", type=_positive_int, default=4)
    fixture.add_argument("--grid", type=_positive_int, default=16)
    fixture.add_argument("--channels", type=_positive_int, default=8)
    fixture.add_argument("--noise", type=float, default=0.0)
    fixture.add_argument("--seed", type=int, default=None)
    fixture.add_argument("--write-saliency", action="store_true")
    fixture.set_defaults(handler=_cmd_make_fixture)
    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse uses exit code 2 for usage errors
        return int(exc.code) if exc.code is not None else 2
    try:
        return args.handler(args)
    except CosalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def console_main() -> None:
    sys.exit(main())
