#!/usr/bin/env python3
"""
Command-line interface for fusebox.
"""
import argparse
import re
import sys
from datetime import datetime, timezone
from pathlib import Path
from typing import List, Optional

from pydantic import ValidationError

from . import __version__
from .config import Config, format_validation_error, print_env_help
from .detections import load_ground_truth, load_predictions
from .evaluator import evaluate, render_table
from .exceptions import ConfigError, FuseboxError
from .models import EvalConfig, EvalReport, RunConfig, TransformSpec, threshold_key
from .pipeline import FusionPipeline, dump_json
from .tta import fixed_spec, target_size_spec, transform_directory, write_manifest

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_IO = 2

MANIFEST_NAME = "manifest.json"
_TARGET_SIZE = re.compile(r"([1-9][0-9]*)x([1-9][0-9]*)")


def load_config(args: argparse.Namespace) -> RunConfig:
    """The --config document (or an empty one) with command-line fusion overrides applied."""
    run_config = Config.load_run_config(args.config) if args.config else RunConfig()
    return Config.apply_overrides(
        run_config,
        metric=args.metric,
        overlap_threshold=args.threshold,
        min_score=args.min_score,
        selection=args.selection,
    )


def print_report(report: EvalReport, category_names: Optional[dict] = None) -> None:
    print(render_table([(report.label, report.map_overall)]), end="")
    if not report.per_class_ap:
        return
    print()
    for category_id, aps in sorted(report.per_class_ap.items()):
        name = (category_names or {}).get(category_id, "")
        mean_ap = sum(aps.values()) / len(aps)
        per_threshold = "  ".join(f"{threshold_key(t)}={ap:.3f}" for t, ap in sorted(aps.items()))
        print(f"class {category_id} {name}".rstrip() + f": AP {mean_ap:.3f}  ({per_threshold})")


def _stamped(document: dict, include_timestamp: bool) -> dict:
    if include_timestamp:
        document["timestamp"] = datetime.now(timezone.utc).isoformat()
    return document


def cmd_fuse(run_config: RunConfig, out: Optional[Path] = None, include_timestamp: bool = True) -> int:
    """Fuse the configured inputs and write the fused file plus its metadata."""
    pipeline = FusionPipeline(run_config, include_timestamp=include_timestamp)
    result = pipeline.process(fused_path=out)
    for warning in result.warnings:
        print(f"warning: {warning}", file=sys.stderr)
    total = sum(record.detections for record in result.inputs)
    print(f"fused {total} detections from {len(result.inputs)} input(s) into {result.output_count}")
    return EXIT_OK


def cmd_eval(predictions: Path, ground_truth: Path, eval_config: EvalConfig,
             out: Optional[Path] = None, include_timestamp: bool = True) -> int:
    """Score one prediction file and print the report."""
    gt = load_ground_truth(ground_truth)
    prediction_set = load_predictions(predictions, gt.categories)
    report = evaluate(prediction_set, gt, eval_config, label=prediction_set.source_label)
    print_report(report, gt.category_names)
    if out is not None:
        document = _stamped({"version": __version__, "report": report.to_json_dict()}, include_timestamp)
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(dump_json(document), encoding="utf-8")
    return EXIT_OK


def transform_spec_from_args(args: argparse.Namespace, run_config: RunConfig) -> TransformSpec:
    if args.transform:
        try:
            spec = run_config.transform_for(args.transform)
        except KeyError:
            raise ConfigError(f"transform '{args.transform}' is not declared in the run config")
        flags = {}
    else:
        spec = TransformSpec.identity()
        flags = {
            "scale_x": args.scale_x,
            "scale_y": args.scale_y,
            "hue_shift": args.hue_shift,
            "saturation_gain": args.saturation_gain,
            "value_gain": args.value_gain,
        }
    fields = spec.model_dump()
    fields.update({key: value for key, value in flags.items() if value is not None})
    try:
        return TransformSpec.model_validate(fields)
    except ValidationError as e:
        raise ConfigError(f"transform: {format_validation_error(e)}")


def cmd_transform(images_dir: Path, spec: TransformSpec, output_dir: Path,
                  target_size: Optional[str] = None) -> int:
    """
    Transform every PNG in images_dir and write a manifest next to the outputs.

    Files that fail are reported and skipped; any failure makes the exit status 2.
    """
    if target_size:
        match = _TARGET_SIZE.fullmatch(target_size)
        if not match:
            raise ConfigError(f"--target-size must look like 1400x1000, got '{target_size}'")
        if not spec.is_geometric_identity:
            raise ConfigError("--target-size cannot be combined with scale factors")
        spec_for = target_size_spec(int(match.group(1)), int(match.group(2)), photometric=spec)
    else:
        spec_for = fixed_spec(spec)

    if not Path(images_dir).is_dir():
        raise NotADirectoryError(f"images directory not found: {images_dir}")
    entries, failures = transform_directory(images_dir, output_dir, spec_for)
    write_manifest(entries, Path(output_dir) / MANIFEST_NAME)
    for failure in failures:
        print(f"error: {failure}", file=sys.stderr)
    print(f"transformed {len(entries)} image(s), {len(failures)} failure(s)")
    return EXIT_IO if failures else EXIT_OK


def cmd_ablate(run_config: RunConfig, out: Optional[Path] = None, include_timestamp: bool = True) -> int:
    """Evaluate each input and the fused set; print one mAP row per method."""
    pipeline = FusionPipeline(run_config, include_timestamp=include_timestamp)
    rows, reports = pipeline.ablate()
    print(render_table(rows), end="")
    report_path = out or run_config.output.report
    if report_path is not None:
        report_path = Path(report_path)
        report_path.parent.mkdir(parents=True, exist_ok=True)
        report_path.write_text(dump_json(pipeline.ablation_document(reports)), encoding="utf-8")
    return EXIT_OK


def _run_fuse(args: argparse.Namespace) -> int:
    return cmd_fuse(load_config(args), out=args.out, include_timestamp=not args.no_timestamp)


def _run_eval(args: argparse.Namespace) -> int:
    run_config = load_config(args)
    return cmd_eval(args.predictions, args.ground_truth, run_config.evaluation,
                    out=args.out, include_timestamp=not args.no_timestamp)


def _run_transform(args: argparse.Namespace) -> int:
    run_config = load_config(args)
    spec = transform_spec_from_args(args, run_config)
    return cmd_transform(args.images_dir, spec, args.output_dir, target_size=args.target_size)


def _run_ablate(args: argparse.Namespace) -> int:
    return cmd_ablate(load_config(args), out=args.out, include_timestamp=not args.no_timestamp)


def _common_options() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="Run-config JSON document")
    common.add_argument("--metric", choices=["iou", "giou"], help="Clustering overlap metric")
    common.add_argument("--threshold", type=float, help="Overlap threshold for joining detections")
    common.add_argument("--min-score", type=float, help="Confidence cutoff applied before selection")
    common.add_argument("--selection", choices=["max", "wavg"], help="Cluster representative strategy")
    common.add_argument("--out", type=Path, help="Output file (fused predictions or report)")
    common.add_argument("--no-timestamp", action="store_true",
                        help="Omit timestamps so outputs are byte-reproducible")
    return common


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fusebox",
        description="fusebox - fuse, map and evaluate object-detection predictions",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  %(prog)s fuse --config run.json --out fused.json
  %(prog)s eval fused.json gt.json
  %(prog)s transform images/ big/ --target-size 1400x1000
  %(prog)s ablate --config run.json --no-timestamp
        """
    )
    parser.add_argument("--version", "-v", action="version", version=f"fusebox v{__version__}")
    parser.add_argument("--env-help", action="store_true", help="Describe environment variables and exit")

    common = _common_options()
    commands = parser.add_subparsers(dest="command")

    fuse_cmd = commands.add_parser("fuse", parents=[common], help="Fuse prediction files")
    fuse_cmd.set_defaults(handler=_run_fuse)

    eval_cmd = commands.add_parser("eval", parents=[common], help="Score predictions against ground truth")
    eval_cmd.add_argument("predictions", type=Path, help="COCO results JSON")
    eval_cmd.add_argument("ground_truth", type=Path, help="COCO annotation JSON")
    eval_cmd.set_defaults(handler=_run_eval)

    transform_cmd = commands.add_parser("transform", parents=[common], help="Apply a test-time transform to PNGs")
    transform_cmd.add_argument("images_dir", type=Path)
    transform_cmd.add_argument("output_dir", type=Path)
    transform_cmd.add_argument("--transform", help="Label of a transform declared in --config")
    transform_cmd.add_argument("--scale-x", type=float)
    transform_cmd.add_argument("--scale-y", type=float)
    transform_cmd.add_argument("--hue-shift", type=float, help="Degrees, in [-180, 180]")
    transform_cmd.add_argument("--saturation-gain", type=float)
    transform_cmd.add_argument("--value-gain", type=float)
    transform_cmd.add_argument("--target-size", help="Resize every image to WxH, e.g. 1400x1000")
    transform_cmd.set_defaults(handler=_run_transform)

    ablate_cmd = commands.add_parser("ablate", parents=[common], help="Compare each input with the fused set")
    ablate_cmd.set_defaults(handler=_run_ablate)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    """Main CLI entry point. Returns the process exit status."""
    parser = build_parser()
    args = parser.parse_args(argv)
    Config.setup_logging()

    if args.env_help:
        print_env_help()
        return EXIT_OK
    if not args.command:
        parser.print_help()
        return EXIT_INVALID

    try:
        return args.handler(args)
    except FuseboxError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INVALID
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
