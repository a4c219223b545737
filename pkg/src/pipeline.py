"""
Extract / transform / load orchestration for fusing prediction files.
"""
import hashlib
import json
import logging
import time
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

from . import __version__
from .config import Config
from .detections import category_ids_in, load_ground_truth, parse_predictions, write_predictions
from .evaluator import evaluate
from .exceptions import ConfigError, FuseboxError
from .fusion import fuse
from .models import EvalReport, GroundTruth, InputRecord, InputSpec, PipelineResult, PredictionSet, RunConfig
from .tta import map_predictions

logger = logging.getLogger(__name__)

FUSION_LABEL = "fusion"


def sha256_digest(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def metadata_path_for(fused_path: Path) -> Path:
    """``fused.json`` -> ``fused.meta.json``."""
    return fused_path.with_name(f"{fused_path.stem}.meta.json")


def dump_json(document: Any) -> str:
    """Stable serialization shared by every file the pipeline writes."""
    return json.dumps(document, indent=2, sort_keys=True) + "\n"


class FusionPipeline:
    """
    Runs the fusion pipeline for one RunConfig.

    extract reads and parses the declared prediction files, transform maps
    each through its inverse TTA and fuses them, load writes the fused file
    and its metadata sidecar.
    """

    def __init__(self, run_config: RunConfig, include_timestamp: bool = True,
                 max_workers: Optional[int] = None):
        self.run_config = run_config
        self.include_timestamp = include_timestamp
        self.max_workers = max_workers if max_workers is not None else Config.get_worker_count()
        self._ground_truth: Optional[GroundTruth] = None

    def require_inputs(self) -> None:
        if not self.run_config.inputs:
            raise ConfigError("the run config declares no inputs")

    def require_ground_truth(self, command: str) -> None:
        if self.run_config.ground_truth is None:
            raise ConfigError(f"{command} requires ground_truth in the run config")

    @property
    def ground_truth(self) -> Optional[GroundTruth]:
        if self._ground_truth is None and self.run_config.ground_truth is not None:
            self._ground_truth = load_ground_truth(self.run_config.ground_truth)
        return self._ground_truth

    def resolve_categories(self, raw_inputs: List[Tuple[InputSpec, bytes]]) -> frozenset:
        """Ground-truth categories, else the declared ones, else those found in the inputs."""
        if self.ground_truth is not None:
            return self.ground_truth.categories
        if self.run_config.categories is not None:
            return frozenset(self.run_config.categories)
        found = category_ids_in((str(spec.path), data) for spec, data in raw_inputs)
        logger.info("No ground truth or declared categories; using %s found in the inputs", found)
        return frozenset(found)

    def extract(self) -> Tuple[List[PredictionSet], List[InputRecord]]:
        """
        Extract phase: read and parse every input prediction file.

        Returns:
            Tuple of (prediction_sets, input_records), in declaration order
        """
        self.require_inputs()
        raw_inputs = [(spec, Path(spec.path).read_bytes()) for spec in self.run_config.inputs]
        categories = self.resolve_categories(raw_inputs)

        sets: List[PredictionSet] = []
        records: List[InputRecord] = []
        for spec, data in raw_inputs:
            prediction_set = parse_predictions(data, categories, source=str(spec.path), source_label=spec.label)
            sets.append(prediction_set)
            records.append(InputRecord(
                label=spec.label,
                path=str(spec.path),
                sha256=sha256_digest(data),
                detections=len(prediction_set.detections),
                transform=spec.transform,
            ))
            logger.info("Loaded %s: %d detections from %s", spec.label, len(prediction_set.detections), spec.path)
        return sets, records

    def map_inputs(self, sets: List[PredictionSet]) -> List[PredictionSet]:
        """Bring every set back to original image coordinates."""
        mapped = []
        for spec, prediction_set in zip(self.run_config.inputs, sets):
            transform = self.run_config.transform_for(spec.transform)
            if transform is not None:
                logger.info("Mapping %s back through transform '%s'", spec.label, spec.transform)
                prediction_set = map_predictions(prediction_set, transform)
            mapped.append(prediction_set)
        return mapped

    def transform(self, sets: List[PredictionSet]) -> PredictionSet:
        """Transform phase: inverse TTA mapping, then fusion."""
        return fuse(self.map_inputs(sets), self.run_config.fusion, max_workers=self.max_workers)

    def metadata(self, fused: PredictionSet, records: List[InputRecord]) -> Dict[str, Any]:
        document: Dict[str, Any] = {
            "tool": "fusebox",
            "version": __version__,
            "fusion": self.run_config.fusion.model_dump(mode="json"),
            "transforms": [t.model_dump(mode="json") for t in self.run_config.transforms],
            "categories": sorted(fused.categories),
            "inputs": [r.model_dump(mode="json") for r in records],
            "output_detections": len(fused.detections),
        }
        if self.include_timestamp:
            document["timestamp"] = datetime.now(timezone.utc).isoformat()
        return document

    def output_path(self, fused_path: Optional[Path] = None) -> Path:
        fused_path = fused_path or self.run_config.output.fused
        if fused_path is None:
            raise ConfigError("no output path for the fused predictions (use --out or output.fused)")
        return Path(fused_path)

    def load(self, fused: PredictionSet, records: List[InputRecord],
             fused_path: Optional[Path] = None) -> Path:
        """
        Load phase: write the fused prediction file and its metadata sidecar.

        Returns:
            Path of the fused file
        """
        fused_path = self.output_path(fused_path)
        meta_path = Path(self.run_config.output.metadata or metadata_path_for(fused_path))

        write_predictions(fused, fused_path)
        meta_path.parent.mkdir(parents=True, exist_ok=True)
        meta_path.write_text(dump_json(self.metadata(fused, records)), encoding="utf-8")
        logger.info("Wrote %d fused detections to %s (metadata %s)", len(fused.detections), fused_path, meta_path)
        return fused_path

    def process(self, fused_path: Optional[Path] = None, strict: bool = True) -> PipelineResult:
        """
        Execute the complete pipeline.

        With ``strict`` (the CLI's mode) errors propagate; otherwise they are
        collected on the returned result.
        """
        start_time = time.time()
        errors: List[str] = []
        warnings: List[str] = []
        fused: Optional[PredictionSet] = None
        records: List[InputRecord] = []

        try:
            fused_path = self.output_path(fused_path)
            sets, records = self.extract()
            fused = self.transform(sets)
            self.load(fused, records, fused_path)
            if not fused.detections:
                warnings.append("fusion produced no detections")
        except (FuseboxError, OSError) as e:
            if strict:
                raise
            errors.append(f"Pipeline failed: {e}")
            logger.error("Pipeline failed: %s", e)

        return PipelineResult(
            success=not errors,
            fused=fused,
            inputs=records,
            output_count=len(fused.detections) if fused is not None else 0,
            errors=errors,
            warnings=warnings,
            processing_time_ms=(time.time() - start_time) * 1000,
        )

    def ablate(self) -> Tuple[List[Tuple[str, float]], List[EvalReport]]:
        """
        Evaluate every input on its own and the fused set against the ground truth.

        Returns:
            Tuple of (table_rows, reports); the fused row comes last, labelled ``fusion``
        """
        self.require_ground_truth("ablate")
        self.require_inputs()
        sets, _ = self.extract()
        mapped = self.map_inputs(sets)
        fused = fuse(mapped, self.run_config.fusion, max_workers=self.max_workers)

        reports = [evaluate(s, self.ground_truth, self.run_config.evaluation, label=s.source_label)
                   for s in mapped]
        reports.append(evaluate(fused, self.ground_truth, self.run_config.evaluation, label=FUSION_LABEL))
        rows = [(report.label, report.map_overall) for report in reports]
        return rows, reports

    def ablation_document(self, reports: List[EvalReport]) -> Dict[str, Any]:
        document: Dict[str, Any] = {
            "tool": "fusebox",
            "version": __version__,
            "fusion": self.run_config.fusion.model_dump(mode="json"),
            "eval": self.run_config.evaluation.model_dump(mode="json"),
            "rows": [{"label": r.label, "map": r.map_overall} for r in reports],
            "reports": [r.to_json_dict() for r in reports],
        }
        if self.include_timestamp:
            document["timestamp"] = datetime.now(timezone.utc).isoformat()
        return document