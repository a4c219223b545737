"""
Data models for the fusebox detection post-processing toolkit.
"""
from collections import defaultdict
from enum import Enum
from pathlib import Path
from typing import Any, Dict, FrozenSet, List, Optional, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator


def canonical_image_id(value: Any) -> str:
    """Normalize an integer or string image id to the string key used everywhere."""
    if isinstance(value, bool):
        raise ValueError("image_id must be an integer or a string")
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float) and value.is_integer():
        return str(int(value))
    if isinstance(value, str):
        return value
    raise ValueError("image_id must be an integer or a string")


class BBox(BaseModel):
    """Axis-aligned box in corner form, pixel coordinates."""
    model_config = ConfigDict(frozen=True, allow_inf_nan=False)

    x_min: float
    y_min: float
    x_max: float
    y_max: float

    @model_validator(mode="after")
    def check_corner_order(self) -> "BBox":
        if self.x_min > self.x_max or self.y_min > self.y_max:
            raise ValueError(
                f"box corners out of order: ({self.x_min}, {self.y_min}, {self.x_max}, {self.y_max})"
            )
        return self

    @classmethod
    def from_xywh(cls, x: float, y: float, width: float, height: float) -> "BBox":
        """Build a box from the COCO (x, y, width, height) convention."""
        return cls(x_min=x, y_min=y, x_max=x + width, y_max=y + height)

    def to_xywh(self) -> List[float]:
        return [self.x_min, self.y_min, self.x_max - self.x_min, self.y_max - self.y_min]

    def as_tuple(self) -> Tuple[float, float, float, float]:
        return (self.x_min, self.y_min, self.x_max, self.y_max)


class Detection(BaseModel):
    """One predicted box with its confidence score."""
    model_config = ConfigDict(frozen=True, allow_inf_nan=False)

    image_id: str
    category_id: int
    box: BBox
    score: float = Field(..., ge=0.0, le=1.0)

    @field_validator("image_id", mode="before")
    @classmethod
    def normalize_image_id(cls, v):
        return canonical_image_id(v)


GroupKey = Tuple[str, int]


def group_detections(detections) -> Dict[GroupKey, List[Detection]]:
    """Group detections by (image_id, category_id), keeping input order inside a group."""
    groups: Dict[GroupKey, List[Detection]] = defaultdict(list)
    for det in detections:
        groups[(det.image_id, det.category_id)].append(det)
    return dict(groups)


class PredictionSet(BaseModel):
    """All detections of one model run over a dataset."""
    model_config = ConfigDict(frozen=True)

    source_label: str = ""
    categories: FrozenSet[int]
    detections: Tuple[Detection, ...] = ()

    @model_validator(mode="after")
    def check_categories(self) -> "PredictionSet":
        for index, det in enumerate(self.detections):
            if det.category_id not in self.categories:
                raise ValueError(
                    f"detection {index} has category_id {det.category_id} "
                    f"outside the declared categories {sorted(self.categories)}"
                )
        return self

    def groups(self) -> Dict[GroupKey, List[Detection]]:
        return group_detections(self.detections)

    def image_ids(self) -> List[str]:
        return sorted({det.image_id for det in self.detections})


class ImageInfo(BaseModel):
    model_config = ConfigDict(frozen=True, allow_inf_nan=False)

    image_id: str
    width: float = Field(..., gt=0)
    height: float = Field(..., gt=0)
    file_name: Optional[str] = None

    @field_validator("image_id", mode="before")
    @classmethod
    def normalize_image_id(cls, v):
        return canonical_image_id(v)


class GroundTruthBox(BaseModel):
    """One labeled object. ``iscrowd`` is read but scored like any other box."""
    model_config = ConfigDict(frozen=True)

    image_id: str
    category_id: int
    box: BBox
    iscrowd: bool = False

    @field_validator("image_id", mode="before")
    @classmethod
    def normalize_image_id(cls, v):
        return canonical_image_id(v)


class GroundTruth(BaseModel):
    """Labeled dataset: images, categories and annotations."""
    model_config = ConfigDict(frozen=True)

    images: Dict[str, ImageInfo]
    categories: FrozenSet[int]
    category_names: Dict[int, str] = Field(default_factory=dict)
    annotations: Tuple[GroundTruthBox, ...] = ()

    @model_validator(mode="after")
    def check_references(self) -> "GroundTruth":
        for index, ann in enumerate(self.annotations):
            if ann.image_id not in self.images:
                raise ValueError(f"annotation {index} references unknown image {ann.image_id}")
            if ann.category_id not in self.categories:
                raise ValueError(f"annotation {index} references unknown category {ann.category_id}")
        return self

    def groups(self) -> Dict[GroupKey, List[BBox]]:
        grouped: Dict[GroupKey, List[BBox]] = defaultdict(list)
        for ann in self.annotations:
            grouped[(ann.image_id, ann.category_id)].append(ann.box)
        return dict(grouped)

    def count_per_category(self) -> Dict[int, int]:
        counts = {category_id: 0 for category_id in self.categories}
        for ann in self.annotations:
            counts[ann.category_id] += 1
        return counts


class OverlapMetric(str, Enum):
    """Pairwise overlap used to join detections into clusters."""
    IOU = "iou"
    GIOU = "giou"


class SelectionStrategy(str, Enum):
    """How a cluster is reduced to one box."""
    MAX_CONFIDENCE = "max"
    WEIGHTED_AVERAGE = "wavg"


class FilterPlacement(str, Enum):
    """Where the min_score cutoff is applied."""
    BEFORE_CLUSTERING = "before_clustering"
    WITHIN_CLUSTER = "within_cluster"


class FusionConfig(BaseModel):
    """Fusion parameters. Defaults are configuration, not tuned values."""
    model_config = ConfigDict(frozen=True, allow_inf_nan=False)

    metric: OverlapMetric = OverlapMetric.GIOU
    overlap_threshold: float = 0.5
    min_score: float = Field(0.05, ge=0.0, le=1.0)
    selection: SelectionStrategy = SelectionStrategy.MAX_CONFIDENCE
    filter_placement: FilterPlacement = FilterPlacement.BEFORE_CLUSTERING

    @model_validator(mode="after")
    def check_threshold_range(self) -> "FusionConfig":
        t = self.overlap_threshold
        if self.metric == OverlapMetric.IOU and not 0.0 <= t <= 1.0:
            raise ValueError(f"IoU overlap_threshold must be in [0, 1], got {t}")
        if self.metric == OverlapMetric.GIOU and not -1.0 < t <= 1.0:
            raise ValueError(f"GIoU overlap_threshold must be in (-1, 1], got {t}")
        return self


class Cluster(BaseModel):
    """Connected group of same-image, same-class detections and its emitted box."""
    model_config = ConfigDict(frozen=True)

    members: Tuple[Detection, ...] = Field(..., min_length=1)
    representative: Detection

    @model_validator(mode="after")
    def check_members_share_group(self) -> "Cluster":
        keys = {(m.image_id, m.category_id) for m in self.members}
        if len(keys) != 1:
            raise ValueError(f"cluster members span several (image, category) groups: {sorted(keys)}")
        return self


class TransformSpec(BaseModel):
    """One test-time transform: geometric scale plus HSV adjustment."""
    model_config = ConfigDict(frozen=True, allow_inf_nan=False)

    scale_x: float = Field(1.0, gt=0)
    scale_y: float = Field(1.0, gt=0)
    hue_shift: float = Field(0.0, ge=-180.0, le=180.0)
    saturation_gain: float = Field(1.0, ge=0)
    value_gain: float = Field(1.0, ge=0)

    @classmethod
    def identity(cls) -> "TransformSpec":
        return cls()

    @classmethod
    def from_sizes(cls, source_width: int, source_height: int,
                   target_width: int, target_height: int, **photometric: float) -> "TransformSpec":
        """Spec resizing a source_width x source_height image to the target size."""
        return cls(
            scale_x=target_width / source_width,
            scale_y=target_height / source_height,
            **photometric,
        )

    @property
    def is_geometric_identity(self) -> bool:
        return self.scale_x == 1.0 and self.scale_y == 1.0

    @property
    def is_photometric_identity(self) -> bool:
        return self.hue_shift == 0.0 and self.saturation_gain == 1.0 and self.value_gain == 1.0

    @property
    def is_identity(self) -> bool:
        return self.is_geometric_identity and self.is_photometric_identity


class RasterImage(BaseModel):
    """8-bit RGB raster, row-major, shape (height, width, 3)."""
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    pixels: np.ndarray

    @field_validator("pixels")
    @classmethod
    def check_buffer(cls, v: np.ndarray) -> np.ndarray:
        if v.ndim != 3 or v.shape[2] != 3:
            raise ValueError(f"pixel buffer must have shape (height, width, 3), got {v.shape}")
        if v.dtype != np.uint8:
            raise ValueError(f"pixel buffer must be uint8, got {v.dtype}")
        return v

    @property
    def width(self) -> int:
        return int(self.pixels.shape[1])

    @property
    def height(self) -> int:
        return int(self.pixels.shape[0])


def default_iou_thresholds() -> Tuple[float, ...]:
    """0.50:0.05:0.95, rounded so every value prints and compares cleanly."""
    return tuple(round(0.5 + 0.05 * i, 2) for i in range(10))


class EvalConfig(BaseModel):
    """COCO-style evaluation protocol."""
    model_config = ConfigDict(frozen=True, allow_inf_nan=False)

    iou_thresholds: Tuple[float, ...] = Field(default_factory=default_iou_thresholds)
    recall_points: int = Field(101, ge=2)
    max_detections_per_image: int = Field(100, ge=1)

    @field_validator("iou_thresholds")
    @classmethod
    def check_thresholds(cls, v: Tuple[float, ...]) -> Tuple[float, ...]:
        if not v:
            raise ValueError("at least one IoU threshold is required")
        for t in v:
            if not 0.0 < t <= 1.0:
                raise ValueError(f"IoU threshold {t} outside (0, 1]")
        if any(b <= a for a, b in zip(v, v[1:])):
            raise ValueError("IoU thresholds must be strictly increasing")
        return v


class MatchCounts(BaseModel):
    tp: int = 0
    fp: int = 0
    fn: int = 0


def threshold_key(threshold: float) -> str:
    """Two-decimal key for grid thresholds, the shortest exact repr for anything finer."""
    short = f"{threshold:.2f}"
    return short if float(short) == threshold else repr(threshold)


class EvalReport(BaseModel):
    """Per-class AP at each IoU threshold plus aggregate mAP."""
    label: str = ""
    per_class_ap: Dict[int, Dict[float, float]]
    counts: Dict[int, Dict[float, MatchCounts]]
    gt_counts: Dict[int, int]
    map_overall: float = Field(..., ge=0.0, le=1.0)

    def to_json_dict(self) -> Dict[str, Any]:
        return {
            "label": self.label,
            "map": self.map_overall,
            "per_class": {
                str(cat): {threshold_key(t): ap for t, ap in sorted(aps.items())}
                for cat, aps in sorted(self.per_class_ap.items())
            },
            "counts": {
                str(cat): {threshold_key(t): c.model_dump() for t, c in sorted(per_t.items())}
                for cat, per_t in sorted(self.counts.items())
            },
            "gt_counts": {str(cat): n for cat, n in sorted(self.gt_counts.items())},
        }


class NamedTransform(TransformSpec):
    """A transform declared in the run config under a unique label."""
    label: str = Field(..., min_length=1)

    def spec(self) -> TransformSpec:
        return TransformSpec(**self.model_dump(exclude={"label"}))


class InputSpec(BaseModel):
    """One prediction file entering the pipeline."""
    model_config = ConfigDict(frozen=True)

    label: str = Field(..., min_length=1)
    path: Path
    transform: Optional[str] = None


class OutputPaths(BaseModel):
    model_config = ConfigDict(frozen=True)

    fused: Optional[Path] = None
    metadata: Optional[Path] = None
    report: Optional[Path] = None


class RunConfig(BaseModel):
    """Everything a CLI run needs, loaded from the --config document."""
    model_config = ConfigDict(frozen=True, populate_by_name=True)

    fusion: FusionConfig = Field(default_factory=FusionConfig)
    evaluation: EvalConfig = Field(default_factory=EvalConfig, alias="eval")
    transforms: Tuple[NamedTransform, ...] = ()
    inputs: Tuple[InputSpec, ...] = ()
    categories: Optional[Tuple[int, ...]] = None
    ground_truth: Optional[Path] = None
    output: OutputPaths = Field(default_factory=OutputPaths)

    @model_validator(mode="after")
    def check_labels(self) -> "RunConfig":
        transform_labels = [t.label for t in self.transforms]
        duplicates = sorted({x for x in transform_labels if transform_labels.count(x) > 1})
        if duplicates:
            raise ValueError(f"duplicate transform labels: {duplicates}")
        input_labels = [i.label for i in self.inputs]
        duplicates = sorted({x for x in input_labels if input_labels.count(x) > 1})
        if duplicates:
            raise ValueError(f"duplicate input labels: {duplicates}")
        for spec in self.inputs:
            if spec.transform is not None and spec.transform not in transform_labels:
                raise ValueError(
                    f"input '{spec.label}' references undeclared transform '{spec.transform}'"
                )
        return self

    def transform_for(self, label: Optional[str]) -> Optional[TransformSpec]:
        if label is None:
            return None
        for named in self.transforms:
            if named.label == label:
                return named.spec()
        raise KeyError(label)

    def resolve_paths(self, base_dir: Union[str, Path]) -> "RunConfig":
        """Return a copy whose relative paths are anchored at base_dir."""
        base = Path(base_dir)

        def anchor(p: Optional[Path]) -> Optional[Path]:
            if p is None or p.is_absolute():
                return p
            return base / p

        return self.model_copy(update={
            "inputs": tuple(i.model_copy(update={"path": anchor(i.path)}) for i in self.inputs),
            "ground_truth": anchor(self.ground_truth),
            "output": OutputPaths(
                fused=anchor(self.output.fused),
                metadata=anchor(self.output.metadata),
                report=anchor(self.output.report),
            ),
        })


class InputRecord(BaseModel):
    """Provenance of one pipeline input, echoed into the metadata sidecar."""
    label: str
    path: str
    sha256: str
    detections: int
    transform: Optional[str] = None


class PipelineResult(BaseModel):
    """Result of one fusion pipeline run."""
    success: bool = Field(..., description="Whether every stage completed")
    fused: Optional[PredictionSet] = Field(None, description="Fused prediction set")
    inputs: List[InputRecord] = Field(default_factory=list)
    output_count: int = 0
    errors: List[str] = Field(default_factory=list, description="Errors encountered")
    warnings: List[str] = Field(default_factory=list, description="Warnings")
    processing_time_ms: float = Field(..., description="Processing time in milliseconds")


class ManifestEntry(BaseModel):
    """Manifest line recording the transform applied to one image."""
    file: str
    scale_x: float
    scale_y: float
    hue_shift: float
    saturation_gain: float
    value_gain: float
    interpolation: str = "bilinear-half-pixel"

    @classmethod
    def for_spec(cls, file: str, spec: TransformSpec) -> "ManifestEntry":
        return cls(file=file, **spec.model_dump())
