"""
COCO-style ingestion, validation and emission of predictions and ground truth.
"""
import json
import logging
import re
from pathlib import Path
from typing import AbstractSet, Any, Dict, Iterable, List, Optional, Sequence, Tuple, Union

from pydantic import ValidationError

from .exceptions import CategoryMismatchError, ParseError
from .models import BBox, Detection, GroundTruth, GroundTruthBox, ImageInfo, PredictionSet, canonical_image_id
from .validators import GroundTruthValidator, PredictionFileValidator, location_of

logger = logging.getLogger(__name__)

_INTEGER_ID = re.compile(r"-?[1-9][0-9]*|0")

_prediction_validator = PredictionFileValidator()
_ground_truth_validator = GroundTruthValidator()


def _reject_constant(name: str):
    raise ValueError(f"non-finite number {name} is not allowed")


def _load_json(data: Union[bytes, str], source: str) -> Any:
    try:
        text = data.decode("utf-8") if isinstance(data, (bytes, bytearray)) else data
    except UnicodeDecodeError as e:
        raise ParseError(f"not valid UTF-8: {e}", source=source)
    try:
        return json.loads(text, parse_constant=_reject_constant)
    except json.JSONDecodeError as e:
        raise ParseError(f"malformed JSON: {e.msg}", source=source,
                         location=f"line {e.lineno}, column {e.colno}")
    except ValueError as e:
        raise ParseError(f"malformed JSON: {e}", source=source)


def _first_issue(issues, source: str):
    for issue in issues:
        raise ParseError(issue.message, source=source, location=location_of(issue), field=issue.field)


def _pydantic_message(error: ValidationError) -> str:
    first = error.errors()[0]
    return first.get("msg", str(error))


def parse_predictions(data: Union[bytes, str], categories: AbstractSet[int],
                      source: str = "<bytes>", source_label: str = "") -> PredictionSet:
    """
    Parse a COCO results array into a PredictionSet.

    Args:
        data: UTF-8 JSON array of ``{image_id, category_id, bbox, score}`` records
        categories: Declared category ids; records outside it are rejected
        source: Name used in error messages (usually the file path)
        source_label: Provenance label stored on the set

    Raises:
        ParseError: naming the failing record index and field
    """
    document = _load_json(data, source)
    _first_issue(_prediction_validator.iter_issues(document), source)
    _first_issue(_prediction_validator.validate_categories(document, categories), source)

    detections = []
    for index, record in enumerate(document):
        try:
            detections.append(Detection(
                image_id=record["image_id"],
                category_id=int(record["category_id"]),
                box=BBox.from_xywh(*record["bbox"]),
                score=record["score"],
            ))
        except ValidationError as e:
            raise ParseError(_pydantic_message(e), source=source, location=f"record {index}", field="bbox")

    logger.debug("Parsed %d detections from %s", len(detections), source)
    return PredictionSet(source_label=source_label, categories=frozenset(categories), detections=detections)


def _clamp(value: float, low: float, high: float) -> float:
    return min(max(value, low), high)


def parse_ground_truth(data: Union[bytes, str], source: str = "<bytes>") -> GroundTruth:
    """
    Parse a COCO annotation document.

    Annotation boxes reaching outside their image are clamped to the image
    bounds and a warning is logged.

    Raises:
        ParseError: malformed JSON, schema violations, unknown image or category references
    """
    document = _load_json(data, source)
    _first_issue(_ground_truth_validator.iter_issues(document), source)

    images: Dict[str, ImageInfo] = {}
    for index, record in enumerate(document["images"]):
        try:
            image = ImageInfo(
                image_id=record["id"],
                width=record["width"],
                height=record["height"],
                file_name=record.get("file_name"),
            )
        except ValidationError as e:
            field = str(e.errors()[0]["loc"][0]) if e.errors()[0]["loc"] else None
            raise ParseError(_pydantic_message(e), source=source, location=f"images[{index}]",
                             field="id" if field == "image_id" else field)
        if image.image_id in images:
            raise ParseError(f"duplicate image id {record['id']}", source=source,
                             location=f"images[{index}]", field="id")
        images[image.image_id] = image

    category_names = {int(cat["id"]): cat.get("name", "") for cat in document["categories"]}

    annotations: List[GroundTruthBox] = []
    clamped = 0
    for index, record in enumerate(document["annotations"]):
        image = images[canonical_image_id(record["image_id"])]
        try:
            raw = BBox.from_xywh(*record["bbox"])
        except ValidationError as e:
            raise ParseError(_pydantic_message(e), source=source,
                             location=f"annotations[{index}]", field="bbox")
        box = BBox(
            x_min=_clamp(raw.x_min, 0.0, image.width),
            y_min=_clamp(raw.y_min, 0.0, image.height),
            x_max=_clamp(raw.x_max, 0.0, image.width),
            y_max=_clamp(raw.y_max, 0.0, image.height),
        )
        if box != raw:
            clamped += 1
            logger.warning("%s: annotations[%d] clamped from %s to %s on image %s (%gx%g)",
                           source, index, raw.as_tuple(), box.as_tuple(),
                           image.image_id, image.width, image.height)
        annotations.append(GroundTruthBox(
            image_id=image.image_id,
            category_id=int(record["category_id"]),
            box=box,
            iscrowd=bool(record.get("iscrowd", 0)),
        ))

    logger.info("Loaded ground truth from %s: %d images, %d categories, %d annotations (%d clamped)",
                source, len(images), len(category_names), len(annotations), clamped)
    return GroundTruth(
        images=images,
        categories=frozenset(category_names),
        category_names=category_names,
        annotations=annotations,
    )


def _emit_image_id(image_id: str) -> Union[int, str]:
    if _INTEGER_ID.fullmatch(image_id):
        return int(image_id)
    return image_id


def prediction_records(prediction_set: PredictionSet) -> List[Dict[str, Any]]:
    return [
        {
            "image_id": _emit_image_id(det.image_id),
            "category_id": det.category_id,
            "bbox": det.box.to_xywh(),
            "score": det.score,
        }
        for det in prediction_set.detections
    ]


def emit_predictions(prediction_set: PredictionSet) -> bytes:
    """Serialize to the COCO results array. Floats use shortest round-trip repr."""
    return json.dumps(prediction_records(prediction_set)).encode("utf-8")


def merge_sets(sets: Sequence[PredictionSet], source_label: Optional[str] = None) -> PredictionSet:
    """
    Pool several prediction sets into one multiset of detections.

    Raises:
        CategoryMismatchError: the sets do not share one category set
    """
    if not sets:
        raise CategoryMismatchError("merge_sets needs at least one prediction set")
    categories = sets[0].categories
    for other in sets[1:]:
        if other.categories != categories:
            raise CategoryMismatchError(
                f"category sets differ: '{sets[0].source_label}' has {sorted(categories)}, "
                f"'{other.source_label}' has {sorted(other.categories)}"
            )
    if source_label is None:
        source_label = "+".join(s.source_label for s in sets)
    detections: List[Detection] = []
    for s in sets:
        detections.extend(s.detections)
    return PredictionSet(source_label=source_label, categories=categories, detections=detections)


def load_predictions(path: Union[str, Path], categories: AbstractSet[int],
                     source_label: Optional[str] = None) -> PredictionSet:
    """Read and parse a prediction file. OSError propagates for I/O failures."""
    path = Path(path)
    return parse_predictions(path.read_bytes(), categories, source=str(path),
                             source_label=source_label if source_label is not None else path.stem)


def load_ground_truth(path: Union[str, Path]) -> GroundTruth:
    path = Path(path)
    return parse_ground_truth(path.read_bytes(), source=str(path))


def write_predictions(prediction_set: PredictionSet, path: Union[str, Path]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(emit_predictions(prediction_set))


def category_ids_in(documents: Iterable[Tuple[str, bytes]]) -> List[int]:
    """Category ids appearing in (source, raw bytes) prediction documents, for runs without ground truth."""
    found = set()
    for source, data in documents:
        document = _load_json(data, source)
        if isinstance(document, list):
            for record in document:
                if isinstance(record, dict) and isinstance(record.get("category_id"), int):
                    found.add(record["category_id"])
    return sorted(found)
