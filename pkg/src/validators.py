"""
Structural validators for COCO prediction and ground-truth documents.
"""
from typing import Any, Dict, Iterator, List, Optional, Tuple

from jsonschema import Draft7Validator
from jsonschema.exceptions import ValidationError as SchemaError

from .models import canonical_image_id


BBOX_SCHEMA = {
    "type": "array",
    "items": [
        {"type": "number"},
        {"type": "number"},
        {"type": "number", "minimum": 0},
        {"type": "number", "minimum": 0},
    ],
    "minItems": 4,
    "maxItems": 4,
}

IMAGE_ID_SCHEMA = {"type": ["integer", "string"]}

PREDICTION_FILE_SCHEMA = {
    "$schema": "http://json-schema.org/draft-07/schema#",
    "type": "array",
    "items": {
        "type": "object",
        "required": ["image_id", "category_id", "bbox", "score"],
        "properties": {
            "image_id": IMAGE_ID_SCHEMA,
            "category_id": {"type": "integer"},
            "bbox": BBOX_SCHEMA,
            "score": {"type": "number", "minimum": 0, "maximum": 1},
        },
    },
}

GROUND_TRUTH_SCHEMA = {
    "$schema": "http://json-schema.org/draft-07/schema#",
    "type": "object",
    "required": ["images", "annotations", "categories"],
    "properties": {
        "images": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["id", "width", "height"],
                "properties": {
                    "id": IMAGE_ID_SCHEMA,
                    "width": {"type": "number", "exclusiveMinimum": 0},
                    "height": {"type": "number", "exclusiveMinimum": 0},
                    "file_name": {"type": "string"},
                },
            },
        },
        "annotations": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["image_id", "category_id", "bbox"],
                "properties": {
                    "image_id": IMAGE_ID_SCHEMA,
                    "category_id": {"type": "integer"},
                    "bbox": BBOX_SCHEMA,
                    "iscrowd": {"type": ["integer", "boolean"]},
                },
            },
        },
        "categories": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["id"],
                "properties": {
                    "id": {"type": "integer"},
                    "name": {"type": "string"},
                },
            },
        },
    },
}


class DocumentIssue:
    """One located problem in a JSON document."""

    def __init__(self, path: Tuple[Any, ...], field: Optional[str], message: str):
        self.path = path
        self.field = field
        self.message = message

    @property
    def record_index(self) -> Optional[int]:
        for part in self.path:
            if isinstance(part, int):
                return part
        return None

    def __repr__(self) -> str:
        return f"DocumentIssue(path={self.path!r}, field={self.field!r}, message={self.message!r})"


def _missing_field(error: SchemaError) -> Optional[str]:
    if error.validator != "required" or not isinstance(error.instance, dict):
        return None
    for name in error.validator_value:
        if name not in error.instance:
            return name
    return None


def _issue_from_error(error: SchemaError, record_depth: int) -> DocumentIssue:
    path = tuple(error.absolute_path)
    field = _missing_field(error)
    if field is None and len(path) > record_depth:
        candidate = path[record_depth]
        if isinstance(candidate, str):
            field = candidate
    return DocumentIssue(path, field, error.message)


def _sort_key(error: SchemaError) -> Tuple:
    return tuple((0, p) if isinstance(p, int) else (1, str(p)) for p in error.absolute_path)


class PredictionFileValidator:
    """
    Validates the COCO results format: a JSON array of
    ``{image_id, category_id, bbox: [x, y, w, h], score}`` records.
    """

    def __init__(self):
        self._validator = Draft7Validator(PREDICTION_FILE_SCHEMA)

    def iter_issues(self, document: Any) -> Iterator[DocumentIssue]:
        """Yield issues ordered by record index."""
        for error in sorted(self._validator.iter_errors(document), key=_sort_key):
            yield _issue_from_error(error, record_depth=1)

    def validate(self, document: Any) -> Tuple[bool, List[str]]:
        """
        Validate a parsed prediction document.

        Returns:
            Tuple of (is_valid, list_of_errors)
        """
        errors = [describe(issue) for issue in self.iter_issues(document)]
        return len(errors) == 0, errors

    def validate_categories(self, document: List[Dict[str, Any]],
                            categories) -> Iterator[DocumentIssue]:
        """Yield an issue for each record whose category_id is not declared."""
        for index, record in enumerate(document):
            if record["category_id"] not in categories:
                yield DocumentIssue(
                    (index, "category_id"), "category_id",
                    f"unknown category_id {record['category_id']} (declared: {sorted(categories)})",
                )


class GroundTruthValidator:
    """
    Validates the COCO annotation format with ``images``, ``annotations``
    and ``categories`` arrays, including referential checks.
    """

    def __init__(self):
        self._validator = Draft7Validator(GROUND_TRUTH_SCHEMA)

    def iter_issues(self, document: Any) -> Iterator[DocumentIssue]:
        structural = sorted(self._validator.iter_errors(document), key=_sort_key)
        for error in structural:
            yield _issue_from_error(error, record_depth=2)
        if structural:
            return

        image_ids = {canonical_image_id(img["id"]) for img in document["images"]}
        category_ids = {cat["id"] for cat in document["categories"]}
        for index, ann in enumerate(document["annotations"]):
            if canonical_image_id(ann["image_id"]) not in image_ids:
                yield DocumentIssue(
                    ("annotations", index, "image_id"), "image_id",
                    f"references unknown image {ann['image_id']}",
                )
            if ann["category_id"] not in category_ids:
                yield DocumentIssue(
                    ("annotations", index, "category_id"), "category_id",
                    f"references unknown category {ann['category_id']}",
                )

    def validate(self, document: Any) -> Tuple[bool, List[str]]:
        """
        Validate a parsed ground-truth document.

        Returns:
            Tuple of (is_valid, list_of_errors)
        """
        errors = [describe(issue) for issue in self.iter_issues(document)]
        return len(errors) == 0, errors


def location_of(issue: DocumentIssue) -> Optional[str]:
    """Human-readable record location such as ``record 3`` or ``annotations[3]``."""
    if not issue.path:
        return None
    head = issue.path[0]
    if isinstance(head, int):
        return f"record {head}"
    if len(issue.path) > 1 and isinstance(issue.path[1], int):
        return f"{head}[{issue.path[1]}]"
    return str(head)


def describe(issue: DocumentIssue) -> str:
    parts = [p for p in (location_of(issue), f"field '{issue.field}'" if issue.field else None) if p]
    prefix = ": ".join(parts)
    return f"{prefix}: {issue.message}" if prefix else issue.message
