"""
COCO-style mean average precision for comparing single-model and fused
prediction sets.
"""
import logging
from collections import defaultdict
from typing import Dict, List, Sequence, Tuple

import numpy as np

from .exceptions import CategoryMismatchError
from .geometry import iou
from .models import BBox, Detection, EvalConfig, EvalReport, GroundTruth, MatchCounts, PredictionSet

logger = logging.getLogger(__name__)

MatchResult = Tuple[Detection, bool]
CurvePoint = Tuple[float, float]


def _iou_matrix(preds: Sequence[Detection], gts: Sequence[BBox]) -> np.ndarray:
    matrix = np.zeros((len(preds), len(gts)), dtype=np.float64)
    for i, det in enumerate(preds):
        for j, gt in enumerate(gts):
            matrix[i, j] = iou(det.box, gt)
    return matrix


def _greedy_match(ious: np.ndarray, iou_threshold: float) -> List[bool]:
    """Row i takes the unmatched column with the highest IoU >= threshold; first column wins ties."""
    n_preds, n_gts = ious.shape
    taken = np.zeros(n_gts, dtype=bool)
    matched = []
    for i in range(n_preds):
        best, best_iou = -1, -1.0
        for j in range(n_gts):
            if taken[j] or ious[i, j] < iou_threshold:
                continue
            if ious[i, j] > best_iou:
                best, best_iou = j, ious[i, j]
        if best >= 0:
            taken[best] = True
        matched.append(best >= 0)
    return matched


def match_detections(preds: Sequence[Detection], gts: Sequence[BBox],
                     iou_threshold: float) -> List[MatchResult]:
    """
    Greedy one-to-one matching for one (image, category).

    ``preds`` must already be in descending score order; each prediction
    takes the unmatched ground-truth box with the highest IoU at or above
    the threshold.
    """
    matched = _greedy_match(_iou_matrix(preds, gts), iou_threshold)
    return list(zip(preds, matched))


def precision_recall(matches: Sequence[MatchResult], total_gt: int) -> List[CurvePoint]:
    """
    Cumulative (recall, precision) points over detections pooled across
    images, in descending score order (ties keep input order).
    Empty when there is no ground truth.
    """
    if total_gt <= 0:
        return []
    ordered = sorted(matches, key=lambda m: -m[0].score)
    curve = []
    tp = fp = 0
    for _, is_tp in ordered:
        if is_tp:
            tp += 1
        else:
            fp += 1
        curve.append((tp / total_gt, tp / (tp + fp)))
    return curve


def average_precision(curve: Sequence[CurvePoint], recall_points: int = 101) -> float:
    """
    Mean interpolated precision over ``recall_points`` evenly spaced recall
    levels in [0, 1]; interpolated precision at r is the best precision at
    any recall >= r, or 0 when the curve never reaches r.
    """
    if not curve:
        return 0.0
    recalls = np.array([r for r, _ in curve], dtype=np.float64)
    precisions = np.array([p for _, p in curve], dtype=np.float64)
    envelope = np.maximum.accumulate(precisions[::-1])[::-1]
    grid = np.arange(recall_points, dtype=np.float64) / (recall_points - 1)
    idx = np.searchsorted(recalls, grid, side="left")
    interpolated = np.where(idx < len(envelope), envelope[np.minimum(idx, len(envelope) - 1)], 0.0)
    return float(interpolated.mean())


def _top_per_image(preds: PredictionSet, gt: GroundTruth,
                   max_detections: int) -> Dict[Tuple[str, int], List[Tuple[int, Detection]]]:
    """(input index, detection) per (image, category), best max_detections per image, score order."""
    per_image: Dict[str, List[Tuple[int, Detection]]] = defaultdict(list)
    skipped = 0
    for index, det in enumerate(preds.detections):
        if det.image_id not in gt.images:
            skipped += 1
            continue
        per_image[det.image_id].append((index, det))
    if skipped:
        logger.warning("Ignored %d detections on images absent from the ground truth", skipped)

    grouped: Dict[Tuple[str, int], List[Tuple[int, Detection]]] = defaultdict(list)
    for image_id, items in per_image.items():
        items.sort(key=lambda item: (-item[1].score, item[0]))
        if len(items) > max_detections:
            logger.debug("Image %s: keeping %d of %d detections", image_id, max_detections, len(items))
        for index, det in items[:max_detections]:
            grouped[(image_id, det.category_id)].append((index, det))
    return grouped


def evaluate(preds: PredictionSet, gt: GroundTruth, config: EvalConfig, label: str = "") -> EvalReport:
    """
    Score a prediction set against ground truth.

    Per class and IoU threshold: match, build the PR curve and interpolate AP.
    mAP averages over thresholds and over the classes that have ground truth.

    Raises:
        CategoryMismatchError: a detection uses a category the ground truth lacks
    """
    unknown = sorted({det.category_id for det in preds.detections} - set(gt.categories))
    if unknown:
        raise CategoryMismatchError(
            f"predictions use categories {unknown} absent from the ground truth {sorted(gt.categories)}"
        )

    pred_groups = _top_per_image(preds, gt, config.max_detections_per_image)
    gt_groups = gt.groups()
    gt_counts = gt.count_per_category()

    per_class_ap: Dict[int, Dict[float, float]] = {}
    counts: Dict[int, Dict[float, MatchCounts]] = {}
    for category_id in sorted(gt.categories):
        images = sorted({img for img, cat in list(pred_groups) + list(gt_groups) if cat == category_id})
        # (input index, detection, iou matrix row) per image, computed once for all thresholds
        prepared = []
        for image_id in images:
            items = pred_groups.get((image_id, category_id), [])
            boxes = gt_groups.get((image_id, category_id), [])
            prepared.append((items, _iou_matrix([det for _, det in items], boxes)))

        total = gt_counts[category_id]
        per_class_ap[category_id] = {}
        counts[category_id] = {}
        for threshold in config.iou_thresholds:
            pooled: List[Tuple[int, Detection, bool]] = []
            for items, ious in prepared:
                for (index, det), hit in zip(items, _greedy_match(ious, threshold)):
                    pooled.append((index, det, hit))
            pooled.sort(key=lambda item: item[0])
            matches = [(det, hit) for _, det, hit in pooled]

            tp = sum(1 for _, hit in matches if hit)
            counts[category_id][threshold] = MatchCounts(tp=tp, fp=len(matches) - tp, fn=total - tp)
            if total > 0:
                per_class_ap[category_id][threshold] = average_precision(
                    precision_recall(matches, total), config.recall_points
                )
        if total == 0:
            del per_class_ap[category_id]

    values = [ap for aps in per_class_ap.values() for ap in aps.values()]
    map_overall = float(np.mean(values)) if values else 0.0
    logger.info("Evaluated %s: mAP %.4f over %d classes with ground truth",
                label or preds.source_label, map_overall, len(per_class_ap))
    return EvalReport(
        label=label or preds.source_label,
        per_class_ap=per_class_ap,
        counts=counts,
        gt_counts=gt_counts,
        map_overall=map_overall,
    )


def render_table(rows: Sequence[Tuple[str, float]]) -> str:
    """Aligned two-column ``methods / result`` table, one row per method."""
    width = max([len("methods")] + [len(label) for label, _ in rows])
    lines = [f"{'methods':<{width}}  result", f"{'-' * width}  ------"]
    for label, value in rows:
        lines.append(f"{label:<{width}}  {value:6.3f}")
    return "\n".join(lines) + "\n"
