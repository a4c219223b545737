"""
Cluster-and-select fusion of detections from several models.

Per image and per class, detections whose pairwise overlap exceeds the
configured threshold are joined; the connected components of that relation
are the clusters, and each cluster emits one representative.
"""
import logging
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Dict, List, Sequence, Tuple

import numpy as np

from .detections import merge_sets
from .exceptions import DegenerateBoxError, FuseboxError
from .geometry import area, giou, iou
from .models import (
    BBox, Cluster, Detection, FilterPlacement, FusionConfig, GroupKey,
    OverlapMetric, PredictionSet, SelectionStrategy,
)

logger = logging.getLogger(__name__)


class UnionFind:
    """Disjoint sets over the indices 0..size-1, with union by rank and path compression.

    Attributes
    ----------
    n_clusters : int
        The number of sets currently held.
    """

    def __init__(self, size: int):
        self._leader = list(range(size))
        self._rank = [0] * size
        self.n_clusters = size

    def __repr__(self) -> str:
        return f"UnionFind: contains {self.n_clusters} clusters."

    def find(self, s: int) -> int:
        """Leader of the set containing ``s``."""
        path = [s]
        parent = self._leader[s]
        while parent != self._leader[parent]:
            path.append(parent)
            parent = self._leader[parent]
        for a in path:
            self._leader[a] = parent
        return parent

    def union(self, a: int, b: int) -> None:
        """Merge the sets containing ``a`` and ``b``."""
        s1, s2 = self.find(a), self.find(b)
        if s1 == s2:
            return
        r1, r2 = self._rank[s1], self._rank[s2]
        if r2 > r1:
            s1, s2 = s2, s1
        if r1 == r2:
            self._rank[s1] += 1
        self._leader[s2] = s1
        self.n_clusters -= 1

    def components(self) -> List[List[int]]:
        """Members of every set, each sorted, sets ordered by their smallest member."""
        by_leader: Dict[int, List[int]] = {}
        for s in range(len(self._leader)):
            by_leader.setdefault(self.find(s), []).append(s)
        return sorted(by_leader.values(), key=lambda members: members[0])


def _metric_function(metric: OverlapMetric) -> Callable[[BBox, BBox], float]:
    return iou if metric == OverlapMetric.IOU else giou


def overlaps(a: Detection, b: Detection, config: FusionConfig) -> bool:
    """Edge test of the cluster graph: metric strictly above the threshold.

    Two zero-area boxes never join under GIoU, where the metric is undefined.
    """
    try:
        value = _metric_function(config.metric)(a.box, b.box)
    except DegenerateBoxError:
        return False
    return value > config.overlap_threshold


def prefilter(prediction_set: PredictionSet, min_score: float) -> PredictionSet:
    """Drop detections scoring below min_score (a score equal to it is kept)."""
    if not 0.0 <= min_score <= 1.0:
        raise FuseboxError(f"min_score must be in [0, 1], got {min_score}")
    kept = [det for det in prediction_set.detections if det.score >= min_score]
    logger.debug("Prefilter at %.3f kept %d of %d detections",
                 min_score, len(kept), len(prediction_set.detections))
    return prediction_set.model_copy(update={"detections": tuple(kept)})


def _leader_position(members: Sequence[Detection]) -> int:
    """Position of the highest-score member; ties go to the larger box, then the earlier one."""
    best = 0
    for i in range(1, len(members)):
        candidate, current = members[i], members[best]
        if (candidate.score, area(candidate.box)) > (current.score, area(current.box)):
            best = i
    return best


def select_representative(members: Sequence[Detection], config: FusionConfig) -> Detection:
    """
    Reduce a cluster to the single detection it emits.

    MaxConfidence returns the highest-score member unchanged. WeightedAverage
    (an opt-in extension) returns the score-weighted mean of member corners
    carrying the maximum member score; all-zero scores fall back to equal weights.
    """
    if not members:
        raise FuseboxError("cannot select a representative from an empty cluster")
    leader = members[_leader_position(members)]
    if config.selection == SelectionStrategy.MAX_CONFIDENCE or len(members) == 1:
        return leader

    corners = np.array([m.box.as_tuple() for m in members], dtype=np.float64)
    weights = np.array([m.score for m in members], dtype=np.float64)
    if weights.sum() <= 0:
        weights = np.ones_like(weights)
    x_min, y_min, x_max, y_max = np.average(corners, axis=0, weights=weights)
    return Detection(
        image_id=leader.image_id,
        category_id=leader.category_id,
        box=BBox(x_min=float(x_min), y_min=float(y_min),
                 x_max=float(max(x_max, x_min)), y_max=float(max(y_max, y_min))),
        score=leader.score,
    )


def _ordered(clusters: List[Tuple[Cluster, int]]) -> List[Cluster]:
    # descending score, then ascending area, then input order of the leading member
    clusters.sort(key=lambda item: (-item[0].representative.score,
                                    area(item[0].representative.box), item[1]))
    return [cluster for cluster, _ in clusters]


def _components(group: Sequence[Detection], config: FusionConfig) -> List[List[int]]:
    uf = UnionFind(len(group))
    for i in range(len(group)):
        for j in range(i + 1, len(group)):
            if overlaps(group[i], group[j], config):
                uf.union(i, j)
    return uf.components()


def _make_cluster(group: Sequence[Detection], indices: List[int],
                  config: FusionConfig) -> Tuple[Cluster, int]:
    members = [group[i] for i in indices]
    leader = indices[_leader_position(members)]
    return Cluster(members=members, representative=select_representative(members, config)), leader


def build_clusters(group: Sequence[Detection], config: FusionConfig) -> List[Cluster]:
    """
    Connected components of the above-threshold overlap graph of one
    (image, category) group. Every detection lands in exactly one cluster.
    """
    return _ordered([_make_cluster(group, c, config) for c in _components(group, config)])


def _fuse_group(group: List[Detection], config: FusionConfig) -> List[Detection]:
    components = _components(group, config)
    if config.filter_placement == FilterPlacement.WITHIN_CLUSTER:
        components = [[i for i in c if group[i].score >= config.min_score] for c in components]
        components = [c for c in components if c]
    return [c.representative for c in _ordered([_make_cluster(group, c, config) for c in components])]


def image_order(image_id: str) -> Tuple[int, object]:
    """Sort key placing integer ids numerically ahead of other string ids."""
    try:
        return (0, int(image_id))
    except ValueError:
        return (1, image_id)


def fuse(sets: Sequence[PredictionSet], config: FusionConfig, max_workers: int = 1) -> PredictionSet:
    """
    Fuse prediction sets: merge, confidence-filter, cluster per (image, category),
    and emit one representative per cluster.

    Output is ordered by image, then category, then descending score, and is
    identical for any ``max_workers``.
    """
    merged = merge_sets(sets)
    if config.filter_placement == FilterPlacement.BEFORE_CLUSTERING:
        merged = prefilter(merged, config.min_score)

    groups = merged.groups()
    keys: List[GroupKey] = sorted(groups, key=lambda k: (image_order(k[0]), k[1]))

    def run(key: GroupKey) -> List[Detection]:
        return _fuse_group(groups[key], config)

    if max_workers > 1 and len(keys) > 1:
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            results = list(pool.map(run, keys))
    else:
        results = [run(key) for key in keys]

    fused: List[Detection] = []
    for key, representatives in zip(keys, results):
        logger.debug("Group %s: %d detections -> %d clusters", key, len(groups[key]), len(representatives))
        fused.extend(representatives)

    logger.info("Fused %d input detections from %d set(s) into %d boxes (%s, threshold %.3f)",
                len(merged.detections), len(sets), len(fused),
                config.metric.value, config.overlap_threshold)
    return PredictionSet(
        source_label=f"fused({merged.source_label})",
        categories=merged.categories,
        detections=fused,
    )
