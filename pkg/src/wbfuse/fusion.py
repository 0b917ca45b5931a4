"""Weighted boxes fusion across the outputs of several detectors."""

from __future__ import annotations

import enum
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Mapping

from .boxes import (
    BoundingBox,
    Detection,
    EnsembleSpec,
    ValidationError,
    WeightStrategy,
    iou,
    resolve_weights,
)

DEFAULT_WBF_IOU = 0.5


class ConfStrategy(str, enum.Enum):
    MAX = "max"
    AVG = "avg"
    BOX_AND_MODEL_AVG = "box_and_model_avg"
    ABSENT_MODEL_AWARE_AVG = "absent_model_aware_avg"


@dataclass(frozen=True)
class FusionConfig:
    iou_threshold: float = DEFAULT_WBF_IOU
    conf_strategy: ConfStrategy = ConfStrategy.MAX
    weight_strategy: WeightStrategy = WeightStrategy.QUALITY

    def __post_init__(self) -> None:
        if not 0.0 < self.iou_threshold < 1.0:
            raise ValidationError(f"wbf iou threshold must lie in (0, 1), got {self.iou_threshold}")
        object.__setattr__(self, "conf_strategy", ConfStrategy(self.conf_strategy))
        object.__setattr__(self, "weight_strategy", WeightStrategy(self.weight_strategy))


@dataclass
class Cluster:
    """Same-class detections of one image, with their running fused box."""

    index: int
    class_id: int
    members: list[tuple[Detection, float]] = field(default_factory=list)
    fused_box: BoundingBox | None = None

    def add(self, det: Detection, weight: float) -> None:
        if self.members:
            first = self.members[0][0]
            if det.class_id != self.class_id or det.image_id != first.image_id:
                raise ValidationError("cluster members must share class and image")
        self.members.append((det, weight))
        self.fused_box = fuse_coordinates(self)

    @property
    def image_id(self) -> str:
        return self.members[0][0].image_id

    @property
    def model_ids(self) -> frozenset[str]:
        return frozenset(d.model_id for d, _ in self.members)


@dataclass(frozen=True)
class FusedDetection:
    image_id: str
    class_id: int
    score: float
    box: BoundingBox
    n_boxes: int
    model_ids: frozenset[str]


def fuse_coordinates(cluster: Cluster) -> BoundingBox:
    """Confidence-and-weight weighted average of member coordinates."""
    if not cluster.members:
        raise ValidationError("cannot fuse an empty cluster")
    if len(cluster.members) == 1:
        return cluster.members[0][0].box
    total = 0.0
    acc = [0.0, 0.0, 0.0, 0.0]
    for det, w in cluster.members:
        sw = det.score * w
        total += sw
        for k, c in enumerate(det.box.as_tuple()):
            acc[k] += sw * c
    coords = [a / total for a in acc]
    lo = [min(d.box.as_tuple()[k] for d, _ in cluster.members) for k in range(4)]
    hi = [max(d.box.as_tuple()[k] for d, _ in cluster.members) for k in range(4)]
    # rounding may push an average a hair outside the member hull
    coords = [min(h, max(l, c)) for c, l, h in zip(coords, lo, hi)]
    return BoundingBox(*coords)


def fuse_confidence(
    cluster: Cluster,
    strategy: ConfStrategy | str,
    spec: EnsembleSpec,
    weights: Mapping[str, float],
) -> float:
    strategy = ConfStrategy(strategy)
    if not cluster.members:
        raise ValidationError("cannot score an empty cluster")
    scaled = [det.score * w for det, w in cluster.members]

    if strategy is ConfStrategy.MAX:
        return max(scaled) / max(weights[m] for m in spec.model_ids)

    num = sum(scaled)
    member_w = sum(w for _, w in cluster.members)
    avg = num / member_w
    if strategy is ConfStrategy.AVG:
        return avg

    present = cluster.model_ids
    if strategy is ConfStrategy.BOX_AND_MODEL_AVG:
        contributing = sum(weights[m] for m in spec.model_ids if m in present)
        everything = sum(weights[m] for m in spec.model_ids)
        return avg * (contributing / everything)

    absent = sum(weights[m] for m in spec.model_ids if m not in present)
    return num / (member_w + absent)


def cluster_detections(
    detections: Iterable[Detection],
    weights: Mapping[str, float],
    iou_threshold: float,
    model_order: Mapping[str, int] | None = None,
) -> list[Cluster]:
    """Greedily group one image's detections from all models.

    Boxes are visited in descending score x model weight; ties fall back to
    `model_order` and then box coordinates. Each box joins the first
    same-class cluster whose current fused box overlaps it with IoU strictly
    above `iou_threshold`, otherwise it opens a new cluster.
    """
    detections = list(detections)
    if model_order is None:
        model_order = {m: i for i, m in enumerate(sorted(weights))}

    def key(d: Detection):
        return (-d.score * weights[d.model_id], model_order[d.model_id], d.box.as_tuple(), d.class_id)

    clusters: list[Cluster] = []
    by_class: dict[int, list[Cluster]] = defaultdict(list)
    for det in sorted(detections, key=key):
        w = weights[det.model_id]
        for c in by_class[det.class_id]:
            if iou(c.fused_box, det.box) > iou_threshold:
                c.add(det, w)
                break
        else:
            c = Cluster(index=len(clusters), class_id=det.class_id)
            c.add(det, w)
            clusters.append(c)
            by_class[det.class_id].append(c)
    return clusters


def weighted_boxes_fusion(
    detections: Iterable[Detection],
    cfg: FusionConfig,
    spec: EnsembleSpec,
) -> list[FusedDetection]:
    """Fuse all models' detections for a single image."""
    detections = list(detections)
    if not detections:
        return []
    known = set(spec.model_ids)
    for d in detections:
        if d.model_id not in known:
            raise ValidationError(f"unknown model id {d.model_id!r} not in ensemble")
    if len({d.image_id for d in detections}) > 1:
        raise ValidationError("weighted_boxes_fusion expects detections of a single image")

    weights = resolve_weights(cfg.weight_strategy, spec)
    order = {m: i for i, m in enumerate(spec.model_ids)}
    fused = []
    for c in cluster_detections(detections, weights, cfg.iou_threshold, order):
        score = fuse_confidence(c, cfg.conf_strategy, spec, weights)
        fused.append(
            FusedDetection(
                image_id=c.image_id,
                class_id=c.class_id,
                score=min(1.0, score),
                box=c.fused_box,
                n_boxes=len(c.members),
                model_ids=c.model_ids,
            )
        )
    fused.sort(key=lambda f: (-f.score, f.class_id, f.box.as_tuple()))
    return fused


def fuse_dataset(
    detections: Iterable[Detection],
    cfg: FusionConfig,
    spec: EnsembleSpec,
) -> list[FusedDetection]:
    """Run `weighted_boxes_fusion` image by image, in image id order."""
    per_image: dict[str, list[Detection]] = defaultdict(list)
    for d in detections:
        per_image[d.image_id].append(d)
    out: list[FusedDetection] = []
    for image_id in sorted(per_image):
        out.extend(weighted_boxes_fusion(per_image[image_id], cfg, spec))
    return out
