"""Pascal-VOC style evaluation: matching, precision/recall, AP and mAP."""

from __future__ import annotations

import enum
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Protocol, Sequence

import numpy as np

from .boxes import BoundingBox, ValidationError, iou

DEFAULT_EVAL_IOU = 0.5


class Interpolation(str, enum.Enum):
    ALL_POINT = "all_point"
    ELEVEN_POINT = "eleven_point"


class Scored(Protocol):
    image_id: str
    class_id: int
    score: float
    box: BoundingBox


@dataclass(frozen=True)
class GroundTruthBox:
    image_id: str
    class_id: int
    box: BoundingBox


@dataclass(frozen=True)
class EvalConfig:
    iou_threshold: float = DEFAULT_EVAL_IOU
    interpolation: Interpolation = Interpolation.ALL_POINT

    def __post_init__(self) -> None:
        if not 0.0 < self.iou_threshold < 1.0:
            raise ValidationError(f"eval iou threshold must lie in (0, 1), got {self.iou_threshold}")
        object.__setattr__(self, "interpolation", Interpolation(self.interpolation))


@dataclass(frozen=True)
class ClassCounts:
    tp: int
    fp: int
    fn: int


@dataclass(frozen=True)
class EvalReport:
    ap: dict[int, float]
    mAP: float
    counts: dict[int, ClassCounts] = field(default_factory=dict)

    def to_dict(self, class_names: Sequence[str] | None = None) -> dict:
        def name(c: int) -> str:
            if class_names is not None and 0 <= c < len(class_names):
                return class_names[c]
            return str(c)

        return {
            "mAP": self.mAP,
            "per_class": [
                {
                    "class_id": c,
                    "class_name": name(c),
                    "ap": self.ap[c],
                    "tp": self.counts[c].tp,
                    "fp": self.counts[c].fp,
                    "fn": self.counts[c].fn,
                }
                for c in sorted(self.ap)
            ],
        }


def _det_key(d: Scored):
    return (-d.score, d.image_id, d.box.as_tuple())


def match_detections(
    detections: Iterable[Scored],
    ground_truth: Iterable[GroundTruthBox],
    iou_threshold: float = DEFAULT_EVAL_IOU,
) -> list[tuple[Scored, bool]]:
    """Label each detection as true or false positive.

    Within every class, detections are taken in descending score and each
    one claims the still unmatched same-image ground-truth box with the
    highest IoU, provided that IoU is at least `iou_threshold`. Returns
    (detection, is_tp) pairs in that processing order, classes ascending.
    """
    gt_index: dict[tuple[str, int], list[GroundTruthBox]] = defaultdict(list)
    for g in ground_truth:
        gt_index[(g.image_id, g.class_id)].append(g)
    by_class: dict[int, list[Scored]] = defaultdict(list)
    for d in detections:
        by_class[d.class_id].append(d)

    out: list[tuple[Scored, bool]] = []
    for class_id in sorted(by_class):
        taken: set[tuple[str, int]] = set()
        for d in sorted(by_class[class_id], key=_det_key):
            candidates = gt_index.get((d.image_id, class_id), [])
            best, best_iou = -1, -1.0
            for k, g in enumerate(candidates):
                if (d.image_id, k) in taken:
                    continue
                ov = iou(d.box, g.box)
                if ov > best_iou:
                    best, best_iou = k, ov
            if best >= 0 and best_iou >= iou_threshold:
                taken.add((d.image_id, best))
                out.append((d, True))
            else:
                out.append((d, False))
    return out


def precision_recall(labels: Sequence[bool], num_gt: int) -> tuple[np.ndarray, np.ndarray]:
    tp = np.cumsum(np.asarray(labels, dtype=np.int64))
    fp = np.cumsum(~np.asarray(labels, dtype=bool))
    precision = tp / np.maximum(tp + fp, 1)
    recall = tp / num_gt if num_gt > 0 else np.zeros_like(precision, dtype=float)
    return precision, recall


def average_precision(
    labels: Sequence[bool],
    num_gt: int,
    interpolation: Interpolation | str = Interpolation.ALL_POINT,
) -> float:
    """Area under the interpolated precision/recall curve of ranked labels."""
    interpolation = Interpolation(interpolation)
    if num_gt < 0:
        raise ValidationError("num_gt must be non-negative")
    if num_gt == 0:
        return 0.0 if len(labels) else 1.0
    if not len(labels):
        return 0.0
    precision, recall = precision_recall(labels, num_gt)

    if interpolation is Interpolation.ELEVEN_POINT:
        total = 0.0
        for t in np.linspace(0.0, 1.0, 11):
            mask = recall >= t - 1e-12
            total += float(precision[mask].max()) if mask.any() else 0.0
        return total / 11.0

    # precision envelope, evaluated at every recall step
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    prev_recall = np.concatenate(([0.0], recall[:-1]))
    return float(np.sum((recall - prev_recall) * envelope))


def mean_average_precision(
    detections: Iterable[Scored],
    ground_truth: Iterable[GroundTruthBox],
    cfg: EvalConfig = EvalConfig(),
) -> EvalReport:
    """Per-class AP and their plain mean over classes that have ground truth."""
    ground_truth = list(ground_truth)
    num_gt: dict[int, int] = defaultdict(int)
    for g in ground_truth:
        num_gt[g.class_id] += 1

    labelled: dict[int, list[bool]] = defaultdict(list)
    for d, is_tp in match_detections(detections, ground_truth, cfg.iou_threshold):
        labelled[d.class_id].append(is_tp)

    ap: dict[int, float] = {}
    counts: dict[int, ClassCounts] = {}
    for c in sorted(num_gt):
        labels = labelled.get(c, [])
        ap[c] = average_precision(labels, num_gt[c], cfg.interpolation)
        tp = sum(labels)
        counts[c] = ClassCounts(tp=tp, fp=len(labels) - tp, fn=num_gt[c] - tp)
    m = float(np.mean([ap[c] for c in sorted(ap)])) if ap else 0.0
    return EvalReport(ap=ap, mAP=m, counts=counts)


def relative_improvement(candidate_map: float, baseline_map: float) -> float:
    """Percentage gain of `candidate_map` over `baseline_map`."""
    if not baseline_map > 0:
        raise ValidationError(f"baseline mAP must be positive, got {baseline_map}")
    return 100.0 * (candidate_map - baseline_map) / baseline_map
