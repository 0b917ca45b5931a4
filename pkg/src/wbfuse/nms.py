"""Greedy per-class non-maximum suppression for a single model's output."""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass
from typing import Iterable

from .boxes import Detection, ValidationError, iou

DEFAULT_NMS_THRESHOLD = 0.55


@dataclass(frozen=True)
class NmsConfig:
    iou_threshold: float = DEFAULT_NMS_THRESHOLD

    def __post_init__(self) -> None:
        if not 0.0 < self.iou_threshold < 1.0:
            raise ValidationError(f"nms threshold must lie in (0, 1), got {self.iou_threshold}")


def _rank_key(d: Detection):
    return (-d.score, d.box.as_tuple())


def nms(detections: Iterable[Detection], cfg: NmsConfig = NmsConfig()) -> list[Detection]:
    """Suppress same-class boxes overlapping a higher-scored kept box.

    A box is discarded iff its IoU with an already kept box of the same
    class is strictly greater than the threshold. All detections must come
    from one image and one model.
    """
    detections = list(detections)
    if not detections:
        return []
    if len({(d.image_id, d.model_id) for d in detections}) > 1:
        raise ValidationError("heterogeneous batch: nms expects one image and one model")

    by_class: dict[int, list[Detection]] = defaultdict(list)
    for d in detections:
        by_class[d.class_id].append(d)

    kept: list[Detection] = []
    for class_id in sorted(by_class):
        selected: list[Detection] = []
        for d in sorted(by_class[class_id], key=_rank_key):
            if all(iou(d.box, k.box) <= cfg.iou_threshold for k in selected):
                selected.append(d)
        kept.extend(selected)
    kept.sort(key=lambda d: (_rank_key(d), d.class_id))
    return kept


def nms_all(detections: Iterable[Detection], cfg: NmsConfig = NmsConfig()) -> list[Detection]:
    """Apply `nms` independently to every (image, model) group."""
    groups: dict[tuple[str, str], list[Detection]] = defaultdict(list)
    for d in detections:
        groups[(d.image_id, d.model_id)].append(d)
    out: list[Detection] = []
    for key in sorted(groups):
        out.extend(nms(groups[key], cfg))
    return out
