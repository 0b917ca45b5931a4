"""Boxes, detections, model profiles and the IoU primitive."""

from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass
from typing import Any, Mapping, Sequence

logger = logging.getLogger(__name__)

DEFAULT_CLASSES: tuple[str, ...] = ("gun", "heavy_weapon", "knife")


class ValidationError(ValueError):
    """A record or value violates a domain invariant."""


class WeightStrategy(str, enum.Enum):
    QUALITY = "quality"
    UNIFORM = "uniform"
    RANK_LINEAR = "rank_linear"
    RANK_SQUARED = "rank_squared"


@dataclass(frozen=True, order=True)
class BoundingBox:
    """Axis-aligned box in normalized image coordinates."""

    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self) -> None:
        vals = (self.x1, self.y1, self.x2, self.y2)
        if not all(math.isfinite(v) for v in vals):
            raise ValidationError(f"non-finite box coordinates {vals}")
        if not (0.0 <= self.x1 < self.x2 <= 1.0 and 0.0 <= self.y1 < self.y2 <= 1.0):
            raise ValidationError(f"degenerate or out-of-range box {vals}")

    @classmethod
    def clipped(cls, coords: Sequence[float]) -> "BoundingBox":
        """Build a box after clamping every coordinate into [0, 1]."""
        if len(coords) != 4:
            raise ValidationError(f"bbox needs 4 coordinates, got {len(coords)}")
        try:
            vals = [float(c) for c in coords]
        except (TypeError, ValueError) as exc:
            raise ValidationError(f"non-numeric bbox {coords!r}") from exc
        if not all(math.isfinite(v) for v in vals):
            raise ValidationError(f"non-finite box coordinates {vals}")
        x1, y1, x2, y2 = (min(1.0, max(0.0, v)) for v in vals)
        if not (x1 < x2 and y1 < y2):
            raise ValidationError(f"zero or negative area box {vals}")
        return cls(x1, y1, x2, y2)

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.x1, self.y1, self.x2, self.y2)

    @property
    def area(self) -> float:
        return (self.x2 - self.x1) * (self.y2 - self.y1)


def iou(a: BoundingBox, b: BoundingBox) -> float:
    iw = min(a.x2, b.x2) - max(a.x1, b.x1)
    ih = min(a.y2, b.y2) - max(a.y1, b.y1)
    if iw <= 0.0 or ih <= 0.0:
        return 0.0
    inter = iw * ih
    # a.area + b.area is commutative, so the result is exactly symmetric
    union = a.area + b.area - inter
    return min(1.0, inter / union)


@dataclass(frozen=True)
class Detection:
    image_id: str
    model_id: str
    class_id: int
    score: float
    box: BoundingBox

    def __post_init__(self) -> None:
        if not (0.0 < self.score <= 1.0):
            raise ValidationError(f"non-positive score or score above 1: {self.score}")
        if self.class_id < 0:
            raise ValidationError(f"unknown class id {self.class_id}")


@dataclass(frozen=True)
class ModelProfile:
    model_id: str
    quality: float

    def __post_init__(self) -> None:
        if not (self.quality > 0.0 and math.isfinite(self.quality)):
            raise ValidationError(f"model {self.model_id!r}: quality must be > 0")


@dataclass(frozen=True)
class EnsembleSpec:
    """Ordered models of an ensemble; the order is used for every tie-break."""

    profiles: tuple[ModelProfile, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "profiles", tuple(self.profiles))
        if not self.profiles:
            raise ValidationError("ensemble needs at least one model")
        ids = [p.model_id for p in self.profiles]
        if len(set(ids)) != len(ids):
            raise ValidationError(f"duplicate model ids in ensemble: {ids}")

    @classmethod
    def from_qualities(cls, qualities: Mapping[str, float]) -> "EnsembleSpec":
        return cls(tuple(ModelProfile(m, float(q)) for m, q in qualities.items()))

    @property
    def model_ids(self) -> tuple[str, ...]:
        return tuple(p.model_id for p in self.profiles)

    def index(self, model_id: str) -> int:
        return self.model_ids.index(model_id)

    def __len__(self) -> int:
        return len(self.profiles)


def validate_detection(record: Mapping[str, Any], classes: Sequence[str] = DEFAULT_CLASSES) -> Detection:
    """Turn a raw normalized record into a `Detection`.

    Out-of-range coordinates are clipped into [0, 1] first; boxes that end
    up with zero area, scores outside (0, 1] and class ids outside
    ``range(len(classes))`` raise `ValidationError`.
    """
    try:
        image_id = str(record["image_id"])
        model_id = str(record["model_id"])
        class_id = record["class_id"]
        score = record["score"]
        bbox = record["bbox"]
    except KeyError as exc:
        raise ValidationError(f"missing field {exc.args[0]!r}") from None
    if isinstance(class_id, bool) or not isinstance(class_id, int):
        raise ValidationError(f"class id must be an integer, got {class_id!r}")
    if not 0 <= class_id < len(classes):
        raise ValidationError(f"unknown class id {class_id}")
    if isinstance(score, bool) or not isinstance(score, (int, float)):
        raise ValidationError(f"score must be a number, got {score!r}")
    score = float(score)
    if not score > 0.0:
        raise ValidationError(f"non-positive score {score}")
    if not score <= 1.0:
        raise ValidationError(f"score above 1: {score}")
    if not isinstance(bbox, (list, tuple)):
        raise ValidationError(f"bbox must be a list, got {bbox!r}")
    return Detection(image_id, model_id, class_id, score, BoundingBox.clipped(bbox))


TIE_RTOL = 1e-9


def _tie_groups(qualities: Sequence[float]) -> list[list[int]]:
    """Indices in ascending quality, chained into groups of near-equal values.

    Within a group the earlier model gets the lower rank.

    A relative tolerance keeps ranks stable when all qualities are rescaled:
    two qualities one ulp apart can round to the same value after scaling.
    """
    ascending = sorted(range(len(qualities)), key=lambda i: qualities[i])
    groups: list[list[int]] = []
    for i in ascending:
        if groups and qualities[i] - qualities[groups[-1][-1]] <= TIE_RTOL * qualities[i]:
            groups[-1].append(i)
        else:
            groups.append([i])
    return groups


def resolve_weights(strategy: WeightStrategy | str, spec: EnsembleSpec) -> dict[str, float]:
    strategy = WeightStrategy(strategy)
    if strategy is WeightStrategy.QUALITY:
        return {p.model_id: p.quality for p in spec.profiles}
    if strategy is WeightStrategy.UNIFORM:
        return {p.model_id: 1.0 for p in spec.profiles}

    qualities = [p.quality for p in spec.profiles]
    groups = _tie_groups(qualities)
    if any(len(g) > 1 for g in groups):
        logger.warning("tied model qualities; ranks broken by ensemble order")
    order = [i for g in groups for i in sorted(g)]
    power = 1 if strategy is WeightStrategy.RANK_LINEAR else 2
    weights = {}
    for rank, i in enumerate(order, start=1):
        weights[spec.profiles[i].model_id] = float(rank**power)
    return {p.model_id: weights[p.model_id] for p in spec.profiles}
