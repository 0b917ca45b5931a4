"""NMS threshold sweeps, fusion strategy grids and a seeded detector simulator."""

from __future__ import annotations

import os
from collections import defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence, TypeVar

import numpy as np
from scipy.stats import truncnorm

from .boxes import BoundingBox, Detection, EnsembleSpec, ModelProfile, ValidationError, WeightStrategy
from .evaluation import EvalConfig, GroundTruthBox, mean_average_precision, relative_improvement
from .formats import Table, format_threshold
from .fusion import ConfStrategy, FusionConfig, fuse_dataset
from .nms import NmsConfig, nms_all

DEFAULT_SWEEP_THRESHOLDS = (0.35, 0.4, 0.45, 0.5, 0.55, 0.65, 0.7, 0.75)
THREADS_ENV = "WBFUSE_THREADS"

T = TypeVar("T")
R = TypeVar("R")


def _thread_count() -> int:
    try:
        return max(1, int(os.environ.get(THREADS_ENV, "1")))
    except ValueError:
        return 1


def _ordered_map(fn: Callable[[T], R], items: Sequence[T]) -> list[R]:
    n = _thread_count()
    if n == 1 or len(items) < 2:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, items))


def _argmax_first(keys: Sequence[T], values: Sequence[float]) -> T:
    best = 0
    for i, v in enumerate(values):
        if v > values[best]:
            best = i
    return keys[best]


# -- NMS sweep ------------------------------------------------------------


@dataclass(frozen=True)
class SweepSpec:
    detections: Mapping[str, Sequence[Detection]]
    ground_truth: Sequence[GroundTruthBox]
    thresholds: tuple[float, ...] = DEFAULT_SWEEP_THRESHOLDS
    eval_cfg: EvalConfig = EvalConfig()
    models: tuple[str, ...] | None = None

    def __post_init__(self) -> None:
        _check_thresholds(self.thresholds)


def _check_thresholds(thresholds: Sequence[float]) -> None:
    for t in thresholds:
        if not 0.0 < t < 1.0:
            raise ValidationError(f"sweep threshold {t} outside (0, 1)")
    if any(b <= a for a, b in zip(thresholds, thresholds[1:])):
        raise ValidationError("sweep thresholds must be strictly increasing")


@dataclass(frozen=True)
class SweepResult:
    thresholds: tuple[float, ...]
    model_ids: tuple[str, ...]
    cells: dict[tuple[float, str], float]

    def mean_map(self, threshold: float) -> float:
        return float(np.mean([self.cells[(threshold, m)] for m in self.model_ids]))

    @property
    def best_per_model(self) -> dict[str, float]:
        return {
            m: _argmax_first(self.thresholds, [self.cells[(t, m)] for t in self.thresholds])
            for m in self.model_ids
        }

    @property
    def selected_threshold(self) -> float | None:
        """Threshold with the highest mean mAP across models (lowest wins ties)."""
        if not self.thresholds or not self.model_ids:
            return None
        return _argmax_first(self.thresholds, [self.mean_map(t) for t in self.thresholds])

    def to_table(self) -> Table:
        rows = tuple(
            (format_threshold(t), *(self.cells[(t, m)] for m in self.model_ids)) for t in self.thresholds
        )
        return Table(("nms_threshold", *self.model_ids), rows)

    def summary(self) -> dict:
        return {
            "selected_threshold": self.selected_threshold,
            "mean_map": {format_threshold(t): self.mean_map(t) for t in self.thresholds} if self.model_ids else {},
            "best_threshold_per_model": self.best_per_model,
        }


def sweep_from_cells(cells: Mapping[float, Mapping[str, float]]) -> SweepResult:
    """Build a sweep result from already known mAP values."""
    thresholds = tuple(sorted(float(t) for t in cells))
    _check_thresholds(thresholds)
    by_t = {float(t): row for t, row in cells.items()}
    model_ids: tuple[str, ...] = tuple(next(iter(by_t.values()))) if by_t else ()
    flat = {}
    for t in thresholds:
        row = by_t[t]
        if set(row) != set(model_ids):
            raise ValidationError(f"threshold {t}: models {sorted(row)} differ from {sorted(model_ids)}")
        for m in model_ids:
            flat[(t, m)] = float(row[m])
    return SweepResult(thresholds, model_ids, flat)


def run_nms_sweep(spec: SweepSpec) -> SweepResult:
    model_ids = spec.models if spec.models is not None else tuple(sorted(spec.detections))
    missing = [m for m in model_ids if m not in spec.detections]
    if missing:
        raise ValidationError(f"missing model input for {missing}")
    gt = list(spec.ground_truth)
    jobs = [(t, m) for t in spec.thresholds for m in model_ids]

    def cell(job: tuple[float, str]) -> float:
        t, m = job
        kept = nms_all(spec.detections[m], NmsConfig(t))
        return mean_average_precision(kept, gt, spec.eval_cfg).mAP

    values = _ordered_map(cell, jobs)
    return SweepResult(tuple(spec.thresholds), tuple(model_ids), dict(zip(jobs, values)))


# -- fusion grid ----------------------------------------------------------

ALL_CONF = tuple(ConfStrategy)
ALL_WEIGHTS = tuple(WeightStrategy)


@dataclass(frozen=True)
class GridSpec:
    ensemble: EnsembleSpec
    detections: Sequence[Detection]
    ground_truth: Sequence[GroundTruthBox]
    conf_strategies: tuple[ConfStrategy, ...] = ALL_CONF
    weight_strategies: tuple[WeightStrategy, ...] = ALL_WEIGHTS
    iou_threshold: float = 0.5
    eval_cfg: EvalConfig = EvalConfig()
    baseline: float | None = None

    def __post_init__(self) -> None:
        if not self.conf_strategies or not self.weight_strategies:
            raise ValidationError("grid needs at least one confidence and one weight strategy")
        object.__setattr__(self, "conf_strategies", tuple(ConfStrategy(c) for c in self.conf_strategies))
        object.__setattr__(self, "weight_strategies", tuple(WeightStrategy(w) for w in self.weight_strategies))


@dataclass(frozen=True)
class GridResult:
    conf_strategies: tuple[ConfStrategy, ...]
    weight_strategies: tuple[WeightStrategy, ...]
    cells: dict[tuple[ConfStrategy, WeightStrategy], float]
    baseline_map: float | None = None
    baseline_model: str | None = None
    standalone: dict[str, float] = field(default_factory=dict)

    def cell(self, conf: ConfStrategy | str, weight: WeightStrategy | str) -> float:
        return self.cells[(ConfStrategy(conf), WeightStrategy(weight))]

    @property
    def best(self) -> tuple[ConfStrategy, WeightStrategy]:
        keys = [(c, w) for c in self.conf_strategies for w in self.weight_strategies]
        return _argmax_first(keys, [self.cells[k] for k in keys])

    @property
    def best_map(self) -> float:
        return self.cells[self.best]

    @property
    def relative_improvement(self) -> float | None:
        if self.baseline_map is None:
            return None
        return relative_improvement(self.best_map, self.baseline_map)

    def to_table(self) -> Table:
        rows = tuple(
            (c.value, *(self.cells[(c, w)] for w in self.weight_strategies)) for c in self.conf_strategies
        )
        return Table(("conf_strategy", *(w.value for w in self.weight_strategies)), rows)

    def summary(self) -> dict:
        c, w = self.best
        return {
            "best": {"conf_strategy": c.value, "weight_strategy": w.value, "map": self.best_map},
            "baseline": {"model_id": self.baseline_model, "map": self.baseline_map},
            "relative_improvement_pct": self.relative_improvement,
            "standalone": dict(self.standalone),
        }

    def summary_text(self) -> str:
        c, w = self.best
        lines = [f"best cell: {c.value} / {w.value} mAP {self.best_map:.3f}"]
        if self.baseline_map is not None:
            who = f" ({self.baseline_model})" if self.baseline_model else ""
            lines.append(f"best single model{who}: mAP {self.baseline_map:.3f}")
            lines.append(f"relative improvement: {self.relative_improvement:.3f}%")
        return "\n".join(lines) + "\n"


def grid_from_cells(
    cells: Mapping[str, Mapping[str, float]],
    baseline_map: float | None = None,
    baseline_model: str | None = None,
) -> GridResult:
    """Build a grid result from known mAPs keyed ``cells[conf][weight]``."""
    confs = tuple(ConfStrategy(c) for c in cells)
    if not confs:
        raise ValidationError("grid needs at least one confidence strategy")
    weights = tuple(WeightStrategy(w) for w in next(iter(cells.values())))
    flat = {}
    for c_name, row in cells.items():
        if {WeightStrategy(w) for w in row} != set(weights):
            raise ValidationError(f"grid row {c_name!r} has inconsistent weight strategies")
        for w_name, v in row.items():
            flat[(ConfStrategy(c_name), WeightStrategy(w_name))] = float(v)
    return GridResult(confs, weights, flat, baseline_map, baseline_model)


def standalone_maps(
    detections: Iterable[Detection], ground_truth: Sequence[GroundTruthBox], eval_cfg: EvalConfig = EvalConfig()
) -> dict[str, float]:
    by_model: dict[str, list[Detection]] = defaultdict(list)
    for d in detections:
        by_model[d.model_id].append(d)
    return {m: mean_average_precision(by_model[m], ground_truth, eval_cfg).mAP for m in sorted(by_model)}


def run_wbf_grid(spec: GridSpec) -> GridResult:
    gt = list(spec.ground_truth)
    dets = list(spec.detections)
    solo = standalone_maps(dets, gt, spec.eval_cfg)
    for m in spec.ensemble.model_ids:
        solo.setdefault(m, 0.0)
    if spec.baseline is not None:
        baseline, baseline_model = spec.baseline, None
    else:
        baseline_model = _argmax_first(list(spec.ensemble.model_ids), [solo[m] for m in spec.ensemble.model_ids])
        baseline = solo[baseline_model]
    jobs = [(c, w) for c in spec.conf_strategies for w in spec.weight_strategies]

    def cell(job: tuple[ConfStrategy, WeightStrategy]) -> float:
        c, w = job
        fused = fuse_dataset(dets, FusionConfig(spec.iou_threshold, c, w), spec.ensemble)
        return mean_average_precision(fused, gt, spec.eval_cfg).mAP

    values = _ordered_map(cell, jobs)
    return GridResult(
        spec.conf_strategies,
        spec.weight_strategies,
        dict(zip(jobs, values)),
        baseline if baseline > 0 else None,
        baseline_model,
        solo,
    )


# -- synthetic detectors --------------------------------------------------

MIN_SIDE = 1e-3
JITTER_TRUNCATION = 2.0


@dataclass(frozen=True)
class DetectorSim:
    """Behaviour of one simulated detector."""

    model_id: str
    detect_prob: float = 0.9
    jitter: float = 0.02
    tp_score_mean: float = 0.8
    tp_score_spread: float = 0.1
    fp_rate: float = 0.5
    fp_score_mean: float = 0.4
    fp_score_spread: float = 0.15

    def __post_init__(self) -> None:
        if not 0.0 <= self.detect_prob <= 1.0:
            raise ValidationError(f"{self.model_id}: detect_prob must lie in [0, 1]")
        if self.jitter < 0 or self.fp_rate < 0:
            raise ValidationError(f"{self.model_id}: jitter and fp_rate must be >= 0")
        if self.tp_score_spread < 0 or self.fp_score_spread < 0:
            raise ValidationError(f"{self.model_id}: score spreads must be >= 0")


@dataclass(frozen=True)
class SimSpec:
    models: tuple[DetectorSim, ...]
    seed: int = 0
    n_classes: int = 3

    @classmethod
    def from_dict(cls, data: Mapping) -> "SimSpec":
        models = tuple(DetectorSim(**m) for m in data["models"])
        return cls(models, int(data.get("seed", 0)), int(data.get("n_classes", 3)))


def default_detectors() -> tuple[DetectorSim, ...]:
    """Four detectors of clearly separated quality, strongest first."""
    return (
        DetectorSim("vgg16", 0.88, 0.025, 0.78, 0.12, 0.70, 0.38, 0.15),
        DetectorSim("resnet50", 0.85, 0.028, 0.74, 0.13, 0.85, 0.38, 0.15),
        DetectorSim("mobilenet", 0.82, 0.031, 0.70, 0.14, 1.00, 0.38, 0.15),
        DetectorSim("efficientnet", 0.79, 0.034, 0.66, 0.15, 1.15, 0.38, 0.15),
    )


def _score(rng: np.random.Generator, mean: float, spread: float) -> float:
    return float(np.clip(rng.normal(mean, spread), 0.01, 1.0))


def _repair(lo: float, hi: float) -> tuple[float, float]:
    lo, hi = min(1.0, max(0.0, lo)), min(1.0, max(0.0, hi))
    if lo > hi:
        lo, hi = hi, lo
    if hi - lo < MIN_SIDE:
        mid = min(1.0 - MIN_SIDE / 2, max(MIN_SIDE / 2, (lo + hi) / 2))
        lo, hi = mid - MIN_SIDE / 2, mid + MIN_SIDE / 2
    return lo, hi


def jitter_box(box: BoundingBox, sigma: float, rng: np.random.Generator) -> BoundingBox:
    if sigma == 0:
        return box
    noise = truncnorm.rvs(-JITTER_TRUNCATION, JITTER_TRUNCATION, scale=sigma, size=4, random_state=rng)
    x1, x2 = _repair(box.x1 + noise[0], box.x2 + noise[2])
    y1, y2 = _repair(box.y1 + noise[1], box.y2 + noise[3])
    return BoundingBox(x1, y1, x2, y2)


def random_box(rng: np.random.Generator, min_side: float = 0.05, max_side: float = 0.4) -> BoundingBox:
    w, h = rng.uniform(min_side, max_side, size=2)
    x1 = rng.uniform(0.0, 1.0 - w)
    y1 = rng.uniform(0.0, 1.0 - h)
    return BoundingBox(float(x1), float(y1), float(min(1.0, x1 + w)), float(min(1.0, y1 + h)))


def simulate_detectors(ground_truth: Iterable[GroundTruthBox], spec: SimSpec) -> list[Detection]:
    """Seeded synthetic detections for every model in `spec`.

    Each model draws from its own stream seeded by (seed, model index), so
    the output of one model does not depend on the others.
    """
    gt = sorted(ground_truth, key=lambda g: (g.image_id, g.class_id, g.box.as_tuple()))
    per_image: dict[str, list[GroundTruthBox]] = defaultdict(list)
    for g in gt:
        per_image[g.image_id].append(g)
    images = sorted(per_image)

    out: list[Detection] = []
    for idx, sim in enumerate(spec.models):
        rng = np.random.default_rng(np.random.SeedSequence([spec.seed, idx]))
        for image_id in images:
            for g in per_image[image_id]:
                if rng.random() >= sim.detect_prob:
                    continue
                box = jitter_box(g.box, sim.jitter, rng)
                out.append(Detection(image_id, sim.model_id, g.class_id, _score(rng, sim.tp_score_mean, sim.tp_score_spread), box))
            for _ in range(int(rng.poisson(sim.fp_rate)) if sim.fp_rate > 0 else 0):
                out.append(
                    Detection(
                        image_id,
                        sim.model_id,
                        int(rng.integers(spec.n_classes)),
                        _score(rng, sim.fp_score_mean, sim.fp_score_spread),
                        random_box(rng),
                    )
                )
    return out


def synthetic_ground_truth(
    n_images: int, seed: int = 0, n_classes: int = 3, max_objects: int = 3
) -> list[GroundTruthBox]:
    """Random ground truth: 1..max_objects boxes of random class per image."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 10_000]))
    boxes = []
    for i in range(n_images):
        image_id = f"img_{i:04d}"
        for _ in range(int(rng.integers(1, max_objects + 1))):
            boxes.append(GroundTruthBox(image_id, int(rng.integers(n_classes)), random_box(rng, 0.1, 0.5)))
    return boxes


def ensemble_from_standalone(maps: Mapping[str, float], order: Sequence[str] | None = None) -> EnsembleSpec:
    """Ensemble whose model qualities are their standalone mAPs."""
    order = list(order) if order is not None else sorted(maps)
    return EnsembleSpec(tuple(ModelProfile(m, max(maps[m], 1e-6)) for m in order))


@dataclass(frozen=True)
class StudyOutcome:
    seed: int
    standalone: dict[str, float]
    grid: GridResult

    @property
    def best_single(self) -> float:
        return max(self.standalone.values())


def run_synthetic_study(
    seed: int,
    n_images: int = 200,
    detectors: Sequence[DetectorSim] | None = None,
    conf_strategies: Sequence[ConfStrategy] = (ConfStrategy.MAX, ConfStrategy.AVG),
    weight_strategies: Sequence[WeightStrategy] = (WeightStrategy.QUALITY,),
    nms_threshold: float = 0.55,
    wbf_iou: float = 0.5,
    eval_cfg: EvalConfig = EvalConfig(),
) -> StudyOutcome:
    """Simulate, suppress, score each detector alone, then fuse.

    Fusion weights come from each detector's standalone mAP on this seed.
    """
    detectors = tuple(detectors or default_detectors())
    gt = synthetic_ground_truth(n_images, seed)
    raw = simulate_detectors(gt, SimSpec(detectors, seed))
    dets = nms_all(raw, NmsConfig(nms_threshold))
    solo = standalone_maps(dets, gt, eval_cfg)
    order = [d.model_id for d in detectors]
    for m in order:
        solo.setdefault(m, 0.0)
    ensemble = ensemble_from_standalone(solo, order)
    grid = run_wbf_grid(
        GridSpec(ensemble, dets, gt, tuple(conf_strategies), tuple(weight_strategies), wbf_iou, eval_cfg)
    )
    return StudyOutcome(seed, solo, grid)
