"""JSON-lines detection/ground-truth files, run configs and result tables.

Every file is UTF-8 with LF line endings. A detection line looks like::

    {"image_id": "img_001", "model_id": "vgg16", "class_id": 0, "score": 0.91,
     "bbox": [0.1, 0.2, 0.4, 0.5], "coord_mode": "normalized"}

Pixel-mode lines (``"coord_mode": "pixel"``) must also carry ``image_w`` and
``image_h``; they are converted to normalized coordinates on load. Ground
truth uses the same schema without ``model_id`` and ``score``.
"""

from __future__ import annotations

import json
import math
from collections import defaultdict
from dataclasses import asdict, dataclass, field, fields
from decimal import ROUND_HALF_EVEN, Decimal
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

from .boxes import DEFAULT_CLASSES, BoundingBox, Detection, ValidationError, validate_detection
from .evaluation import GroundTruthBox
from .fusion import FusedDetection

COORD_DECIMALS = 9
TABLE_DECIMALS = 4
ENSEMBLE_MODEL_ID = "ensemble"


class FormatError(ValidationError):
    """A line of an input file could not be turned into a valid record."""

    def __init__(self, path: str | Path, line_no: int, message: str):
        super().__init__(f"{path}:{line_no}: {message}")
        self.path = str(path)
        self.line_no = line_no
        self.message = message


def _normalize_bbox(record: Mapping[str, Any]) -> list[float]:
    bbox = record.get("bbox")
    if not isinstance(bbox, (list, tuple)) or len(bbox) != 4:
        raise ValidationError(f"bbox must be a list of 4 numbers, got {bbox!r}")
    mode = record.get("coord_mode", "normalized")
    if mode == "normalized":
        return list(bbox)
    if mode != "pixel":
        raise ValidationError(f"unknown coord_mode {mode!r}")
    w, h = record.get("image_w"), record.get("image_h")
    if not isinstance(w, int) or not isinstance(h, int) or isinstance(w, bool) or isinstance(h, bool):
        raise ValidationError("pixel coord_mode requires integer image_w and image_h")
    if w <= 0 or h <= 0:
        raise ValidationError(f"image dimensions must be positive, got {w}x{h}")
    try:
        x1, y1, x2, y2 = (float(c) for c in bbox)
    except (TypeError, ValueError) as exc:
        raise ValidationError(f"non-numeric bbox {bbox!r}") from exc
    return [x1 / w, y1 / h, x2 / w, y2 / h]


def parse_detection(record: Any, classes: Sequence[str] = DEFAULT_CLASSES) -> Detection:
    if not isinstance(record, dict):
        raise ValidationError("record must be a JSON object")
    return validate_detection({**record, "bbox": _normalize_bbox(record)}, classes)


def parse_ground_truth(record: Any, classes: Sequence[str] = DEFAULT_CLASSES) -> GroundTruthBox:
    if not isinstance(record, dict):
        raise ValidationError("record must be a JSON object")
    # reuse the detection validation path with a placeholder score
    det = validate_detection(
        {**record, "model_id": "", "score": 1.0, "bbox": _normalize_bbox(record)}, classes
    )
    return GroundTruthBox(det.image_id, det.class_id, det.box)


@dataclass
class DetectionFile:
    groups: dict[tuple[str, str], list[Detection]] = field(default_factory=dict)
    rejects: list[tuple[int, str]] = field(default_factory=list)

    @property
    def detections(self) -> list[Detection]:
        return [d for key in sorted(self.groups) for d in self.groups[key]]

    @property
    def model_ids(self) -> list[str]:
        return sorted({m for _, m in self.groups})

    def by_model(self) -> dict[str, list[Detection]]:
        out: dict[str, list[Detection]] = defaultdict(list)
        for (_, model_id), dets in sorted(self.groups.items()):
            out[model_id].extend(dets)
        return dict(out)


@dataclass
class GroundTruthFile:
    boxes: list[GroundTruthBox] = field(default_factory=list)
    rejects: list[tuple[int, str]] = field(default_factory=list)


def _iter_records(path: Path, strict: bool, rejects: list[tuple[int, str]]):
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                yield line_no, json.loads(line)
            except json.JSONDecodeError as exc:
                if strict:
                    raise FormatError(path, line_no, f"malformed JSON: {exc.msg}") from None
                rejects.append((line_no, f"malformed JSON: {exc.msg}"))


def load_detections(
    path: str | Path, strict: bool = True, classes: Sequence[str] = DEFAULT_CLASSES
) -> DetectionFile:
    """Load and validate a detections file, grouped by (image_id, model_id).

    In strict mode the first bad line raises `FormatError`; in lenient mode
    bad lines are skipped and listed in ``rejects`` with their line number.
    """
    path = Path(path)
    out = DetectionFile()
    groups: dict[tuple[str, str], list[Detection]] = defaultdict(list)
    for line_no, record in _iter_records(path, strict, out.rejects):
        try:
            det = parse_detection(record, classes)
        except ValidationError as exc:
            if strict:
                raise FormatError(path, line_no, str(exc)) from None
            out.rejects.append((line_no, str(exc)))
            continue
        groups[(det.image_id, det.model_id)].append(det)
    out.groups = dict(groups)
    return out


def load_ground_truth(
    path: str | Path, strict: bool = True, classes: Sequence[str] = DEFAULT_CLASSES
) -> GroundTruthFile:
    path = Path(path)
    out = GroundTruthFile()
    for line_no, record in _iter_records(path, strict, out.rejects):
        try:
            out.boxes.append(parse_ground_truth(record, classes))
        except ValidationError as exc:
            if strict:
                raise FormatError(path, line_no, str(exc)) from None
            out.rejects.append((line_no, str(exc)))
    return out


def _bbox_out(box: BoundingBox) -> list[float]:
    return [round(c, COORD_DECIMALS) for c in box.as_tuple()]


def detection_record(det: Detection | FusedDetection) -> dict[str, Any]:
    if isinstance(det, FusedDetection):
        return {
            "image_id": det.image_id,
            "model_id": ENSEMBLE_MODEL_ID,
            "class_id": det.class_id,
            "score": det.score,
            "bbox": _bbox_out(det.box),
            "coord_mode": "normalized",
            "support_boxes": det.n_boxes,
            "support_models": sorted(det.model_ids),
        }
    return {
        "image_id": det.image_id,
        "model_id": det.model_id,
        "class_id": det.class_id,
        "score": det.score,
        "bbox": _bbox_out(det.box),
        "coord_mode": "normalized",
    }


def ground_truth_record(gt: GroundTruthBox) -> dict[str, Any]:
    return {
        "image_id": gt.image_id,
        "class_id": gt.class_id,
        "bbox": _bbox_out(gt.box),
        "coord_mode": "normalized",
    }


def dumps_jsonl(records: Iterable[Mapping[str, Any]]) -> bytes:
    lines = [json.dumps(r, ensure_ascii=False, separators=(", ", ": ")) + "\n" for r in records]
    return "".join(lines).encode("utf-8")


def write_detections(path: str | Path, dets: Iterable[Detection | FusedDetection]) -> None:
    Path(path).write_bytes(dumps_jsonl(detection_record(d) for d in dets))


def write_ground_truth(path: str | Path, boxes: Iterable[GroundTruthBox]) -> None:
    Path(path).write_bytes(dumps_jsonl(ground_truth_record(g) for g in boxes))


def format_value(value: Any) -> str:
    """Render a table cell; reals get 4 decimals, rounded half to even."""
    if value is None:
        return ""
    if isinstance(value, float):
        if not math.isfinite(value):
            return str(value)
        q = Decimal(repr(value)).quantize(Decimal(1).scaleb(-TABLE_DECIMALS), rounding=ROUND_HALF_EVEN)
        return f"{q:f}"
    return str(value)


def format_threshold(t: float) -> str:
    return f"{t:g}"


@dataclass(frozen=True)
class Table:
    header: tuple[str, ...]
    rows: tuple[tuple[Any, ...], ...] = ()


def write_table(table: Table, fmt: str = "csv") -> bytes:
    cells = [[format_value(v) for v in row] for row in table.rows]
    if fmt == "csv":
        lines = [",".join(table.header)] + [",".join(r) for r in cells]
    elif fmt in ("markdown", "md"):
        lines = ["| " + " | ".join(table.header) + " |", "|" + "|".join("---" for _ in table.header) + "|"]
        lines += ["| " + " | ".join(r) + " |" for r in cells]
    else:
        raise ValidationError(f"unknown table format {fmt!r}")
    return ("\n".join(lines) + "\n").encode("utf-8")


@dataclass
class RunConfig:
    """Everything needed to reproduce a run, next to its input files."""

    ensemble: list[dict[str, Any]] = field(default_factory=list)
    classes: list[str] = field(default_factory=lambda: list(DEFAULT_CLASSES))
    nms_threshold: float = 0.55
    wbf_iou: float = 0.5
    conf_strategy: str = "max"
    weight_strategy: str = "quality"
    eval_iou: float = 0.5
    interpolation: str = "all_point"
    seed: int = 0
    sweep_thresholds: list[float] = field(
        default_factory=lambda: [0.35, 0.4, 0.45, 0.5, 0.55, 0.65, 0.7, 0.75]
    )
    conf_strategies: list[str] = field(
        default_factory=lambda: ["max", "avg", "box_and_model_avg", "absent_model_aware_avg"]
    )
    weight_strategies: list[str] = field(
        default_factory=lambda: ["quality", "uniform", "rank_linear", "rank_squared"]
    )
    detections: str | None = None
    ground_truth: str | None = None
    apply_nms: bool = True
    baseline_map: float | None = None
    precomputed_sweep: dict[str, dict[str, float]] | None = None
    precomputed_grid: dict[str, dict[str, float]] | None = None
    simulation: dict[str, Any] | None = None

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValidationError(f"unknown config keys: {sorted(unknown)}")
        return cls(**dict(data))

    @classmethod
    def load(cls, path: str | Path) -> "RunConfig":
        path = Path(path)
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ValidationError(f"{path}: malformed JSON config: {exc.msg}") from None
        if not isinstance(data, dict):
            raise ValidationError(f"{path}: config must be a JSON object")
        cfg = cls.from_dict(data)
        # input paths are relative to the config file
        for name in ("detections", "ground_truth"):
            value = getattr(cfg, name)
            if value is not None and not Path(value).is_absolute():
                setattr(cfg, name, str(path.parent / value))
        return cfg

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    def dumps(self) -> bytes:
        return (json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n").encode("utf-8")


def load_ensemble(path: str | Path) -> list[dict[str, Any]]:
    """Read an ensemble file: ``{"models": [{"model_id": ..., "quality": ...}, ...]}``."""
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: malformed JSON: {exc.msg}") from None
    if isinstance(data, dict):
        data = data.get("models")
    if not isinstance(data, list):
        raise ValidationError(f"{path}: expected a list of models")
    return data
