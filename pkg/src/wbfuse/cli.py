"""Command-line entry point: ``wbfuse <subcommand> ...``.

Exit codes: 0 success, 1 validation or usage error, 2 I/O error.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import asdict
from pathlib import Path
from typing import Sequence

from .boxes import EnsembleSpec, ModelProfile, ValidationError
from .evaluation import EvalConfig, mean_average_precision
from .formats import (
    RunConfig,
    Table,
    detection_record,
    dumps_jsonl,
    ground_truth_record,
    load_detections,
    load_ensemble,
    load_ground_truth,
    write_table,
)
from .fusion import FusionConfig, fuse_dataset
from .harness import (
    THREADS_ENV,
    GridSpec,
    SimSpec,
    SweepSpec,
    default_detectors,
    grid_from_cells,
    run_nms_sweep,
    run_wbf_grid,
    simulate_detectors,
    sweep_from_cells,
    synthetic_ground_truth,
)
from .nms import NmsConfig, nms_all

EFFECTIVE_CONFIG = "effective_config.json"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="run config JSON; flags override its values")
    p.add_argument("--lenient", action="store_true", help="skip invalid input lines instead of aborting")
    p.add_argument("--format", choices=("csv", "markdown"), default=None, help="table format (default from --out suffix, else csv)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="wbfuse",
        description="Detection ensemble post-processing: NMS, weighted boxes fusion and mAP evaluation.",
        epilog=f"Set {THREADS_ENV} to evaluate sweep/grid cells on several threads.",
    )
    sub = parser.add_subparsers(dest="command", metavar="SUBCOMMAND", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("nms", help="per-model, per-class greedy NMS")
    _common(p)
    p.add_argument("--detections", type=Path, help="input detections.jsonl")
    p.add_argument("--nms-threshold", type=float, help="suppress iff IoU > threshold (default 0.55)")
    p.add_argument("--out", type=Path, required=True, help="output detections.jsonl")

    p = sub.add_parser("fuse", help="weighted boxes fusion of several models")
    _common(p)
    p.add_argument("--detections", type=Path, help="input detections.jsonl (all models)")
    p.add_argument("--ensemble", type=Path, help='ensemble JSON {"models": [{"model_id", "quality"}]}')
    p.add_argument("--wbf-iou", type=float, help="cluster join threshold (default 0.5)")
    p.add_argument("--conf", dest="conf_strategy", choices=("max", "avg", "box_and_model_avg", "absent_model_aware_avg"))
    p.add_argument("--weights", dest="weight_strategy", choices=("quality", "uniform", "rank_linear", "rank_squared"))
    p.add_argument("--out", type=Path, required=True, help="output fused detections.jsonl")

    p = sub.add_parser("eval", help="mAP of detections against ground truth")
    _common(p)
    p.add_argument("--detections", type=Path)
    p.add_argument("--gt", dest="ground_truth", type=Path)
    p.add_argument("--eval-iou", type=float, help="match threshold (default 0.5)")
    p.add_argument("--interpolation", choices=("all_point", "eleven_point"))
    p.add_argument("--out", type=Path, help="also write the JSON report here")

    p = sub.add_parser("sweep", help="per-model mAP across NMS thresholds")
    _common(p)
    p.add_argument("--detections", type=Path)
    p.add_argument("--gt", dest="ground_truth", type=Path)
    p.add_argument("--thresholds", type=str, help="comma separated, strictly increasing")
    p.add_argument("--out", type=Path, required=True, help="table output (.csv or .md)")

    p = sub.add_parser("grid", help="mAP for every confidence x weighting strategy")
    _common(p)
    p.add_argument("--detections", type=Path, help="post-NMS detections.jsonl")
    p.add_argument("--gt", dest="ground_truth", type=Path)
    p.add_argument("--ensemble", type=Path)
    p.add_argument("--wbf-iou", type=float)
    p.add_argument("--out", type=Path, required=True, help="table output (.csv or .md)")

    p = sub.add_parser("simulate", help="seeded synthetic detector outputs")
    _common(p)
    p.add_argument("--gt", dest="ground_truth", type=Path, help="ground truth to simulate against")
    p.add_argument("--images", type=int, help="synthesize this many ground-truth images instead")
    p.add_argument("--gt-out", type=Path, help="where to write synthesized ground truth")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", type=Path, required=True, help="output detections.jsonl")

    p = sub.add_parser("report", help="render a saved sweep/grid result JSON as a table")
    p.add_argument("--result", type=Path, required=True)
    p.add_argument("--format", choices=("csv", "markdown"), default="csv")
    p.add_argument("--out", type=Path, help="write here instead of stdout")
    return parser


def _merged_config(args: argparse.Namespace) -> RunConfig:
    cfg = RunConfig.load(args.config) if getattr(args, "config", None) else RunConfig()
    for name in ("nms_threshold", "wbf_iou", "conf_strategy", "weight_strategy", "eval_iou", "interpolation", "seed"):
        value = getattr(args, name, None)
        if value is not None:
            setattr(cfg, name, value)
    for name in ("detections", "ground_truth"):
        value = getattr(args, name, None)
        if value is not None:
            setattr(cfg, name, str(value))
    if getattr(args, "ensemble", None) is not None:
        cfg.ensemble = load_ensemble(args.ensemble)
    if getattr(args, "thresholds", None):
        try:
            cfg.sweep_thresholds = [float(t) for t in args.thresholds.split(",")]
        except ValueError:
            raise ValidationError(f"bad --thresholds {args.thresholds!r}") from None
    return cfg


def _ensemble(cfg: RunConfig) -> EnsembleSpec:
    if not cfg.ensemble:
        raise ValidationError("an ensemble (model ids and qualities) is required")
    try:
        return EnsembleSpec(tuple(ModelProfile(str(m["model_id"]), float(m["quality"])) for m in cfg.ensemble))
    except (KeyError, TypeError) as exc:
        raise ValidationError(f"bad ensemble entry: {exc}") from None


def _require(value, what: str):
    if value is None:
        raise ValidationError(f"missing {what}")
    return value


def _table_format(args: argparse.Namespace) -> str:
    if args.format:
        return args.format
    out = getattr(args, "out", None)
    return "markdown" if out is not None and out.suffix in (".md", ".markdown") else "csv"


def _write(path: Path, data: bytes) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(data)


def _echo_config(cfg: RunConfig, out: Path) -> None:
    _write(out.parent / EFFECTIVE_CONFIG, cfg.dumps())


def _eval_cfg(cfg: RunConfig) -> EvalConfig:
    return EvalConfig(cfg.eval_iou, cfg.interpolation)


def _report_rejects(rejects) -> None:
    for line_no, msg in rejects:
        print(f"skipped line {line_no}: {msg}", file=sys.stderr)


def cmd_nms(args, cfg: RunConfig) -> int:
    loaded = load_detections(_require(cfg.detections, "--detections"), strict=not args.lenient, classes=cfg.classes)
    _report_rejects(loaded.rejects)
    kept = nms_all(loaded.detections, NmsConfig(cfg.nms_threshold))
    _write(args.out, dumps_jsonl(detection_record(d) for d in kept))
    _echo_config(cfg, args.out)
    print(f"kept {len(kept)} of {len(loaded.detections)} detections")
    return 0


def cmd_fuse(args, cfg: RunConfig) -> int:
    ensemble = _ensemble(cfg)
    loaded = load_detections(_require(cfg.detections, "--detections"), strict=not args.lenient, classes=cfg.classes)
    _report_rejects(loaded.rejects)
    fusion = FusionConfig(cfg.wbf_iou, cfg.conf_strategy, cfg.weight_strategy)
    fused = fuse_dataset(loaded.detections, fusion, ensemble)
    _write(args.out, dumps_jsonl(detection_record(d) for d in fused))
    _echo_config(cfg, args.out)
    print(f"fused {len(loaded.detections)} detections into {len(fused)}")
    return 0


def cmd_eval(args, cfg: RunConfig) -> int:
    dets = load_detections(_require(cfg.detections, "--detections"), strict=not args.lenient, classes=cfg.classes)
    gt = load_ground_truth(_require(cfg.ground_truth, "--gt"), strict=not args.lenient, classes=cfg.classes)
    _report_rejects(dets.rejects + gt.rejects)
    report = mean_average_precision(dets.detections, gt.boxes, _eval_cfg(cfg))
    text = json.dumps(report.to_dict(cfg.classes), indent=2, sort_keys=True) + "\n"
    sys.stdout.write(f"mAP: {report.mAP:.4f}\n")
    sys.stdout.write(text)
    if args.out is not None:
        _write(args.out, text.encode("utf-8"))
        _echo_config(cfg, args.out)
    return 0


def _result_path(out: Path) -> Path:
    return out.with_name(out.stem + ".summary.json")


def cmd_sweep(args, cfg: RunConfig) -> int:
    if cfg.precomputed_sweep is not None:
        result = sweep_from_cells({float(t): row for t, row in cfg.precomputed_sweep.items()})
    else:
        dets = load_detections(_require(cfg.detections, "--detections"), strict=not args.lenient, classes=cfg.classes)
        gt = load_ground_truth(_require(cfg.ground_truth, "--gt"), strict=not args.lenient, classes=cfg.classes)
        _report_rejects(dets.rejects + gt.rejects)
        models = tuple(m["model_id"] for m in cfg.ensemble) if cfg.ensemble else None
        result = run_nms_sweep(
            SweepSpec(dets.by_model(), gt.boxes, tuple(cfg.sweep_thresholds), _eval_cfg(cfg), models)
        )
    _write(args.out, write_table(result.to_table(), _table_format(args)))
    summary = {"kind": "sweep", "table": _table_json(result.to_table()), **result.summary()}
    _write(_result_path(args.out), (json.dumps(summary, indent=2, sort_keys=True) + "\n").encode("utf-8"))
    _echo_config(cfg, args.out)
    sys.stdout.write(write_table(result.to_table(), "markdown").decode("utf-8"))
    sys.stdout.write(f"selected nms threshold: {result.selected_threshold}\n")
    return 0


def cmd_grid(args, cfg: RunConfig) -> int:
    if cfg.precomputed_grid is not None:
        baseline = cfg.baseline_map
        baseline_model = None
        if baseline is None and cfg.ensemble:
            best = max(cfg.ensemble, key=lambda m: float(m["quality"]))
            baseline, baseline_model = float(best["quality"]), str(best["model_id"])
        result = grid_from_cells(cfg.precomputed_grid, baseline, baseline_model)
    else:
        ensemble = _ensemble(cfg)
        dets = load_detections(_require(cfg.detections, "--detections"), strict=not args.lenient, classes=cfg.classes)
        gt = load_ground_truth(_require(cfg.ground_truth, "--gt"), strict=not args.lenient, classes=cfg.classes)
        _report_rejects(dets.rejects + gt.rejects)
        result = run_wbf_grid(
            GridSpec(
                ensemble,
                dets.detections,
                gt.boxes,
                tuple(cfg.conf_strategies),
                tuple(cfg.weight_strategies),
                cfg.wbf_iou,
                _eval_cfg(cfg),
                cfg.baseline_map,
            )
        )
    _write(args.out, write_table(result.to_table(), _table_format(args)))
    summary = {"kind": "grid", "table": _table_json(result.to_table()), **result.summary()}
    _write(_result_path(args.out), (json.dumps(summary, indent=2, sort_keys=True) + "\n").encode("utf-8"))
    _echo_config(cfg, args.out)
    sys.stdout.write(write_table(result.to_table(), "markdown").decode("utf-8"))
    sys.stdout.write(result.summary_text())
    return 0


def cmd_simulate(args, cfg: RunConfig) -> int:
    if cfg.simulation is not None:
        sim = SimSpec.from_dict({"seed": cfg.seed, **cfg.simulation})
        if args.seed is not None:
            sim = SimSpec(sim.models, args.seed, sim.n_classes)
    else:
        sim = SimSpec(default_detectors(), cfg.seed, len(cfg.classes))
    if cfg.ground_truth is not None:
        gt = load_ground_truth(cfg.ground_truth, strict=not args.lenient, classes=cfg.classes)
        _report_rejects(gt.rejects)
        boxes = gt.boxes
    elif args.images is not None:
        boxes = synthetic_ground_truth(args.images, sim.seed, sim.n_classes)
        if args.gt_out is not None:
            _write(args.gt_out, dumps_jsonl(ground_truth_record(g) for g in boxes))
    else:
        raise ValidationError("simulate needs --gt or --images")
    dets = simulate_detectors(boxes, sim)
    _write(args.out, dumps_jsonl(detection_record(d) for d in dets))
    cfg.simulation = {
        "seed": sim.seed,
        "n_classes": sim.n_classes,
        "models": [asdict(m) for m in sim.models],
    }
    _echo_config(cfg, args.out)
    print(f"wrote {len(dets)} detections for {len(sim.models)} models")
    return 0


def _table_json(table) -> dict:
    return {"header": list(table.header), "rows": [list(r) for r in table.rows]}


def cmd_report(args) -> int:
    data = json.loads(args.result.read_text(encoding="utf-8"))
    try:
        table = Table(tuple(data["table"]["header"]), tuple(tuple(r) for r in data["table"]["rows"]))
    except (KeyError, TypeError):
        raise ValidationError(f"{args.result}: not a sweep/grid summary") from None
    out = write_table(table, args.format)
    if args.out is not None:
        _write(args.out, out)
    else:
        sys.stdout.write(out.decode("utf-8"))
    return 0


COMMANDS = {
    "nms": cmd_nms,
    "fuse": cmd_fuse,
    "eval": cmd_eval,
    "sweep": cmd_sweep,
    "grid": cmd_grid,
    "simulate": cmd_simulate,
}


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command == "report":
            return cmd_report(args)
        cfg = _merged_config(args)
        return COMMANDS[args.command](args, cfg)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except (ValidationError, ValueError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
