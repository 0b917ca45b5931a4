"""Re-derive the summary numbers from the published sweep and grid tables."""

from wbfuse.harness import grid_from_cells, sweep_from_cells
from wbfuse.reference import REFERENCE_GRID, REFERENCE_NMS_SWEEP, REFERENCE_QUALITIES


def main() -> int:
    sweep = sweep_from_cells(REFERENCE_NMS_SWEEP)
    print(", ".join(sweep.to_table().header))
    for t in sweep.thresholds:
        print(f"  {t:.2f}  mean mAP {sweep.mean_map(t):.6f}")
    print(f"best threshold per model: {sweep.best_per_model}")
    print(f"threshold with the highest mean: {sweep.selected_threshold}")

    baseline_model = max(REFERENCE_QUALITIES, key=REFERENCE_QUALITIES.get)
    grid = grid_from_cells(REFERENCE_GRID, REFERENCE_QUALITIES[baseline_model], baseline_model)
    print(grid.summary_text())
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
