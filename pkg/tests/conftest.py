from __future__ import annotations

import sys
from pathlib import Path

import pytest
from hypothesis import strategies as st

sys.path.insert(0, str(Path(__file__).parent))

from wbfuse.boxes import BoundingBox, Detection

ACCEPTANCE_RESULTS: list[tuple[str, bool, str]] = []


@st.composite
def boxes(draw, min_side=0.01):
    x1 = draw(st.floats(0.0, 1.0 - min_side))
    y1 = draw(st.floats(0.0, 1.0 - min_side))
    x2 = draw(st.floats(x1 + min_side, 1.0))
    y2 = draw(st.floats(y1 + min_side, 1.0))
    return BoundingBox(x1, y1, x2, y2)


@st.composite
def clustered_boxes(draw, n_min=0, n_max=8):
    """Boxes drawn around a few centres so that overlaps are common."""
    centres = draw(st.lists(st.tuples(st.floats(0.2, 0.8), st.floats(0.2, 0.8)), min_size=1, max_size=3))
    n = draw(st.integers(n_min, n_max))
    out = []
    for _ in range(n):
        cx, cy = draw(st.sampled_from(centres))
        dx, dy = draw(st.floats(-0.05, 0.05)), draw(st.floats(-0.05, 0.05))
        hw, hh = draw(st.floats(0.05, 0.15)), draw(st.floats(0.05, 0.15))
        out.append(BoundingBox.clipped([cx + dx - hw, cy + dy - hh, cx + dx + hw, cy + dy + hh]))
    return out


scores = st.floats(0.01, 1.0)


@st.composite
def single_model_detections(draw, n_max=8, n_classes=2):
    bxs = draw(clustered_boxes(n_max=n_max))
    return [
        Detection("img", "m0", draw(st.integers(0, n_classes - 1)), draw(scores), b)
        for b in bxs
    ]


@st.composite
def multi_model_detections(draw, models=("a", "b", "c", "d"), n_max=10, n_classes=2):
    bxs = draw(clustered_boxes(n_max=n_max))
    return [
        Detection("img", draw(st.sampled_from(models)), draw(st.integers(0, n_classes - 1)), draw(scores), b)
        for b in bxs
    ]


def record_acceptance(name: str, passed: bool, detail: str = "") -> None:
    ACCEPTANCE_RESULTS.append((name, passed, detail))


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for name, passed, detail in ACCEPTANCE_RESULTS:
        status = "PASS" if passed else "FAIL"
        terminalreporter.write_line(f"[{status}] {name}" + (f" -- {detail}" if detail else ""))


@pytest.fixture
def acceptance():
    return record_acceptance
