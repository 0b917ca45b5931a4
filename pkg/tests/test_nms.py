import pytest
from hypothesis import given, settings

from conftest import single_model_detections
from oracles import subset_nms
from wbfuse.boxes import BoundingBox, Detection, ValidationError, iou
from wbfuse.nms import NmsConfig, nms, nms_all


def det(score, box, cls=0, image="img", model="m0"):
    return Detection(image, model, cls, score, BoundingBox(*box))


A_BOX = (0.0, 0.0, 0.5, 0.5)
B_BOX = (0.125, 0.0, 0.625, 0.5)  # iou with A_BOX = 0.6


def test_disjoint_boxes_survive_any_threshold():
    ds = [det(0.9, (0, 0, 0.1, 0.1)), det(0.8, (0.5, 0.5, 0.9, 0.9))]
    for t in (0.05, 0.5, 0.95):
        assert nms(ds, NmsConfig(t)) == ds


def test_overlapping_pair_keeps_higher_score():
    a, b = det(0.9, A_BOX), det(0.8, B_BOX)
    assert iou(a.box, b.box) == pytest.approx(0.6)
    items = [(0.9, 0, a.box), (0.8, 0, b.box)]
    assert subset_nms(items, 0.55, iou) == {0}
    assert nms([b, a], NmsConfig(0.55)) == [a]


def test_classes_are_independent():
    a, b = det(0.9, (0, 0, 0.5, 0.5), cls=0), det(0.8, (0.0, 0.0, 0.5, 0.45), cls=1)
    assert iou(a.box, b.box) == pytest.approx(0.9)
    assert nms([a, b], NmsConfig(0.55)) == [a, b]


def test_iou_equal_to_threshold_is_kept():
    a, b = det(0.9, A_BOX), det(0.8, B_BOX)
    t = iou(a.box, b.box)
    assert nms([a, b], NmsConfig(t)) == [a, b]


def test_heterogeneous_batch():
    with pytest.raises(ValidationError, match="heterogeneous"):
        nms([det(0.9, A_BOX), det(0.8, B_BOX, model="m1")])
    with pytest.raises(ValidationError, match="heterogeneous"):
        nms([det(0.9, A_BOX), det(0.8, B_BOX, image="other")])


def test_score_ties_resolved_by_coordinates():
    a, b = det(0.7, B_BOX), det(0.7, A_BOX)
    assert nms([a, b]) == [b]
    assert nms([b, a]) == [b]


def test_threshold_must_be_open_interval():
    for t in (0.0, 1.0, -0.2):
        with pytest.raises(ValidationError):
            NmsConfig(t)


def test_nms_all_groups_by_image_and_model():
    ds = [det(0.9, A_BOX), det(0.8, B_BOX), det(0.8, B_BOX, model="m1"), det(0.5, A_BOX, image="j")]
    kept = nms_all(ds)
    assert len(kept) == 3


def test_greedy_is_not_threshold_monotone():
    # A kills B at 0.6, which frees C; at 0.7 B survives and kills C.
    a = det(0.9, (0.0, 0.0, 0.10, 1.0))
    b = det(0.8, (0.02, 0.0, 0.12, 1.0))
    c = det(0.7, (0.03, 0.0, 0.13, 1.0))
    assert [iou(a.box, b.box), iou(b.box, c.box), iou(a.box, c.box)] == pytest.approx([8 / 12, 9 / 11, 7 / 13])
    low = set(nms([a, b, c], NmsConfig(0.6)))
    high = set(nms([a, b, c], NmsConfig(0.7)))
    assert low == {a, c} and high == {a, b}
    assert not low <= high


@settings(max_examples=200, deadline=None)
@given(single_model_detections(n_max=7))
def test_matches_subset_enumeration_oracle(ds):
    ordered = sorted(ds, key=lambda d: (-d.score, d.box.as_tuple()))
    items = [(d.score, d.class_id, d.box) for d in ordered]
    expected = {ordered[i] for i in subset_nms(items, 0.55, iou)}
    assert set(nms(ds, NmsConfig(0.55))) == expected
