import itertools
from fractions import Fraction

import pytest
from hypothesis import given, settings

from conftest import multi_model_detections
from oracles import exact_iou
from wbfuse.boxes import BoundingBox, Detection, EnsembleSpec, ValidationError, iou, resolve_weights
from wbfuse.fusion import (
    Cluster,
    ConfStrategy,
    FusionConfig,
    cluster_detections,
    fuse_confidence,
    fuse_coordinates,
    fuse_dataset,
    weighted_boxes_fusion,
)

QUALITIES = {"VGG": 0.814, "ResNet": 0.743, "MobileNet": 0.666, "EfficientNet": 0.603}
SPEC = EnsembleSpec.from_qualities(QUALITIES)


def det(model, score, box, cls=0, image="img"):
    return Detection(image, model, cls, score, BoundingBox(*box))


def make_cluster(*members):
    c = Cluster(index=0, class_id=members[0][0].class_id)
    for d, w in members:
        c.add(d, w)
    return c


# two-contributor cluster shared by the confidence examples
VGG_DET = det("VGG", 0.8, (0.10, 0.10, 0.40, 0.40))
RES_DET = det("ResNet", 0.6, (0.12, 0.11, 0.41, 0.42))
PAIR = make_cluster((VGG_DET, 0.814), (RES_DET, 0.743))


def test_singleton_box_unchanged():
    d = det("VGG", 0.3, (0.2, 0.3, 0.4, 0.5))
    assert fuse_coordinates(make_cluster((d, 0.814))) == d.box


def test_equal_members_average_midpoint():
    a, b = det("a", 0.5, (0.10, 0.1, 0.5, 0.5)), det("b", 0.5, (0.20, 0.1, 0.5, 0.5))
    assert fuse_coordinates(make_cluster((a, 1.0), (b, 1.0))).x1 == pytest.approx(0.15, abs=1e-15)


def test_weighted_coordinate_arithmetic():
    a = det("VGG", 0.9, (0.10, 0.1, 0.5, 0.5))
    b = det("ResNet", 0.5, (0.20, 0.1, 0.5, 0.5))
    # (0.9*0.814*0.10 + 0.5*0.743*0.20) / (0.9*0.814 + 0.5*0.743)
    expected = float(
        (Fraction("0.07326") + Fraction("0.0743")) / (Fraction("0.7326") + Fraction("0.3715"))
    )
    assert expected == pytest.approx(0.133647, abs=1e-6)
    assert fuse_coordinates(make_cluster((a, 0.814), (b, 0.743))).x1 == pytest.approx(expected, abs=1e-12)


@pytest.mark.parametrize(
    "strategy, expected",
    [
        ("max", 0.8),
        ("avg", 0.7045600513808606),
        ("box_and_model_avg", 0.3881811748053786),
        ("absent_model_aware_avg", 0.3881811748053786),
    ],
)
def test_confidence_arithmetic(strategy, expected):
    weights = resolve_weights("quality", SPEC)
    assert fuse_confidence(PAIR, strategy, SPEC, weights) == pytest.approx(expected, abs=1e-12)


def test_max_normalizes_by_whole_ensemble():
    weights = resolve_weights("quality", SPEC)
    lone = make_cluster((det("EfficientNet", 0.9, (0.1, 0.1, 0.2, 0.2)), 0.603))
    assert fuse_confidence(lone, "max", SPEC, weights) == pytest.approx(0.9 * 0.603 / 0.814)


def test_box_and_model_avg_counts_models_once():
    weights = {"a": 1.0, "b": 3.0}
    spec = EnsembleSpec.from_qualities({"a": 0.5, "b": 0.6})
    c = make_cluster(
        (det("a", 0.6, (0.1, 0.1, 0.3, 0.3)), 1.0),
        (det("a", 0.4, (0.1, 0.1, 0.31, 0.3)), 1.0),
    )
    avg = 0.5
    assert fuse_confidence(c, "avg", spec, weights) == pytest.approx(avg)
    assert fuse_confidence(c, "box_and_model_avg", spec, weights) == pytest.approx(avg * 1 / 4)
    assert fuse_confidence(c, "absent_model_aware_avg", spec, weights) == pytest.approx(1.0 / 5)


def test_cluster_single_box():
    clusters = cluster_detections([VGG_DET], {"VGG": 1.0}, 0.5)
    assert len(clusters) == 1 and len(clusters[0].members) == 1


def test_cluster_identical_boxes_from_two_models():
    a, b = det("VGG", 0.8, (0.1, 0.1, 0.4, 0.4)), det("ResNet", 0.7, (0.1, 0.1, 0.4, 0.4))
    clusters = cluster_detections([a, b], resolve_weights("quality", SPEC), 0.5)
    assert [len(c.members) for c in clusters] == [2]


def _brute_clusters(dets, weights, thr):
    """Two-box clustering by definition: merge iff same class and iou > thr."""
    assert len(dets) == 2
    a, b = dets
    if a.class_id == b.class_id and exact_iou(a.box.as_tuple(), b.box.as_tuple()) > Fraction(thr):
        return 1
    return 2


def test_cluster_low_overlap_pair_stays_apart():
    a = det("VGG", 0.8, (0.0, 0.0, 0.5, 0.5))
    b = det("ResNet", 0.7, (0.27, 0.0, 0.77, 0.5))
    assert iou(a.box, b.box) == pytest.approx(0.23 / 0.77)
    weights = resolve_weights("quality", SPEC)
    assert len(cluster_detections([a, b], weights, 0.5)) == _brute_clusters([a, b], weights, 0.5) == 2


def test_cluster_compares_against_running_fused_box():
    # c overlaps the seed a only weakly, but overlaps the a+b average enough
    a = det("VGG", 0.9, (0.00, 0.0, 0.10, 1.0))
    b = det("ResNet", 0.9, (0.04, 0.0, 0.14, 1.0))
    c = det("MobileNet", 0.9, (0.07, 0.0, 0.17, 1.0))
    w = {"VGG": 1.0, "ResNet": 1.0, "MobileNet": 1.0}
    order = {"VGG": 0, "ResNet": 1, "MobileNet": 2}
    clusters = cluster_detections([a, b, c], w, 0.3, order)
    fused_ab = BoundingBox(0.02, 0.0, 0.12, 1.0)
    assert iou(fused_ab, c.box) > 0.3 >= iou(a.box, c.box)
    assert [len(cl.members) for cl in clusters] == [3]


def test_classes_never_merge():
    a, b = det("VGG", 0.8, (0.1, 0.1, 0.4, 0.4), cls=0), det("ResNet", 0.8, (0.1, 0.1, 0.4, 0.4), cls=1)
    assert len(cluster_detections([a, b], resolve_weights("uniform", SPEC), 0.5)) == 2


def test_wbf_empty():
    assert weighted_boxes_fusion([], FusionConfig(), SPEC) == []


def test_wbf_single_model_identity():
    spec = EnsembleSpec.from_qualities({"m": 0.7})
    ds = [det("m", 0.9, (0.0, 0.0, 0.2, 0.2)), det("m", 0.4, (0.5, 0.5, 0.8, 0.9)), det("m", 0.6, (0.3, 0.0, 0.5, 0.2))]
    out = weighted_boxes_fusion(ds, FusionConfig(0.5, "max", "uniform"), spec)
    assert [(f.box, f.score) for f in out] == [(d.box, d.score) for d in sorted(ds, key=lambda d: -d.score)]


def test_wbf_two_contributors_with_max():
    out = weighted_boxes_fusion([RES_DET, VGG_DET], FusionConfig(0.5, "max", "quality"), SPEC)
    assert len(out) == 1
    f = out[0]
    assert f.score == pytest.approx(0.8, abs=1e-12)
    sw = [0.8 * 0.814, 0.6 * 0.743]
    for k in range(4):
        coord = (sw[0] * VGG_DET.box.as_tuple()[k] + sw[1] * RES_DET.box.as_tuple()[k]) / sum(sw)
        assert f.box.as_tuple()[k] == pytest.approx(coord, abs=1e-12)
    assert f.model_ids == {"VGG", "ResNet"} and f.n_boxes == 2


def test_wbf_unknown_model():
    with pytest.raises(ValidationError, match="unknown model"):
        weighted_boxes_fusion([det("YOLO", 0.5, (0.1, 0.1, 0.2, 0.2))], FusionConfig(), SPEC)


def test_fuse_dataset_keeps_images_apart():
    a = det("VGG", 0.8, (0.1, 0.1, 0.4, 0.4), image="x")
    b = det("ResNet", 0.8, (0.1, 0.1, 0.4, 0.4), image="y")
    assert len(fuse_dataset([a, b], FusionConfig(), SPEC)) == 2


def test_all_models_once_collapses_variants():
    boxes = [(0.1, 0.1, 0.4, 0.4), (0.11, 0.1, 0.4, 0.41), (0.1, 0.12, 0.41, 0.4), (0.12, 0.1, 0.4, 0.4)]
    ds = [det(m, s, b) for m, s, b in zip(QUALITIES, (0.9, 0.7, 0.5, 0.3), boxes)]
    weights = resolve_weights("quality", SPEC)
    (c,) = cluster_detections(ds, weights, 0.5, {m: i for i, m in enumerate(SPEC.model_ids)})
    avg = fuse_confidence(c, "avg", SPEC, weights)
    assert fuse_confidence(c, "box_and_model_avg", SPEC, weights) == pytest.approx(avg, abs=1e-12)
    assert fuse_confidence(c, "absent_model_aware_avg", SPEC, weights) == pytest.approx(avg, abs=1e-12)


@settings(max_examples=100, deadline=None)
@given(multi_model_detections(models=tuple(QUALITIES), n_max=8))
def test_input_order_does_not_matter(ds):
    cfg = FusionConfig(0.5, "max", "quality")
    ref = weighted_boxes_fusion(ds, cfg, SPEC)
    for perm in itertools.islice(itertools.permutations(ds), 5):
        assert weighted_boxes_fusion(list(perm), cfg, SPEC) == ref
    assert weighted_boxes_fusion(ds[::-1], cfg, SPEC) == ref


def test_strategy_enum_round_trip():
    assert FusionConfig(conf_strategy="avg").conf_strategy is ConfStrategy.AVG
    with pytest.raises(ValueError):
        FusionConfig(conf_strategy="median")
