"""Reference sweep and grid values used as precomputed fixtures.

Used as precomputed cells to exercise threshold selection and grid summaries.
"""

REFERENCE_MODELS = ("VGG16", "ResNet50", "EfficientNet", "MobileNet")

# nms threshold -> model -> test mAP
REFERENCE_NMS_SWEEP: dict[float, dict[str, float]] = {
    0.35: {"VGG16": 0.7953, "ResNet50": 0.7222, "EfficientNet": 0.5821, "MobileNet": 0.6837},
    0.40: {"VGG16": 0.7991, "ResNet50": 0.7197, "EfficientNet": 0.6096, "MobileNet": 0.6754},
    0.45: {"VGG16": 0.7990, "ResNet50": 0.7252, "EfficientNet": 0.5875, "MobileNet": 0.6776},
    0.50: {"VGG16": 0.8004, "ResNet50": 0.7166, "EfficientNet": 0.5838, "MobileNet": 0.6649},
    0.55: {"VGG16": 0.8137, "ResNet50": 0.7428, "EfficientNet": 0.6028, "MobileNet": 0.6656},
    0.65: {"VGG16": 0.8049, "ResNet50": 0.7443, "EfficientNet": 0.5829, "MobileNet": 0.6598},
    0.70: {"VGG16": 0.8006, "ResNet50": 0.7292, "EfficientNet": 0.5925, "MobileNet": 0.6756},
    0.75: {"VGG16": 0.8073, "ResNet50": 0.7323, "EfficientNet": 0.6029, "MobileNet": 0.6840},
}

# standalone mAP at nms 0.55, as used for the quality weights
REFERENCE_QUALITIES: dict[str, float] = {
    "VGG": 0.814,
    "Resnet": 0.743,
    "MobileNet": 0.666,
    "EfficientNet": 0.603,
}

# conf strategy -> weight strategy -> ensemble mAP@0.5
REFERENCE_GRID: dict[str, dict[str, float]] = {
    "max": {"quality": 0.838, "uniform": 0.833, "rank_linear": 0.828, "rank_squared": 0.824},
    "avg": {"quality": 0.740, "uniform": 0.732, "rank_linear": 0.761, "rank_squared": 0.782},
    "box_and_model_avg": {"quality": 0.738, "uniform": 0.729, "rank_linear": 0.757, "rank_squared": 0.777},
    "absent_model_aware_avg": {"quality": 0.739, "uniform": 0.730, "rank_linear": 0.757, "rank_squared": 0.780},
}
