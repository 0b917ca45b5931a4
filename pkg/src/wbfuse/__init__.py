"""Detection ensemble post-processing: NMS, weighted boxes fusion and VOC-style mAP."""

from .boxes import (
    DEFAULT_CLASSES,
    BoundingBox,
    Detection,
    EnsembleSpec,
    ModelProfile,
    ValidationError,
    WeightStrategy,
    iou,
    resolve_weights,
    validate_detection,
)
from .evaluation import (
    EvalConfig,
    EvalReport,
    GroundTruthBox,
    Interpolation,
    average_precision,
    match_detections,
    mean_average_precision,
    relative_improvement,
)
from .fusion import (
    Cluster,
    ConfStrategy,
    FusedDetection,
    FusionConfig,
    cluster_detections,
    fuse_confidence,
    fuse_coordinates,
    fuse_dataset,
    weighted_boxes_fusion,
)
from .nms import NmsConfig, nms, nms_all

__all__ = [
    "DEFAULT_CLASSES",
    "BoundingBox",
    "Cluster",
    "ConfStrategy",
    "Detection",
    "EnsembleSpec",
    "EvalConfig",
    "EvalReport",
    "FusedDetection",
    "FusionConfig",
    "GroundTruthBox",
    "Interpolation",
    "ModelProfile",
    "NmsConfig",
    "ValidationError",
    "WeightStrategy",
    "average_precision",
    "cluster_detections",
    "fuse_confidence",
    "fuse_coordinates",
    "fuse_dataset",
    "iou",
    "match_detections",
    "mean_average_precision",
    "nms",
    "nms_all",
    "relative_improvement",
    "resolve_weights",
    "validate_detection",
    "weighted_boxes_fusion",
]
