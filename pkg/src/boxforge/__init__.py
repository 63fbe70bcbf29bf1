"""boxforge: detection post-processing and evaluation.

Score calibration, test-time scale/flip fusion, NMS / Soft-NMS / box
voting, rank-weighted model ensembling, feature-pyramid arithmetic,
training-plan helpers and LEVEL 1/2 AP evaluation.
"""
__version__ = "0.1.0"

from .geometry import BBox, ImageShape, area, clip, hflip, iou, rescale
from .kernels import BACKEND
from .suppression import CLASSES, Detection, SuppressionConfig, box_voting, nms, score_filter, soft_nms
from .fusion import (
    CalibrationConfig,
    EnsembleConfig,
    ModelRun,
    ScaleAwareConfig,
    calibrate_scores,
    ensemble,
    linear_reweight,
    merge_flip,
    merge_scales,
    scale_aware_decay,
)
from .pyramid import AnchorSpec, LevelAssignConfig, assign_level, generate_anchors, relative_scale, scale_report
from .sampling import (
    ImageRecord,
    LrScheduleConfig,
    MultiScaleCropConfig,
    SamplePlanConfig,
    build_sample_plan,
    lr_at,
    plan_crop,
)
from .evaluation import EvalConfig, EvalReport, GroundTruthBox, average_precision, evaluate, match, pr_curve
