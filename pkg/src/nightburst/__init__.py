"""nightburst: a low-light burst photography processing engine.

Stages: motion metering (exposure/gain/frame-count selection from predicted
scene motion), tile alignment, motion-adaptive Fourier-domain merging,
learned low-light white balance, and nighttime tone mapping.
"""

__version__ = "0.1.0"

from .errors import InputError, NightburstError, NumericError, StageError
from .raw_model import (
    BurstManifest,
    GyroTrace,
    LinearImage,
    NoiseModel,
    RawFrame,
    build_pyramid,
    load_burst,
    normalize,
)
from .motion_metering import (
    CapturePlan,
    ExposureSchedule,
    Gmm,
    MeteringParams,
    MotionField,
    MotionSample,
    bounded_flow,
    detect_stability,
    fit_gmm,
    plan_capture,
    predict_min_motion,
    refine_field,
    weighted_average,
)
from .burst_align import AlignParams, ReferenceChoice, TileAlignment, align_burst, select_reference
from .burst_merge import (
    MergeParams,
    MergedRaw,
    MismatchMap,
    merge_fourier,
    mismatch_maps,
    spatial_denoise,
    strength_factor,
)
from .tonemap import (
    FinishOptions,
    SceneStats,
    ToneParams,
    finish,
    highlight_gain,
    shadow_gain,
)
from .pipeline import PipelineConfig, run_pipeline

__all__ = [
    "__version__",
    "NightburstError", "InputError", "NumericError", "StageError",
    "RawFrame", "NoiseModel", "LinearImage", "GyroTrace", "BurstManifest",
    "load_burst", "normalize", "build_pyramid",
    "MeteringParams", "MotionField", "MotionSample", "Gmm", "ExposureSchedule",
    "CapturePlan", "bounded_flow", "refine_field", "weighted_average",
    "fit_gmm", "predict_min_motion", "detect_stability", "plan_capture",
    "AlignParams", "ReferenceChoice", "TileAlignment",
    "select_reference", "align_burst",
    "MergeParams", "MismatchMap", "MergedRaw",
    "mismatch_maps", "strength_factor", "merge_fourier", "spatial_denoise",
    "ToneParams", "FinishOptions", "SceneStats",
    "shadow_gain", "highlight_gain", "finish",
    "PipelineConfig", "run_pipeline",
]
