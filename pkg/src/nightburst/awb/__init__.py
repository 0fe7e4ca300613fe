"""Low-light automatic white balance.

Error metrics (angular, reproduction, anisotropic reproduction), RBF sensor
calibration with Gauss-Newton inversion, log-chroma histogram features, and
a trainable histogram-correlation illuminant estimator.
"""

from .metrics import (
    angular_error,
    anisotropic_reproduction_error,
    reproduction_error,
)
from .calibration import CalibrationMap, rbf_fit, rbf_forward, rbf_inverse
from .features import (
    log_brightness,
    make_thumbnail,
    pixel_edge_histograms,
    rgb_to_uv,
    uv_to_illuminant_rgb,
)
from .model import (
    ChromaHistogramModel,
    IlluminantEstimate,
    TrainConfig,
    cross_validate,
    load_model,
    predict_illuminant,
    save_model,
    train_model,
)
from .dataset import AwbExample, generate_awb_dataset

__all__ = [
    "angular_error",
    "reproduction_error",
    "anisotropic_reproduction_error",
    "CalibrationMap",
    "rbf_fit",
    "rbf_forward",
    "rbf_inverse",
    "log_brightness",
    "make_thumbnail",
    "pixel_edge_histograms",
    "rgb_to_uv",
    "uv_to_illuminant_rgb",
    "ChromaHistogramModel",
    "IlluminantEstimate",
    "TrainConfig",
    "train_model",
    "predict_illuminant",
    "cross_validate",
    "save_model",
    "load_model",
    "AwbExample",
    "generate_awb_dataset",
]
