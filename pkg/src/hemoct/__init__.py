"""Joint hematoma segmentation and multi-label sign classification on CT
slices, exercised on a bundled synthetic phantom dataset."""

from .ct_preprocess import (
    PreprocessConfig,
    WindowParams,
    center_foreground,
    preprocess,
    remove_artifacts,
    strip_skull,
    window_hu,
)
from .errors import ConfigError, DataError, EmptyImageError, HemoctError
from .estimators import CTPreprocessor, HematomaSegmenter, WaveletSignClassifier
from .losses_metrics import class_weights, dice_loss, iou_fscore, roc_auc, weighted_bce
from .models import ClsModelConfig, SegModelConfig, build_classifier, build_segmenter
from .phantom import PhantomSpec, generate_case, generate_dataset
from .wavelet import haar_dwt2, haar_idwt2, wavelet_pool

__version__ = "0.1.0"

__all__ = [
    "PreprocessConfig",
    "WindowParams",
    "window_hu",
    "remove_artifacts",
    "strip_skull",
    "center_foreground",
    "preprocess",
    "HemoctError",
    "ConfigError",
    "DataError",
    "EmptyImageError",
    "CTPreprocessor",
    "HematomaSegmenter",
    "WaveletSignClassifier",
    "class_weights",
    "weighted_bce",
    "dice_loss",
    "iou_fscore",
    "roc_auc",
    "SegModelConfig",
    "ClsModelConfig",
    "build_segmenter",
    "build_classifier",
    "PhantomSpec",
    "generate_case",
    "generate_dataset",
    "haar_dwt2",
    "haar_idwt2",
    "wavelet_pool",
]
