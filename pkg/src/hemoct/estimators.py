"""sklearn-style wrappers so the pipeline composes with the wider ecosystem.

CTPreprocessor is a stateless transform over stacks of HU slices;
HematomaSegmenter and WaveletSignClassifier wrap the torch training loops
behind fit/predict with get_params/set_params from BaseEstimator.
"""

import numpy as np
import torch
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.exceptions import NotFittedError

from .ct_preprocess import PreprocessConfig, WindowParams, preprocess
from .errors import ShapeError
from .losses_metrics import iou_fscore
from .models import cls_forward, seg_forward
from .training_pipeline import CaseSet, TrainConfig, train_classifier, train_segmentation


def _check_images(X, name="X"):
    X = np.asarray(X)
    if X.ndim != 3:
        raise ShapeError(f"{name} must be N x H x W, got shape {X.shape}")
    if not np.all(np.isfinite(X)):
        raise ShapeError(f"{name} contains non-finite values")
    return X


def _as_caseset(images, masks=None, labels=None):
    n = images.shape[0]
    if masks is None:
        masks = np.zeros_like(images, dtype=np.float32)
    if labels is None:
        labels = np.zeros((n, 4), dtype=np.int64)
    ids = [f"case{i:05d}" for i in range(n)]
    return CaseSet(
        images=images.astype(np.float32),
        masks=np.asarray(masks, dtype=np.float32),
        labels=np.asarray(labels, dtype=np.int64),
        patient_ids=list(ids),
        locations=["putamen"] * n,
        case_ids=ids,
    )


class CTPreprocessor(BaseEstimator, TransformerMixin):
    """Stateless transform: HU stacks -> preprocessed intensity stacks."""

    def __init__(self, window_a=0.0, window_b=80.0, noise_removal=True,
                 skull_strip=True, centering=True, foreground_threshold=10.0,
                 skull_threshold=250.0):
        self.window_a = window_a
        self.window_b = window_b
        self.noise_removal = noise_removal
        self.skull_strip = skull_strip
        self.centering = centering
        self.foreground_threshold = foreground_threshold
        self.skull_threshold = skull_threshold

    def _config(self):
        return PreprocessConfig(
            window=WindowParams(self.window_a, self.window_b),
            enable_noise_removal=self.noise_removal,
            enable_skull_strip=self.skull_strip,
            enable_centering=self.centering,
            foreground_threshold=self.foreground_threshold,
            skull_threshold=self.skull_threshold,
        )

    def fit(self, X, y=None):
        self._config()  # validate parameters
        return self

    def transform(self, X):
        X = _check_images(X)
        cfg = self._config()
        return np.stack([preprocess(x, cfg) for x in X])


class HematomaSegmenter(BaseEstimator):
    """U-Net segmenter behind fit/predict; X in [0, 1] (or [0, 255]), y masks."""

    def __init__(self, widths=(16, 32, 64, 128), epochs=10, batch_size=8,
                 learning_rate=1e-3, weight_decay=0.0, seed=0, test_fraction=0.2):
        self.widths = widths
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.weight_decay = weight_decay
        self.seed = seed
        self.test_fraction = test_fraction

    @staticmethod
    def _normalize(X):
        X = _check_images(X)
        if X.max() > 1.5:
            X = X / 255.0
        return X.astype(np.float32)

    def fit(self, X, y):
        X = self._normalize(X)
        y = _check_images(np.asarray(y), "y")
        if X.shape != y.shape:
            raise ShapeError(f"X shape {X.shape} != y shape {y.shape}")
        data = _as_caseset(X, masks=(y > 0.5))
        n_test = max(1, int(round(self.test_fraction * len(data))))
        rng = np.random.default_rng(self.seed)
        order = rng.permutation(len(data))
        test_ids = [data.case_ids[i] for i in order[:n_test]]
        train_ids = [data.case_ids[i] for i in order[n_test:]]
        cfg = TrainConfig(
            stage="segmentation",
            epochs=self.epochs,
            batch_size=self.batch_size,
            learning_rate=self.learning_rate,
            weight_decay=self.weight_decay,
            seed=self.seed,
            seg_widths=tuple(self.widths),
        )
        self.model_, self.record_ = train_segmentation(cfg, (train_ids, test_ids), data)
        return self

    def _require_fitted(self):
        if not hasattr(self, "model_"):
            raise NotFittedError("call fit before predict")

    def predict_proba(self, X):
        self._require_fitted()
        X = self._normalize(X)
        with torch.no_grad():
            probs = seg_forward(self.model_, torch.from_numpy(X).unsqueeze(1))
        return probs[:, 0].numpy()

    def predict(self, X, threshold=0.5):
        return (self.predict_proba(X) >= threshold).astype(np.int64)

    def score(self, X, y):
        """Mean IoU against ground-truth masks."""
        preds = self.predict(X)
        y = np.asarray(y)
        return float(np.mean([iou_fscore(p, t)[0] for p, t in zip(preds, y)]))


class WaveletSignClassifier(BaseEstimator):
    """Multi-label sign classifier; optionally fuses a fitted segmenter's
    frozen encoder features."""

    def __init__(self, widths=(16, 32, 64, 128), pooling_mode="wavelet_multiresolution",
                 epochs=12, batch_size=8, learning_rate=1e-3, weight_decay=0.0,
                 seed=0, test_fraction=0.2, use_weighted_loss=True, segmenter=None):
        self.widths = widths
        self.pooling_mode = pooling_mode
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.weight_decay = weight_decay
        self.seed = seed
        self.test_fraction = test_fraction
        self.use_weighted_loss = use_weighted_loss
        self.segmenter = segmenter

    def _seg_model(self):
        if self.segmenter is None:
            return None
        if isinstance(self.segmenter, HematomaSegmenter):
            self.segmenter._require_fitted()
            return self.segmenter.model_
        return self.segmenter  # raw UNet

    def fit(self, X, Y):
        X = HematomaSegmenter._normalize(X)
        Y = np.asarray(Y)
        if Y.ndim != 2 or Y.shape[0] != X.shape[0]:
            raise ShapeError(f"Y must be N x C with N={X.shape[0]}, got {Y.shape}")
        seg_model = self._seg_model()
        data = _as_caseset(X, labels=(Y > 0.5))
        n_test = max(1, int(round(self.test_fraction * len(data))))
        rng = np.random.default_rng(self.seed)
        order = rng.permutation(len(data))
        test_ids = [data.case_ids[i] for i in order[:n_test]]
        train_ids = [data.case_ids[i] for i in order[n_test:]]
        cfg = TrainConfig(
            stage="classification",
            epochs=self.epochs,
            batch_size=self.batch_size,
            learning_rate=self.learning_rate,
            weight_decay=self.weight_decay,
            seed=self.seed,
            use_weighted_loss=self.use_weighted_loss,
            pooling_mode=self.pooling_mode,
            fuse_encoder_features=seg_model is not None,
            cls_widths=tuple(self.widths),
        )
        if seg_model is None:
            # stage 2 contract needs a segmenter object; build a frozen dummy
            from .models import build_segmenter

            torch.manual_seed(self.seed)
            seg_model = build_segmenter()
            cfg.fuse_encoder_features = False
        self.model_, self.record_ = train_classifier(cfg, (train_ids, test_ids), data, seg_model)
        self.seg_model_ = seg_model if cfg.fuse_encoder_features else None
        return self

    def predict_proba(self, X):
        if not hasattr(self, "model_"):
            raise NotFittedError("call fit before predict")
        X = HematomaSegmenter._normalize(X)
        xb = torch.from_numpy(X).unsqueeze(1)
        with torch.no_grad():
            feats = None
            if self.model_.cfg.fuse_encoder_features:
                from .models import encoder_features

                feats = encoder_features(self.seg_model_, xb)
            probs = cls_forward(self.model_, xb, feats)
        return probs.numpy()

    def predict(self, X, threshold=0.5):
        return (self.predict_proba(X) >= threshold).astype(np.int64)
