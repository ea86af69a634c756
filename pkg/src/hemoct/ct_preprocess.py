"""Deterministic slice-level CT preprocessing.

Stages: HU windowing, artifact removal (largest connected component),
skull stripping (bright-bone threshold + 1px dilation), and integer-pixel
centering of the foreground. All stages are pure functions on 2D arrays
and preserve shape; intensities stay float until exported.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .errors import ConfigError, DataError, EmptyImageError, ShapeError

# 8-connectivity for components and the dilation ring
_STRUCT8 = np.ones((3, 3), dtype=bool)


@dataclass(frozen=True)
class WindowParams:
    """HU window [a, b] mapped linearly onto [0, 255]."""

    a: float = 0.0
    b: float = 80.0

    def __post_init__(self):
        if not (np.isfinite(self.a) and np.isfinite(self.b)):
            raise ConfigError("window bounds must be finite")
        if not self.a < self.b:
            raise ConfigError(f"window requires a < b, got a={self.a}, b={self.b}")


@dataclass(frozen=True)
class PreprocessConfig:
    window: WindowParams = field(default_factory=WindowParams)
    enable_noise_removal: bool = True
    enable_skull_strip: bool = True
    enable_centering: bool = True
    foreground_threshold: float = 10.0
    skull_threshold: float = 250.0

    def __post_init__(self):
        if not 0.0 < self.foreground_threshold < 255.0:
            raise ConfigError("foreground_threshold must lie in (0, 255)")
        if not 0.0 < self.skull_threshold <= 255.0:
            raise ConfigError("skull_threshold must lie in (0, 255]")


def _as_2d(arr, name):
    a = np.asarray(arr)
    if a.ndim != 2:
        raise ShapeError(f"{name} must be 2D, got shape {a.shape}")
    return a


def window_hu(hu, params=WindowParams()):
    """Map HU values through the piecewise window: 0 below a, 255 above b,
    linear in between. Output is float64, not rounded."""
    hu = _as_2d(hu, "hu slice").astype(np.float64)
    if not np.all(np.isfinite(hu)):
        raise DataError("HU slice contains non-finite values")
    a, b = params.a, params.b
    out = (hu - a) / (b - a) * 255.0
    out[hu < a] = 0.0
    out[hu > b] = 255.0
    return out


def remove_artifacts(img, foreground_threshold=10.0):
    """Keep only the largest 8-connected above-threshold component (the head).

    Other components are zeroed; below-threshold pixels survive only inside
    the kept component's bounding box. Ties on size break by smallest
    top-left bounding-box coordinate.
    """
    img = _as_2d(img, "image").astype(np.float64)
    fg = img > foreground_threshold
    labels, n = ndimage.label(fg, structure=_STRUCT8)
    if n == 0:
        raise EmptyImageError("no pixel above foreground threshold")
    slices = ndimage.find_objects(labels)
    counts = ndimage.sum_labels(fg, labels, index=np.arange(1, n + 1))
    order = sorted(
        range(n),
        key=lambda i: (-counts[i], slices[i][0].start, slices[i][1].start),
    )
    keep = order[0] + 1
    out = np.zeros_like(img)
    box = slices[keep - 1]
    out[box] = img[box]
    out[(labels != keep) & fg] = 0.0
    return out


def strip_skull(img, skull_threshold=250.0):
    """Zero pixels at or above the bone threshold plus a 1-pixel dilation ring."""
    img = _as_2d(img, "image").astype(np.float64)
    bone = img >= skull_threshold
    if bone.all():
        raise EmptyImageError("entire image at or above skull threshold")
    ring = ndimage.binary_dilation(bone, structure=_STRUCT8)
    out = img.copy()
    out[ring] = 0.0
    return out


def translate(img, dy, dx):
    """Integer-pixel shift; pixels moved out are dropped, vacated ones are 0."""
    img = _as_2d(img, "image")
    h, w = img.shape
    out = np.zeros_like(img)
    src_y = slice(max(0, -dy), min(h, h - dy))
    dst_y = slice(max(0, dy), min(h, h + dy))
    src_x = slice(max(0, -dx), min(w, w - dx))
    dst_x = slice(max(0, dx), min(w, w + dx))
    if src_y.start < src_y.stop and src_x.start < src_x.stop:
        out[dst_y, dst_x] = img[src_y, src_x]
    return out


def center_foreground(img):
    """Translate so the nonzero-pixel centroid lands on (H//2, W//2).

    Integer-pixel shift, no interpolation; pixels shifted out are dropped.
    Returns (shifted image, (dy, dx)).
    """
    img = _as_2d(img, "image").astype(np.float64)
    ys, xs = np.nonzero(img)
    if ys.size == 0:
        raise EmptyImageError("cannot center an all-zero image")
    h, w = img.shape
    # round half-up for determinism
    cy = int(np.floor(ys.mean() + 0.5))
    cx = int(np.floor(xs.mean() + 0.5))
    dy = h // 2 - cy
    dx = w // 2 - cx
    return translate(img, dy, dx), (dy, dx)


def preprocess(hu, cfg=PreprocessConfig()):
    """Window then run the enabled stages in order:
    artifact removal -> skull strip -> centering."""
    img = window_hu(hu, cfg.window)
    if cfg.enable_noise_removal:
        img = remove_artifacts(img, cfg.foreground_threshold)
    if cfg.enable_skull_strip:
        img = strip_skull(img, cfg.skull_threshold)
    if cfg.enable_centering:
        img, _ = center_foreground(img)
    return img


def to_uint8(img):
    """Export rounding: half-up to 8-bit."""
    img = _as_2d(img, "image")
    return np.floor(np.clip(img, 0.0, 255.0) + 0.5).astype(np.uint8)
