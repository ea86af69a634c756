"""File formats: raw HU slices, mask/intensity PNGs, and the dataset manifest.

HU binary layout: three little-endian int32 (height, width, reserved=0)
followed by height*width little-endian int16 values in row-major order.

Manifest: UTF-8 TSV, '#'-prefixed comment/header lines, one case per row:
case_id  patient_id  image_path  mask_path  hypodensity  irregular  blend
fluid_level  location. Paths are relative to the manifest's directory.
An image path ending in .png is treated as an already-windowed 8-bit image.
"""

import os
from dataclasses import dataclass

import numpy as np
from PIL import Image

from .errors import DataError, ShapeError
from .ct_preprocess import to_uint8

LOCATIONS = ("putamen", "thalamus", "subcortical")

MANIFEST_COLUMNS = (
    "case_id",
    "patient_id",
    "image_path",
    "mask_path",
    "hypodensity",
    "irregular",
    "blend",
    "fluid_level",
    "location",
)


def write_hu(path, hu):
    hu = np.asarray(hu)
    if hu.ndim != 2:
        raise ShapeError(f"HU slice must be 2D, got {hu.shape}")
    if hu.dtype.kind == "f":
        if not np.all(np.isfinite(hu)):
            raise DataError("HU slice contains non-finite values")
        hu = np.floor(hu + 0.5)
    info = np.iinfo(np.int16)
    if hu.min() < info.min or hu.max() > info.max:
        raise DataError("HU values exceed int16 range")
    h, w = hu.shape
    header = np.array([h, w, 0], dtype="<i4")
    with open(path, "wb") as f:
        f.write(header.tobytes())
        f.write(hu.astype("<i2").tobytes())


def read_hu(path):
    try:
        with open(path, "rb") as f:
            raw = f.read()
    except OSError as e:
        raise DataError(f"cannot read HU file {path}: {e}") from e
    if len(raw) < 12:
        raise DataError(f"HU file {path} too short for header")
    h, w, _ = np.frombuffer(raw[:12], dtype="<i4")
    if h < 16 or w < 16:
        raise DataError(f"HU file {path} has degenerate shape {h}x{w}")
    expected = 12 + 2 * h * w
    if len(raw) != expected:
        raise DataError(f"HU file {path}: expected {expected} bytes, got {len(raw)}")
    data = np.frombuffer(raw[12:], dtype="<i2").astype(np.int64)
    return data.reshape(h, w)


def write_mask_png(path, mask):
    """Binary mask to 8-bit PNG: 0 background, 255 hematoma."""
    mask = np.asarray(mask)
    if mask.ndim != 2:
        raise ShapeError(f"mask must be 2D, got {mask.shape}")
    img = Image.fromarray(np.where(mask > 0, 255, 0).astype(np.uint8), mode="L")
    img.save(path, format="PNG")


def read_mask_png(path):
    """Returns a {0,1} int array."""
    try:
        arr = np.asarray(Image.open(path).convert("L"))
    except OSError as e:
        raise DataError(f"cannot read mask {path}: {e}") from e
    return (arr >= 128).astype(np.int64)


def write_intensity_png(path, img):
    Image.fromarray(to_uint8(img), mode="L").save(path, format="PNG")


def read_intensity_png(path):
    """Already-windowed 8-bit grayscale image, returned as float64 in [0, 255]."""
    try:
        arr = np.asarray(Image.open(path).convert("L"))
    except OSError as e:
        raise DataError(f"cannot read image {path}: {e}") from e
    return arr.astype(np.float64)


@dataclass
class ManifestRow:
    case_id: str
    patient_id: str
    image_path: str
    mask_path: str
    hypodensity: int
    irregular: int
    blend: int
    fluid_level: int
    location: str

    @property
    def labels(self):
        return np.array(
            [self.hypodensity, self.irregular, self.blend, self.fluid_level],
            dtype=np.int64,
        )


def write_manifest(path, rows, extra_comments=()):
    lines = []
    for c in extra_comments:
        lines.append(f"# {c}")
    lines.append("# " + "\t".join(MANIFEST_COLUMNS))
    for r in rows:
        lines.append(
            "\t".join(
                [
                    r.case_id,
                    r.patient_id,
                    r.image_path,
                    r.mask_path,
                    str(r.hypodensity),
                    str(r.irregular),
                    str(r.blend),
                    str(r.fluid_level),
                    r.location,
                ]
            )
        )
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write("\n".join(lines) + "\n")


def read_manifest(path):
    rows = []
    try:
        with open(path, "r", encoding="utf-8") as f:
            content = f.read()
    except OSError as e:
        raise DataError(f"cannot read manifest {path}: {e}") from e
    for lineno, line in enumerate(content.splitlines(), 1):
        line = line.rstrip("\n")
        if not line or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != len(MANIFEST_COLUMNS):
            raise DataError(
                f"{path}:{lineno}: expected {len(MANIFEST_COLUMNS)} fields, got {len(parts)}"
            )
        try:
            labels = [int(p) for p in parts[4:8]]
        except ValueError as e:
            raise DataError(f"{path}:{lineno}: non-integer label") from e
        if any(v not in (0, 1) for v in labels):
            raise DataError(f"{path}:{lineno}: labels must be 0 or 1")
        if parts[8] not in LOCATIONS:
            raise DataError(f"{path}:{lineno}: unknown location {parts[8]!r}")
        rows.append(ManifestRow(parts[0], parts[1], parts[2], parts[3], *labels, parts[8]))
    if not rows:
        raise DataError(f"manifest {path} has no data rows")
    return rows


def resolve_path(manifest_path, rel):
    return os.path.join(os.path.dirname(os.path.abspath(manifest_path)), rel)
