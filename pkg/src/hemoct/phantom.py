"""Synthetic CT-like phantom slices with ground-truth hematoma masks.

Each case is an elliptical brain with a bright skull ring and one blood
blob whose appearance encodes the four sign labels:

  hypodensity  - central disk markedly darker than the rest of the blob
  irregular    - multi-lobed sinusoidal boundary modulation
  blend        - vertical split, right half darker by a fixed HU step
  fluid_level  - horizontal interface, upper half darker

Brain geometry, tissue HU offsets, and per-location lesion geometry are
shared by all slices of a patient, so adjacent slices of one patient are
near-duplicates (this drives the random-vs-patient split experiment).
Generation is a pure function of
(seed, patient_id, case_index) via counter-style seed sequences, so
parallel and sequential generation agree bit for bit.
"""

import hashlib
import os
from dataclasses import dataclass

import numpy as np

from . import io as hio
from .errors import ConfigError, GenerationError

SIGN_NAMES = ("hypodensity", "irregular", "blend", "fluid_level")

# HU offsets applied to the blob per sign (relative to hu_blood)
HYPODENSITY_DELTA = 45.0
BLEND_DELTA = 25.0
FLUID_DELTA = 30.0
IRREGULAR_MOD = 0.35

HU_AIR = -1000.0
HU_SKULL = 1200.0

# Image regions for blob centroids, documented in the manifest header:
#   putamen:     rows >= 0.47*H, cols <  0.50*W
#   thalamus:    rows >= 0.47*H, cols >= 0.50*W
#   subcortical: rows <  0.47*H
LOCATION_OFFSETS = {
    "putamen": (0.10, -0.14),
    "thalamus": (0.10, 0.14),
    "subcortical": (-0.16, 0.0),
}


@dataclass(frozen=True)
class PhantomSpec:
    image_size: int = 128
    patients: int = 10
    slices_per_patient: int = 10
    prevalence: tuple = (0.35, 0.25, 0.15, 0.05)
    location_mix: tuple = (0.4, 0.3, 0.3)
    hu_brain: float = 30.0
    hu_blood: float = 60.0
    noise_sd: float = 4.0
    lesion_radius: tuple = (0.055, 0.085)  # fraction of image size
    seed: int = 0

    def __post_init__(self):
        if self.image_size < 32:
            raise ConfigError("image_size must be >= 32")
        if self.patients < 1 or self.slices_per_patient < 1:
            raise ConfigError("patients and slices_per_patient must be positive")
        if len(self.prevalence) != 4 or any(not 0.0 <= p <= 1.0 for p in self.prevalence):
            raise ConfigError("prevalence must be four probabilities in [0,1]")
        if len(self.location_mix) != 3 or any(p < 0 for p in self.location_mix):
            raise ConfigError("location_mix must be three nonnegative probabilities")
        if abs(sum(self.location_mix) - 1.0) > 1e-9:
            raise ConfigError("location_mix must sum to 1")
        if not self.hu_blood > self.hu_brain:
            raise ConfigError("hu_blood must exceed hu_brain")
        if self.noise_sd < 0:
            raise ConfigError("noise_sd must be nonnegative")
        lo, hi = self.lesion_radius
        if not 0.0 < lo <= hi < 0.25:
            raise ConfigError("lesion_radius must satisfy 0 < lo <= hi < 0.25")


@dataclass
class PhantomCase:
    slice: np.ndarray  # int HU grid
    mask: np.ndarray  # {0,1}, blob support before noise
    labels: np.ndarray  # (hypodensity, irregular, blend, fluid_level)
    patient_id: str
    location: str
    case_id: str


def _patient_key(patient_id):
    digest = hashlib.sha256(patient_id.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def patient_rng(spec, patient_id):
    return np.random.default_rng(np.random.SeedSequence([spec.seed, _patient_key(patient_id)]))


def case_rng(spec, patient_id, case_index):
    return np.random.default_rng(
        np.random.SeedSequence([spec.seed, _patient_key(patient_id), case_index])
    )


def _brain_geometry(spec, patient_id):
    """Per-patient ellipse: center jitter and axes, shared across slices."""
    rng = patient_rng(spec, patient_id)
    n = spec.image_size
    cy = n / 2 + rng.uniform(-0.04, 0.04) * n
    cx = n / 2 + rng.uniform(-0.04, 0.04) * n
    ry = rng.uniform(0.36, 0.42) * n
    rx = rng.uniform(0.34, 0.40) * n
    return cy, cx, ry, rx


def _patient_tissue(spec, patient_id):
    """Per-patient HU offsets for brain and blood (sign deltas stay relative)."""
    rng = np.random.default_rng(
        np.random.SeedSequence([spec.seed, _patient_key(patient_id), 1 << 20])
    )
    # blood spread stays below the hypodensity-vs-fluid HU gap (45 - 30 = 15)
    # so every sign keeps a noise-free decision rule across patients
    return spec.hu_brain + rng.uniform(-6.0, 6.0), spec.hu_blood + rng.uniform(-7.0, 5.0)


def _lesion_geometry(spec, patient_id, location):
    """Per-(patient, location) lesion: base radius, anchor jitter, lobe shape.

    Shared across a patient's slices so the same hematoma recurs on adjacent
    slices; per-case jitter on top of this stays small."""
    loc_index = hio.LOCATIONS.index(location)
    rng = np.random.default_rng(
        np.random.SeedSequence([spec.seed, _patient_key(patient_id), (2 << 20) + loc_index])
    )
    base_radius = rng.uniform(*spec.lesion_radius) * spec.image_size
    jy = rng.uniform(-0.025, 0.025) * spec.image_size
    jx = rng.uniform(-0.025, 0.025) * spec.image_size
    k = int(rng.integers(3, 6))
    phase = rng.uniform(0.0, 2 * np.pi)
    return base_radius, jy, jx, k, phase


def _blob_support(n, cy, cx, radius, irregular, k, phase):
    """Boolean support of the blood blob, optionally with a lobed boundary."""
    yy, xx = np.mgrid[0:n, 0:n].astype(np.float64)
    dy, dx = yy - cy, xx - cx
    r = np.hypot(dy, dx)
    if irregular:
        theta = np.arctan2(dy, dx)
        boundary = radius * (1.0 + IRREGULAR_MOD * np.sin(k * theta + phase))
    else:
        boundary = radius
    return r <= boundary


def generate_case(spec, patient_id, case_index, rng=None):
    """Deterministic phantom slice for (spec.seed, patient_id, case_index)."""
    if rng is None:
        rng = case_rng(spec, patient_id, case_index)
    n = spec.image_size
    cy, cx, ry, rx = _brain_geometry(spec, patient_id)

    yy, xx = np.mgrid[0:n, 0:n].astype(np.float64)
    t = np.hypot((yy - cy) / ry, (xx - cx) / rx)
    skull_thickness = 3.0
    brain = t < 1.0
    skull = (t >= 1.0) & (t < 1.0 + skull_thickness / min(rx, ry))

    labels = (rng.uniform(0.0, 1.0, size=4) < np.asarray(spec.prevalence)).astype(np.int64)
    location = hio.LOCATIONS[rng.choice(3, p=np.asarray(spec.location_mix, dtype=np.float64))]

    off_y, off_x = LOCATION_OFFSETS[location]
    base_radius, jy, jx, lobe_k, lobe_phase = _lesion_geometry(spec, patient_id, location)
    mask = None
    for attempt in range(8):
        radius = base_radius * (0.9 ** attempt)
        by = cy + off_y * n + jy + rng.uniform(-0.008, 0.008) * n
        bx = cx + off_x * n + jx + rng.uniform(-0.008, 0.008) * n
        # fit-test the circumscribing circle for every case so retry shrinkage
        # is independent of the irregular label (no size/label confound)
        envelope = _blob_support(
            n, by, bx, radius * (1.0 + IRREGULAR_MOD), False, lobe_k, lobe_phase
        )
        support = _blob_support(n, by, bx, radius, labels[1] == 1, lobe_k, lobe_phase)
        if support.any() and np.all(t[envelope] < 0.95):
            mask = support
            break
    if mask is None:
        raise GenerationError(
            f"could not place blob for {patient_id} case {case_index} ({location})"
        )

    hu_brain_p, hu_blood_p = _patient_tissue(spec, patient_id)
    img = np.full((n, n), HU_AIR)
    img[brain] = hu_brain_p
    img[skull] = HU_SKULL
    img[mask] = hu_blood_p
    if labels[2]:  # blend: right half darker
        img[mask & (xx > bx)] = hu_blood_p - BLEND_DELTA
    if labels[3]:  # fluid level: upper half darker
        img[mask & (yy < by)] = hu_blood_p - FLUID_DELTA
    if labels[0]:  # hypodense core overrides the other modifications
        core = np.hypot(yy - by, xx - bx) <= 0.45 * radius
        img[mask & core] = hu_blood_p - HYPODENSITY_DELTA

    if spec.noise_sd > 0:
        img = img + rng.normal(0.0, spec.noise_sd, size=img.shape)
    img = np.floor(img + 0.5).astype(np.int64)

    case_id = f"{patient_id}_s{case_index:03d}"
    return PhantomCase(
        slice=img,
        mask=mask.astype(np.int64),
        labels=labels,
        patient_id=patient_id,
        location=location,
        case_id=case_id,
    )


def generate_dataset(spec, out_dir):
    """Write all cases plus a manifest; returns the manifest path."""
    img_dir = os.path.join(out_dir, "images")
    mask_dir = os.path.join(out_dir, "masks")
    os.makedirs(img_dir, exist_ok=True)
    os.makedirs(mask_dir, exist_ok=True)
    rows = []
    for p in range(spec.patients):
        patient_id = f"P{p:03d}"
        for s in range(spec.slices_per_patient):
            case = generate_case(spec, patient_id, s)
            image_rel = os.path.join("images", f"{case.case_id}.hu")
            mask_rel = os.path.join("masks", f"{case.case_id}.png")
            hio.write_hu(os.path.join(out_dir, image_rel), case.slice)
            hio.write_mask_png(os.path.join(out_dir, mask_rel), case.mask)
            rows.append(
                hio.ManifestRow(
                    case.case_id,
                    patient_id,
                    image_rel,
                    mask_rel,
                    *[int(v) for v in case.labels],
                    case.location,
                )
            )
    manifest_path = os.path.join(out_dir, "manifest.tsv")
    comments = (
        "hemoct phantom dataset",
        f"image_size={spec.image_size} patients={spec.patients} "
        f"slices_per_patient={spec.slices_per_patient} seed={spec.seed}",
        "blob centroid regions: putamen rows>=0.47H cols<0.50W; "
        "thalamus rows>=0.47H cols>=0.50W; subcortical rows<0.47H",
    )
    hio.write_manifest(manifest_path, rows, extra_comments=comments)
    return manifest_path
