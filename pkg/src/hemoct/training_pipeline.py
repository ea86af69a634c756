"""Dataset splitting, the two-stage training procedure, location fine-tuning,
masked-input classification, and the four experiment grids.

Stage 1 trains the U-Net segmenter on soft dice loss; stage 2 trains the
classifier on weighted BCE with the segmenter frozen (its encoder features
are read-only inputs). All runs are deterministic functions of their config
seed; experiment grid cells derive their seeds from (master seed, cell name).
"""

import copy
import dataclasses
import hashlib
import json
import os
from dataclasses import dataclass, field

import numpy as np
import torch

from . import io as hio
from .ct_preprocess import (
    PreprocessConfig,
    WindowParams,
    center_foreground,
    remove_artifacts,
    strip_skull,
    translate,
    window_hu,
)
from .errors import ConfigError, DataError, HemoctError, SplitError, UndefinedAUCError
from .losses_metrics import class_weights, dice_loss, iou_fscore, roc_auc, weighted_bce
from .models import (
    ClsModelConfig,
    SegModelConfig,
    build_classifier,
    build_segmenter,
    cls_forward,
    encoder_features,
    save_checkpoint,
    seg_forward,
)

REPORT_CLASSES = ("hypodensity", "irregular", "blend")  # fluid_level trained, not tabled
EXPERIMENTS = ("split_study", "location_study", "ablation_study", "mask_study")


@dataclass(frozen=True)
class SplitSpec:
    mode: str = "by_patient"
    test_fraction: float = 0.25
    seed: int = 0

    def __post_init__(self):
        if self.mode not in ("random", "by_patient"):
            raise ConfigError(f"split mode must be random or by_patient, got {self.mode!r}")
        if not 0.0 < self.test_fraction < 1.0:
            raise ConfigError("test_fraction must lie in (0, 1)")


@dataclass
class TrainConfig:
    stage: str = "segmentation"
    epochs: int = 10
    batch_size: int = 8
    learning_rate: float = 1e-3
    weight_decay: float = 0.0
    seed: int = 0
    use_weighted_loss: bool = True
    pooling_mode: str = "wavelet_multiresolution"
    fuse_encoder_features: bool = True
    masked_input: bool = False
    location_filter: str = None
    seg_widths: tuple = (16, 32, 64, 128)
    cls_widths: tuple = (16, 32, 64, 128)

    def __post_init__(self):
        if self.stage not in ("segmentation", "classification"):
            raise ConfigError(f"unknown training stage {self.stage!r}")
        if self.epochs < 0 or self.batch_size < 1 or self.learning_rate <= 0:
            raise ConfigError("epochs must be >= 0, batch_size and learning_rate positive")
        if self.location_filter is not None and self.location_filter not in hio.LOCATIONS:
            raise ConfigError(f"unknown location {self.location_filter!r}")


@dataclass
class RunRecord:
    config: dict
    split_hash: str
    train_losses: list = field(default_factory=list)
    test_losses: list = field(default_factory=list)
    metrics: dict = field(default_factory=dict)
    checkpoint_path: str = None
    mask_usage: dict = field(default_factory=dict)

    def save(self, path):
        with open(path, "w", encoding="utf-8") as f:
            json.dump(dataclasses.asdict(self), f, indent=2, sort_keys=True)
            f.write("\n")


@dataclass
class CaseSet:
    """In-memory dataset: images in [0, 1], binary masks, N x 4 labels."""

    images: np.ndarray
    masks: np.ndarray
    labels: np.ndarray
    patient_ids: list
    locations: list
    case_ids: list

    def __len__(self):
        return len(self.case_ids)

    def subset(self, case_ids):
        index = {cid: i for i, cid in enumerate(self.case_ids)}
        idx = [index[cid] for cid in case_ids]
        return CaseSet(
            images=self.images[idx],
            masks=self.masks[idx],
            labels=self.labels[idx],
            patient_ids=[self.patient_ids[i] for i in idx],
            locations=[self.locations[i] for i in idx],
            case_ids=list(case_ids),
        )


def load_cases(manifest_path, preprocess_cfg=None):
    """Load a manifest into arrays.

    HU images are windowed (and preprocessed when a config is given; the
    centering offset is applied to the mask too so image and mask stay
    aligned). PNG images are taken as already windowed.
    """
    rows = hio.read_manifest(manifest_path)
    images, masks, labels = [], [], []
    window = preprocess_cfg.window if preprocess_cfg is not None else WindowParams()
    for r in rows:
        img_path = hio.resolve_path(manifest_path, r.image_path)
        mask = hio.read_mask_png(hio.resolve_path(manifest_path, r.mask_path))
        if img_path.endswith(".png"):
            img = hio.read_intensity_png(img_path)
        else:
            img = window_hu(hio.read_hu(img_path), window)
            if preprocess_cfg is not None:
                if preprocess_cfg.enable_noise_removal:
                    img = remove_artifacts(img, preprocess_cfg.foreground_threshold)
                if preprocess_cfg.enable_skull_strip:
                    img = strip_skull(img, preprocess_cfg.skull_threshold)
                if preprocess_cfg.enable_centering:
                    img, (dy, dx) = center_foreground(img)
                    mask = translate(mask, dy, dx)
        if img.shape != mask.shape:
            raise DataError(f"{r.case_id}: image shape {img.shape} != mask shape {mask.shape}")
        images.append(img / 255.0)
        masks.append(mask)
        labels.append(r.labels)
    return CaseSet(
        images=np.stack(images).astype(np.float32),
        masks=np.stack(masks).astype(np.float32),
        labels=np.stack(labels),
        patient_ids=[r.patient_id for r in rows],
        locations=[r.location for r in rows],
        case_ids=[r.case_id for r in rows],
    )


def split_dataset(rows, spec: SplitSpec):
    """Case ids for (train, test). by_patient keeps every patient on one side."""
    if not rows:
        raise DataError("empty manifest")
    rng = np.random.default_rng(spec.seed)
    case_ids = [r.case_id for r in rows]
    if spec.mode == "random":
        order = rng.permutation(len(rows))
        n_test = int(np.floor(spec.test_fraction * len(rows) + 0.5))
        n_test = min(max(n_test, 1), len(rows) - 1)
        test_idx = set(order[:n_test].tolist())
        train = [cid for i, cid in enumerate(case_ids) if i not in test_idx]
        test = [cid for i, cid in enumerate(case_ids) if i in test_idx]
    else:
        patients = sorted({r.patient_id for r in rows})
        if len(patients) < 2:
            raise SplitError("by_patient split needs at least 2 patients")
        order = rng.permutation(len(patients))
        n_test = int(np.floor(spec.test_fraction * len(patients) + 0.5))
        n_test = min(max(n_test, 1), len(patients) - 1)
        test_pat = {patients[i] for i in order[:n_test].tolist()}
        train = [r.case_id for r in rows if r.patient_id not in test_pat]
        test = [r.case_id for r in rows if r.patient_id in test_pat]
    return train, test


def split_hash(train_ids, test_ids):
    payload = "|".join(train_ids) + "||" + "|".join(test_ids)
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:16]


def assert_no_patient_leakage(data: CaseSet, train_ids, test_ids):
    by_case = dict(zip(data.case_ids, data.patient_ids))
    train_pat = {by_case[c] for c in train_ids}
    test_pat = {by_case[c] for c in test_ids}
    shared = train_pat & test_pat
    if shared:
        raise SplitError(f"patients on both sides of the split: {sorted(shared)}")


def _batches(n, batch_size, rng):
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start : start + batch_size]


def _image_tensor(images):
    return torch.from_numpy(images).unsqueeze(1)


def evaluate_segmentation(model, data: CaseSet, batch_size=16):
    """Mean per-image soft dice loss and hard IoU/F-score at threshold 0.5."""
    model.eval()
    dices, ious, fscores = [], [], []
    with torch.no_grad():
        x = _image_tensor(data.images)
        for start in range(0, len(data), batch_size):
            probs = seg_forward(model, x[start : start + batch_size])[:, 0]
            for i in range(probs.shape[0]):
                t = data.masks[start + i]
                dices.append(float(dice_loss(probs[i], torch.from_numpy(t))))
                iou, fs = iou_fscore(probs[i].numpy(), t)
                ious.append(iou)
                fscores.append(fs)
    return {
        "dice_loss": float(np.mean(dices)),
        "iou": float(np.mean(ious)),
        "fscore": float(np.mean(fscores)),
    }


def train_segmentation(cfg: TrainConfig, split, data: CaseSet):
    """Stage 1: minimize soft dice; keep the best-test-loss epoch."""
    if cfg.stage != "segmentation":
        raise ConfigError("train_segmentation requires stage=segmentation")
    train_ids, test_ids = split
    train_set = data.subset(train_ids)
    test_set = data.subset(test_ids)

    torch.manual_seed(cfg.seed)
    model = build_segmenter(SegModelConfig(encoder_widths=tuple(cfg.seg_widths)))
    opt = torch.optim.Adam(model.parameters(), lr=cfg.learning_rate, weight_decay=cfg.weight_decay)
    rng = np.random.default_rng(cfg.seed + 1)

    record = RunRecord(config=dataclasses.asdict(cfg), split_hash=split_hash(train_ids, test_ids))
    x_train = _image_tensor(train_set.images)
    m_train = torch.from_numpy(train_set.masks)

    best_state = copy.deepcopy(model.state_dict())
    best_loss = evaluate_segmentation(model, test_set)["dice_loss"]
    record.test_losses.append(best_loss)
    for _ in range(cfg.epochs):
        model.train()
        epoch_losses = []
        for idx in _batches(len(train_set), cfg.batch_size, rng):
            opt.zero_grad()
            probs = seg_forward(model, x_train[idx])[:, 0]
            loss = dice_loss(probs, m_train[idx])
            if not torch.isfinite(loss):
                raise DataError("non-finite segmentation loss; aborting run")
            loss.backward()
            opt.step()
            epoch_losses.append(float(loss.detach()))
        record.train_losses.append(float(np.mean(epoch_losses)))
        test_loss = evaluate_segmentation(model, test_set)["dice_loss"]
        record.test_losses.append(test_loss)
        if test_loss < best_loss:
            best_loss = test_loss
            best_state = copy.deepcopy(model.state_dict())
    model.load_state_dict(best_state)
    model.eval()
    record.metrics = {"test": evaluate_segmentation(model, test_set)}
    return model, record


def _predicted_masks(seg_model, images, batch_size=16, threshold=0.5):
    seg_model.eval()
    out = []
    with torch.no_grad():
        x = _image_tensor(images)
        for start in range(0, images.shape[0], batch_size):
            probs = seg_forward(seg_model, x[start : start + batch_size])[:, 0]
            out.append((probs >= threshold).float().numpy())
    return np.concatenate(out, axis=0)


def _encoder_feats(seg_model, x):
    with torch.no_grad():
        return encoder_features(seg_model, x)


def evaluate_classifier(model, seg_model, data: CaseSet, masked=False, batch_size=16,
                        mask_usage=None):
    """Per-class AUC on a case set; masked evaluation multiplies inputs by the
    segmenter's binarized predicted masks."""
    model.eval()
    images = data.images
    if masked:
        if seg_model is None:
            raise ConfigError("masked evaluation needs a segmentation model")
        images = images * _predicted_masks(seg_model, images)
        if mask_usage is not None:
            mask_usage["eval_predicted"] = mask_usage.get("eval_predicted", 0) + len(data)
    probs = []
    with torch.no_grad():
        x = _image_tensor(images)
        for start in range(0, len(data), batch_size):
            xb = x[start : start + batch_size]
            feats = _encoder_feats(seg_model, xb) if model.cfg.fuse_encoder_features else None
            probs.append(cls_forward(model, xb, feats).numpy())
    probs = np.concatenate(probs, axis=0)
    aucs = {}
    for c, name in enumerate(("hypodensity", "irregular", "blend", "fluid_level")):
        try:
            aucs[name] = roc_auc(probs[:, c], data.labels[:, c])
        except UndefinedAUCError:
            aucs[name] = float("nan")
    return aucs, probs


def train_classifier(cfg: TrainConfig, split, data: CaseSet, seg_model):
    """Stage 2: weighted BCE with the segmenter frozen.

    masked_input trains on ground-truth-masked images and evaluates on
    predicted-mask-masked images; mask_usage records which source was read.
    """
    if cfg.stage != "classification":
        raise ConfigError("train_classifier requires stage=classification")
    train_ids, test_ids = split
    train_set = data.subset(train_ids)
    test_set = data.subset(test_ids)

    seg_model.eval()
    for p in seg_model.parameters():
        p.requires_grad_(False)

    mask_usage = {}
    train_images = train_set.images
    if cfg.masked_input:
        if not np.any(train_set.masks):
            raise DataError("masked_input requires ground-truth masks")
        train_images = train_images * train_set.masks
        mask_usage["train_ground_truth"] = len(train_set)

    if cfg.use_weighted_loss:
        weights = class_weights(train_set.labels)
    else:
        weights = np.ones(train_set.labels.shape[1])

    torch.manual_seed(cfg.seed)
    cls_cfg = ClsModelConfig(
        block_widths=tuple(cfg.cls_widths),
        pooling_mode=cfg.pooling_mode,
        fuse_encoder_features=cfg.fuse_encoder_features,
        encoder_feature_channels=seg_model.cfg.encoder_widths[-1],
    )
    model = build_classifier(cls_cfg)
    opt = torch.optim.Adam(model.parameters(), lr=cfg.learning_rate, weight_decay=cfg.weight_decay)
    rng = np.random.default_rng(cfg.seed + 1)

    record = RunRecord(config=dataclasses.asdict(cfg), split_hash=split_hash(train_ids, test_ids))
    record.mask_usage = mask_usage
    x_train = _image_tensor(train_images)
    y_train = torch.from_numpy(train_set.labels.astype(np.float32))
    w = torch.from_numpy(weights.astype(np.float32))

    def test_loss_fn():
        model.eval()
        test_images = test_set.images
        if cfg.masked_input:
            test_images = test_images * _predicted_masks(seg_model, test_images)
            mask_usage["eval_predicted"] = mask_usage.get("eval_predicted", 0) + len(test_set)
        with torch.no_grad():
            xt = _image_tensor(test_images)
            losses = []
            for start in range(0, len(test_set), cfg.batch_size):
                xb = xt[start : start + cfg.batch_size]
                feats = _encoder_feats(seg_model, xb) if cfg.fuse_encoder_features else None
                probs = cls_forward(model, xb, feats)
                yb = torch.from_numpy(
                    test_set.labels[start : start + cfg.batch_size].astype(np.float32)
                )
                losses.append(float(weighted_bce(probs, yb, w)))
        return float(np.mean(losses))

    best_state = copy.deepcopy(model.state_dict())
    best_loss = test_loss_fn()
    record.test_losses.append(best_loss)
    for _ in range(cfg.epochs):
        model.train()
        epoch_losses = []
        for idx in _batches(len(train_set), cfg.batch_size, rng):
            opt.zero_grad()
            xb = x_train[idx]
            feats = _encoder_feats(seg_model, xb) if cfg.fuse_encoder_features else None
            probs = cls_forward(model, xb, feats)
            loss = weighted_bce(probs, y_train[idx], w)
            if not torch.isfinite(loss):
                raise DataError("non-finite classification loss; aborting run")
            loss.backward()
            opt.step()
            epoch_losses.append(float(loss.detach()))
        record.train_losses.append(float(np.mean(epoch_losses)))
        test_loss = test_loss_fn()
        record.test_losses.append(test_loss)
        if test_loss < best_loss:
            best_loss = test_loss
            best_state = copy.deepcopy(model.state_dict())
    model.load_state_dict(best_state)
    model.eval()
    aucs, _ = evaluate_classifier(
        model, seg_model, test_set, masked=cfg.masked_input, mask_usage=mask_usage
    )
    record.metrics = {"test_auc": aucs, "class_weights": [float(v) for v in weights]}
    record.mask_usage = mask_usage
    return model, record


def finetune_location(seg_model, location, cfg: TrainConfig, data: CaseSet, split):
    """Continue segmentation training on one location's slices; report base
    vs fine-tuned metrics on that location's test subset."""
    if location not in hio.LOCATIONS:
        raise ConfigError(f"unknown location {location!r}")
    train_ids, test_ids = split
    loc_train = [c for c, l in zip(data.case_ids, data.locations)
                 if c in set(train_ids) and l == location]
    loc_test = [c for c, l in zip(data.case_ids, data.locations)
                if c in set(test_ids) and l == location]
    if not loc_train or not loc_test:
        raise DataError(f"no {location} cases on one side of the split")

    test_subset = data.subset(loc_test)
    base_metrics = evaluate_segmentation(seg_model, test_subset)

    model = copy.deepcopy(seg_model)
    torch.manual_seed(cfg.seed)
    opt = torch.optim.Adam(model.parameters(), lr=cfg.learning_rate, weight_decay=cfg.weight_decay)
    rng = np.random.default_rng(cfg.seed + 1)
    train_subset = data.subset(loc_train)
    x_train = _image_tensor(train_subset.images)
    m_train = torch.from_numpy(train_subset.masks)

    record = RunRecord(config=dataclasses.asdict(cfg), split_hash=split_hash(loc_train, loc_test))
    best_state = copy.deepcopy(model.state_dict())
    best_loss = evaluate_segmentation(model, test_subset)["dice_loss"]
    record.test_losses.append(best_loss)
    for _ in range(cfg.epochs):
        model.train()
        epoch_losses = []
        for idx in _batches(len(train_subset), cfg.batch_size, rng):
            opt.zero_grad()
            probs = seg_forward(model, x_train[idx])[:, 0]
            loss = dice_loss(probs, m_train[idx])
            if not torch.isfinite(loss):
                raise DataError("non-finite fine-tuning loss; aborting run")
            loss.backward()
            opt.step()
            epoch_losses.append(float(loss.detach()))
        record.train_losses.append(float(np.mean(epoch_losses)))
        test_loss = evaluate_segmentation(model, test_subset)["dice_loss"]
        record.test_losses.append(test_loss)
        if test_loss < best_loss:
            best_loss = test_loss
            best_state = copy.deepcopy(model.state_dict())
    model.load_state_dict(best_state)
    model.eval()
    record.metrics = {
        "location": location,
        "base": base_metrics,
        "finetuned": evaluate_segmentation(model, test_subset),
    }
    return model, record


def state_hash(model):
    h = hashlib.sha256()
    for name, tensor in model.state_dict().items():
        h.update(name.encode("utf-8"))
        h.update(np.ascontiguousarray(tensor.detach().cpu().numpy()).tobytes())
    return h.hexdigest()


def _cell_seed(master_seed, cell_name):
    digest = hashlib.sha256(f"{master_seed}:{cell_name}".encode("utf-8")).digest()
    return int.from_bytes(digest[:4], "little")


def _write_table(path, header, rows):
    lines = ["\t".join(header)]
    for row in rows:
        lines.append("\t".join(str(v) if isinstance(v, str) else f"{v:.4f}" for v in row))
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write("\n".join(lines) + "\n")


@dataclass
class ExperimentConfig:
    manifest: str = None
    out_dir: str = None
    seed: int = 0
    test_fraction: float = 0.25
    seg_epochs: int = 10
    cls_epochs: int = 12
    batch_size: int = 8
    learning_rate: float = 1e-3
    seg_widths: tuple = (16, 32, 64, 128)
    cls_widths: tuple = (16, 32, 64, 128)


def run_experiment(name, cfg: ExperimentConfig):
    """Execute one of the four study grids; emits a comparison table plus one
    run record per grid cell. A failing cell is recorded and the grid continues.
    Returns the report directory."""
    if name not in EXPERIMENTS:
        raise ConfigError(f"unknown experiment {name!r}; choose from {EXPERIMENTS}")
    if cfg.manifest is None or cfg.out_dir is None:
        raise ConfigError("experiment needs a manifest and an output directory")
    out_dir = os.path.join(cfg.out_dir, name)
    os.makedirs(out_dir, exist_ok=True)
    errors = {}

    def run_cell(cell, fn):
        try:
            return fn()
        except HemoctError as e:
            errors[cell] = str(e)
            return None

    if name == "split_study":
        rows_out = []
        for mode in ("random", "by_patient"):
            for prep_name, prep in (("raw", None), ("preprocessed", PreprocessConfig())):
                cell = f"{mode}_{prep_name}"

                def fn(mode=mode, prep=prep, cell=cell):
                    data = load_cases(cfg.manifest, prep)
                    manifest_rows = hio.read_manifest(cfg.manifest)
                    split = split_dataset(
                        manifest_rows,
                        SplitSpec(mode=mode, test_fraction=cfg.test_fraction, seed=cfg.seed),
                    )
                    if mode == "by_patient":
                        assert_no_patient_leakage(data, *split)
                    tc = TrainConfig(
                        stage="segmentation",
                        epochs=cfg.seg_epochs,
                        batch_size=cfg.batch_size,
                        learning_rate=cfg.learning_rate,
                        seed=_cell_seed(cfg.seed, cell),
                        seg_widths=cfg.seg_widths,
                    )
                    model, record = train_segmentation(tc, split, data)
                    record.checkpoint_path = os.path.join(out_dir, f"{cell}.ckpt")
                    save_checkpoint(record.checkpoint_path, "segmenter", model)
                    record.save(os.path.join(out_dir, f"{cell}.json"))
                    return record.metrics["test"]

                m = run_cell(cell, fn)
                if m is not None:
                    rows_out.append((cell, m["dice_loss"], m["iou"], m["fscore"]))
        _write_table(
            os.path.join(out_dir, "table.tsv"),
            ("condition", "dice_loss", "iou", "fscore"),
            rows_out,
        )

    elif name == "location_study":
        data = load_cases(cfg.manifest, None)
        manifest_rows = hio.read_manifest(cfg.manifest)
        split = split_dataset(
            manifest_rows, SplitSpec(mode="by_patient", test_fraction=cfg.test_fraction, seed=cfg.seed)
        )
        assert_no_patient_leakage(data, *split)
        tc = TrainConfig(
            stage="segmentation",
            epochs=cfg.seg_epochs,
            batch_size=cfg.batch_size,
            learning_rate=cfg.learning_rate,
            seed=_cell_seed(cfg.seed, "base"),
            seg_widths=cfg.seg_widths,
        )

        def base_fn():
            model, record = train_segmentation(tc, split, data)
            record.checkpoint_path = os.path.join(out_dir, "base.ckpt")
            save_checkpoint(record.checkpoint_path, "segmenter", model)
            record.save(os.path.join(out_dir, "base.json"))
            return model

        base_model = run_cell("base", base_fn)
        base_row = ["all_data"]
        ft_rows = []
        if base_model is not None:
            for location in hio.LOCATIONS:
                cell = f"finetune_{location}"

                def fn(location=location, cell=cell):
                    ft_cfg = dataclasses.replace(
                        tc, epochs=max(1, cfg.seg_epochs // 2), seed=_cell_seed(cfg.seed, cell)
                    )
                    model, record = finetune_location(base_model, location, ft_cfg, data, split)
                    record.checkpoint_path = os.path.join(out_dir, f"{cell}.ckpt")
                    save_checkpoint(record.checkpoint_path, "segmenter", model)
                    record.save(os.path.join(out_dir, f"{cell}.json"))
                    return record.metrics

                m = run_cell(cell, fn)
                if m is not None:
                    base_row.append(m["base"]["fscore"])
                    row = [cell] + ["" for _ in hio.LOCATIONS]
                    row[1 + hio.LOCATIONS.index(location)] = m["finetuned"]["fscore"]
                    ft_rows.append(tuple(row))
                else:
                    base_row.append(float("nan"))
        _write_table(
            os.path.join(out_dir, "table.tsv"),
            ("condition",) + hio.LOCATIONS,
            [tuple(base_row)] + ft_rows,
        )

    elif name in ("ablation_study", "mask_study"):
        data = load_cases(cfg.manifest, None)
        manifest_rows = hio.read_manifest(cfg.manifest)
        split = split_dataset(
            manifest_rows, SplitSpec(mode="by_patient", test_fraction=cfg.test_fraction, seed=cfg.seed)
        )
        assert_no_patient_leakage(data, *split)
        seg_cfg = TrainConfig(
            stage="segmentation",
            epochs=cfg.seg_epochs,
            batch_size=cfg.batch_size,
            learning_rate=cfg.learning_rate,
            seed=_cell_seed(cfg.seed, "segmenter"),
            seg_widths=cfg.seg_widths,
        )

        def seg_fn():
            model, record = train_segmentation(seg_cfg, split, data)
            record.checkpoint_path = os.path.join(out_dir, "segmenter.ckpt")
            save_checkpoint(record.checkpoint_path, "segmenter", model)
            record.save(os.path.join(out_dir, "segmenter.json"))
            return model

        seg_model = run_cell("segmenter", seg_fn)
        if name == "ablation_study":
            conditions = [
                ("vgg16", "max_pool", False),
                ("weighted_vgg16", "max_pool", True),
                ("wavelet_vgg16", "wavelet_multiresolution", False),
                ("weighted_wavelet_vgg16", "wavelet_multiresolution", True),
            ]
            masked_flags = [False] * 4
        else:
            conditions = [
                ("weighted_wavelet_vgg16", "wavelet_multiresolution", True),
                ("weighted_wavelet_vgg16_masked", "wavelet_multiresolution", True),
            ]
            masked_flags = [False, True]
        rows_out = []
        if seg_model is not None:
            frozen_before = state_hash(seg_model)
            for (cell, pooling, weighted), masked in zip(conditions, masked_flags):

                def fn(cell=cell, pooling=pooling, weighted=weighted, masked=masked):
                    tc = TrainConfig(
                        stage="classification",
                        epochs=cfg.cls_epochs,
                        batch_size=cfg.batch_size,
                        learning_rate=cfg.learning_rate,
                        seed=_cell_seed(cfg.seed, cell),
                        use_weighted_loss=weighted,
                        pooling_mode=pooling,
                        masked_input=masked,
                        cls_widths=cfg.cls_widths,
                        seg_widths=cfg.seg_widths,
                    )
                    model, record = train_classifier(tc, split, data, seg_model)
                    if state_hash(seg_model) != frozen_before:
                        raise DataError("segmenter parameters changed during stage 2")
                    record.checkpoint_path = os.path.join(out_dir, f"{cell}.ckpt")
                    save_checkpoint(record.checkpoint_path, "classifier", model)
                    record.save(os.path.join(out_dir, f"{cell}.json"))
                    return record.metrics["test_auc"]

                aucs = run_cell(cell, fn)
                if aucs is not None:
                    rows_out.append((cell,) + tuple(aucs[c] for c in REPORT_CLASSES))
        _write_table(
            os.path.join(out_dir, "table.tsv"),
            ("condition",) + REPORT_CLASSES,
            rows_out,
        )

    if errors:
        with open(os.path.join(out_dir, "errors.json"), "w", encoding="utf-8") as f:
            json.dump(errors, f, indent=2, sort_keys=True)
            f.write("\n")
    return out_dir
