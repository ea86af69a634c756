"""Command-line interface.

Subcommands: generate, preprocess, train-seg, train-cls, finetune-loc,
eval, experiment, gradcam. Every subcommand accepts `--config FILE`
(key = value lines, sections per module); explicit flags override file
values. Exit codes: 0 success, 2 config error, 3 data error.
"""

import argparse
import dataclasses
import os
import sys

import numpy as np

from . import io as hio
from .config import load_config, merge_options
from .ct_preprocess import (
    PreprocessConfig,
    WindowParams,
    center_foreground,
    remove_artifacts,
    strip_skull,
    translate,
    window_hu,
)
from .errors import ConfigError, DataError, HemoctError
from .explain import grad_cam, render_overlay
from .losses_metrics import write_eval_report
from .models import load_checkpoint, save_checkpoint
from .phantom import PhantomSpec, generate_dataset
from .training_pipeline import (
    EXPERIMENTS,
    ExperimentConfig,
    SplitSpec,
    TrainConfig,
    assert_no_patient_leakage,
    evaluate_classifier,
    evaluate_segmentation,
    finetune_location,
    load_cases,
    run_experiment,
    split_dataset,
    train_classifier,
    train_segmentation,
)


def _section(args, name):
    if args.config is None:
        return {}
    return load_config(args.config).get(name, {})


def _add_common(p):
    p.add_argument("--config", help="config file (key = value lines, one section per module)")


def cmd_generate(args):
    defaults = {
        "out": None,
        "patients": 10,
        "slices_per_patient": 10,
        "size": 128,
        "seed": 0,
        "prevalence": (0.35, 0.25, 0.15, 0.05),
        "location_mix": (0.4, 0.3, 0.3),
        "hu_brain": 30.0,
        "hu_blood": 60.0,
        "noise_sd": 4.0,
    }
    cli = {
        "out": args.out,
        "patients": args.patients,
        "slices_per_patient": args.slices_per_patient,
        "size": args.size,
        "seed": args.seed,
        "prevalence": tuple(float(v) for v in args.prevalence.split(",")) if args.prevalence else None,
        "location_mix": tuple(float(v) for v in args.location_mix.split(",")) if args.location_mix else None,
        "hu_brain": args.hu_brain,
        "hu_blood": args.hu_blood,
        "noise_sd": args.noise_sd,
    }
    opts = merge_options(defaults, _section(args, "phantom"), cli)
    if opts["out"] is None:
        raise ConfigError("generate needs --out")
    spec = PhantomSpec(
        image_size=int(opts["size"]),
        patients=int(opts["patients"]),
        slices_per_patient=int(opts["slices_per_patient"]),
        prevalence=tuple(opts["prevalence"]),
        location_mix=tuple(opts["location_mix"]),
        hu_brain=float(opts["hu_brain"]),
        hu_blood=float(opts["hu_blood"]),
        noise_sd=float(opts["noise_sd"]),
        seed=int(opts["seed"]),
    )
    manifest = generate_dataset(spec, opts["out"])
    print(manifest)


def _preprocess_options(args):
    defaults = {
        "manifest": None,
        "out": None,
        "a": 0.0,
        "b": 80.0,
        "no_noise": False,
        "no_skull": False,
        "no_center": False,
        "foreground_threshold": 10.0,
        "skull_threshold": 250.0,
    }
    cli = {
        "manifest": args.manifest,
        "out": args.out,
        "a": args.a,
        "b": args.b,
        "no_noise": True if args.no_noise else None,
        "no_skull": True if args.no_skull else None,
        "no_center": True if args.no_center else None,
        "foreground_threshold": args.foreground_threshold,
        "skull_threshold": args.skull_threshold,
    }
    return merge_options(defaults, _section(args, "preprocess"), cli)


def cmd_preprocess(args):
    opts = _preprocess_options(args)
    if opts["manifest"] is None or opts["out"] is None:
        raise ConfigError("preprocess needs --manifest and --out")
    cfg = PreprocessConfig(
        window=WindowParams(float(opts["a"]), float(opts["b"])),
        enable_noise_removal=not opts["no_noise"],
        enable_skull_strip=not opts["no_skull"],
        enable_centering=not opts["no_center"],
        foreground_threshold=float(opts["foreground_threshold"]),
        skull_threshold=float(opts["skull_threshold"]),
    )
    rows = hio.read_manifest(opts["manifest"])
    out_dir = opts["out"]
    os.makedirs(os.path.join(out_dir, "images"), exist_ok=True)
    os.makedirs(os.path.join(out_dir, "masks"), exist_ok=True)
    new_rows = []
    for r in rows:
        img_path = hio.resolve_path(opts["manifest"], r.image_path)
        mask = hio.read_mask_png(hio.resolve_path(opts["manifest"], r.mask_path))
        if img_path.endswith(".png"):
            img = hio.read_intensity_png(img_path)
        else:
            img = window_hu(hio.read_hu(img_path), cfg.window)
        if cfg.enable_noise_removal:
            img = remove_artifacts(img, cfg.foreground_threshold)
        if cfg.enable_skull_strip:
            img = strip_skull(img, cfg.skull_threshold)
        if cfg.enable_centering:
            img, (dy, dx) = center_foreground(img)
            mask = translate(mask, dy, dx)
        image_rel = os.path.join("images", f"{r.case_id}.png")
        mask_rel = os.path.join("masks", f"{r.case_id}.png")
        hio.write_intensity_png(os.path.join(out_dir, image_rel), img)
        hio.write_mask_png(os.path.join(out_dir, mask_rel), mask)
        new_rows.append(dataclasses.replace(r, image_path=image_rel, mask_path=mask_rel))
    manifest_path = os.path.join(out_dir, "manifest.tsv")
    hio.write_manifest(manifest_path, new_rows, extra_comments=("preprocessed dataset",))
    print(manifest_path)


def _train_options(args, extra_defaults=()):
    defaults = {
        "manifest": None,
        "out": None,
        "split_mode": "by_patient",
        "test_fraction": 0.25,
        "epochs": 10,
        "batch_size": 8,
        "lr": 1e-3,
        "weight_decay": 0.0,
        "seed": 0,
        "preprocess": False,
    }
    defaults.update(extra_defaults)
    cli = {
        "manifest": args.manifest,
        "out": args.out,
        "split_mode": getattr(args, "split_mode", None),
        "test_fraction": args.test_fraction,
        "epochs": args.epochs,
        "batch_size": args.batch_size,
        "lr": args.lr,
        "weight_decay": args.weight_decay,
        "seed": args.seed,
        "preprocess": True if getattr(args, "preprocess", False) else None,
    }
    for k in extra_defaults:
        v = getattr(args, k, None)
        # store_true flags default to False; only an explicit flag overrides
        cli[k] = v if v is not False else None
    return merge_options(defaults, _section(args, "train"), cli)


def _load_split(opts):
    if opts["manifest"] is None or opts["out"] is None:
        raise ConfigError("training needs --manifest and --out")
    prep = PreprocessConfig() if opts["preprocess"] else None
    data = load_cases(opts["manifest"], prep)
    rows = hio.read_manifest(opts["manifest"])
    split = split_dataset(
        rows,
        SplitSpec(
            mode=str(opts["split_mode"]),
            test_fraction=float(opts["test_fraction"]),
            seed=int(opts["seed"]),
        ),
    )
    if opts["split_mode"] == "by_patient":
        assert_no_patient_leakage(data, *split)
    return data, split


def cmd_train_seg(args):
    opts = _train_options(args)
    data, split = _load_split(opts)
    cfg = TrainConfig(
        stage="segmentation",
        epochs=int(opts["epochs"]),
        batch_size=int(opts["batch_size"]),
        learning_rate=float(opts["lr"]),
        weight_decay=float(opts["weight_decay"]),
        seed=int(opts["seed"]),
    )
    model, record = train_segmentation(cfg, split, data)
    os.makedirs(opts["out"], exist_ok=True)
    ckpt = os.path.join(opts["out"], "segmenter.ckpt")
    save_checkpoint(ckpt, "segmenter", model)
    record.checkpoint_path = ckpt
    record.save(os.path.join(opts["out"], "segmenter.json"))
    m = record.metrics["test"]
    write_eval_report(
        os.path.join(opts["out"], "segmenter.report"),
        [("dice_loss", "mask", m["dice_loss"]), ("iou", "mask", m["iou"]),
         ("fscore", "mask", m["fscore"])],
    )
    print(ckpt)


def cmd_train_cls(args):
    extra = {
        "seg_checkpoint": None,
        "pooling": "wavelet_multiresolution",
        "unweighted": False,
        "masked": False,
        "no_fuse": False,
    }
    opts = _train_options(args, extra)
    if opts["seg_checkpoint"] is None:
        raise ConfigError("train-cls needs --seg-checkpoint")
    data, split = _load_split(opts)
    seg_model, kind = load_checkpoint(opts["seg_checkpoint"])
    if kind != "segmenter":
        raise DataError(f"{opts['seg_checkpoint']} is a {kind} checkpoint, expected segmenter")
    cfg = TrainConfig(
        stage="classification",
        epochs=int(opts["epochs"]),
        batch_size=int(opts["batch_size"]),
        learning_rate=float(opts["lr"]),
        weight_decay=float(opts["weight_decay"]),
        seed=int(opts["seed"]),
        use_weighted_loss=not opts["unweighted"],
        pooling_mode=str(opts["pooling"]),
        fuse_encoder_features=not opts["no_fuse"],
        masked_input=bool(opts["masked"]),
    )
    model, record = train_classifier(cfg, split, data, seg_model)
    os.makedirs(opts["out"], exist_ok=True)
    ckpt = os.path.join(opts["out"], "classifier.ckpt")
    save_checkpoint(ckpt, "classifier", model)
    record.checkpoint_path = ckpt
    record.save(os.path.join(opts["out"], "classifier.json"))
    write_eval_report(
        os.path.join(opts["out"], "classifier.report"),
        [("auc", cls, v) for cls, v in record.metrics["test_auc"].items()],
    )
    print(ckpt)


def cmd_finetune_loc(args):
    extra = {"checkpoint": None, "location": None}
    opts = _train_options(args, extra)
    if opts["checkpoint"] is None or opts["location"] is None:
        raise ConfigError("finetune-loc needs --checkpoint and --location")
    data, split = _load_split(opts)
    seg_model, kind = load_checkpoint(opts["checkpoint"])
    if kind != "segmenter":
        raise DataError(f"{opts['checkpoint']} is a {kind} checkpoint, expected segmenter")
    cfg = TrainConfig(
        stage="segmentation",
        epochs=int(opts["epochs"]),
        batch_size=int(opts["batch_size"]),
        learning_rate=float(opts["lr"]),
        weight_decay=float(opts["weight_decay"]),
        seed=int(opts["seed"]),
        location_filter=str(opts["location"]),
    )
    model, record = finetune_location(seg_model, str(opts["location"]), cfg, data, split)
    os.makedirs(opts["out"], exist_ok=True)
    ckpt = os.path.join(opts["out"], f"finetuned_{opts['location']}.ckpt")
    save_checkpoint(ckpt, "segmenter", model)
    record.checkpoint_path = ckpt
    record.save(os.path.join(opts["out"], f"finetuned_{opts['location']}.json"))
    rows = [
        ("fscore_base", str(opts["location"]), record.metrics["base"]["fscore"]),
        ("fscore_finetuned", str(opts["location"]), record.metrics["finetuned"]["fscore"]),
    ]
    write_eval_report(os.path.join(opts["out"], f"finetuned_{opts['location']}.report"), rows)
    print(ckpt)


def cmd_eval(args):
    defaults = {
        "manifest": None,
        "out": None,
        "checkpoint": None,
        "seg_checkpoint": None,
        "preprocess": False,
        "masked": False,
    }
    cli = {
        "manifest": args.manifest,
        "out": args.out,
        "checkpoint": args.checkpoint,
        "seg_checkpoint": args.seg_checkpoint,
        "preprocess": True if args.preprocess else None,
        "masked": True if args.masked else None,
    }
    opts = merge_options(defaults, _section(args, "eval"), cli)
    if opts["manifest"] is None or opts["out"] is None or opts["checkpoint"] is None:
        raise ConfigError("eval needs --manifest, --checkpoint and --out")
    prep = PreprocessConfig() if opts["preprocess"] else None
    data = load_cases(opts["manifest"], prep)
    model, kind = load_checkpoint(opts["checkpoint"])
    os.makedirs(opts["out"], exist_ok=True)
    report = os.path.join(opts["out"], "eval.report")
    if kind == "segmenter":
        m = evaluate_segmentation(model, data)
        write_eval_report(
            report,
            [("dice_loss", "mask", m["dice_loss"]), ("iou", "mask", m["iou"]),
             ("fscore", "mask", m["fscore"])],
        )
    else:
        seg_model = None
        if model.cfg.fuse_encoder_features or opts["masked"]:
            if opts["seg_checkpoint"] is None:
                raise ConfigError("this classifier needs --seg-checkpoint for evaluation")
            seg_model, seg_kind = load_checkpoint(opts["seg_checkpoint"])
            if seg_kind != "segmenter":
                raise DataError("--seg-checkpoint must point at a segmenter checkpoint")
        aucs, _ = evaluate_classifier(model, seg_model, data, masked=bool(opts["masked"]))
        write_eval_report(report, [("auc", cls, v) for cls, v in aucs.items()])
    print(report)


def cmd_experiment(args):
    defaults = {
        "manifest": None,
        "out": None,
        "seed": 0,
        "test_fraction": 0.25,
        "seg_epochs": 10,
        "cls_epochs": 12,
        "batch_size": 8,
        "lr": 1e-3,
    }
    cli = {
        "manifest": args.manifest,
        "out": args.out,
        "seed": args.seed,
        "test_fraction": args.test_fraction,
        "seg_epochs": args.seg_epochs,
        "cls_epochs": args.cls_epochs,
        "batch_size": args.batch_size,
        "lr": args.lr,
    }
    opts = merge_options(defaults, _section(args, "experiment"), cli)
    cfg = ExperimentConfig(
        manifest=opts["manifest"],
        out_dir=opts["out"],
        seed=int(opts["seed"]),
        test_fraction=float(opts["test_fraction"]),
        seg_epochs=int(opts["seg_epochs"]),
        cls_epochs=int(opts["cls_epochs"]),
        batch_size=int(opts["batch_size"]),
        learning_rate=float(opts["lr"]),
    )
    print(run_experiment(args.name, cfg))


def cmd_gradcam(args):
    defaults = {
        "checkpoint": None,
        "seg_checkpoint": None,
        "image": None,
        "cls": 0,
        "layer": None,
        "out": None,
    }
    cli = {
        "checkpoint": args.checkpoint,
        "seg_checkpoint": args.seg_checkpoint,
        "image": args.image,
        "cls": getattr(args, "cls"),
        "layer": args.layer,
        "out": args.out,
    }
    opts = merge_options(defaults, _section(args, "gradcam"), cli)
    if opts["checkpoint"] is None or opts["image"] is None or opts["out"] is None:
        raise ConfigError("gradcam needs --checkpoint, --image and --out")
    model, kind = load_checkpoint(opts["checkpoint"])
    if kind != "classifier":
        raise DataError("gradcam needs a classifier checkpoint")
    seg_model = None
    if model.cfg.fuse_encoder_features:
        if opts["seg_checkpoint"] is None:
            raise ConfigError("this classifier fuses encoder features; pass --seg-checkpoint")
        seg_model, seg_kind = load_checkpoint(opts["seg_checkpoint"])
        if seg_kind != "segmenter":
            raise DataError("--seg-checkpoint must point at a segmenter checkpoint")
    path = opts["image"]
    if path.endswith(".png"):
        img = hio.read_intensity_png(path) / 255.0
    else:
        img = window_hu(hio.read_hu(path), WindowParams()) / 255.0
    heat = grad_cam(model, img.astype(np.float32), int(opts["cls"]), opts["layer"], seg_model)
    os.makedirs(opts["out"], exist_ok=True)
    stem = os.path.splitext(os.path.basename(path))[0]
    out_path = os.path.join(opts["out"], f"{stem}_class{opts['cls']}_gradcam.png")
    render_overlay(img * 255.0, heat, out_path)
    print(out_path)


def build_parser():
    parser = argparse.ArgumentParser(prog="hemoct")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="generate a phantom dataset")
    _add_common(p)
    p.add_argument("--out")
    p.add_argument("--patients", type=int)
    p.add_argument("--slices-per-patient", type=int, dest="slices_per_patient")
    p.add_argument("--size", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--prevalence")
    p.add_argument("--location-mix", dest="location_mix")
    p.add_argument("--hu-brain", type=float, dest="hu_brain")
    p.add_argument("--hu-blood", type=float, dest="hu_blood")
    p.add_argument("--noise-sd", type=float, dest="noise_sd")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("preprocess", help="preprocess a dataset to windowed PNGs")
    _add_common(p)
    p.add_argument("--manifest")
    p.add_argument("--out")
    p.add_argument("--a", type=float)
    p.add_argument("--b", type=float)
    p.add_argument("--no-noise", action="store_true", dest="no_noise")
    p.add_argument("--no-skull", action="store_true", dest="no_skull")
    p.add_argument("--no-center", action="store_true", dest="no_center")
    p.add_argument("--foreground-threshold", type=float, dest="foreground_threshold")
    p.add_argument("--skull-threshold", type=float, dest="skull_threshold")
    p.set_defaults(func=cmd_preprocess)

    def add_train_args(p):
        _add_common(p)
        p.add_argument("--manifest")
        p.add_argument("--out")
        p.add_argument("--test-fraction", type=float, dest="test_fraction")
        p.add_argument("--epochs", type=int)
        p.add_argument("--batch-size", type=int, dest="batch_size")
        p.add_argument("--lr", type=float)
        p.add_argument("--weight-decay", type=float, dest="weight_decay")
        p.add_argument("--seed", type=int)
        p.add_argument("--preprocess", action="store_true")

    p = sub.add_parser("train-seg", help="stage 1: train the segmenter")
    add_train_args(p)
    p.add_argument("--split-mode", choices=("random", "by_patient"), dest="split_mode")
    p.set_defaults(func=cmd_train_seg)

    p = sub.add_parser("train-cls", help="stage 2: train the classifier")
    add_train_args(p)
    p.add_argument("--split-mode", choices=("random", "by_patient"), dest="split_mode")
    p.add_argument("--seg-checkpoint", dest="seg_checkpoint")
    p.add_argument("--pooling", choices=("max_pool", "wavelet_ll", "wavelet_multiresolution"))
    p.add_argument("--unweighted", action="store_true")
    p.add_argument("--masked", action="store_true")
    p.add_argument("--no-fuse", action="store_true", dest="no_fuse")
    p.set_defaults(func=cmd_train_cls)

    p = sub.add_parser("finetune-loc", help="fine-tune the segmenter on one location")
    add_train_args(p)
    p.add_argument("--split-mode", choices=("random", "by_patient"), dest="split_mode")
    p.add_argument("--checkpoint")
    p.add_argument("--location", choices=hio.LOCATIONS)
    p.set_defaults(func=cmd_finetune_loc)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a manifest")
    _add_common(p)
    p.add_argument("--manifest")
    p.add_argument("--checkpoint")
    p.add_argument("--seg-checkpoint", dest="seg_checkpoint")
    p.add_argument("--out")
    p.add_argument("--preprocess", action="store_true")
    p.add_argument("--masked", action="store_true")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("experiment", help="run one of the four studies")
    _add_common(p)
    p.add_argument("name", choices=EXPERIMENTS)
    p.add_argument("--manifest")
    p.add_argument("--out")
    p.add_argument("--seed", type=int)
    p.add_argument("--test-fraction", type=float, dest="test_fraction")
    p.add_argument("--seg-epochs", type=int, dest="seg_epochs")
    p.add_argument("--cls-epochs", type=int, dest="cls_epochs")
    p.add_argument("--batch-size", type=int, dest="batch_size")
    p.add_argument("--lr", type=float)
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("gradcam", help="render a Grad-CAM overlay")
    _add_common(p)
    p.add_argument("--checkpoint")
    p.add_argument("--seg-checkpoint", dest="seg_checkpoint")
    p.add_argument("--image")
    p.add_argument("--class", type=int, dest="cls")
    p.add_argument("--layer")
    p.add_argument("--out")
    p.set_defaults(func=cmd_gradcam)

    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        args.func(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except DataError as e:
        print(f"data error: {e}", file=sys.stderr)
        return 3
    except HemoctError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
