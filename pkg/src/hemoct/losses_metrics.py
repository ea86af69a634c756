"""Losses and evaluation metrics: weighted multi-label BCE, class weights,
soft dice, IoU/F-score, and tie-aware ROC AUC."""

import json
import warnings

import numpy as np
import torch
from scipy.stats import rankdata

from .errors import ShapeError, UndefinedAUCError

PROB_EPS = 1e-7


def class_weights(labels):
    """Per-class negative/positive count ratio.

    A class with zero positives gets its negative count as a capped weight
    (with a warning); zero negatives degrade to 1/positives so weights stay
    positive and finite.
    """
    y = np.asarray(labels)
    if y.ndim != 2 or y.shape[0] < 1:
        raise ShapeError(f"labels must be N x C with N >= 1, got {y.shape}")
    if not np.isin(y, (0, 1)).all():
        raise ShapeError("labels must be binary")
    pos = y.sum(axis=0).astype(np.float64)
    neg = y.shape[0] - pos
    for c in np.nonzero(pos == 0)[0]:
        warnings.warn(
            f"class {c} has no positive examples; capping weight at {int(neg[c])}",
            stacklevel=2,
        )
    return np.maximum(neg, 1.0) / np.maximum(pos, 1.0)


def weighted_bce(x, y, w):
    """Weighted binary cross-entropy over an N x C batch.

    -(1/NC) * sum[ w_c * y * log(x) + (1-y) * log(1-x) ], with x clamped
    to [eps, 1-eps]. The weight applies to the positive term only.
    """
    x = torch.as_tensor(x, dtype=torch.float64) if not torch.is_tensor(x) else x
    y = torch.as_tensor(y, dtype=x.dtype, device=x.device) if not torch.is_tensor(y) else y.to(x.dtype)
    w = torch.as_tensor(w, dtype=x.dtype, device=x.device) if not torch.is_tensor(w) else w.to(x.dtype)
    if x.shape != y.shape:
        raise ShapeError(f"prob/label shape mismatch: {tuple(x.shape)} vs {tuple(y.shape)}")
    if w.numel() != x.shape[-1]:
        raise ShapeError(f"need one weight per class, got {w.numel()} for C={x.shape[-1]}")
    xc = x.clamp(PROB_EPS, 1.0 - PROB_EPS)
    terms = w * y * torch.log(xc) + (1.0 - y) * torch.log(1.0 - xc)
    return -terms.mean()


def dice_loss(pred, target, smooth=1.0):
    """Soft dice loss: 1 - (2*sum(p*t)+s) / (sum(p)+sum(t)+s)."""
    pred = torch.as_tensor(pred) if not torch.is_tensor(pred) else pred
    target = (
        torch.as_tensor(target, dtype=pred.dtype, device=pred.device)
        if not torch.is_tensor(target)
        else target.to(pred.dtype)
    )
    if pred.shape != target.shape:
        raise ShapeError(f"pred/target shape mismatch: {tuple(pred.shape)} vs {tuple(target.shape)}")
    inter = (pred * target).sum()
    return 1.0 - (2.0 * inter + smooth) / (pred.sum() + target.sum() + smooth)


def iou_fscore(pred, target, threshold=0.5):
    """Hard IoU and F-score after binarizing pred at threshold.

    Empty prediction and empty target count as perfect overlap (1, 1).
    """
    p = np.asarray(pred if not torch.is_tensor(pred) else pred.detach().cpu().numpy())
    t = np.asarray(target if not torch.is_tensor(target) else target.detach().cpu().numpy())
    if p.shape != t.shape:
        raise ShapeError(f"pred/target shape mismatch: {p.shape} vs {t.shape}")
    pb = p >= threshold
    tb = t > 0
    inter = np.logical_and(pb, tb).sum()
    union = np.logical_or(pb, tb).sum()
    if union == 0:
        return 1.0, 1.0
    iou = inter / union
    denom = pb.sum() + tb.sum()
    fscore = 2.0 * inter / denom
    return float(iou), float(fscore)


def roc_auc(scores, labels):
    """Mann-Whitney AUC with half-credit for ties."""
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = np.asarray(labels).ravel()
    if s.shape != y.shape:
        raise ShapeError(f"scores/labels length mismatch: {s.shape} vs {y.shape}")
    n_pos = int((y == 1).sum())
    n_neg = int((y == 0).sum())
    if n_pos == 0 or n_neg == 0:
        raise UndefinedAUCError("AUC needs at least one positive and one negative")
    ranks = rankdata(s, method="average")
    pos_rank_sum = ranks[y == 1].sum()
    return float((pos_rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def write_eval_report(path, rows):
    """Structured text report: one `name<TAB>class<TAB>value` line per metric,
    plus a JSON summary next to it."""
    lines = [f"{name}\t{cls}\t{value:.6f}" for name, cls, value in rows]
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write("\n".join(lines) + "\n")
    summary = {}
    for name, cls, value in rows:
        summary.setdefault(name, {})[cls] = value
    json_path = path + ".json"
    with open(json_path, "w", encoding="utf-8") as f:
        json.dump(summary, f, indent=2, sort_keys=True)
        f.write("\n")
    return json_path


def read_eval_report(path):
    rows = []
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            line = line.rstrip("\n")
            if not line:
                continue
            name, cls, value = line.split("\t")
            rows.append((name, cls, float(value)))
    return rows
