"""Grad-CAM heatmaps over the classifier, plus overlay rendering."""

import numpy as np
import torch
import torch.nn.functional as F
from PIL import Image

from .errors import ShapeError
from .models import encoder_features


def grad_cam(model, image, class_index, layer=None, seg_model=None):
    """Gradient-weighted class activation map for one image.

    image: 2D array in [0, 1] (or 1xHxW). Channel weights are the spatial
    mean of d(logit)/d(activation); the rectified weighted activation sum is
    bilinearly upsampled to the input size and min-max normalized (an
    all-zero map stays all-zero). Default layer: last conv block.
    """
    img = np.asarray(image, dtype=np.float32)
    if img.ndim == 3 and img.shape[0] == 1:
        img = img[0]
    if img.ndim != 2:
        raise ShapeError(f"image must be 2D, got shape {img.shape}")
    if not 0 <= class_index < model.cfg.num_classes:
        raise ShapeError(f"class_index {class_index} out of range for C={model.cfg.num_classes}")
    if layer is None:
        layer = model.conv_layer_names()[-1]
    block = model.get_block(layer)

    acts, grads = {}, {}
    h1 = block.register_forward_hook(lambda m, i, o: acts.update(a=o))
    h2 = block.register_full_backward_hook(lambda m, gi, go: grads.update(g=go[0]))
    try:
        model.eval()
        x = torch.from_numpy(img)[None, None].requires_grad_(True)
        feats = None
        if model.cfg.fuse_encoder_features:
            if seg_model is None:
                raise ShapeError("classifier fuses encoder features; pass seg_model")
            with torch.no_grad():
                feats = encoder_features(seg_model, x)
        model.zero_grad()
        logits = model(x, feats)
        logits[0, class_index].backward()
    finally:
        h1.remove()
        h2.remove()

    weights = grads["g"].mean(dim=(2, 3), keepdim=True)
    cam = torch.relu((weights * acts["a"]).sum(dim=1, keepdim=True))
    cam = F.interpolate(cam, size=img.shape, mode="bilinear", align_corners=False)[0, 0]
    cam = cam.detach().numpy()
    peak = cam.max()
    if peak > 0:
        cam = (cam - cam.min()) / (peak - cam.min())
    return cam


def _jet(values):
    """Fixed jet-style colormap on [0, 1] -> float RGB."""
    v = np.clip(np.asarray(values, dtype=np.float64), 0.0, 1.0)
    r = np.clip(1.5 - np.abs(4.0 * v - 3.0), 0.0, 1.0)
    g = np.clip(1.5 - np.abs(4.0 * v - 2.0), 0.0, 1.0)
    b = np.clip(1.5 - np.abs(4.0 * v - 1.0), 0.0, 1.0)
    return np.stack([r, g, b], axis=-1)


def render_overlay(image, heatmap, out_path):
    """Side-by-side PNG: input | colormapped heatmap | alpha-blended overlay.

    The blend uses the heatmap value as per-pixel alpha, so an all-zero
    heatmap leaves the overlay panel identical to the input panel.
    """
    img = np.asarray(image, dtype=np.float64)
    hm = np.asarray(heatmap, dtype=np.float64)
    if img.shape != hm.shape:
        raise ShapeError(f"image shape {img.shape} != heatmap shape {hm.shape}")
    if img.max() <= 1.0:
        img = img * 255.0
    gray = np.repeat(img[..., None], 3, axis=-1)
    heat = _jet(hm) * 255.0
    alpha = hm[..., None]
    blended = (1.0 - alpha) * gray + alpha * heat
    panel = np.concatenate([gray, heat, blended], axis=1)
    panel = np.floor(np.clip(panel, 0.0, 255.0) + 0.5).astype(np.uint8)
    Image.fromarray(panel, mode="RGB").save(out_path, format="PNG")
    return out_path
