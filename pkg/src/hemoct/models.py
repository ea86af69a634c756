"""The three networks: U-Net segmenter, wavelet-pooled VGG-style multi-label
classifier, and the fusion head joining classifier features with frozen
encoder features.

Desk-scale by default (small widths, plain strided-conv encoder) so the
test suite runs on CPU in minutes; production-scale widths are just config.
"""

import dataclasses
import json
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ConfigError, DataError, ShapeError
from .wavelet import haar_dwt2, haar_pyramid

POOLING_MODES = ("max_pool", "wavelet_ll", "wavelet_multiresolution")

CHECKPOINT_MAGIC = "hemoct-checkpoint"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class SegModelConfig:
    encoder_widths: tuple = (16, 32, 64, 128)
    input_channels: int = 1

    def __post_init__(self):
        if len(self.encoder_widths) < 3:
            raise ConfigError("segmenter needs at least 3 encoder stages")
        if any(w <= 0 for w in self.encoder_widths):
            raise ConfigError("encoder widths must be positive")

    @property
    def stages(self):
        return len(self.encoder_widths)


@dataclass(frozen=True)
class ClsModelConfig:
    block_widths: tuple = (16, 32, 64, 128)
    pooling_mode: str = "wavelet_multiresolution"
    fuse_encoder_features: bool = True
    num_classes: int = 4
    input_channels: int = 1
    encoder_feature_channels: int = 128

    def __post_init__(self):
        if self.pooling_mode not in POOLING_MODES:
            raise ConfigError(
                f"pooling_mode must be one of {POOLING_MODES}, got {self.pooling_mode!r}"
            )
        if self.num_classes < 1:
            raise ConfigError("num_classes must be >= 1")
        if not self.block_widths or any(w <= 0 for w in self.block_widths):
            raise ConfigError("block widths must be positive")


def _conv_block(in_ch, out_ch):
    return nn.Sequential(
        nn.Conv2d(in_ch, out_ch, 3, padding=1),
        nn.BatchNorm2d(out_ch),
        nn.ReLU(inplace=True),
    )


class UNet(nn.Module):
    """Plain strided-conv encoder with skip connections and mirrored decoder;
    one logit channel out."""

    def __init__(self, cfg: SegModelConfig):
        super().__init__()
        self.cfg = cfg
        w = cfg.encoder_widths
        self.enc_blocks = nn.ModuleList()
        self.downs = nn.ModuleList()
        self.enc_blocks.append(_conv_block(cfg.input_channels, w[0]))
        for i in range(1, len(w)):
            self.downs.append(
                nn.Sequential(
                    nn.Conv2d(w[i - 1], w[i], 3, stride=2, padding=1),
                    nn.BatchNorm2d(w[i]),
                    nn.ReLU(inplace=True),
                )
            )
            self.enc_blocks.append(_conv_block(w[i], w[i]))
        self.ups = nn.ModuleList()
        self.dec_blocks = nn.ModuleList()
        for i in range(len(w) - 2, -1, -1):
            self.ups.append(nn.ConvTranspose2d(w[i + 1], w[i], 2, stride=2))
            self.dec_blocks.append(_conv_block(2 * w[i], w[i]))
        self.head = nn.Conv2d(w[0], 1, 1)

    def _check_input(self, x):
        if x.ndim != 4 or x.shape[1] != self.cfg.input_channels:
            raise ShapeError(f"expected B x {self.cfg.input_channels} x H x W, got {tuple(x.shape)}")
        div = 2 ** (self.cfg.stages - 1)
        if x.shape[2] % div or x.shape[3] % div:
            raise ShapeError(f"spatial dims must be divisible by {div}, got {tuple(x.shape[2:])}")

    def encode(self, x):
        """All encoder stage activations, shallowest first."""
        self._check_input(x)
        feats = [self.enc_blocks[0](x)]
        for down, block in zip(self.downs, self.enc_blocks[1:]):
            feats.append(block(down(feats[-1])))
        return feats

    def forward(self, x):
        feats = self.encode(x)
        h = feats[-1]
        for i, (up, block) in enumerate(zip(self.ups, self.dec_blocks)):
            skip = feats[-2 - i]
            h = block(torch.cat([up(h), skip], dim=1))
        return self.head(h)


class WaveletClassifier(nn.Module):
    """VGG-style blocks with configurable downsampling and a multi-label head.

    Pooling modes: max_pool (stride-2 max), wavelet_ll (low-pass Haar band),
    wavelet_multiresolution (low-pass pooling plus the input image's own Haar
    detail bands concatenated into each matching-resolution block). The head
    global-average-pools the last block, optionally concatenates pooled frozen
    encoder features, and maps through one fully connected layer to C logits.
    """

    def __init__(self, cfg: ClsModelConfig):
        super().__init__()
        self.cfg = cfg
        w = cfg.block_widths
        multires = cfg.pooling_mode == "wavelet_multiresolution"
        self.blocks = nn.ModuleList()
        in_ch = cfg.input_channels
        for i, width in enumerate(w):
            if i > 0 and multires:
                in_ch += 3 * cfg.input_channels
            self.blocks.append(_conv_block(in_ch, width))
            in_ch = width
        head_in = w[-1]
        if cfg.fuse_encoder_features:
            head_in += cfg.encoder_feature_channels
        self.fc = nn.Linear(head_in, cfg.num_classes)

    def conv_layer_names(self):
        return [f"block{i}" for i in range(len(self.blocks))]

    def get_block(self, name):
        names = self.conv_layer_names()
        if name not in names:
            raise ConfigError(f"unknown layer {name!r}; valid layers: {', '.join(names)}")
        return self.blocks[names.index(name)]

    def _pool(self, h):
        if self.cfg.pooling_mode == "max_pool":
            return F.max_pool2d(h, 2)
        return haar_dwt2(h).ll

    def forward(self, x, encoder_feats=None):
        if x.ndim != 4 or x.shape[1] != self.cfg.input_channels:
            raise ShapeError(f"expected B x {self.cfg.input_channels} x H x W, got {tuple(x.shape)}")
        div = 2 ** len(self.cfg.block_widths)
        if x.shape[2] % div or x.shape[3] % div:
            raise ShapeError(f"spatial dims must be divisible by {div}, got {tuple(x.shape[2:])}")
        if self.cfg.fuse_encoder_features:
            if encoder_feats is None:
                raise ConfigError("fuse_encoder_features is on but no encoder features given")
            if encoder_feats.shape[0] != x.shape[0]:
                raise ShapeError("encoder feature batch size mismatch")
            if encoder_feats.shape[1] != self.cfg.encoder_feature_channels:
                raise ShapeError(
                    f"encoder features have {encoder_feats.shape[1]} channels, "
                    f"config says {self.cfg.encoder_feature_channels}"
                )
        multires = self.cfg.pooling_mode == "wavelet_multiresolution"
        details = haar_pyramid(x, len(self.blocks) - 1) if multires else None
        h = x
        for i, block in enumerate(self.blocks):
            if i > 0 and multires:
                h = torch.cat([h, details[i - 1]], dim=1)
            h = self._pool(block(h))
        feat = h.mean(dim=(2, 3))
        if self.cfg.fuse_encoder_features:
            feat = torch.cat([feat, encoder_feats.mean(dim=(2, 3))], dim=1)
        return self.fc(feat)


def build_segmenter(cfg=SegModelConfig()):
    return UNet(cfg)


def build_classifier(cfg=ClsModelConfig()):
    return WaveletClassifier(cfg)


def seg_forward(model, batch):
    """Probability maps in (0, 1), same spatial shape as the input."""
    return torch.sigmoid(model(batch))


def encoder_features(model, batch):
    """Deepest encoder stage activation of the segmenter (pure read)."""
    return model.encode(batch)[-1]


def cls_forward(model, batch, encoder_feats=None):
    """Per-class independent probabilities in (0, 1)."""
    return torch.sigmoid(model(batch, encoder_feats))


# -- checkpoint container -----------------------------------------------------

_CONFIG_CLASSES = {"segmenter": SegModelConfig, "classifier": ClsModelConfig}


def _config_to_dict(cfg):
    d = dataclasses.asdict(cfg)
    for k, v in d.items():
        if isinstance(v, tuple):
            d[k] = list(v)
    return d


def _config_from_dict(kind, d):
    cls = _CONFIG_CLASSES[kind]
    kwargs = dict(d)
    for f in dataclasses.fields(cls):
        if f.name in kwargs and isinstance(kwargs[f.name], list):
            kwargs[f.name] = tuple(kwargs[f.name])
    return cls(**kwargs)


def save_checkpoint(path, kind, model):
    """Versioned container: JSON header (config echo + array table) followed
    by raw little-endian array bytes. Byte-deterministic for equal weights."""
    if kind not in _CONFIG_CLASSES:
        raise ConfigError(f"unknown checkpoint kind {kind!r}")
    state = model.state_dict()
    arrays = []
    blobs = []
    for name, tensor in state.items():
        arr = tensor.detach().cpu().numpy()
        shape = list(arr.shape)
        le = np.ascontiguousarray(arr).astype(arr.dtype.newbyteorder("<"), copy=False)
        arrays.append({"name": name, "dtype": le.dtype.str, "shape": shape})
        blobs.append(le.tobytes())
    header = {
        "format": CHECKPOINT_MAGIC,
        "version": CHECKPOINT_VERSION,
        "kind": kind,
        "config": _config_to_dict(model.cfg),
        "arrays": arrays,
    }
    with open(path, "wb") as f:
        f.write(json.dumps(header, sort_keys=True).encode("utf-8"))
        f.write(b"\n\0")
        for blob in blobs:
            f.write(blob)
    return path


def load_checkpoint(path):
    """Rebuild the model from its config echo; shape validation fails closed."""
    try:
        with open(path, "rb") as f:
            raw = f.read()
    except OSError as e:
        raise DataError(f"cannot read checkpoint {path}: {e}") from e
    sep = raw.find(b"\n\0")
    if sep < 0:
        raise DataError(f"checkpoint {path}: missing header separator")
    try:
        header = json.loads(raw[:sep].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise DataError(f"checkpoint {path}: bad header: {e}") from e
    if header.get("format") != CHECKPOINT_MAGIC:
        raise DataError(f"checkpoint {path}: not a hemoct checkpoint")
    if header.get("version") != CHECKPOINT_VERSION:
        raise DataError(f"checkpoint {path}: unsupported version {header.get('version')}")
    kind = header.get("kind")
    if kind not in _CONFIG_CLASSES:
        raise DataError(f"checkpoint {path}: unknown kind {kind!r}")
    cfg = _config_from_dict(kind, header["config"])
    model = build_segmenter(cfg) if kind == "segmenter" else build_classifier(cfg)
    expected = model.state_dict()
    if [a["name"] for a in header["arrays"]] != list(expected.keys()):
        raise DataError(f"checkpoint {path}: parameter names do not match config")
    offset = sep + 2
    state = {}
    for meta in header["arrays"]:
        dtype = np.dtype(meta["dtype"])
        shape = tuple(meta["shape"])
        want = expected[meta["name"]]
        if shape != tuple(want.shape):
            raise DataError(
                f"checkpoint {path}: array {meta['name']} has shape {shape}, "
                f"config implies {tuple(want.shape)}"
            )
        count = int(np.prod(shape)) if shape else 1
        nbytes = count * dtype.itemsize
        if offset + nbytes > len(raw):
            raise DataError(f"checkpoint {path}: truncated array data")
        arr = np.frombuffer(raw[offset : offset + nbytes], dtype=dtype).reshape(shape)
        offset += nbytes
        state[meta["name"]] = torch.from_numpy(arr.copy()).to(want.dtype)
    if offset != len(raw):
        raise DataError(f"checkpoint {path}: trailing bytes")
    model.load_state_dict(state)
    model.eval()
    return model, kind
