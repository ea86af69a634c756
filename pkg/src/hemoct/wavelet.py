"""Orthonormal single-level 2D Haar transform used as the pooling substitute.

Per 2x2 block [[p, q], [r, s]]:
    ll = (p+q+r+s)/2   hl = (p-q+r-s)/2
    lh = (p+q-r-s)/2   hh = (p-q-r+s)/2
The 1/2 scaling makes the transform orthonormal, so energy is conserved
and the inverse uses the same coefficients. Operates channelwise on the
trailing two dimensions of a tensor; autograd-compatible.
"""

from dataclasses import dataclass

import torch

from .errors import ShapeError


@dataclass
class Subbands:
    ll: torch.Tensor
    lh: torch.Tensor
    hl: torch.Tensor
    hh: torch.Tensor


def _check_even(x):
    if x.ndim < 2:
        raise ShapeError(f"need at least 2 dims, got shape {tuple(x.shape)}")
    h, w = x.shape[-2], x.shape[-1]
    if h % 2 or w % 2:
        raise ShapeError(f"spatial dims must be even, got {h}x{w}")


def haar_dwt2(x):
    """Single-level orthonormal Haar DWT over the last two dims."""
    if not torch.is_tensor(x):
        x = torch.as_tensor(x)
    _check_even(x)
    p = x[..., 0::2, 0::2]
    q = x[..., 0::2, 1::2]
    r = x[..., 1::2, 0::2]
    s = x[..., 1::2, 1::2]
    ll = (p + q + r + s) / 2
    hl = (p - q + r - s) / 2
    lh = (p + q - r - s) / 2
    hh = (p - q - r + s) / 2
    return Subbands(ll=ll, lh=lh, hl=hl, hh=hh)


def haar_idwt2(bands):
    """Exact inverse of haar_dwt2."""
    ll, lh, hl, hh = bands.ll, bands.lh, bands.hl, bands.hh
    for name, b in (("lh", lh), ("hl", hl), ("hh", hh)):
        if b.shape != ll.shape:
            raise ShapeError(f"band {name} shape {tuple(b.shape)} != ll {tuple(ll.shape)}")
    p = (ll + hl + lh + hh) / 2
    q = (ll - hl + lh - hh) / 2
    r = (ll + hl - lh - hh) / 2
    s = (ll - hl - lh + hh) / 2
    shape = list(ll.shape)
    shape[-2] *= 2
    shape[-1] *= 2
    out = ll.new_empty(shape)
    out[..., 0::2, 0::2] = p
    out[..., 0::2, 1::2] = q
    out[..., 1::2, 0::2] = r
    out[..., 1::2, 1::2] = s
    return out


def wavelet_pool(x):
    """Stride-2 pooling via the Haar transform.

    Returns (pooled, details): pooled is the ll band, details the channel
    concatenation [lh, hl, hh] at half resolution (3x channels). Expects a
    channel dimension just before the spatial dims.
    """
    bands = haar_dwt2(x)
    details = torch.cat([bands.lh, bands.hl, bands.hh], dim=-3)
    return bands.ll, details


def haar_pyramid(x, levels):
    """Repeated Haar decomposition of an image.

    Returns a list of `levels` detail tensors; entry i holds the [lh, hl, hh]
    concatenation at resolution H/2^(i+1), taken from the i-th ll band.
    """
    details = []
    cur = x
    for _ in range(levels):
        cur, d = wavelet_pool(cur)
        details.append(d)
    return details
