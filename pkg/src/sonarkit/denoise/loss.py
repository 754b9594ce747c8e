"""Self-supervised neighbour loss with a gradient-stopped consistency term."""

from __future__ import annotations

from typing import NamedTuple

import numpy as np
import torch

from ..errors import InvalidArgument
from .subsample import random_choice_map


class LossTerms(NamedTuple):
    total: torch.Tensor
    loss1: torch.Tensor
    loss2: torch.Tensor
    choice_map: np.ndarray


def model_dtype(model):
    for p in getattr(model, "parameters", lambda: [])():
        return p.dtype
    return torch.float64


def _gather(images, maps, which):
    """Per-sample gather of cell picks: images (N, 1, H, W), maps (N, h, w, 2) -> (N, 1, h, w)."""
    n, _, H, W = images.shape
    h, w = maps.shape[1:3]
    pos = maps[..., which - 1]
    rows = 2 * torch.arange(h).view(1, h, 1) + pos // 2
    cols = 2 * torch.arange(w).view(1, 1, w) + pos % 2
    flat = (rows * W + cols).reshape(n, 1, h * w)
    return torch.gather(images.reshape(n, 1, H * W), 2, flat).reshape(n, 1, h, w)


def _masked_mse(diff, weight):
    if weight is None:
        return diff.pow(2).mean()
    denom = weight.sum()
    if denom == 0:
        return diff.sum() * 0.0
    return (diff.pow(2) * weight).sum() / denom


def batch_loss(model, images, maps, gamma, mask=None):
    """Loss over a batch.

    images: (N, 1, H, W) tensor; maps: (N, H//2, W//2, 2) int64 tensor;
    mask: optional (H, W) or (N, 1, H, W) boolean tensor of valid pixels.
    Returns ``(total, loss1, loss2)`` as scalar tensors.
    """
    H, W = images.shape[-2:]
    images = images[..., : 2 * (H // 2), : 2 * (W // 2)]
    sub1, sub2 = _gather(images, maps, 1), _gather(images, maps, 2)
    out1 = model(sub1)

    with torch.no_grad():
        full = model(images)
        sub_star = _gather(full, maps, 1) - _gather(full, maps, 2)

    weight = None
    if mask is not None:
        m = mask.to(images.dtype)
        if m.ndim == 2:
            m = m.expand(images.shape[0], 1, *m.shape)
        m = m[..., : 2 * (H // 2), : 2 * (W // 2)]
        weight = _gather(m, maps, 1) * _gather(m, maps, 2)

    diff = out1 - sub2
    loss1 = _masked_mse(diff, weight)
    loss2 = _masked_mse(diff - sub_star, weight)
    return loss1 + gamma * loss2, loss1, loss2


def compute_loss(model, image, gamma, rng=None, mask=None, choice_map=None):
    """Loss for one 2D image.

    ``model`` maps (N, 1, h, w) tensors to the same shape. A fresh choice map is
    drawn from ``rng`` unless ``choice_map`` is given. Gradients flow only
    through the sub-image branch; the full-image pass is evaluated without grad.
    """
    if gamma < 0:
        raise InvalidArgument(f"gamma must be >= 0, got {gamma}")
    dtype = model_dtype(model)
    img = torch.as_tensor(np.asarray(image, dtype=np.float64), dtype=dtype)
    if img.ndim != 2 or img.shape[0] < 2 or img.shape[1] < 2:
        raise InvalidArgument(f"image must be 2D and at least 2x2, got {tuple(img.shape)}")
    if choice_map is None:
        if rng is None:
            raise InvalidArgument("either rng or choice_map is required")
        choice_map = random_choice_map(img.shape, rng)
    choice_map = np.asarray(choice_map, dtype=np.int64)
    if choice_map.shape != (img.shape[0] // 2, img.shape[1] // 2, 2):
        raise InvalidArgument(f"choice_map shape {choice_map.shape} does not fit image {tuple(img.shape)}")
    mask_t = None
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != tuple(img.shape):
            raise InvalidArgument(f"mask shape {mask.shape} does not match image {tuple(img.shape)}")
        mask_t = torch.as_tensor(mask)
    total, loss1, loss2 = batch_loss(
        model, img[None, None], torch.as_tensor(choice_map)[None], gamma, mask_t
    )
    return LossTerms(total, loss1, loss2, choice_map)
