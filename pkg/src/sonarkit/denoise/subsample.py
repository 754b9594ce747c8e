"""Neighbour subsampling of 2x2 cells into paired half-resolution views.

A choice map has shape ``(H//2, W//2, 2)``; entry ``[i, j, k]`` is the
position (0..3, row-major inside the cell) that feeds sub-image ``k + 1``.
The two positions of a cell are always distinct.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import InvalidArgument


@dataclass
class SubsamplePair:
    sub1: np.ndarray
    sub2: np.ndarray
    choice_map: np.ndarray


def random_choice_map(shape, rng):
    """Uniform ordered pair of distinct cell positions for every 2x2 cell."""
    h, w = shape[0] // 2, shape[1] // 2
    if h < 1 or w < 1:
        raise InvalidArgument(f"image must be at least 2x2, got {tuple(shape)}")
    first = rng.integers(0, 4, size=(h, w))
    second = (first + rng.integers(1, 4, size=(h, w))) % 4
    return np.stack([first, second], axis=-1).astype(np.int64)


def cell_indices(choice_map, which):
    """Row and column indices selected by ``choice_map`` for sub-image ``which``."""
    if which not in (1, 2):
        raise InvalidArgument(f"which must be 1 or 2, got {which}")
    pos = np.asarray(choice_map)[..., which - 1]
    h, w = pos.shape[-2:]
    rows = 2 * np.arange(h)[:, None] + pos // 2
    cols = 2 * np.arange(w)[None, :] + pos % 2
    return rows, cols


def apply_subsample(image, choice_map, which):
    """Re-apply stored cell choices to ``image`` (numpy array or torch tensor, ``[..., H, W]``)."""
    choice_map = np.asarray(choice_map)
    if choice_map.ndim != 3 or choice_map.shape[-1] != 2:
        raise InvalidArgument(f"choice_map must have shape (h, w, 2), got {choice_map.shape}")
    h, w = choice_map.shape[:2]
    H, W = image.shape[-2:]
    if H // 2 != h or W // 2 != w:
        raise InvalidArgument(f"choice_map {choice_map.shape[:2]} does not fit image {tuple(image.shape[-2:])}")
    rows, cols = cell_indices(choice_map, which)
    return image[..., rows, cols]


def neighbor_subsample(image, rng):
    """Split ``image`` into two half-resolution views from distinct pixels of each 2x2 cell."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 2 or image.shape[0] < 2 or image.shape[1] < 2:
        raise InvalidArgument(f"image must be 2D and at least 2x2, got {image.shape}")
    choice_map = random_choice_map(image.shape, rng)
    return SubsamplePair(
        apply_subsample(image, choice_map, 1), apply_subsample(image, choice_map, 2), choice_map
    )
