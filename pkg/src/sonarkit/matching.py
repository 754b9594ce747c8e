"""Detector-free coarse-to-fine matching between wedge images.

Coarse stage: every valid cell of image A (grid stride ``coarse_cell``) is
described by the zero-mean, unit-norm patch around it and compared by
normalised cross-correlation with candidate patches of image B taken at half
the cell stride; mutual nearest neighbours above ``min_score`` survive.
Fine stage: a full-resolution ZNCC search around each coarse pair, with a
quadratic fit of the 3x3 correlation neighbourhood for subpixel position.

No keypoint detector and no randomness are involved.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ._validation import check_image, check_mask, check_same_shape
from .errors import FormatError, InvalidArgument

FLAT_NORM = 1e-6


@dataclass(frozen=True)
class MatchConfig:
    coarse_cell: int = 8
    descriptor_scale: int = 3
    min_score: float = 0.35
    fine_search_radius: int = 4
    max_matches: int = 1000

    def __post_init__(self):
        if self.coarse_cell < 4:
            raise InvalidArgument(f"coarse_cell must be >= 4, got {self.coarse_cell}")
        if self.descriptor_scale < 1 or self.fine_search_radius < 1 or self.max_matches < 1:
            raise InvalidArgument("descriptor_scale, fine_search_radius and max_matches must be >= 1")

    @property
    def patch(self):
        return self.coarse_cell * self.descriptor_scale


@dataclass
class MatchSet:
    points_a: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))
    points_b: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))
    scores: np.ndarray = field(default_factory=lambda: np.zeros(0))
    frame_a: str = "a"
    frame_b: str = "b"

    def __post_init__(self):
        self.points_a = np.asarray(self.points_a, dtype=np.float64).reshape(-1, 2)
        self.points_b = np.asarray(self.points_b, dtype=np.float64).reshape(-1, 2)
        self.scores = np.asarray(self.scores, dtype=np.float64).reshape(-1)
        if not len(self.points_a) == len(self.points_b) == len(self.scores):
            raise InvalidArgument("points_a, points_b and scores must have equal length")
        if not np.all(np.isfinite(self.scores)):
            raise InvalidArgument("match scores must be finite")

    def __len__(self):
        return len(self.scores)

    def swapped(self):
        return MatchSet(self.points_b, self.points_a, self.scores, self.frame_b, self.frame_a)


@dataclass
class CoarseMatch:
    top_left_a: tuple
    top_left_b: tuple
    score: float


def _normalize(windows):
    """Zero-mean, unit-norm flattening of (..., P, P) windows; returns (descriptors, norms)."""
    flat = windows.reshape(*windows.shape[:-2], -1).astype(np.float64)
    flat = flat - flat.mean(axis=-1, keepdims=True)
    norms = np.linalg.norm(flat, axis=-1)
    safe = np.where(norms > FLAT_NORM, norms, 1.0)
    return flat / safe[..., None], norms


def _patch_grid(image, mask, size, stride):
    """Descriptors for size x size patches on a stride grid that lie fully inside ``mask``."""
    if image.shape[0] < size or image.shape[1] < size:
        return np.zeros((0, size * size)), np.zeros((0, 2), dtype=np.intp)
    windows = sliding_window_view(image, (size, size))[::stride, ::stride]
    rows = np.arange(windows.shape[0]) * stride
    cols = np.arange(windows.shape[1]) * stride
    inside = sliding_window_view(mask, (size, size))[::stride, ::stride].all(axis=(-1, -2))
    desc, norms = _normalize(windows)
    keep = inside & (norms >= FLAT_NORM)
    r_idx, c_idx = np.nonzero(keep)
    corners = np.stack([rows[r_idx], cols[c_idx]], axis=1)
    return desc[keep], corners


def coarse_match(img_a, img_b, mask_a=None, mask_b=None, cfg=None):
    """Mutual-nearest-neighbour cell correspondences by patch NCC.

    Returns CoarseMatch entries with patch top-left corners as (row, col).
    """
    cfg = cfg or MatchConfig()
    img_a, img_b = check_image(img_a, "img_a"), check_image(img_b, "img_b")
    mask_a = check_mask(mask_a, img_a.shape) if mask_a is not None else np.ones(img_a.shape, bool)
    mask_b = check_mask(mask_b, img_b.shape) if mask_b is not None else np.ones(img_b.shape, bool)
    size = cfg.patch
    desc_a, corners_a = _patch_grid(img_a, mask_a, size, cfg.coarse_cell)
    desc_b, corners_b = _patch_grid(img_b, mask_b, size, max(cfg.coarse_cell // 2, 1))
    if len(desc_a) == 0 or len(desc_b) == 0:
        return []
    scores = desc_a @ desc_b.T
    best_b = np.argmax(scores, axis=1)
    best_a = np.argmax(scores, axis=0)
    out = []
    for i, j in enumerate(best_b):
        s = scores[i, j]
        if best_a[j] == i and s >= cfg.min_score:
            out.append(CoarseMatch(tuple(corners_a[i]), tuple(corners_b[j]), float(min(s, 1.0))))
    return out


def quadratic_peak_offset(values):
    """Subpixel (dx, dy) of the maximum of a least-squares quadratic fitted to a 3x3 block."""
    f = np.asarray(values, dtype=np.float64)
    x = np.array([-1.0, 0.0, 1.0])
    X, Y = np.meshgrid(x, x)
    b = (f * X).sum() / 6.0
    c = (f * Y).sum() / 6.0
    e = (f * X * Y).sum() / 4.0
    d = (f * (X**2 - 2.0 / 3.0)).sum() / 2.0
    g = (f * (Y**2 - 2.0 / 3.0)).sum() / 2.0
    hess = np.array([[2 * d, e], [e, 2 * g]])
    det = hess[0, 0] * hess[1, 1] - e * e
    if not (hess[0, 0] < 0 and det > 0):
        return 0.0, 0.0
    dx, dy = np.linalg.solve(hess, [-b, -c])
    return float(np.clip(dx, -1.0, 1.0)), float(np.clip(dy, -1.0, 1.0))


def refine_matches(img_a, img_b, coarse, cfg=None, frame_ids=("a", "b"), mask_b=None):
    """Full-resolution ZNCC search around each coarse pair, with subpixel peak fitting.

    With ``mask_b`` given, candidate windows reaching outside it are not scored.
    """
    cfg = cfg or MatchConfig()
    img_a, img_b = check_image(img_a, "img_a"), check_image(img_b, "img_b")
    mask_b = check_mask(mask_b, img_b.shape) if mask_b is not None else np.ones(img_b.shape, bool)
    size, radius = cfg.patch, cfg.fine_search_radius
    half = (size - 1) / 2.0
    pa, pb, sc = [], [], []
    for m in coarse:
        ra, ca = m.top_left_a
        rb, cb = m.top_left_b
        if ra < 0 or ca < 0 or ra + size > img_a.shape[0] or ca + size > img_a.shape[1]:
            continue
        template, tnorm = _normalize(img_a[ra:ra + size, ca:ca + size])
        if tnorm < FLAT_NORM:
            continue
        r0, c0 = rb - radius, cb - radius
        r1, c1 = rb + radius + size, cb + radius + size
        lo_r, lo_c = max(r0, 0), max(c0, 0)
        region = img_b[lo_r:min(r1, img_b.shape[0]), lo_c:min(c1, img_b.shape[1])]
        corr = np.full((2 * radius + 1, 2 * radius + 1), -np.inf)
        if region.shape[0] >= size and region.shape[1] >= size:
            desc, norms = _normalize(sliding_window_view(region, (size, size)))
            region_mask = mask_b[lo_r:lo_r + region.shape[0], lo_c:lo_c + region.shape[1]]
            valid = sliding_window_view(region_mask, (size, size)).all(axis=(-1, -2))
            vals = np.where((norms >= FLAT_NORM) & valid, desc @ template, -np.inf)
            dr, dc = lo_r - r0, lo_c - c0
            corr[dr:dr + vals.shape[0], dc:dc + vals.shape[1]] = vals
        iy, ix = np.unravel_index(np.argmax(corr), corr.shape)
        peak = corr[iy, ix]
        if not np.isfinite(peak) or peak < cfg.min_score:
            continue
        if iy in (0, 2 * radius) or ix in (0, 2 * radius):
            continue
        block = corr[iy - 1:iy + 2, ix - 1:ix + 2]
        if not np.all(np.isfinite(block)):
            continue
        ox, oy = quadratic_peak_offset(block)
        pa.append((ca + half, ra + half))
        pb.append((cb + (ix - radius) + ox + half, rb + (iy - radius) + oy + half))
        sc.append(float(np.clip(peak, -1.0, 1.0)))
    if len(sc) > cfg.max_matches:
        keep = np.sort(np.argsort(-np.asarray(sc), kind="stable")[: cfg.max_matches])
        pa, pb, sc = [pa[k] for k in keep], [pb[k] for k in keep], [sc[k] for k in keep]
    return MatchSet(pa, pb, sc, *frame_ids)


def match_pair(frame_a, frame_b, cfg=None, frame_ids=("a", "b")):
    """Match two CartesianImage frames (coarse then fine). Points are (x, y) pixels."""
    cfg = cfg or MatchConfig()
    check_same_shape(frame_a.pixels, frame_b.pixels, ("frame_a", "frame_b"))
    coarse = coarse_match(frame_a.pixels, frame_b.pixels, frame_a.mask, frame_b.mask, cfg)
    return refine_matches(frame_a.pixels, frame_b.pixels, coarse, cfg, frame_ids, frame_b.mask)


def match_pair_symmetric(frame_a, frame_b, cfg=None, frame_ids=("a", "b")):
    """Union of A->B matches and the swapped B->A matches.

    Under noise each direction picks up a small, opposite selection bias
    (candidate windows are restricted to B's wedge), so pooling both cancels it.
    """
    forward = match_pair(frame_a, frame_b, cfg, frame_ids)
    backward = match_pair(frame_b, frame_a, cfg, frame_ids[::-1]).swapped()
    return MatchSet(
        np.vstack([forward.points_a, backward.points_a]),
        np.vstack([forward.points_b, backward.points_b]),
        np.concatenate([forward.scores, backward.scores]),
        *frame_ids,
    )


def save_matches(path, matches):
    lines = [
        "# sonarkit matches v1",
        f"# frame_a {matches.frame_a}",
        f"# frame_b {matches.frame_b}",
        "# x_a y_a x_b y_b score",
    ]
    for (xa, ya), (xb, yb), s in zip(matches.points_a, matches.points_b, matches.scores):
        lines.append(f"{xa:.6g} {ya:.6g} {xb:.6g} {yb:.6g} {s:.6g}")
    Path(path).write_text("\n".join(lines) + "\n")


def load_matches(path):
    frame_a, frame_b = "a", "b"
    rows = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        text = line.strip()
        if not text:
            continue
        if text.startswith("#"):
            parts = text[1:].split(None, 1)
            if len(parts) == 2 and parts[0] == "frame_a":
                frame_a = parts[1].strip()
            elif len(parts) == 2 and parts[0] == "frame_b":
                frame_b = parts[1].strip()
            continue
        fields = text.split()
        try:
            values = [float(v) for v in fields]
        except ValueError:
            values = []
        if len(values) != 5 or not all(np.isfinite(values)):
            raise FormatError(f"{path}: line {lineno}: expected 5 numbers 'x_a y_a x_b y_b score'")
        rows.append(values)
    arr = np.asarray(rows, dtype=np.float64).reshape(-1, 5)
    return MatchSet(arr[:, 0:2], arr[:, 2:4], arr[:, 4], frame_a, frame_b)
