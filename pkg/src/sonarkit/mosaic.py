"""Panorama compositing from registered wedge images.

Canvas pixel ``c`` corresponds to frame-0 pixel ``c - offset``; a trajectory
pose maps frame-k pixels into frame-0 pixels, so compositing inverse-maps each
canvas pixel into every frame that covers it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from PIL import Image, PngImagePlugin

from .errors import EmptyInput, InvalidArgument
from .geometry import cartesian_point_to_polar, polar_point_to_cartesian, wedge_layout

GAIN_LIMITS = (0.5, 2.0)


@dataclass(frozen=True)
class BlendConfig:
    feather: bool = True
    gain_compensation: bool = True


@dataclass(frozen=True)
class Canvas:
    height: int
    width: int
    offset: tuple

    @property
    def shape(self):
        return (self.height, self.width)


@dataclass
class Panorama:
    pixels: np.ndarray
    coverage: np.ndarray
    offset: tuple
    gains: tuple = ()


def wedge_outline(geometry, meters_per_pixel, step_deg=1.0):
    """Pixel coordinates of the wedge boundary arcs, sampled every ``step_deg``."""
    _, _, apex = wedge_layout(geometry, meters_per_pixel)
    half = geometry.fov_deg / 2
    az = np.unique(np.concatenate([np.arange(-half, half, step_deg), [half, 0.0]]))
    rng = np.concatenate([np.full(az.size, geometry.range_min_m), np.full(az.size, geometry.range_max_m)])
    x, y = polar_point_to_cartesian(rng, np.concatenate([az, az]), apex, meters_per_pixel)
    return np.stack([x, y], axis=1)


def compute_canvas(trajectory, geometry, meters_per_pixel, margin=2):
    """Bounding box of all anchored frames' warped wedge outlines plus ``margin`` px."""
    outline = wedge_outline(geometry, meters_per_pixel)
    pts = [pose.apply(outline) for pose, ok in zip(trajectory.poses, trajectory.anchored) if ok]
    if not pts:
        raise EmptyInput("no anchored frames to place on the canvas")
    pts = np.vstack(pts)
    lo = np.floor(pts.min(axis=0)).astype(int)
    hi = np.ceil(pts.max(axis=0)).astype(int)
    width = int(hi[0] - lo[0] + 1 + 2 * margin)
    height = int(hi[1] - lo[1] + 1 + 2 * margin)
    return Canvas(height, width, (float(margin - lo[0]), float(margin - lo[1])))


def feather_weights(frame, x, y):
    """Normalised distance to the wedge boundary: 0 on the boundary, 1 at the deepest pixel."""
    g, mpp = frame.geometry, frame.meters_per_pixel
    rng, az = cartesian_point_to_polar(x, y, frame.apex, mpp)
    half = math.radians(g.fov_deg / 2)
    lateral = rng * np.sin(np.clip(half - np.radians(np.abs(az)), 0.0, None))
    dist = np.minimum(np.minimum(rng - g.range_min_m, g.range_max_m - rng), lateral) / mpp
    dist = np.clip(dist, 0.0, None)
    ys, xs = np.nonzero(frame.mask)
    r_all, a_all = cartesian_point_to_polar(xs, ys, frame.apex, mpp)
    lat_all = r_all * np.sin(np.clip(half - np.radians(np.abs(a_all)), 0.0, None))
    peak = np.max(np.minimum(np.minimum(r_all - g.range_min_m, g.range_max_m - r_all), lat_all)) / mpp
    return np.clip(dist / peak, 0.0, 1.0) if peak > 0 else np.ones_like(dist)


def masked_bilinear(pixels, mask, x, y):
    """Bilinear sample using only in-mask neighbours (renormalised weights)."""
    H, W = pixels.shape
    x = np.clip(np.asarray(x, dtype=np.float64), 0, W - 1)
    y = np.clip(np.asarray(y, dtype=np.float64), 0, H - 1)
    x0 = np.minimum(np.floor(x).astype(np.intp), W - 2)
    y0 = np.minimum(np.floor(y).astype(np.intp), H - 2)
    tx, ty = x - x0, y - y0
    num = np.zeros_like(x)
    den = np.zeros_like(x)
    for dy, wy in ((0, 1 - ty), (1, ty)):
        for dx, wx in ((0, 1 - tx), (1, tx)):
            w = wy * wx * mask[y0 + dy, x0 + dx]
            num += w * pixels[y0 + dy, x0 + dx]
            den += w
    return np.divide(num, den, out=np.zeros_like(num), where=den > 0)


def _inside(frame, x, y):
    rng, az = cartesian_point_to_polar(x, y, frame.apex, frame.meters_per_pixel)
    return frame.geometry.contains(rng, az)


def gain_compensate(frames, trajectory, min_overlap=500, floor=0.05):
    """Per-frame multiplicative gains chained through consecutive anchored overlaps."""
    gains = [1.0] * len(frames)
    prev = None
    for k, (frame, ok) in enumerate(zip(frames, trajectory.anchored)):
        if not ok:
            gains[k] = gains[prev] if prev is not None else 1.0
            continue
        if prev is None:
            prev = k
            continue
        gains[k] = gains[prev]
        pf = frames[prev]
        ys, xs = np.nonzero(pf.mask)
        rel = trajectory.poses[k].inverse().compose(trajectory.poses[prev])
        q = rel.apply(np.stack([xs, ys], axis=1).astype(np.float64))
        inside = _inside(frame, q[:, 0], q[:, 1])
        v_prev = pf.pixels[ys[inside], xs[inside]]
        v_k = masked_bilinear(frame.pixels, frame.mask, q[inside, 0], q[inside, 1])
        both = (v_prev > floor) & (v_k > floor)
        if np.count_nonzero(both) >= min_overlap:
            ratio = float(np.median(v_prev[both] / v_k[both]))
            gains[k] = float(np.clip(gains[prev] * ratio, *GAIN_LIMITS))
        prev = k
    return gains


def composite(frames, trajectory, blend=None, canvas=None):
    """Feathered, gain-compensated inverse-warp accumulation of anchored frames."""
    blend = blend or BlendConfig()
    if len(frames) != len(trajectory.poses):
        raise InvalidArgument(f"{len(frames)} frames but {len(trajectory.poses)} poses")
    if not any(trajectory.anchored):
        raise EmptyInput("no anchored frames to composite")
    if canvas is None:
        canvas = compute_canvas(trajectory, frames[0].geometry, frames[0].meters_per_pixel)
    gains = gain_compensate(frames, trajectory) if blend.gain_compensation else [1.0] * len(frames)

    shape = canvas.shape
    acc = np.zeros(shape)
    weight = np.zeros(shape)
    plain = np.zeros(shape)
    coverage = np.zeros(shape, dtype=np.int32)
    ox, oy = canvas.offset
    for frame, pose, ok, gain in zip(frames, trajectory.poses, trajectory.anchored, gains):
        if not ok:
            continue
        H, W = frame.shape
        corners = pose.apply([[0, 0], [W - 1, 0], [0, H - 1], [W - 1, H - 1]]) + (ox, oy)
        c0 = max(int(np.floor(corners[:, 0].min())), 0)
        c1 = min(int(np.ceil(corners[:, 0].max())) + 1, shape[1])
        r0 = max(int(np.floor(corners[:, 1].min())), 0)
        r1 = min(int(np.ceil(corners[:, 1].max())) + 1, shape[0])
        if c0 >= c1 or r0 >= r1:
            continue
        yy, xx = np.mgrid[r0:r1, c0:c1]
        local = pose.inverse().apply(np.stack([xx.ravel() - ox, yy.ravel() - oy], axis=1))
        inside = _inside(frame, local[:, 0], local[:, 1])
        if not inside.any():
            continue
        lx, ly = local[inside, 0], local[inside, 1]
        value = np.clip(gain * masked_bilinear(frame.pixels, frame.mask, lx, ly), 0.0, 1.0)
        w = feather_weights(frame, lx, ly) if blend.feather else np.ones_like(value)
        rows, cols = yy.ravel()[inside], xx.ravel()[inside]
        acc[rows, cols] += w * value
        weight[rows, cols] += w
        plain[rows, cols] += value
        coverage[rows, cols] += 1

    pixels = np.zeros(shape)
    has_w = weight > 0
    pixels[has_w] = acc[has_w] / weight[has_w]
    # Pixels seen only on wedge boundaries carry zero feather weight.
    edge_only = ~has_w & (coverage > 0)
    pixels[edge_only] = plain[edge_only] / coverage[edge_only]
    # A lone contributor is copied as is (w * v / w can differ from v in the last bit).
    single = coverage == 1
    pixels[single] = plain[single]
    return Panorama(np.clip(pixels, 0.0, 1.0), coverage, canvas.offset, tuple(gains))


def write_panorama_png(path, panorama, meters_per_pixel=None):
    """16-bit grayscale PNG; canvas offset (and scale) stored as PNG text chunks."""
    info = PngImagePlugin.PngInfo()
    info.add_text("sonarkit:offset", f"{panorama.offset[0]:.9g} {panorama.offset[1]:.9g}")
    if meters_per_pixel is not None:
        info.add_text("sonarkit:meters_per_pixel", f"{meters_per_pixel:.9g}")
    codes = np.round(np.clip(panorama.pixels, 0, 1) * 65535).astype(np.uint16)
    Image.fromarray(codes).save(path, pnginfo=info)


def write_coverage_png(path, panorama):
    Image.fromarray(np.clip(panorama.coverage, 0, 255).astype(np.uint8), mode="L").save(path)


def read_panorama_png(path):
    """Return ``(pixels, offset, meters_per_pixel)`` from a panorama PNG."""
    with Image.open(path) as im:
        pixels = np.asarray(im, dtype=np.float64) / 65535.0
        text = dict(getattr(im, "text", {}) or {})
    offset = tuple(float(v) for v in text.get("sonarkit:offset", "0 0").split())
    mpp = text.get("sonarkit:meters_per_pixel")
    return pixels, offset, float(mpp) if mpp else None
