"""Sonar domain types and wedge geometry.

Conventions used throughout the package:

* A polar frame is indexed ``data[range_bin, beam]``. Range bins are spaced
  uniformly from ``range_min_m`` (row 0) to ``range_max_m`` (last row); beams
  are spaced uniformly from ``-fov/2`` (column 0, left) to ``+fov/2``.
* A Cartesian image is indexed ``pixels[y, x]`` with pixel centres at integer
  coordinates. The sonar looks "up" the image: the apex sits below the fan,
  forward distance grows towards row 0, positive azimuth is to the right.
* Sensor-local metric coordinates are ``(u, v)`` = (lateral right, forward).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from ._validation import check_positive
from .errors import InvalidArgument


@dataclass(frozen=True)
class SensorGeometry:
    range_min_m: float = 0.7
    range_max_m: float = 2.3
    fov_deg: float = 29.0
    beam_count: int = 96
    sample_count: int = 512
    frame_rate_hz: float = 15.0

    def __post_init__(self):
        # Real fields are held at float32 precision so the on-disk header round-trips exactly.
        for name in ("range_min_m", "range_max_m", "fov_deg", "frame_rate_hz"):
            value = float(getattr(self, name))
            if not math.isfinite(value):
                raise InvalidArgument(f"{name} must be finite, got {value}")
            object.__setattr__(self, name, float(np.float32(value)))
        if not 0 < self.range_min_m < self.range_max_m:
            raise InvalidArgument(
                f"need 0 < range_min_m < range_max_m, got {self.range_min_m}, {self.range_max_m}"
            )
        if not 0 < self.fov_deg < 180:
            raise InvalidArgument(f"fov_deg must lie in (0, 180), got {self.fov_deg}")
        if int(self.beam_count) != self.beam_count or self.beam_count < 2:
            raise InvalidArgument(f"beam_count must be an integer >= 2, got {self.beam_count}")
        if int(self.sample_count) != self.sample_count or self.sample_count < 2:
            raise InvalidArgument(f"sample_count must be an integer >= 2, got {self.sample_count}")
        if self.frame_rate_hz <= 0:
            raise InvalidArgument(f"frame_rate_hz must be positive, got {self.frame_rate_hz}")

    @property
    def shape(self):
        return (self.sample_count, self.beam_count)

    @property
    def ranges_m(self):
        return np.linspace(self.range_min_m, self.range_max_m, self.sample_count)

    @property
    def azimuths_deg(self):
        return np.linspace(-self.fov_deg / 2, self.fov_deg / 2, self.beam_count)

    def contains(self, range_m, azimuth_deg):
        """Elementwise test of whether polar coordinates fall inside the wedge."""
        range_m = np.asarray(range_m)
        azimuth_deg = np.asarray(azimuth_deg)
        return (
            (range_m >= self.range_min_m)
            & (range_m <= self.range_max_m)
            & (np.abs(azimuth_deg) <= self.fov_deg / 2)
        )


@dataclass
class PolarFrame:
    geometry: SensorGeometry
    timestamp_us: int
    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.shape != self.geometry.shape:
            raise InvalidArgument(
                f"frame data shape {data.shape} does not match geometry {self.geometry.shape}"
            )
        if not np.all(np.isfinite(data)) or data.min() < 0 or data.max() > 1:
            raise InvalidArgument("frame intensities must lie in [0, 1]")
        self.data = data
        self.timestamp_us = int(self.timestamp_us)


@dataclass
class CartesianImage:
    pixels: np.ndarray
    mask: np.ndarray
    meters_per_pixel: float
    apex: tuple
    geometry: SensorGeometry = field(default_factory=SensorGeometry)

    @property
    def shape(self):
        return self.pixels.shape


def cartesian_point_to_polar(x, y, apex, meters_per_pixel, geometry=None):
    """Map pixel coordinates to ``(range_m, azimuth_deg)``; vectorised over x, y."""
    u = (np.asarray(x, dtype=np.float64) - apex[0]) * meters_per_pixel
    v = (apex[1] - np.asarray(y, dtype=np.float64)) * meters_per_pixel
    return np.hypot(u, v), np.degrees(np.arctan2(u, v))


def polar_point_to_cartesian(range_m, azimuth_deg, apex, meters_per_pixel):
    az = np.radians(azimuth_deg)
    x = apex[0] + np.asarray(range_m) * np.sin(az) / meters_per_pixel
    y = apex[1] - np.asarray(range_m) * np.cos(az) / meters_per_pixel
    return x, y


def wedge_layout(geometry, meters_per_pixel):
    """Image size and apex for the tight sector bounding box plus a 1-px border."""
    check_positive(meters_per_pixel, "meters_per_pixel")
    half = math.radians(geometry.fov_deg / 2)
    half_w = math.ceil(geometry.range_max_m * math.sin(half) / meters_per_pixel)
    f_max = math.ceil(geometry.range_max_m / meters_per_pixel)
    f_min = math.floor(geometry.range_min_m * math.cos(half) / meters_per_pixel)
    width = 2 * half_w + 3
    height = f_max - f_min + 3
    apex = (float(half_w + 1), float(f_max + 1))
    return height, width, apex


def wedge_mask(geometry, meters_per_pixel):
    """Rasterise the annular sector. Returns ``(mask, apex, H, W)``."""
    height, width, apex = wedge_layout(geometry, meters_per_pixel)
    yy, xx = np.mgrid[0:height, 0:width]
    rng, az = cartesian_point_to_polar(xx, yy, apex, meters_per_pixel)
    return geometry.contains(rng, az), apex, height, width


def bilinear_sample(grid, rows, cols):
    """Bilinear interpolation of ``grid`` at fractional indices, clamped to the edge."""
    grid = np.asarray(grid)
    n_rows, n_cols = grid.shape
    rows = np.clip(np.asarray(rows, dtype=np.float64), 0, n_rows - 1)
    cols = np.clip(np.asarray(cols, dtype=np.float64), 0, n_cols - 1)
    r0 = np.minimum(np.floor(rows).astype(np.intp), n_rows - 2) if n_rows > 1 else np.zeros(rows.shape, np.intp)
    c0 = np.minimum(np.floor(cols).astype(np.intp), n_cols - 2) if n_cols > 1 else np.zeros(cols.shape, np.intp)
    tr = rows - r0
    tc = cols - c0
    r1 = np.minimum(r0 + 1, n_rows - 1)
    c1 = np.minimum(c0 + 1, n_cols - 1)
    top = grid[r0, c0] * (1 - tc) + grid[r0, c1] * tc
    bottom = grid[r1, c0] * (1 - tc) + grid[r1, c1] * tc
    return top * (1 - tr) + bottom * tr


def polar_indices(range_m, azimuth_deg, geometry):
    """Fractional (range-bin, beam) indices of polar coordinates."""
    ri = (np.asarray(range_m) - geometry.range_min_m) / (
        geometry.range_max_m - geometry.range_min_m
    ) * (geometry.sample_count - 1)
    bi = (np.asarray(azimuth_deg) + geometry.fov_deg / 2) / geometry.fov_deg * (geometry.beam_count - 1)
    return ri, bi


def sample_polar(data, geometry, range_m, azimuth_deg):
    """Evaluate the bilinear interpolant of a polar grid at polar coordinates."""
    ri, bi = polar_indices(range_m, azimuth_deg, geometry)
    return bilinear_sample(data, ri, bi)


def sample_frame_at(frame, x, y, apex, meters_per_pixel):
    """Scan-conversion interpolant evaluated at arbitrary (sub)pixel positions."""
    rng, az = cartesian_point_to_polar(x, y, apex, meters_per_pixel)
    return sample_polar(frame.data, frame.geometry, rng, az)


def polar_to_cartesian(frame, meters_per_pixel):
    """Scan-convert a polar frame into a wedge image with bilinear interpolation."""
    mask, apex, height, width = wedge_mask(frame.geometry, meters_per_pixel)
    ys, xs = np.nonzero(mask)
    pixels = np.zeros((height, width))
    pixels[ys, xs] = sample_frame_at(frame, xs, ys, apex, meters_per_pixel)
    return CartesianImage(pixels, mask, float(meters_per_pixel), apex, frame.geometry)


class ScanConverter(TransformerMixin, BaseEstimator):
    """Transformer wrapping :func:`polar_to_cartesian` for frame sequences.

    ``transform`` accepts a FrameSequence or an iterable of PolarFrame and
    returns a list of CartesianImage in the same order.
    """

    def __init__(self, meters_per_pixel=0.01):
        self.meters_per_pixel = meters_per_pixel

    def fit(self, X=None, y=None):
        check_positive(self.meters_per_pixel, "meters_per_pixel")
        return self

    def transform(self, X):
        frames = getattr(X, "frames", X)
        if isinstance(frames, PolarFrame):
            frames = [frames]
        return [polar_to_cartesian(f, self.meters_per_pixel) for f in frames]
