"""Synthetic plate scenes, sonar rendering with speckle, and ground truth.

World coordinates are metres with ``X`` along scene columns and ``Y`` along
scene rows; cell ``(i, j)`` of a scene sits at ``(j, i) * meters_per_cell``.
A sensor pose maps sensor-local ``(u, v)`` (lateral, forward) into the world.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .errors import InvalidArgument
from .geometry import PolarFrame, SensorGeometry, bilinear_sample, wedge_layout
from .ingest import FrameSequence, synthesize_timestamps
from .pose import Pose2D

logger = logging.getLogger(__name__)


@dataclass
class Scene:
    reflectivity: np.ndarray
    meters_per_cell: float
    particles: list = field(default_factory=list)
    depressions: list = field(default_factory=list)

    @property
    def size_m(self):
        h, w = self.reflectivity.shape
        return (w - 1) * self.meters_per_cell, (h - 1) * self.meters_per_cell

    def sample(self, X, Y):
        """Bilinear reflectivity at world points, clamped to the scene edge."""
        return bilinear_sample(
            self.reflectivity, np.asarray(Y) / self.meters_per_cell, np.asarray(X) / self.meters_per_cell
        )

    def contains(self, X, Y):
        w, h = self.size_m
        X, Y = np.asarray(X), np.asarray(Y)
        return (X >= 0) & (X <= w) & (Y >= 0) & (Y <= h)


@dataclass(frozen=True)
class NoiseParams:
    speckle_looks: float = 4.0
    additive_sigma: float = 0.02
    range_attenuation: float = 0.0

    def __post_init__(self):
        if not self.speckle_looks > 0:
            raise InvalidArgument(f"speckle_looks must be positive, got {self.speckle_looks}")
        if self.additive_sigma < 0 or self.range_attenuation < 0:
            raise InvalidArgument("additive_sigma and range_attenuation must be non-negative")


def _stamp_discs(grid, mpc, rng, count, radius_range, amp_range, sign):
    h, w = grid.shape
    yy, xx = np.mgrid[0:h, 0:w]
    discs = []
    for _ in range(count):
        cx = rng.uniform(0, (w - 1) * mpc)
        cy = rng.uniform(0, (h - 1) * mpc)
        radius = rng.uniform(*radius_range)
        amp = rng.uniform(*amp_range)
        r_cells = radius / mpc
        i0, i1 = max(int(cy / mpc - r_cells) - 1, 0), min(int(cy / mpc + r_cells) + 2, h)
        j0, j1 = max(int(cx / mpc - r_cells) - 1, 0), min(int(cx / mpc + r_cells) + 2, w)
        sub_y, sub_x = yy[i0:i1, j0:j1] * mpc, xx[i0:i1, j0:j1] * mpc
        inside = (sub_x - cx) ** 2 + (sub_y - cy) ** 2 <= radius**2
        grid[i0:i1, j0:j1][inside] += sign * amp
        discs.append((cx, cy, radius, amp))
    return discs


def make_scene(width_m=3.5, height_m=2.6, meters_per_cell=0.005, particle_density=15.0,
               depression_density=8.0, seed=0):
    """Concrete-plate-like reflectivity map: textured base, bright particles, dark depressions.

    Densities are expected counts per square metre; counts are Poisson.
    """
    if width_m <= 0 or height_m <= 0 or meters_per_cell <= 0:
        raise InvalidArgument("scene dimensions and cell size must be positive")
    rng = np.random.default_rng(seed)
    h = int(round(height_m / meters_per_cell)) + 1
    w = int(round(width_m / meters_per_cell)) + 1
    fine = ndimage.gaussian_filter(rng.standard_normal((h, w)), 0.01 / meters_per_cell)
    coarse = ndimage.gaussian_filter(rng.standard_normal((h, w)), 0.05 / meters_per_cell)
    texture = fine / np.abs(fine).max() + coarse / np.abs(coarse).max()
    grid = 0.4 + 0.1 * texture / np.abs(texture).max()

    area = width_m * height_m
    n_particles = rng.poisson(particle_density * area)
    n_depressions = rng.poisson(depression_density * area)
    particles = _stamp_discs(grid, meters_per_cell, rng, n_particles, (0.01, 0.03), (0.3, 0.5), +1)
    depressions = _stamp_discs(grid, meters_per_cell, rng, n_depressions, (0.015, 0.04), (0.2, 0.35), -1)
    return Scene(np.clip(grid, 0.0, 1.0), float(meters_per_cell), particles, depressions)


def polar_world_points(pose, geometry):
    """World coordinates of every (range bin, beam) node under ``pose``."""
    r = geometry.ranges_m[:, None]
    az = np.radians(geometry.azimuths_deg)[None, :]
    local = np.stack([r * np.sin(az), r * np.cos(az)], axis=-1).reshape(-1, 2)
    world = pose.apply(local)
    return world[:, 0].reshape(geometry.shape), world[:, 1].reshape(geometry.shape)


def render_frame(scene, pose, geometry=None, noise=None, seed=0, timestamp_us=0):
    """Render ``(noisy, clean)`` polar frames of ``scene`` seen from ``pose``."""
    geometry = geometry or SensorGeometry()
    noise = noise or NoiseParams()
    X, Y = polar_world_points(pose, geometry)
    if not np.all(scene.contains(X, Y)):
        logger.warning("wedge footprint leaves the scene; sampling clamps to the edge")
    atten = np.exp(-noise.range_attenuation * geometry.ranges_m)[:, None]
    clean = np.clip(scene.sample(X, Y) * atten, 0.0, 1.0)

    rng = np.random.default_rng(seed)
    looks = noise.speckle_looks
    speckle = rng.gamma(shape=looks, scale=1.0 / looks, size=clean.shape)
    additive = rng.normal(0.0, noise.additive_sigma, size=clean.shape) if noise.additive_sigma > 0 else 0.0
    noisy = np.clip(clean * speckle + additive, 0.0, 1.0)
    return PolarFrame(geometry, timestamp_us, noisy), PolarFrame(geometry, timestamp_us, clean)


def make_dataset(scene, trajectory, geometry=None, noise=None, seed=0):
    """Render a sequence. Returns ``(noisy, clean, poses)``; frame seeds derive from ``seed``."""
    geometry = geometry or SensorGeometry()
    trajectory = list(trajectory)
    if not trajectory:
        raise InvalidArgument("make_dataset needs at least one pose")
    seeds = np.random.SeedSequence(seed).spawn(len(trajectory))
    stamps = synthesize_timestamps(len(trajectory), geometry.frame_rate_hz)
    noisy, clean = [], []
    for pose, ss, ts in zip(trajectory, seeds, stamps):
        n, c = render_frame(scene, pose, geometry, noise, seed=ss, timestamp_us=ts)
        noisy.append(n)
        clean.append(c)
    return FrameSequence(geometry, noisy), FrameSequence(geometry, clean), trajectory


def sweep_trajectory(n_frames, start=(0.9, 0.1), step_m=0.05, jitter_deg=0.2, seed=0):
    """Straight sweep along world X (perpendicular to the acoustic axis) with rotation jitter."""
    rng = np.random.default_rng(seed)
    jitter = rng.uniform(-jitter_deg, jitter_deg, size=n_frames)
    return [Pose2D(jitter[k], (start[0] + k * step_m, start[1])) for k in range(n_frames)]


def scene_for_sweep(n_frames, step_m=0.05, geometry=None, margin_m=0.15):
    """Scene size and sweep start that keep every footprint inside the scene."""
    geometry = geometry or SensorGeometry()
    half_w = geometry.range_max_m * math.sin(math.radians(geometry.fov_deg / 2))
    width = 2 * (half_w + margin_m) + (n_frames - 1) * step_m
    height = geometry.range_max_m + 2 * margin_m
    start = (half_w + margin_m, margin_m)
    return width, height, start


def footprint_overlap(pose_a, pose_b, geometry=None, resolution_m=0.005):
    """Fraction of footprint A also covered by footprint B (pixel count on a world grid)."""
    geometry = geometry or SensorGeometry()
    r = geometry.range_max_m
    corners = []
    for pose in (pose_a, pose_b):
        corners.append(pose.apply([[0.0, 0.0], [-r, r], [r, r], [-r, 0.0], [r, 0.0]]))
    corners = np.vstack(corners)
    lo, hi = corners.min(axis=0) - resolution_m, corners.max(axis=0) + resolution_m
    xs = np.arange(lo[0], hi[0], resolution_m)
    ys = np.arange(lo[1], hi[1], resolution_m)
    X, Y = np.meshgrid(xs, ys)
    pts = np.stack([X.ravel(), Y.ravel()], axis=1)

    def inside(pose):
        local = pose.inverse().apply(pts)
        rng = np.hypot(local[:, 0], local[:, 1])
        az = np.degrees(np.arctan2(local[:, 0], local[:, 1]))
        return geometry.contains(rng, az)

    in_a, in_b = inside(pose_a), inside(pose_b)
    return float(np.count_nonzero(in_a & in_b) / max(np.count_nonzero(in_a), 1))


def metric_to_pixel_pose(pose, apex, meters_per_pixel):
    """Express a sensor-local metric pose in wedge-image pixel coordinates."""
    # pixel -> local is u = (x - ax) * mpp, v = (ay - y) * mpp; the y flip negates rotation.
    ax, ay = apex
    inner = Pose2D(-pose.rotation_deg, (pose.translation[0] / meters_per_pixel,
                                        -pose.translation[1] / meters_per_pixel))
    shift = Pose2D(0.0, (ax, ay))
    return shift.compose(inner).compose(shift.inverse())


def pixel_trajectory(world_poses, geometry, meters_per_pixel):
    """Ground-truth frame-k-to-frame-0 pixel poses for wedge images at ``meters_per_pixel``."""
    _, _, apex = wedge_layout(geometry, meters_per_pixel)
    base = world_poses[0].inverse()
    return [metric_to_pixel_pose(base.compose(p), apex, meters_per_pixel) for p in world_poses]


def render_scene_canvas(scene, pose0, geometry, meters_per_pixel, shape, offset):
    """Ground-truth scene on a panorama canvas whose pixel = frame-0 pixel + ``offset``."""
    _, _, apex = wedge_layout(geometry, meters_per_pixel)
    yy, xx = np.mgrid[0:shape[0], 0:shape[1]].astype(np.float64)
    u = (xx - offset[0] - apex[0]) * meters_per_pixel
    v = (apex[1] - (yy - offset[1])) * meters_per_pixel
    world = pose0.apply(np.stack([u.ravel(), v.ravel()], axis=1))
    return scene.sample(world[:, 0], world[:, 1]).reshape(shape)
