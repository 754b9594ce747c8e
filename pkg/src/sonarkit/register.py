"""Robust rigid registration of match sets and trajectory chaining.

A pose estimated from a MatchSet maps points of image A onto image B.
Trajectory poses map frame-k pixel coordinates into frame-0 pixel coordinates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .errors import FormatError, InsufficientData, InvalidArgument, RegistrationFailure
from .pose import Pose2D

MODELS = ("rigid", "similarity")


@dataclass(frozen=True)
class RansacConfig:
    iterations: int = 1000
    inlier_threshold_px: float = 2.0
    min_inliers: int = 10
    seed: int = 0
    model: str = "rigid"

    def __post_init__(self):
        if self.iterations < 1:
            raise InvalidArgument(f"iterations must be >= 1, got {self.iterations}")
        if not self.inlier_threshold_px > 0:
            raise InvalidArgument(f"inlier_threshold_px must be > 0, got {self.inlier_threshold_px}")
        if self.model not in MODELS:
            raise InvalidArgument(f"model must be one of {MODELS}, got {self.model!r}")


class RigidEstimate(NamedTuple):
    pose: Pose2D
    inliers: np.ndarray
    rms: float


def fit_rigid(src, dst, model="rigid"):
    """Least-squares rotation + translation (optionally scale) with ``dst ≈ s R src + t``."""
    src = np.asarray(src, dtype=np.float64)
    dst = np.asarray(dst, dtype=np.float64)
    ca, cb = src.mean(axis=0), dst.mean(axis=0)
    a, b = src - ca, dst - cb
    cross = np.sum(a[:, 0] * b[:, 1] - a[:, 1] * b[:, 0])
    dot = np.sum(a[:, 0] * b[:, 0] + a[:, 1] * b[:, 1])
    theta = math.atan2(cross, dot)
    scale = 1.0
    if model == "similarity":
        na = np.sum(a * a)
        scale = math.sqrt(np.sum(b * b) / na) if na > 0 else 1.0
    c, s = math.cos(theta), math.sin(theta)
    t = cb - scale * np.array([c * ca[0] - s * ca[1], s * ca[0] + c * ca[1]])
    return Pose2D(math.degrees(theta), (t[0], t[1]), scale)


def _hypotheses(src, dst, i, j, model):
    """Closed-form two-point fits for index arrays i, j. Returns (cos, sin, scale, tx, ty, valid)."""
    ca, cb = (src[i] + src[j]) / 2, (dst[i] + dst[j]) / 2
    a, b = src[i] - ca, dst[i] - cb
    # The second point is the mirror image about the centroid, so sums are twice these.
    cross = a[:, 0] * b[:, 1] - a[:, 1] * b[:, 0]
    dot = a[:, 0] * b[:, 0] + a[:, 1] * b[:, 1]
    theta = np.arctan2(cross, dot)
    na = np.sum(a * a, axis=1)
    valid = na > 1e-12
    scale = np.ones_like(theta)
    if model == "similarity":
        scale = np.sqrt(np.sum(b * b, axis=1) / np.where(valid, na, 1.0))
    c, s = np.cos(theta), np.sin(theta)
    tx = cb[:, 0] - scale * (c * ca[:, 0] - s * ca[:, 1])
    ty = cb[:, 1] - scale * (s * ca[:, 0] + c * ca[:, 1])
    return c, s, scale, tx, ty, valid


def residuals(pose, src, dst):
    return np.linalg.norm(pose.apply(src) - np.asarray(dst), axis=1)


def _ransac_points(src, dst, cfg):
    n = len(src)
    if n < 2:
        raise InsufficientData(f"need at least 2 matches, got {n}")
    rng = np.random.default_rng(cfg.seed)
    i = rng.integers(0, n, size=cfg.iterations)
    j = (i + rng.integers(1, n, size=cfg.iterations)) % n
    c, s, scale, tx, ty, valid = _hypotheses(src, dst, i, j, cfg.model)
    px = scale[:, None] * (c[:, None] * src[None, :, 0] - s[:, None] * src[None, :, 1]) + tx[:, None]
    py = scale[:, None] * (s[:, None] * src[None, :, 0] + c[:, None] * src[None, :, 1]) + ty[:, None]
    err = np.hypot(px - dst[None, :, 0], py - dst[None, :, 1])
    inl = err < cfg.inlier_threshold_px
    counts = np.where(valid, inl.sum(axis=1), -1)
    cost = np.where(inl, err, cfg.inlier_threshold_px).sum(axis=1)
    best = int(np.lexsort((cost, -counts))[0])
    inliers = inl[best]
    if counts[best] < 2:
        pose = Pose2D(math.degrees(math.atan2(s[best], c[best])), (tx[best], ty[best]), scale[best])
        return RigidEstimate(pose, inliers, math.nan)

    for _ in range(10):
        pose = fit_rigid(src[inliers], dst[inliers], cfg.model)
        updated = residuals(pose, src, dst) < cfg.inlier_threshold_px
        if updated.sum() < 2 or np.array_equal(updated, inliers):
            break
        inliers = updated
    res = residuals(pose, src, dst)
    inliers = res < cfg.inlier_threshold_px
    rms = float(np.sqrt(np.mean(res[inliers] ** 2))) if inliers.any() else math.nan
    return RigidEstimate(pose, inliers, rms)


def estimate_rigid(matches, cfg=None):
    """RANSAC over two-point samples, then least-squares refit on the consensus.

    Returns ``(pose, inlier_flags, rms_residual)`` with ``pose`` mapping A to B.
    Raises InsufficientData for fewer than two matches and RegistrationFailure
    (carrying the best attempt) when the consensus is below ``min_inliers``.
    """
    cfg = cfg or RansacConfig()
    est = _ransac_points(matches.points_a, matches.points_b, cfg)
    n_in = int(est.inliers.sum())
    if n_in < cfg.min_inliers:
        raise RegistrationFailure(
            f"consensus of {n_in} inliers is below min_inliers={cfg.min_inliers}",
            pose=est.pose, inliers=est.inliers, rms=est.rms,
        )
    return est


class RansacRigidRegressor(RegressorMixin, BaseEstimator):
    """Point-set regressor: ``fit(src, dst)`` estimates the pose, ``predict(src)`` applies it."""

    def __init__(self, iterations=1000, inlier_threshold_px=2.0, min_inliers=10,
                 model="rigid", random_state=0):
        self.iterations = iterations
        self.inlier_threshold_px = inlier_threshold_px
        self.min_inliers = min_inliers
        self.model = model
        self.random_state = random_state

    def fit(self, X, y):
        X = check_array(X, dtype=np.float64)
        y = check_array(y, dtype=np.float64)
        if X.shape != y.shape or X.shape[1] != 2:
            raise InvalidArgument(f"X and y must both be (n, 2), got {X.shape} and {y.shape}")
        cfg = RansacConfig(self.iterations, self.inlier_threshold_px, self.min_inliers,
                           self.random_state, self.model)
        est = _ransac_points(X, y, cfg)
        if est.inliers.sum() < cfg.min_inliers:
            raise RegistrationFailure("consensus below min_inliers", est.pose, est.inliers, est.rms)
        self.pose_, self.inlier_mask_, self.rms_residual_ = est
        return self

    def predict(self, X):
        check_is_fitted(self, "pose_")
        return self.pose_.apply(check_array(X, dtype=np.float64))

    def score(self, X, y, sample_weight=None):
        """Negative RMS transfer error (higher is better)."""
        err = np.linalg.norm(self.predict(X) - np.asarray(y), axis=1)
        return -float(np.sqrt(np.average(err**2, weights=sample_weight)))


@dataclass
class Trajectory:
    poses: list = field(default_factory=list)
    anchored: list = field(default_factory=list)
    inliers: list = field(default_factory=list)
    residuals: list = field(default_factory=list)

    def __len__(self):
        return len(self.poses)


class EdgeResult(NamedTuple):
    pose: Pose2D
    inliers: int = 0
    rms: float = math.nan


def chain_trajectory(relative):
    """Compose per-edge relative poses (frame k -> frame k-1) into absolute poses.

    Each item may be a Pose2D, an EdgeResult, or ``None`` / an exception for a
    failed edge; a failed edge repeats the previous pose and leaves the frame
    unanchored.
    """
    traj = Trajectory([Pose2D.identity()], [True], [0], [0.0])
    for item in relative:
        if isinstance(item, Pose2D):
            item = EdgeResult(item)
        if isinstance(item, EdgeResult):
            traj.poses.append(traj.poses[-1].compose(item.pose))
            traj.anchored.append(True)
            traj.inliers.append(int(item.inliers))
            traj.residuals.append(float(item.rms))
        else:
            traj.poses.append(traj.poses[-1])
            traj.anchored.append(False)
            traj.inliers.append(0)
            traj.residuals.append(math.nan)
    return traj


HEADER = ("# sonarkit trajectory v1", "# index theta_deg tx ty anchored inliers")


def save_trajectory(path, trajectory):
    lines = list(HEADER)
    for k, (pose, anchored, n_in) in enumerate(
        zip(trajectory.poses, trajectory.anchored, trajectory.inliers)
    ):
        tx, ty = pose.translation
        lines.append(f"{k} {pose.rotation_deg:.9g} {tx:.9g} {ty:.9g} {int(bool(anchored))} {int(n_in)}")
    Path(path).write_text("\n".join(lines) + "\n")


def load_trajectory(path):
    traj = Trajectory()
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        text = line.strip()
        if not text or text.startswith("#"):
            continue
        fields = text.split()
        try:
            if len(fields) != 6:
                raise ValueError
            index, theta, tx, ty = int(fields[0]), float(fields[1]), float(fields[2]), float(fields[3])
            anchored, n_in = int(fields[4]), int(fields[5])
            if index != len(traj.poses) or anchored not in (0, 1):
                raise ValueError
            pose = Pose2D(theta, (tx, ty))
        except ValueError:
            raise FormatError(
                f"{path}: line {lineno}: expected 'index theta_deg tx ty anchored inliers'"
            ) from None
        traj.poses.append(pose)
        traj.anchored.append(bool(anchored))
        traj.inliers.append(n_in)
        traj.residuals.append(math.nan)
    return traj
