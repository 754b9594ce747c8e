"""2D rigid (optionally scaled) poses."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgument


@dataclass(frozen=True)
class Pose2D:
    """Maps a point ``p`` to ``scale * R(rotation_deg) @ p + translation``."""

    rotation_deg: float = 0.0
    translation: tuple = (0.0, 0.0)
    scale: float = 1.0

    def __post_init__(self):
        tx, ty = (float(v) for v in self.translation)
        object.__setattr__(self, "translation", (tx, ty))
        object.__setattr__(self, "rotation_deg", float(self.rotation_deg))
        object.__setattr__(self, "scale", float(self.scale))
        if not all(math.isfinite(v) for v in (tx, ty, self.rotation_deg, self.scale)):
            raise InvalidArgument("pose parameters must be finite")

    @classmethod
    def identity(cls):
        return cls()

    @classmethod
    def from_matrix(cls, matrix):
        m = np.asarray(matrix, dtype=np.float64)
        scale = math.hypot(m[0, 0], m[1, 0])
        theta = math.degrees(math.atan2(m[1, 0], m[0, 0]))
        return cls(theta, (m[0, 2], m[1, 2]), scale)

    @property
    def rotation(self):
        t = math.radians(self.rotation_deg)
        c, s = math.cos(t), math.sin(t)
        return np.array([[c, -s], [s, c]])

    def matrix(self):
        m = np.eye(3)
        m[:2, :2] = self.scale * self.rotation
        m[:2, 2] = self.translation
        return m

    def apply(self, points):
        """Transform an (N, 2) array of (x, y) points."""
        pts = np.asarray(points, dtype=np.float64)
        return pts @ (self.scale * self.rotation).T + np.asarray(self.translation)

    def compose(self, other):
        """``self ∘ other``: apply ``other`` first, then ``self``."""
        return Pose2D.from_matrix(self.matrix() @ other.matrix())

    def inverse(self):
        return Pose2D.from_matrix(np.linalg.inv(self.matrix()))

    def __matmul__(self, other):
        return self.compose(other)


def wrap_degrees(angle):
    """Wrap angles to (-180, 180]."""
    a = np.mod(np.asarray(angle, dtype=np.float64) + 180.0, 360.0) - 180.0
    return np.where(a == -180.0, 180.0, a)
