"""Feature-guided refinement: guided filtering of the raw frame with the
first-stage denoised frame as guide, blended by a gradient saliency map.

Windows are clipped at the image border: statistics of a window use only the
pixels it actually covers, and each output pixel averages the linear models of
the windows that contain it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage
from sklearn.base import BaseEstimator, TransformerMixin

from ._validation import as_stack, check_image, check_same_shape
from .errors import InvalidArgument


@dataclass(frozen=True)
class RefineConfig:
    radius: int = 4
    eps: float = 0.01**2
    saliency_blend: bool = True

    def __post_init__(self):
        if int(self.radius) != self.radius or self.radius < 1:
            raise InvalidArgument(f"radius must be an integer >= 1, got {self.radius}")
        if not self.eps >= 0:
            raise InvalidArgument(f"eps must be >= 0, got {self.eps}")


def _window_bounds(n, radius):
    idx = np.arange(n)
    return np.maximum(idx - radius, 0), np.minimum(idx + radius, n - 1) + 1


def box_mean(image, radius):
    """Mean over the (2r+1)^2 window centred on each pixel, clipped to the image."""
    image = np.asarray(image, dtype=np.float64)
    H, W = image.shape
    integral = np.zeros((H + 1, W + 1))
    integral[1:, 1:] = image.cumsum(0).cumsum(1)
    r0, r1 = _window_bounds(H, radius)
    c0, c1 = _window_bounds(W, radius)
    total = (
        integral[r1][:, c1] - integral[r0][:, c1] - integral[r1][:, c0] + integral[r0][:, c0]
    )
    return total / np.outer(r1 - r0, c1 - c0)


def guided_filter(p, I, radius, eps):
    """Edge-preserving filter of ``p`` whose output is locally affine in the guide ``I``."""
    p = check_image(p, "p")
    I = check_image(I, "I")
    check_same_shape(p, I, ("p", "I"))
    if int(radius) != radius or radius < 1:
        raise InvalidArgument(f"radius must be an integer >= 1, got {radius}")
    if eps < 0:
        raise InvalidArgument(f"eps must be >= 0, got {eps}")
    if min(p.shape) < 2 * radius + 1:
        raise InvalidArgument(f"image {p.shape} is smaller than the {2 * radius + 1}-px window")
    mean_I = box_mean(I, radius)
    mean_p = box_mean(p, radius)
    var_I = box_mean(I * I, radius) - mean_I**2
    cov_Ip = box_mean(I * p, radius) - mean_I * mean_p
    denom = var_I + eps
    # Zero-variance windows with eps = 0 carry no slope information.
    a = np.divide(cov_Ip, denom, out=np.zeros_like(denom), where=denom > 0)
    b = mean_p - a * mean_I
    return box_mean(a, radius) * I + box_mean(b, radius)


def saliency_map(I, smooth_radius=2):
    """Sobel gradient magnitude, box-smoothed and min-max scaled to [0, 1]."""
    I = check_image(I, "I")
    magnitude = np.hypot(ndimage.sobel(I, axis=0), ndimage.sobel(I, axis=1))
    smooth = box_mean(magnitude, smooth_radius)
    lo, hi = smooth.min(), smooth.max()
    if hi - lo <= 1e-12 * max(1.0, hi):
        return np.zeros_like(smooth)
    return np.clip((smooth - lo) / (hi - lo), 0.0, 1.0)


def feature_guided_block(p_raw, I_first, cfg=None):
    """Final denoised image from the raw frame and the first-stage output."""
    cfg = cfg or RefineConfig()
    p_raw = check_image(p_raw, "p_raw")
    I_first = check_image(I_first, "I_first")
    check_same_shape(p_raw, I_first, ("p_raw", "I_first"))
    q = guided_filter(p_raw, I_first, cfg.radius, cfg.eps)
    if cfg.saliency_blend:
        S = saliency_map(I_first)
        q = S * q + (1.0 - S) * I_first
    return np.clip(q, 0.0, 1.0)


class FeatureGuidedRefiner(TransformerMixin, BaseEstimator):
    """Stateless transformer around :func:`feature_guided_block`.

    ``transform(X, guide)`` takes the raw frames ``X`` and the first-stage
    denoised frames ``guide`` (same count and shapes) and returns an array stack.
    """

    def __init__(self, radius=4, eps=1e-4, saliency_blend=True):
        self.radius = radius
        self.eps = eps
        self.saliency_blend = saliency_blend

    def fit(self, X=None, y=None):
        RefineConfig(self.radius, self.eps, self.saliency_blend)
        return self

    def transform(self, X, guide):
        cfg = RefineConfig(self.radius, self.eps, self.saliency_blend)
        raw, first = as_stack(X, "X"), as_stack(guide, "guide")
        if len(raw) != len(first):
            raise InvalidArgument(f"{len(raw)} raw frames but {len(first)} guide frames")
        return np.stack([feature_guided_block(p, i, cfg) for p, i in zip(raw, first)])
