"""Image quality and trajectory error metrics."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from ._validation import check_image, check_mask, check_same_shape
from .errors import InvalidArgument
from .pose import wrap_degrees

SSIM_WINDOW = 7
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def psnr(a, b, mask=None):
    """Peak signal-to-noise ratio in dB for [0, 1] images; ``inf`` when identical."""
    a, b = check_image(a, "a"), check_image(b, "b")
    check_same_shape(a, b)
    mask = check_mask(mask, a.shape)
    diff = (a - b) if mask is None else (a - b)[mask]
    if diff.size == 0:
        raise InvalidArgument("psnr over an empty mask")
    mse = float(np.mean(diff**2))
    if mse == 0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)


def _window_sums(x, k):
    """Sums over every fully contained k x k window."""
    integral = np.zeros((x.shape[0] + 1, x.shape[1] + 1))
    integral[1:, 1:] = x.cumsum(0).cumsum(1)
    return integral[k:, k:] - integral[:-k, k:] - integral[k:, :-k] + integral[:-k, :-k]


def ssim_map(a, b, window=SSIM_WINDOW):
    """SSIM for each fully contained uniform window (sample covariance, dynamic range 1)."""
    n = window * window
    c1, c2 = SSIM_K1**2, SSIM_K2**2
    mu_a, mu_b = _window_sums(a, window) / n, _window_sums(b, window) / n
    norm = n / (n - 1)
    var_a = (_window_sums(a * a, window) / n - mu_a**2) * norm
    var_b = (_window_sums(b * b, window) / n - mu_b**2) * norm
    cov = (_window_sums(a * b, window) / n - mu_a * mu_b) * norm
    return ((2 * mu_a * mu_b + c1) * (2 * cov + c2)) / (
        (mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2)
    )


def ssim(a, b, mask=None, window=SSIM_WINDOW):
    """Mean SSIM over windows lying entirely inside the image (and inside ``mask``)."""
    a = check_image(a, "a", min_shape=(window, window))
    b = check_image(b, "b", min_shape=(window, window))
    check_same_shape(a, b)
    values = ssim_map(a, b, window)
    mask = check_mask(mask, a.shape)
    if mask is not None:
        full = _window_sums(mask.astype(np.float64), window) >= window * window - 0.5
        values = values[full]
        if values.size == 0:
            raise InvalidArgument("no SSIM window lies entirely inside the mask")
    return float(np.clip(values.mean(), -1.0, 1.0))


def trajectory_error(estimated, ground_truth):
    """(translation RMSE px, rotation RMSE deg) over frames 1..n after aligning frame 0."""
    if len(estimated) != len(ground_truth):
        raise InvalidArgument(f"{len(estimated)} estimated vs {len(ground_truth)} true poses")
    if len(estimated) < 2:
        return 0.0, 0.0
    align = ground_truth[0].compose(estimated[0].inverse())
    dt, dr = [], []
    for est, gt in zip(estimated[1:], ground_truth[1:]):
        e = align.compose(est)
        dt.append(np.subtract(e.translation, gt.translation))
        dr.append(float(wrap_degrees(e.rotation_deg - gt.rotation_deg)))
    dt, dr = np.asarray(dt), np.asarray(dr)
    return float(np.sqrt(np.mean(np.sum(dt**2, axis=1)))), float(np.sqrt(np.mean(dr**2)))


def median_filter_baseline(image, size=3):
    return ndimage.median_filter(np.asarray(image, dtype=np.float64), size=size, mode="reflect")


def edge_region(clean, quantile=0.9):
    """Pixels in the top gradient-magnitude decile of the clean reference."""
    clean = check_image(clean, "clean")
    g = np.hypot(ndimage.sobel(clean, axis=0), ndimage.sobel(clean, axis=1))
    return g >= np.quantile(g, quantile)


def flat_region(clean, quantile=0.5):
    clean = check_image(clean, "clean")
    g = np.hypot(ndimage.sobel(clean, axis=0), ndimage.sobel(clean, axis=1))
    return g <= np.quantile(g, quantile)


@dataclass
class EvalReport:
    frame_psnr: list = field(default_factory=list)
    frame_ssim: list = field(default_factory=list)
    translation_rmse_px: float = math.nan
    rotation_rmse_deg: float = math.nan
    inlier_ratios: list = field(default_factory=list)
    extra: dict = field(default_factory=dict)

    def summary(self):
        def med(values):
            finite = [v for v in values if math.isfinite(v)]
            return float(np.median(finite)) if finite else math.nan

        out = {
            "frames": len(self.frame_psnr),
            "median_psnr_db": med(self.frame_psnr),
            "median_ssim": med(self.frame_ssim),
            "translation_rmse_px": self.translation_rmse_px,
            "rotation_rmse_deg": self.rotation_rmse_deg,
            "mean_inlier_ratio": float(np.mean(self.inlier_ratios)) if self.inlier_ratios else math.nan,
        }
        out.update(self.extra)
        return out

    def write(self, report_path, table_path=None):
        lines = [f"{k}={_fmt(v)}" for k, v in self.summary().items()]
        Path(report_path).write_text("\n".join(lines) + "\n")
        if table_path is not None:
            rows = ["frame,psnr_db,ssim"]
            rows += [f"{i},{_fmt(p)},{_fmt(s)}" for i, (p, s) in
                     enumerate(zip(self.frame_psnr, self.frame_ssim))]
            Path(table_path).write_text("\n".join(rows) + "\n")


def _fmt(value):
    if isinstance(value, float):
        return "inf" if value == math.inf else f"{value:.6g}"
    return str(value)
