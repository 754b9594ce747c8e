"""Input validation helpers shared by the estimators and functional APIs."""

import numpy as np
from sklearn.utils.validation import check_array

from .errors import InvalidArgument


def check_image(image, name="image", min_shape=(1, 1), dtype=np.float64):
    """Return ``image`` as a finite 2D float array, raising InvalidArgument otherwise."""
    try:
        arr = check_array(
            image, dtype=dtype, ensure_2d=True, ensure_min_samples=1, ensure_min_features=1
        )
    except ValueError as exc:
        raise InvalidArgument(f"{name}: {exc}") from exc
    if arr.shape[0] < min_shape[0] or arr.shape[1] < min_shape[1]:
        raise InvalidArgument(f"{name} must be at least {min_shape[0]}x{min_shape[1]}, got {arr.shape}")
    return arr


def check_same_shape(a, b, names=("a", "b")):
    if a.shape != b.shape:
        raise InvalidArgument(f"{names[0]} {a.shape} and {names[1]} {b.shape} differ in shape")


def check_mask(mask, shape, name="mask"):
    if mask is None:
        return None
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != shape:
        raise InvalidArgument(f"{name} shape {mask.shape} does not match {shape}")
    return mask


def check_positive(value, name):
    if not np.isfinite(value) or value <= 0:
        raise InvalidArgument(f"{name} must be positive, got {value!r}")
    return value


def as_stack(X, name="X"):
    """Accept a single image, a list of images/frames, or a FrameSequence; return a list of 2D arrays."""
    frames = getattr(X, "frames", None)
    if frames is not None:
        X = frames
    if isinstance(X, np.ndarray) and X.ndim == 2:
        X = [X]
    out = []
    for i, item in enumerate(X):
        data = getattr(item, "data", item)
        if not isinstance(data, np.ndarray):
            data = getattr(item, "pixels", data)
        out.append(check_image(data, name=f"{name}[{i}]"))
    return out
