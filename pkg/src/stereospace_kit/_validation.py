"""Input validation helpers shared by every module.

Images are ``(H, W)`` or ``(H, W, C)`` arrays with ``C in (1, 3)``;
disparities are ``(H, W)`` float arrays using NaN as the invalid sentinel.
All numerics run in float64 internally; file I/O narrows to float32.
"""

import numpy as np

from .errors import ShapeMismatch, StereoSpaceError


def check_image(x, name="image", *, allow_nan=False):
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim == 3 and arr.shape[2] not in (1, 3):
        raise ShapeMismatch(f"{name}: expected 1 or 3 channels, got {arr.shape[2]}")
    if arr.ndim not in (2, 3):
        raise ShapeMismatch(f"{name}: expected (H, W) or (H, W, C), got shape {arr.shape}")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ShapeMismatch(f"{name}: empty image")
    if not allow_nan and not np.all(np.isfinite(arr)):
        raise StereoSpaceError(f"{name}: contains non-finite values")
    return arr


def check_disparity(x, name="disparity"):
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim == 3 and arr.shape[2] == 1:
        arr = arr[..., 0]
    if arr.ndim != 2:
        raise ShapeMismatch(f"{name}: expected (H, W), got shape {arr.shape}")
    if np.any(np.isinf(arr)):
        raise StereoSpaceError(f"{name}: infinite disparity")
    return arr


def check_mask(x, name="mask"):
    arr = np.asarray(x)
    if arr.ndim != 2:
        raise ShapeMismatch(f"{name}: expected (H, W), got shape {arr.shape}")
    return arr.astype(bool)


def check_same_hw(*arrays, names=None):
    shapes = [a.shape[:2] for a in arrays]
    if len(set(shapes)) > 1:
        label = ", ".join(names) if names else "inputs"
        raise ShapeMismatch(f"{label}: spatial shapes differ {shapes}")


def check_same_shape(a, b, names=("a", "b")):
    if a.shape != b.shape:
        raise ShapeMismatch(f"{names[0]} {a.shape} and {names[1]} {b.shape} differ")


def as_hwc(img):
    return img[..., None] if img.ndim == 2 else img


def to_gray(img):
    """Luminance (Rec. 601) for 3-channel input, identity otherwise."""
    if img.ndim == 2:
        return img
    if img.shape[2] == 1:
        return img[..., 0]
    return img @ np.array([0.299, 0.587, 0.114])
