"""Disparity-driven warping and validity masks for rectified pairs.

``direction="left_to_right"`` means the disparity lives in the left (source)
frame and left pixel ``(i, j)`` corresponds to right pixel ``(i, j - d)``;
``"right_to_left"`` flips the sign of the horizontal offset.
"""

import numpy as np

from ._validation import as_hwc, check_disparity, check_same_hw
from .errors import ShapeMismatch, StereoSpaceError

LEFT_TO_RIGHT = "left_to_right"
RIGHT_TO_LEFT = "right_to_left"
DEFAULT_LR_TAU = 1.0


def _sign(direction):
    if direction == LEFT_TO_RIGHT:
        return -1.0
    if direction == RIGHT_TO_LEFT:
        return 1.0
    raise StereoSpaceError(f"unknown warp direction {direction!r}")


def _sample_plan(disparity, direction, width):
    """Columns, weights and validity of the bilinear footprint for every pixel."""
    cols = np.arange(width, dtype=np.float64)[None, :]
    with np.errstate(invalid="ignore"):
        x = cols + _sign(direction) * disparity
        valid = np.isfinite(x) & (x >= 0.0) & (x <= width - 1)
    x = np.where(valid, x, 0.0)
    x0 = np.clip(np.floor(x), 0, max(width - 2, 0)).astype(np.intp)
    frac = x - x0
    x1 = np.minimum(x0 + 1, width - 1)
    return x0, x1, frac, valid


def backward_warp(target, disparity, direction=LEFT_TO_RIGHT):
    """Bilinearly resample ``target`` into the disparity's frame.

    ``target`` may carry any number of channels. Returns ``(warped, mask)``.
    Pixels whose footprint leaves ``[0, W-1]`` or whose disparity is NaN are
    masked out and set to zero.
    """
    img = np.asarray(target, dtype=np.float64)
    if img.ndim not in (2, 3) or not np.all(np.isfinite(img)):
        raise ShapeMismatch(f"target: expected a finite (H, W[, C]) array, got shape {img.shape}")
    disp = check_disparity(disparity)
    check_same_hw(img, disp, names=("target", "disparity"))
    h, w = disp.shape
    x0, x1, frac, valid = _sample_plan(disp, direction, w)
    src = as_hwc(img)
    rows = np.arange(h)[:, None]
    f = frac[..., None]
    out = (1.0 - f) * src[rows, x0] + f * src[rows, x1]
    out[~valid] = 0.0
    return out.reshape(img.shape), valid


def backward_warp_vjp(grad_output, disparity, direction=LEFT_TO_RIGHT):
    """Vector-Jacobian product of :func:`backward_warp` w.r.t. the target image."""
    g = as_hwc(np.asarray(grad_output, dtype=np.float64))
    disp = check_disparity(disparity)
    h, w = disp.shape
    if g.shape[:2] != (h, w):
        raise ShapeMismatch(f"gradient {g.shape} does not match disparity {disp.shape}")
    x0, x1, frac, valid = _sample_plan(disp, direction, w)
    c = g.shape[2]
    rows = np.broadcast_to(np.arange(h)[:, None], (h, w))[valid]
    f = frac[valid][:, None]
    gv = g[valid]
    out = np.zeros((h, w, c))
    np.add.at(out, (rows, x0[valid]), (1.0 - f) * gv)
    np.add.at(out, (rows, x1[valid]), f * gv)
    return out.reshape(np.shape(grad_output))


def forward_warp(source, disparity, direction=LEFT_TO_RIGHT):
    """Z-buffered nearest-pixel splat of ``source`` along its own disparity.

    Each valid source pixel lands at column ``round(j -/+ d)`` (round half
    up). When several land on one pixel the larger disparity wins; equal
    disparities resolve to the larger source column. Returns
    ``(warped, hit_mask)``; unhit pixels are zero.
    """
    img = np.asarray(source, dtype=np.float64)
    if img.ndim not in (2, 3):
        raise ShapeMismatch(f"source: expected (H, W) or (H, W, C), got {img.shape}")
    disp = check_disparity(disparity)
    check_same_hw(img, disp, names=("source", "disparity"))
    h, w = disp.shape
    src = as_hwc(img)
    cols = np.arange(w)[None, :]
    with np.errstate(invalid="ignore"):
        dest = np.floor(cols + _sign(direction) * disp + 0.5)
        ok = np.isfinite(dest) & (dest >= 0) & (dest <= w - 1)
    ri, ci = np.nonzero(ok)
    di = dest[ri, ci].astype(np.intp)
    flat = ri * w + di
    # lexsort: primary flat target index, then disparity, then source column
    order = np.lexsort((ci, disp[ri, ci], flat))
    flat_sorted = flat[order]
    last = np.ones(order.size, dtype=bool)
    last[:-1] = flat_sorted[1:] != flat_sorted[:-1]
    winners = order[last]
    out = np.zeros_like(src)
    mask = np.zeros((h, w), dtype=bool)
    out[ri[winners], di[winners]] = src[ri[winners], ci[winners]]
    mask[ri[winners], di[winners]] = True
    return out.reshape(img.shape), mask


def lr_consistency_mask(disp_left, disp_right, tau=DEFAULT_LR_TAU):
    """Left-referenced left-right consistency check.

    ``mask[i, j]`` holds iff ``d = disp_left[i, j]`` is valid, column
    ``j - round(d)`` is inside the image, ``disp_right`` is valid there and
    the two disparities differ by at most ``tau``.
    """
    dl = check_disparity(disp_left, "disp_left")
    dr = check_disparity(disp_right, "disp_right")
    if dl.shape != dr.shape:
        raise ShapeMismatch(f"disp_left {dl.shape} and disp_right {dr.shape} differ")
    h, w = dl.shape
    valid = np.isfinite(dl)
    j = np.arange(w)[None, :]
    with np.errstate(invalid="ignore"):
        look = j - np.floor(np.where(valid, dl, 0.0) + 0.5)
    valid &= (look >= 0) & (look <= w - 1)
    look = np.where(valid, look, 0).astype(np.intp)
    other = dr[np.arange(h)[:, None], look]
    with np.errstate(invalid="ignore"):
        valid &= np.isfinite(other) & (np.abs(dl - other) <= tau)
    return valid


def rl_consistency_mask(disp_right, disp_left, tau=DEFAULT_LR_TAU):
    """Right-referenced counterpart of :func:`lr_consistency_mask` (looks up ``j + d``)."""
    return lr_consistency_mask(
        np.fliplr(check_disparity(disp_right, "disp_right")),
        np.fliplr(check_disparity(disp_left, "disp_left")),
        tau,
    )[:, ::-1].copy()


def warp_validity_mask(disp_source, disp_target=None, direction=LEFT_TO_RIGHT,
                       tau=DEFAULT_LR_TAU):
    """Mask for the warp-consistency loss: in-bounds and, when the other
    view's disparity is given, left-right consistent."""
    disp = check_disparity(disp_source)
    _, _, _, valid = _sample_plan(disp, direction, disp.shape[1])
    if disp_target is not None:
        if direction == LEFT_TO_RIGHT:
            valid &= lr_consistency_mask(disp, disp_target, tau)
        else:
            valid &= rl_consistency_mask(disp, disp_target, tau)
    return valid
