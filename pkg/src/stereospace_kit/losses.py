"""Training losses with analytic gradients.

Every loss returns a :class:`LossValue` whose ``gradient`` is taken with
respect to the first (predicted) argument. Reductions are means, so the loss
weights do not depend on resolution.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from ._validation import as_hwc, check_disparity, check_image, check_mask, check_same_shape
from .errors import EmptyMask, ImageTooSmall, ShapeMismatch, StereoSpaceError
from .imaging import LEFT_TO_RIGHT, backward_warp, backward_warp_vjp

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01**2
SSIM_C2 = 0.03**2


@dataclass(frozen=True)
class LossWeights:
    alpha: float = 0.85
    lambda_pix: float = 1.0
    lambda_warp: float = 0.3
    gamma_snr: float = 5.0

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise StereoSpaceError(f"alpha must lie in [0, 1], got {self.alpha}")
        if self.lambda_pix < 0 or self.lambda_warp < 0:
            raise StereoSpaceError("loss weights must be non-negative")
        if not self.gamma_snr > 0:
            raise StereoSpaceError(f"gamma_snr must be positive, got {self.gamma_snr}")


@dataclass
class LossValue:
    value: float
    gradient: np.ndarray | dict | None = None


def gaussian_kernel(size=SSIM_WINDOW, sigma=SSIM_SIGMA):
    x = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(x**2) / (2.0 * sigma**2))
    return g / g.sum()


@lru_cache(maxsize=32)
def _filter_matrix(n, size=SSIM_WINDOW, sigma=SSIM_SIGMA):
    """``n x n`` matrix of a 1-D Gaussian filter with reflect padding."""
    g = gaussian_kernel(size, sigma)
    r = size // 2
    mat = np.zeros((n, n))
    rows = np.arange(n)
    for k in range(size):
        idx = rows + k - r
        idx = np.abs(idx)
        idx = np.where(idx > n - 1, 2 * (n - 1) - idx, idx)
        np.add.at(mat, (rows, idx), g[k])
    mat.setflags(write=False)
    return mat


def _filt(x, fh, fw):
    # x: (C, H, W)
    return fh @ x @ fw.T


def _filt_t(x, fh, fw):
    return fh.T @ x @ fw


def ssim(a, b):
    """Mean SSIM (11x11 Gaussian window, sigma 1.5, unit data range).

    Channels are handled independently and averaged. The gradient is with
    respect to ``a``.
    """
    a = check_image(a, "a")
    b = check_image(b, "b")
    check_same_shape(a, b)
    h, w = a.shape[:2]
    if min(h, w) < SSIM_WINDOW:
        raise ImageTooSmall(f"SSIM needs at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {h}x{w}")
    fh, fw = _filter_matrix(h), _filter_matrix(w)
    x = as_hwc(a).transpose(2, 0, 1)
    y = as_hwc(b).transpose(2, 0, 1)

    mu_x, mu_y = _filt(x, fh, fw), _filt(y, fh, fw)
    e_xx, e_yy, e_xy = _filt(x * x, fh, fw), _filt(y * y, fh, fw), _filt(x * y, fh, fw)
    s_xx = e_xx - mu_x**2
    s_yy = e_yy - mu_y**2
    s_xy = e_xy - mu_x * mu_y

    a1 = 2.0 * mu_x * mu_y + SSIM_C1
    a2 = 2.0 * s_xy + SSIM_C2
    b1 = mu_x**2 + mu_y**2 + SSIM_C1
    b2 = s_xx + s_yy + SSIM_C2
    den = b1 * b2
    smap = a1 * a2 / den
    n = smap.size

    d_mu = (2.0 * mu_y * a2 - 2.0 * mu_y * a1) / den - smap * (2.0 * mu_x / b1 - 2.0 * mu_x / b2)
    d_exx = -smap / b2
    d_exy = 2.0 * a1 / den
    grad = (
        _filt_t(d_mu, fh, fw) + 2.0 * x * _filt_t(d_exx, fh, fw) + y * _filt_t(d_exy, fh, fw)
    ) / n
    grad = grad.transpose(1, 2, 0).reshape(a.shape)
    return LossValue(float(smap.mean()), grad)


def pixel_loss(pred, target, weights=LossWeights()):
    """``alpha * (1 - SSIM) + (1 - alpha) * mean |pred - target|``."""
    pred = check_image(pred, "pred")
    target = check_image(target, "target")
    check_same_shape(pred, target, ("pred", "target"))
    alpha = weights.alpha
    diff = pred - target
    l1 = float(np.mean(np.abs(diff)))
    grad = (1.0 - alpha) * np.sign(diff) / diff.size
    value = (1.0 - alpha) * l1
    if alpha > 0:
        s = ssim(pred, target)
        value += alpha * (1.0 - s.value)
        grad = grad - alpha * s.gradient
    return LossValue(float(value), grad)


def warp_loss(pred_target, source, disp_source, mask, direction=LEFT_TO_RIGHT):
    """Masked mean absolute residual between the back-warped prediction and
    the source view.

    ``mask`` is intersected with the warp's in-bounds mask. The L1 norm sums
    over masked pixels and all channels and is divided by the number of
    masked pixels. Raises :class:`EmptyMask` when nothing survives, leaving
    the decision to skip the term to the caller.
    """
    pred = check_image(pred_target, "pred_target")
    src = check_image(source, "source")
    check_same_shape(pred, src, ("pred_target", "source"))
    disp = check_disparity(disp_source, "disp_source")
    m = check_mask(mask)
    if m.shape != disp.shape or disp.shape != pred.shape[:2]:
        raise ShapeMismatch("mask, disparity and images must share spatial shape")
    warped, inb = backward_warp(pred, disp, direction)
    m = m & inb
    count = int(m.sum())
    if count == 0:
        raise EmptyMask("warp loss mask is empty")
    resid = as_hwc(warped - src)
    value = float(np.abs(resid[m]).sum() / count)
    g_out = np.where(m[..., None], np.sign(resid), 0.0) / count
    grad = backward_warp_vjp(g_out.reshape(pred.shape), disp, direction)
    return LossValue(value, grad)


def velocity_target(x0, eps, alpha_bar_t):
    """Velocity ``sqrt(abar) * eps - sqrt(1 - abar) * x0``."""
    x0 = np.asarray(x0, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    check_same_shape(x0, eps, ("x0", "eps"))
    if not 0.0 <= alpha_bar_t <= 1.0:
        raise StereoSpaceError(f"alpha_bar must lie in [0, 1], got {alpha_bar_t}")
    return np.sqrt(alpha_bar_t) * eps - np.sqrt(1.0 - alpha_bar_t) * x0


def velocity_loss(v_pred, v_true, snr_weight=None):
    v_pred = np.asarray(v_pred, dtype=np.float64)
    v_true = np.asarray(v_true, dtype=np.float64)
    check_same_shape(v_pred, v_true, ("v_pred", "v_true"))
    weight = 1.0 if snr_weight is None else float(snr_weight)
    diff = v_pred - v_true
    value = weight * float(np.mean(diff**2))
    return LossValue(value, weight * 2.0 * diff / diff.size)


def total_loss(l_vel, l_pix, l_warp, weights=LossWeights()):
    """``l_vel + lambda_pix * l_pix + lambda_warp * l_warp``.

    Any term may be ``None`` (skipped). The gradient is a dict of the
    weighted per-term gradients keyed ``"vel"``, ``"pix"``, ``"warp"``;
    ``"image"`` holds the sum of the pixel and warp gradients when both
    differentiate the same predicted image.
    """
    terms = [("vel", l_vel, 1.0), ("pix", l_pix, weights.lambda_pix), ("warp", l_warp, weights.lambda_warp)]
    value = 0.0
    grads = {}
    for key, term, lam in terms:
        if term is None:
            continue
        if not np.isfinite(term.value):
            raise StereoSpaceError(f"{key} loss is not finite")
        value += lam * term.value
        if term.gradient is not None:
            grads[key] = lam * term.gradient
    image_terms = [grads[k] for k in ("pix", "warp") if k in grads]
    if image_terms and all(g.shape == image_terms[0].shape for g in image_terms):
        grads["image"] = sum(image_terms)
    return LossValue(float(value), grads or None)
