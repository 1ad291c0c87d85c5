"""Semi-global block matching on rectified pairs.

Pipeline: 5x5 census transform, Hamming cost block-summed over
``block_size``, multi-path smoothness aggregation, winner-take-all with
subpixel refinement and uniqueness filtering, then a left-right check.
Costs are integers saturated to 16 bits.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from sklearn.base import BaseEstimator

from ._validation import check_image, check_same_shape, to_gray
from .errors import BadParams
from .imaging import lr_consistency_mask, rl_consistency_mask

CENSUS_SIZE = 5
CENSUS_BITS = CENSUS_SIZE * CENSUS_SIZE - 1
COST_MAX = np.iinfo(np.uint16).max

# (drow, dcol) of the previous pixel along each scanline
PATHS_8 = ((0, -1), (0, 1), (-1, 0), (1, 0), (-1, -1), (-1, 1), (1, -1), (1, 1))
PATHS_4 = PATHS_8[:4]


@dataclass(frozen=True)
class SgbmParams:
    min_disparity: int = 0
    num_disparities: int = 128
    block_size: int = 5
    p1: int | None = None
    p2: int | None = None
    num_paths: int = 8
    uniqueness_ratio: float = 10.0
    lr_threshold: float = 1.0

    @property
    def penalty1(self):
        return 8 * self.block_size**2 if self.p1 is None else int(self.p1)

    @property
    def penalty2(self):
        return 32 * self.block_size**2 if self.p2 is None else int(self.p2)

    def check(self):
        if self.num_disparities <= 0 or self.num_disparities % 16:
            raise BadParams(f"num_disparities must be a positive multiple of 16, got {self.num_disparities}")
        if self.block_size < 3 or self.block_size % 2 == 0:
            raise BadParams(f"block_size must be odd and >= 3, got {self.block_size}")
        if not self.penalty2 > self.penalty1 > 0:
            raise BadParams(f"need p2 > p1 > 0, got p1={self.penalty1}, p2={self.penalty2}")
        if self.num_paths not in (4, 8):
            raise BadParams(f"num_paths must be 4 or 8, got {self.num_paths}")
        if not 0 <= self.uniqueness_ratio < 100:
            raise BadParams(f"uniqueness_ratio must lie in [0, 100), got {self.uniqueness_ratio}")
        if self.lr_threshold < 0:
            raise BadParams("lr_threshold must be non-negative")
        return self

    def as_dict(self):
        d = asdict(self)
        d["p1"], d["p2"] = self.penalty1, self.penalty2
        return d

    @property
    def max_cost(self):
        """Saturated cost of a single block (every census bit differs)."""
        return CENSUS_BITS * self.block_size**2


def census_transform(gray, size=CENSUS_SIZE):
    """24-bit census signature; bit set where a neighbour is darker than the center."""
    r = size // 2
    h, w = gray.shape
    padded = np.pad(gray, r, mode="edge")
    sig = np.zeros((h, w), dtype=np.uint32)
    bit = 0
    for dy in range(size):
        for dx in range(size):
            if dy == r and dx == r:
                continue
            nb = padded[dy : dy + h, dx : dx + w]
            sig |= (nb < gray).astype(np.uint32) << np.uint32(bit)
            bit += 1
    return sig


def _box_sum(x, size):
    """Sum over a ``size x size`` window with edge replication, over axes 0 and 1."""
    r = size // 2
    p = np.pad(x, ((r, r), (r, r)) + ((0, 0),) * (x.ndim - 2), mode="edge")
    c = np.cumsum(np.cumsum(p, axis=0, dtype=np.int64), axis=1)
    c = np.pad(c, ((1, 0), (1, 0)) + ((0, 0),) * (x.ndim - 2))
    h, w = x.shape[:2]
    return c[size : size + h, size : size + w] - c[:h, size : size + w] - c[size : size + h, :w] + c[:h, :w]


def _prepare(left, right):
    lft = check_image(left, "left")
    rgt = check_image(right, "right")
    check_same_shape(lft, rgt, ("left", "right"))
    return to_gray(lft), to_gray(rgt)


def matching_cost(left, right, params=SgbmParams()):
    """Left-referenced census/Hamming cost volume ``(H, W, D)`` as uint16.

    Slice ``k`` holds disparity ``min_disparity + k``; pixels whose match
    column falls outside the right image get :attr:`SgbmParams.max_cost`.
    """
    params.check()
    gl, gr = _prepare(left, right)
    h, w = gl.shape
    cl, cr = census_transform(gl), census_transform(gr)
    nd = params.num_disparities
    raw = np.full((h, w, nd), CENSUS_BITS, dtype=np.int32)
    oob = np.ones((w, nd), dtype=bool)
    for k in range(nd):
        d = params.min_disparity + k
        lo, hi = max(d, 0), min(w, w + d)
        if lo >= hi:
            continue
        raw[:, lo:hi, k] = np.bitwise_count(cl[:, lo:hi] ^ cr[:, lo - d : hi - d])
        oob[lo:hi, k] = False
    cost = _box_sum(raw, params.block_size)
    cost[:, oob] = params.max_cost
    return np.minimum(cost, COST_MAX).astype(np.uint16)


def _aggregate_path(cost, dr, dc, p1, p2):
    """One scanline direction; the recurrence runs along rows for vertical or
    diagonal paths and along columns for horizontal ones."""
    h, w, nd = cost.shape
    out = np.empty_like(cost)
    big = np.iinfo(np.int32).max // 4

    def step(cur, prev):
        prev_min = prev.min(axis=-1, keepdims=True)
        best = np.minimum(prev, prev_min + p2)
        shifted = np.full_like(prev, big)
        shifted[..., 1:] = prev[..., :-1]
        best = np.minimum(best, shifted + p1)
        shifted[..., :-1] = prev[..., 1:]
        shifted[..., -1] = big
        best = np.minimum(best, shifted + p1)
        return cur + best - prev_min

    if dr == 0:
        cols = range(w) if dc == -1 else range(w - 1, -1, -1)
        prev = None
        for j in cols:
            cur = cost[:, j]
            out[:, j] = cur if prev is None else step(cur, prev)
            prev = out[:, j]
        return out

    rows = range(h) if dr == -1 else range(h - 1, -1, -1)
    prev = None
    for i in rows:
        cur = cost[i]
        if prev is None:
            out[i] = cur
        elif dc == 0:
            out[i] = step(cur, prev)
        else:
            # previous pixel sits at column j + dc of the previous row
            res = cur.copy()
            if dc == -1:
                res[1:] = step(cur[1:], prev[:-1])
            else:
                res[:-1] = step(cur[:-1], prev[1:])
            out[i] = res
        prev = out[i]
    return out


def aggregate_paths(cost_volume, params=SgbmParams(), paths=None):
    """Sum of the per-direction path costs ``L_r``, saturated to uint16.

    ``paths`` overrides the direction set (``(drow, dcol)`` offsets of the
    predecessor); by default the first ``params.num_paths`` of
    :data:`PATHS_8` are used.
    """
    cost = np.asarray(cost_volume).astype(np.int32)
    if paths is None:
        paths = PATHS_8 if params.num_paths == 8 else PATHS_4
    total = np.zeros(cost.shape, dtype=np.int64)
    for dr, dc in paths:
        total += _aggregate_path(cost, dr, dc, params.penalty1, params.penalty2)
    return np.minimum(total, COST_MAX).astype(np.uint16)


def extract_disparity(cost_volume, params=SgbmParams()):
    """Winner-take-all disparity with equiangular subpixel refinement.

    Ties resolve to the lower disparity. A pixel is invalidated (NaN) when
    some disparity more than one step from the winner costs no more than
    ``best * 100 / (100 - uniqueness_ratio)``. Winners on either end of the
    range are kept without refinement.
    """
    cv = np.asarray(cost_volume).astype(np.float64)
    h, w, nd = cv.shape
    best = np.argmin(cv, axis=-1)
    best_cost = np.take_along_axis(cv, best[..., None], axis=-1)[..., 0]

    k = np.arange(nd)
    far = np.abs(k[None, None, :] - best[..., None]) > 1
    rival = np.where(far, cv, np.inf).min(axis=-1)
    unique = rival * (100.0 - params.uniqueness_ratio) > best_cost * 100.0

    interior = (best > 0) & (best < nd - 1)
    bi = np.clip(best, 1, max(nd - 2, 1))
    c_m = np.take_along_axis(cv, (bi - 1)[..., None], axis=-1)[..., 0]
    c_0 = np.take_along_axis(cv, bi[..., None], axis=-1)[..., 0]
    c_p = np.take_along_axis(cv, np.minimum(bi + 1, nd - 1)[..., None], axis=-1)[..., 0]
    # equiangular (V-shaped) fit: both sides share the steeper slope
    slope = np.maximum(c_m, c_p) - c_0
    with np.errstate(divide="ignore", invalid="ignore"):
        offset = np.where(interior & (slope > 0), 0.5 * (c_m - c_p) / slope, 0.0)
    disp = params.min_disparity + best + np.clip(offset, -0.5, 0.5)

    return np.where(unique, disp, np.nan)


def matchable_columns(width, params):
    """Half-open column range ``[lo, hi)`` whose every candidate block lies inside the right image."""
    r = params.block_size // 2
    max_d = params.min_disparity + params.num_disparities - 1
    lo = max_d + r if max_d > 0 else 0
    hi = width + params.min_disparity - r if params.min_disparity < 0 else width
    return min(lo, width), max(hi, 0)


def _one_sided(left, right, params):
    # Only fully matchable columns are aggregated: out-of-range costs would
    # otherwise leak a bias toward small disparities along every path.
    cv = matching_cost(left, right, params)
    lo, hi = matchable_columns(cv.shape[1], params)
    out = np.full(cv.shape[:2], np.nan)
    if lo < hi:
        out[:, lo:hi] = extract_disparity(aggregate_paths(cv[:, lo:hi], params), params)
    return out


def sgbm(left, right, params=SgbmParams()):
    """Left- and right-referenced disparity maps, each LR-filtered.

    The right map is computed by matching the mirrored pair, so both maps
    hold non-negative disparities for a standard left/right rig. Columns
    outside :func:`matchable_columns` are NaN (the left border of the left
    map, the right border of the right map).
    """
    params.check()
    gl, gr = _prepare(left, right)
    d_left = _one_sided(gl, gr, params)
    d_right = np.fliplr(_one_sided(np.fliplr(gr), np.fliplr(gl), params))
    keep_l = lr_consistency_mask(d_left, d_right, params.lr_threshold)
    keep_r = rl_consistency_mask(d_right, d_left, params.lr_threshold)
    return np.where(keep_l, d_left, np.nan), np.where(keep_r, d_right, np.nan)


class SemiGlobalMatcher(BaseEstimator):
    """Estimator-style wrapper around :func:`sgbm`.

    ``fit(left, right)`` computes and stores ``disparity_left_`` and
    ``disparity_right_``; ``predict(left, right)`` returns both maps.
    """

    def __init__(self, min_disparity=0, num_disparities=128, block_size=5, p1=None, p2=None,
                 num_paths=8, uniqueness_ratio=10.0, lr_threshold=1.0):
        self.min_disparity = min_disparity
        self.num_disparities = num_disparities
        self.block_size = block_size
        self.p1 = p1
        self.p2 = p2
        self.num_paths = num_paths
        self.uniqueness_ratio = uniqueness_ratio
        self.lr_threshold = lr_threshold

    @property
    def params(self):
        return SgbmParams(**self.get_params())

    def fit(self, left, right):
        self.disparity_left_, self.disparity_right_ = sgbm(left, right, self.params)
        return self

    def predict(self, left, right):
        return sgbm(left, right, self.params)
