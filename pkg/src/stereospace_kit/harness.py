"""Leakage-free evaluation: per-scene scale calibration, pair metrics and
training-mix arithmetic.

A generator is any callable ``(source, scale) -> synthesized_right``. It is
only ever handed the real left view and a scale; the real right view and any
ground-truth geometry stay inside the harness.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from itertools import combinations
from typing import Callable, Sequence

import numpy as np
from sklearn.base import BaseEstimator

from ._validation import as_hwc, check_disparity, check_image, check_same_shape
from .errors import (
    AllCandidatesInvalid,
    BadTarget,
    EmptySpec,
    NoJointValid,
    ShapeMismatch,
    StereoSpaceError,
    TooFewViews,
)
from .imaging import LEFT_TO_RIGHT, RIGHT_TO_LEFT, backward_warp
from .losses import ssim
from .matching import SgbmParams, sgbm

EVAL_RESOLUTION = 512
TRAIN_RESOLUTION = 768
SCALE_BOUNDS = (0.025, 1.0)
SMALL_DATASET_FRACTION = 0.10
TUPLE_WEIGHT = 10

Generator = Callable[[np.ndarray, float], np.ndarray]


@dataclass(frozen=True)
class SearchConfig:
    lo: float = SCALE_BOUNDS[0]
    hi: float = SCALE_BOUNDS[1]
    levels: int = 3
    samples_per_level: int = 16
    shrink: float = 4.0
    min_joint_valid: float = 0.05

    def __post_init__(self):
        if not self.lo < self.hi:
            raise StereoSpaceError(f"need lo < hi, got [{self.lo}, {self.hi}]")
        if self.levels < 1:
            raise StereoSpaceError("levels must be >= 1")
        if self.samples_per_level < 3:
            raise StereoSpaceError("samples_per_level must be >= 3")
        if not self.shrink > 1:
            raise StereoSpaceError("shrink must be > 1")

    def final_step(self):
        """Grid spacing of the last level (before any clamping)."""
        width = (self.hi - self.lo) / self.shrink ** (self.levels - 1)
        return width / (self.samples_per_level - 1)


@dataclass
class TraceEntry:
    level: int
    scale: float
    rmse: float | None
    joint_valid_fraction: float


@dataclass
class CalibrationResult:
    best_scale: float
    best_rmse: float
    trace: list = field(default_factory=list)
    config: dict = field(default_factory=dict)

    def to_dict(self):
        return asdict(self)


def disparity_rmse(d_real, d_synth):
    """RMSE over pixels valid in both maps, and the jointly valid fraction."""
    a = check_disparity(d_real, "d_real")
    b = check_disparity(d_synth, "d_synth")
    check_same_shape(a, b, ("d_real", "d_synth"))
    joint = np.isfinite(a) & np.isfinite(b)
    n = int(joint.sum())
    if n == 0:
        raise NoJointValid("no pixel is valid in both disparity maps")
    diff = a[joint] - b[joint]
    return float(np.sqrt(np.mean(diff * diff))), n / joint.size


def _level_grid(lo, hi, n):
    grid = np.linspace(lo, hi, n)
    grid[0], grid[-1] = lo, hi
    return grid


def calibrate_scale(real_left, real_right, generator, sgbm_params=SgbmParams(),
                    config=SearchConfig()):
    """Coarse-to-fine search for the scale whose synthesized right view gives
    SGBM disparities closest (RMSE) to those of the real pair.

    Both disparity maps are left-referenced: SGBM(real_left, real_right)
    versus SGBM(real_left, generator(real_left, s)). Each level samples
    ``samples_per_level`` scales uniformly; the next level is centered on the
    incumbent with its width divided by ``shrink`` and clipped to the
    bounds. Candidates below ``min_joint_valid`` are skipped; ties go to the
    smaller scale.
    """
    left = check_image(real_left, "real_left")
    right = check_image(real_right, "real_right")
    check_same_shape(left, right, ("real_left", "real_right"))
    d_real, _ = sgbm(left, right, sgbm_params)

    cache = {}
    trace = []
    best = None  # (rmse, scale)
    lo, hi = config.lo, config.hi
    for level in range(config.levels):
        for s in _level_grid(lo, hi, config.samples_per_level):
            s = float(s)
            if s not in cache:
                synth = np.asarray(generator(left.copy(), s), dtype=np.float64)
                if synth.shape != left.shape:
                    raise ShapeMismatch(f"generator returned {synth.shape}, expected {left.shape}")
                d_synth, _ = sgbm(left, synth, sgbm_params)
                try:
                    cache[s] = disparity_rmse(d_real, d_synth)
                except NoJointValid:
                    cache[s] = (None, 0.0)
            rmse, frac = cache[s]
            trace.append(TraceEntry(level, s, rmse, frac))
            if rmse is None or frac < config.min_joint_valid:
                continue
            if best is None or (rmse, s) < best:
                best = (rmse, s)
        if best is None:
            raise AllCandidatesInvalid("no candidate scale reached the joint-valid threshold")
        half = 0.5 * (hi - lo) / config.shrink
        lo, hi = max(config.lo, best[1] - half), min(config.hi, best[1] + half)

    return CalibrationResult(
        best_scale=best[1],
        best_rmse=best[0],
        trace=trace,
        config={"search": asdict(config), "sgbm": sgbm_params.as_dict()},
    )


class ScaleCalibrator(BaseEstimator):
    """Estimator wrapper: ``fit(real_left, real_right)`` finds ``best_scale_``;
    ``predict(source)`` runs the generator at that scale."""

    def __init__(self, generator=None, lo=SCALE_BOUNDS[0], hi=SCALE_BOUNDS[1], levels=3,
                 samples_per_level=16, shrink=4.0, min_joint_valid=0.05, sgbm_params=None):
        self.generator = generator
        self.lo = lo
        self.hi = hi
        self.levels = levels
        self.samples_per_level = samples_per_level
        self.shrink = shrink
        self.min_joint_valid = min_joint_valid
        self.sgbm_params = sgbm_params

    def _config(self):
        return SearchConfig(self.lo, self.hi, self.levels, self.samples_per_level, self.shrink,
                            self.min_joint_valid)

    def fit(self, real_left, real_right):
        if self.generator is None:
            raise StereoSpaceError("ScaleCalibrator needs a generator")
        params = self.sgbm_params if self.sgbm_params is not None else SgbmParams()
        res = calibrate_scale(real_left, real_right, self.generator, params, self._config())
        self.best_scale_ = res.best_scale
        self.best_rmse_ = res.best_rmse
        self.trace_ = res.trace
        return self

    def predict(self, source):
        if not hasattr(self, "best_scale_"):
            from sklearn.exceptions import NotFittedError

            raise NotFittedError("call fit before predict")
        return self.generator(check_image(source, "source"), self.best_scale_)


def psnr(a, b):
    """PSNR in dB on unit range; ``inf`` for identical inputs."""
    mse = float(np.mean((np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)


def symmetric_score(s12, s21):
    """``1 - (s12 + s21) / 2``; lower is better."""
    if not (np.isfinite(s12) and np.isfinite(s21)):
        raise StereoSpaceError("similarities must be finite")
    return 1.0 - 0.5 * (s12 + s21)


def gradient_features(img):
    """Per-pixel finite-difference gradients of every channel, ``(H, W, 2C)``."""
    x = as_hwc(check_image(img))
    gx = np.zeros_like(x)
    gy = np.zeros_like(x)
    gx[:, 1:-1] = 0.5 * (x[:, 2:] - x[:, :-2])
    gy[1:-1] = 0.5 * (x[2:] - x[:-2])
    return np.concatenate([gx, gy], axis=2)


def _masked_cosine(fa, fb, mask, eps=1e-8):
    num = np.sum(fa * fb, axis=2)
    den = np.linalg.norm(fa, axis=2) * np.linalg.norm(fb, axis=2)
    keep = mask & (den > eps)
    if not keep.any():
        return 0.0
    return float(np.mean(num[keep] / den[keep]))


class GradientCosineSimilarity:
    """Photometric surrogate for feature-reprojection similarity.

    Gradient features of each view are warped into the other using SGBM
    disparities and compared by cosine similarity over valid pixels,
    giving the directional pair ``(S(I1, I2), S(I2, I1))``.
    """

    name = "surrogate_consistency"

    def __init__(self, sgbm_params=SgbmParams()):
        self.sgbm_params = sgbm_params

    def __call__(self, view1, view2):
        d1, d2 = sgbm(view1, view2, self.sgbm_params)
        f1, f2 = gradient_features(view1), gradient_features(view2)
        w2, m1 = backward_warp(f2, d1, LEFT_TO_RIGHT)
        w1, m2 = backward_warp(f1, d2, RIGHT_TO_LEFT)
        return _masked_cosine(f1, w2, m1), _masked_cosine(f2, w1, m2)


def evaluate_pair(real_left, real_right, synth_right, sgbm_params=SgbmParams(),
                  similarity=None):
    """Metric record for one generated right view (JSON-serializable dict)."""
    left = check_image(real_left, "real_left")
    right = check_image(real_right, "real_right")
    synth = check_image(synth_right, "synth_right")
    check_same_shape(left, right, ("real_left", "real_right"))
    check_same_shape(right, synth, ("real_right", "synth_right"))
    similarity = similarity or GradientCosineSimilarity(sgbm_params)

    p = psnr(synth, right)
    record = {
        "psnr": None if math.isinf(p) else p,
        "psnr_infinite": math.isinf(p),
        "ssim": ssim(synth, right).value,
    }
    d_real, _ = sgbm(left, right, sgbm_params)
    d_synth, _ = sgbm(left, synth, sgbm_params)
    try:
        rmse, frac = disparity_rmse(d_real, d_synth)
    except NoJointValid:
        rmse, frac = None, 0.0
    record["disparity_rmse"] = rmse
    record["joint_valid_fraction"] = frac
    s12, s21 = similarity(left, synth)
    record[getattr(similarity, "name", "consistency")] = symmetric_score(s12, s21)
    return record


def crop_box(h, w, target_h, target_w):
    """Resized size and crop offsets used by :func:`resize_center_crop`.

    Returns ``(new_h, new_w, top, left)``; odd remainders bias the crop
    toward the top-left (floor division).
    """
    if target_h < 1 or target_w < 1:
        raise BadTarget(f"target size must be positive, got {target_h}x{target_w}")
    scale = max(target_h / h, target_w / w)
    new_h = max(target_h, int(math.floor(h * scale + 0.5)))
    new_w = max(target_w, int(math.floor(w * scale + 0.5)))
    return new_h, new_w, (new_h - target_h) // 2, (new_w - target_w) // 2


def resize_bilinear(img, new_h, new_w):
    """Half-pixel-centered bilinear resize (no antialiasing)."""
    x = as_hwc(np.asarray(img, dtype=np.float64))
    h, w = x.shape[:2]
    if (h, w) == (new_h, new_w):
        return np.asarray(img, dtype=np.float64).copy()

    def axis(n_in, n_out):
        pos = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
        pos = np.clip(pos, 0, n_in - 1)
        i0 = np.minimum(np.floor(pos).astype(np.intp), max(n_in - 2, 0))
        return i0, np.minimum(i0 + 1, n_in - 1), pos - i0

    r0, r1, fr = axis(h, new_h)
    c0, c1, fc = axis(w, new_w)
    fr = fr[:, None, None]
    fc = fc[None, :, None]
    top = (1 - fc) * x[r0][:, c0] + fc * x[r0][:, c1]
    bot = (1 - fc) * x[r1][:, c0] + fc * x[r1][:, c1]
    out = (1 - fr) * top + fr * bot
    return out if np.ndim(img) == 3 else out[..., 0]


def resize_center_crop(img, target_h=EVAL_RESOLUTION, target_w=EVAL_RESOLUTION):
    """Scale so the image just covers the target (short side for a square
    target), then center crop. The crop depends only on the input size, so
    both views of a pair get identical offsets."""
    x = np.asarray(img, dtype=np.float64)
    if x.ndim not in (2, 3):
        raise ShapeMismatch(f"expected an image, got shape {x.shape}")
    new_h, new_w, top, left = crop_box(x.shape[0], x.shape[1], target_h, target_w)
    resized = resize_bilinear(x, new_h, new_w)
    return resized[top : top + target_h, left : left + target_w].copy()


@dataclass(frozen=True)
class DatasetEntry:
    name: str
    size: int
    kind: str = "single_baseline"
    tuple_count: int = 0

    def __post_init__(self):
        if self.kind not in ("single_baseline", "multi_baseline"):
            raise StereoSpaceError(f"{self.name}: unknown dataset kind {self.kind!r}")
        if self.size <= 0:
            raise StereoSpaceError(f"{self.name}: size must be positive")
        if self.kind == "multi_baseline" and self.tuple_count <= 0:
            raise StereoSpaceError(f"{self.name}: multi-baseline dataset needs tuple_count > 0")


def mix_weights(spec: Sequence[DatasetEntry]) -> dict:
    """Effective per-dataset sample counts for the training mix.

    The largest single-baseline dataset keeps its size, every other
    single-baseline dataset is resampled to 10% of it, and multi-baseline
    datasets get ten times their tuple count.
    """
    if not spec:
        raise EmptySpec("mix spec is empty")
    singles = [d for d in spec if d.kind == "single_baseline"]
    largest = max((d.size for d in singles), default=0)
    small = int(math.floor(largest * SMALL_DATASET_FRACTION + 0.5))
    out = {}
    for d in spec:
        if d.kind == "multi_baseline":
            out[d.name] = TUPLE_WEIGHT * d.tuple_count
        elif d.size == largest:
            out[d.name] = d.size
        else:
            out[d.name] = small
    return out


def tuple_pairs(views: Sequence[float]) -> list:
    """All unordered ``(i, j)`` index pairs of a rectified multi-view tuple."""
    offsets = list(views)
    if len(offsets) < 2:
        raise TooFewViews(f"need at least 2 views, got {len(offsets)}")
    if any(b <= a for a, b in zip(offsets, offsets[1:])):
        raise StereoSpaceError("view offsets must be strictly increasing")
    return list(combinations(range(len(offsets)), 2))


def aggregate_records(records):
    """Unweighted mean over scenes of every numeric metric (``None`` skipped)."""
    keys = []
    for r in records:
        for k, v in r.items():
            if k not in keys and isinstance(v, (int, float)) and not isinstance(v, bool):
                keys.append(k)
    out = {}
    for k in keys:
        vals = [r[k] for r in records if isinstance(r.get(k), (int, float)) and not isinstance(r.get(k), bool)]
        out[k] = float(np.mean(vals)) if vals else None
    return out
