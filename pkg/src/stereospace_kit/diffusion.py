"""Noise schedules and velocity-parameterized DDIM algebra.

Latent buffers are channel-first ``(C, ...)`` arrays. The denoiser is any
callable ``(z_t, t, condition) -> v`` returning an array of ``z_t``'s shape.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import BadTimestep, DegenerateSchedule, InvalidRange, ShapeMismatch, StereoSpaceError

DEFAULT_BETA_START = 0.00085
DEFAULT_BETA_END = 0.012
DEFAULT_TRAIN_STEPS = 1000
DEFAULT_INFERENCE_STEPS = 50
DEFAULT_NOISE_OFFSET = 0.05
DEFAULT_GUIDANCE_SCALE = 1.5
DEFAULT_UNCOND_DROP = 0.1


@dataclass(frozen=True, eq=False)
class NoiseSchedule:
    betas: np.ndarray
    alpha_bars: np.ndarray
    zero_terminal_snr: bool = False

    def __post_init__(self):
        for name in ("betas", "alpha_bars"):
            arr = np.array(getattr(self, name), dtype=np.float64)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def num_steps(self):
        return self.alpha_bars.size

    @property
    def sqrt_alpha_bars(self):
        return np.sqrt(self.alpha_bars)

    def alpha_bar(self, t):
        return float(self.alpha_bars[check_timestep(t, self)])

    def snr(self):
        ab = self.alpha_bars
        with np.errstate(divide="ignore"):
            return np.where(ab < 1.0, ab / np.maximum(1.0 - ab, 0.0), np.inf)


def check_timestep(t, schedule):
    ti = int(t)
    if ti != t or not 0 <= ti < schedule.num_steps:
        raise BadTimestep(f"timestep {t} outside [0, {schedule.num_steps - 1}]")
    return ti


def scaled_linear_schedule(num_steps=DEFAULT_TRAIN_STEPS, beta_start=DEFAULT_BETA_START,
                           beta_end=DEFAULT_BETA_END):
    """Betas linear in sqrt-space between ``beta_start`` and ``beta_end``."""
    if num_steps < 2:
        raise InvalidRange(f"need at least 2 steps, got {num_steps}")
    if not 0.0 < beta_start < beta_end < 1.0:
        raise InvalidRange(f"need 0 < beta_start < beta_end < 1, got {beta_start}, {beta_end}")
    betas = np.linspace(np.sqrt(beta_start), np.sqrt(beta_end), num_steps) ** 2
    return NoiseSchedule(betas, np.cumprod(1.0 - betas), zero_terminal_snr=False)


def rescale_zero_terminal_snr(schedule):
    """Shift and scale sqrt(alpha_bar) so the last step is pure noise.

    The first value is kept; the final beta becomes exactly 1.
    """
    sab = np.sqrt(schedule.alpha_bars)
    first, last = sab[0], sab[-1]
    if not first > last:
        raise DegenerateSchedule("sqrt(alpha_bar) must decrease from first to last step")
    if last == 0.0:
        return NoiseSchedule(schedule.betas.copy(), schedule.alpha_bars.copy(), zero_terminal_snr=True)
    sab = (sab - last) * (first / (first - last))
    sab[0] = first
    sab[-1] = 0.0
    alpha_bars = sab**2
    alphas = np.empty_like(alpha_bars)
    alphas[0] = alpha_bars[0]
    alphas[1:] = alpha_bars[1:] / alpha_bars[:-1]
    return NoiseSchedule(1.0 - alphas, alpha_bars, zero_terminal_snr=True)


def default_schedule(num_steps=DEFAULT_TRAIN_STEPS, zero_terminal_snr=True):
    s = scaled_linear_schedule(num_steps)
    return rescale_zero_terminal_snr(s) if zero_terminal_snr else s


def add_noise(x0, eps, t, schedule, noise_offset=0.0, channel_offsets=None, rng=None):
    """Forward process ``sqrt(abar) * x0 + sqrt(1 - abar) * eps'``.

    ``eps' = eps + noise_offset * channel_offsets[c]`` broadcast over all
    non-channel axes. With a non-zero offset the per-channel constants come
    from ``channel_offsets`` or, failing that, one standard-normal draw per
    channel from ``rng``.
    """
    x0 = np.asarray(x0, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    if x0.shape != eps.shape:
        raise ShapeMismatch(f"x0 {x0.shape} and eps {eps.shape} differ")
    ab = schedule.alpha_bar(t)
    if noise_offset:
        if channel_offsets is None:
            if rng is None:
                raise StereoSpaceError("noise offset needs channel_offsets or an rng")
            channel_offsets = rng.standard_normal(x0.shape[0])
        offs = np.asarray(channel_offsets, dtype=np.float64)
        if offs.shape != (x0.shape[0],):
            raise ShapeMismatch(f"expected {x0.shape[0]} channel offsets, got {offs.shape}")
        eps = eps + noise_offset * offs.reshape((-1,) + (1,) * (x0.ndim - 1))
    return np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * eps


def x0_from_v(z_t, v, t, schedule):
    z_t = np.asarray(z_t, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if z_t.shape != v.shape:
        raise ShapeMismatch(f"z_t {z_t.shape} and v {v.shape} differ")
    ab = schedule.alpha_bar(t)
    return np.sqrt(ab) * z_t - np.sqrt(1.0 - ab) * v


def eps_from_v(z_t, v, t, schedule):
    ab = schedule.alpha_bar(t)
    return np.sqrt(ab) * np.asarray(v, dtype=np.float64) + np.sqrt(1.0 - ab) * np.asarray(z_t, dtype=np.float64)


def ddim_step(z_t, v_pred, t, t_prev, schedule):
    """Deterministic (eta = 0) DDIM update from ``t`` to ``t_prev``."""
    t = check_timestep(t, schedule)
    t_prev = check_timestep(t_prev, schedule)
    if t_prev > t:
        raise BadTimestep(f"t_prev={t_prev} must not exceed t={t}")
    x0_hat = x0_from_v(z_t, v_pred, t, schedule)
    eps_hat = eps_from_v(z_t, v_pred, t, schedule)
    ab_prev = schedule.alpha_bars[t_prev]
    return np.sqrt(ab_prev) * x0_hat + np.sqrt(1.0 - ab_prev) * eps_hat


def inference_timesteps(schedule, num_inference_steps=DEFAULT_INFERENCE_STEPS):
    """Descending, evenly spaced indices covering ``[0, T-1]`` inclusive."""
    n = int(num_inference_steps)
    if not 1 <= n <= schedule.num_steps:
        raise BadTimestep(f"cannot take {n} steps on a {schedule.num_steps}-step schedule")
    ts = np.floor(np.linspace(0, schedule.num_steps - 1, n) + 0.5).astype(int)
    return ts[::-1].copy()


@dataclass(frozen=True)
class GuidanceConfig:
    scale: float = DEFAULT_GUIDANCE_SCALE
    uncond_drop_ratio: float = DEFAULT_UNCOND_DROP

    def __post_init__(self):
        if not np.isfinite(self.scale) or self.scale < 0:
            raise StereoSpaceError(f"guidance scale must be finite and >= 0, got {self.scale}")
        if not 0.0 <= self.uncond_drop_ratio <= 1.0:
            raise StereoSpaceError("uncond_drop_ratio must lie in [0, 1]")


def cfg_combine(v_uncond, v_cond, guidance=GuidanceConfig()):
    v_uncond = np.asarray(v_uncond, dtype=np.float64)
    v_cond = np.asarray(v_cond, dtype=np.float64)
    if v_uncond.shape != v_cond.shape:
        raise ShapeMismatch(f"v_uncond {v_uncond.shape} and v_cond {v_cond.shape} differ")
    if guidance.scale == 1.0:
        return v_cond.copy()
    if guidance.scale == 0.0:
        return v_uncond.copy()
    return v_uncond + guidance.scale * (v_cond - v_uncond)


def min_snr_weight(t, schedule, gamma=5.0):
    """Min-SNR-gamma weight for v-prediction: ``min(SNR, gamma) / (SNR + 1)``."""
    ab = schedule.alpha_bar(t)
    if ab >= 1.0:
        return 1.0 if np.isinf(gamma) else 0.0
    snr = ab / (1.0 - ab)
    return float(min(snr, gamma) / (snr + 1.0))


def oracle_denoiser(x0_known, schedule):
    """Denoiser returning the exact velocity that points at ``x0_known``.

    Solves ``x0_from_v(z_t, v, t) == x0_known`` for ``v``. At
    ``alpha_bar == 1`` every ``v`` satisfies that, and zeros are returned.
    """
    x0_known = np.asarray(x0_known, dtype=np.float64)

    def denoise(z_t, t, condition=None):
        ab = schedule.alpha_bar(t)
        z_t = np.asarray(z_t, dtype=np.float64)
        if z_t.shape != x0_known.shape:
            raise ShapeMismatch(f"latent {z_t.shape} does not match oracle {x0_known.shape}")
        if ab >= 1.0:
            return np.zeros_like(z_t)
        return (np.sqrt(ab) * z_t - x0_known) / np.sqrt(1.0 - ab)

    return denoise


def ddim_sample(denoiser, z_start, schedule, num_inference_steps=DEFAULT_INFERENCE_STEPS,
                condition=None, uncond_condition=None, guidance=None):
    """Run the deterministic sampler and return the closed-form clean sample.

    Steps through :func:`inference_timesteps`; at the last (smallest)
    timestep the clean sample is read off with :func:`x0_from_v` rather than
    taking one more noisy step. With ``guidance`` set, the denoiser is also
    queried with ``uncond_condition`` and the two are combined by
    :func:`cfg_combine`.
    """
    ts = inference_timesteps(schedule, num_inference_steps)
    z = np.asarray(z_start, dtype=np.float64)
    for k, t in enumerate(ts):
        v = denoiser(z, int(t), condition)
        if guidance is not None:
            v = cfg_combine(denoiser(z, int(t), uncond_condition), v, guidance)
        if k == len(ts) - 1:
            return x0_from_v(z, v, int(t), schedule)
        z = ddim_step(z, v, int(t), int(ts[k + 1]), schedule)
    raise AssertionError("unreachable")
