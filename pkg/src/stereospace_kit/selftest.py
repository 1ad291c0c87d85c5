"""Fast invariant checks run by ``stsp selftest``.

Each check is a pure function of a seeded generator and returns a short,
deterministic detail string, so the report is byte-identical across runs and
worker counts.
"""

from __future__ import annotations

import numpy as np

from . import diffusion as dif
from . import geometry as geo
from . import harness, imaging, losses, matching
from .seeding import make_rng

CHECKS = []


def check(fn):
    CHECKS.append(fn)
    return fn


def _random_pose(rng, scale=1.0):
    q = rng.standard_normal(4)
    q /= np.linalg.norm(q)
    w, x, y, z = q
    rot = np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
        [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
        [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
    ])
    return geo.RigidPose(rot, scale * rng.standard_normal(3))


def _fd_rel_error(fn, x, grad, coords, h=1e-3):
    worst = 0.0
    for idx in coords:
        xp = x.copy()
        xm = x.copy()
        xp[idx] += h
        xm[idx] -= h
        fd = (fn(xp) - fn(xm)) / (2 * h)
        denom = max(abs(fd), abs(grad[idx]), 1e-12)
        worst = max(worst, abs(fd - grad[idx]) / denom)
    return worst


def _coords(rng, shape, n):
    return [tuple(int(rng.integers(0, s)) for s in shape) for _ in range(n)]


@check
def plucker_constraint(rng):
    worst = 0.0
    for _ in range(200):
        intr = geo.CameraIntrinsics(fx=rng.uniform(20, 80), fy=rng.uniform(20, 80), cx=7.5,
                                    cy=5.5, width=16, height=12)
        pm = geo.plucker_map(intr, _random_pose(rng))
        d, m = pm[:3], pm[3:]
        worst = max(worst, np.max(np.abs(np.linalg.norm(d, axis=0) - 1)), np.max(np.abs((d * m).sum(0))))
    return worst < 1e-9, f"max_violation<1e-9={worst < 1e-9}"


@check
def plucker_gauge(rng):
    intr = geo.CameraIntrinsics(40.0, 40.0, 8.0, 6.0, 16, 12)
    worst = 0.0
    for _ in range(100):
        pose = _random_pose(rng)
        px = (int(rng.integers(0, 12)), int(rng.integers(0, 16)))
        ray = geo.pixel_ray(intr, pose, px)
        slid = geo.RigidPose(pose.rotation, pose.center + rng.uniform(-5, 5) * ray.direction)
        ray2 = geo.pixel_ray(intr, slid, px)
        worst = max(worst, np.max(np.abs(ray.as_vector() - ray2.as_vector())))
    return worst < 1e-9, f"gauge<1e-9={worst < 1e-9}"


@check
def line_relations(rng):
    a = geo.PluckerRay.from_point_direction([0, 0, 0], [0, 0, 1])
    b = geo.PluckerRay.from_point_direction([1, 0, 0], [0, 1, 0])
    ok = geo.reciprocal_product(a, b) == 1.0 and geo.line_distance(a, b) == 1.0
    return ok, f"reciprocal={geo.reciprocal_product(a, b):.3f} distance={geo.line_distance(a, b):.3f}"


@check
def canonical_rig(rng):
    pose = _random_pose(rng)
    left = geo.RigidPose(pose.rotation, pose.center)
    right = geo.RigidPose(pose.rotation, pose.center + 0.2 * pose.rotation[:, 0])
    rig = geo.canonicalize_rig(left, right, 0.2)
    again = geo.canonicalize_rig(rig.left_pose, rig.right_pose, rig.baseline_m)
    ok = np.allclose(rig.right_pose.center, [0.1, 0, 0], atol=1e-12) and again == rig
    return ok, f"baseline={rig.baseline_m:.3f}"


@check
def warp_identity(rng):
    img = rng.uniform(0, 1, (16, 16, 3))
    out, mask = imaging.backward_warp(img, np.zeros((16, 16)))
    return bool(np.array_equal(out, img) and mask.all()), "zero-disparity warp is exact"


@check
def warp_roundtrip(rng):
    src = rng.uniform(0, 1, (16, 24))
    disp = np.full((16, 24), 3.0)
    fw, hit = imaging.forward_warp(src, disp)
    back, inb = imaging.backward_warp(fw, disp)
    _, hit_back = imaging.backward_warp(hit.astype(float), disp)
    joint = inb & (hit_back == 1.0)
    err = float(np.max(np.abs(back[joint] - src[joint])))
    return err < 1e-6, f"joint={int(joint.sum())}"


@check
def loss_gradients(rng):
    shape = (16, 16)
    target = rng.uniform(0.2, 0.8, shape)
    pred = target + rng.choice([-1, 1], shape) * rng.uniform(0.05, 0.1, shape)
    w = losses.LossWeights()
    g = losses.pixel_loss(pred, target, w).gradient
    e_pix = _fd_rel_error(lambda x: losses.pixel_loss(x, target, w).value, pred, g, _coords(rng, shape, 20))
    vp, vt = rng.standard_normal((4, 8, 8)), rng.standard_normal((4, 8, 8))
    gv = losses.velocity_loss(vp, vt, 0.5).gradient
    e_vel = _fd_rel_error(lambda x: losses.velocity_loss(x, vt, 0.5).value, vp, gv, _coords(rng, vp.shape, 20))
    ok = e_pix < 1e-4 and e_vel < 1e-4
    return ok, f"pix<1e-4={e_pix < 1e-4} vel<1e-4={e_vel < 1e-4}"


@check
def zero_terminal(rng):
    s = dif.rescale_zero_terminal_snr(dif.scaled_linear_schedule(1000))
    ok = s.sqrt_alpha_bars[-1] == 0.0 and np.all(np.diff(s.alpha_bars) < 0)
    return bool(ok), f"T={s.num_steps}"


@check
def velocity_roundtrip(rng):
    s = dif.default_schedule()
    worst = 0.0
    for t in (0, 1, 250, 500, 999):
        x0, eps = rng.standard_normal((4, 8, 8)), rng.standard_normal((4, 8, 8))
        z = dif.add_noise(x0, eps, t, s)
        v = losses.velocity_target(x0, eps, s.alpha_bar(t))
        worst = max(worst, float(np.max(np.abs(dif.x0_from_v(z, v, t, s) - x0))))
    return worst < 1e-6, f"roundtrip<1e-6={worst < 1e-6}"


@check
def ddim_oracle(rng):
    s = dif.default_schedule()
    x0 = rng.standard_normal((4, 8, 8))
    out = dif.ddim_sample(dif.oracle_denoiser(x0, s), rng.standard_normal(x0.shape), s, 50)
    err = float(np.max(np.abs(out - x0)))
    return err < 1e-4, f"max_error<1e-4={err < 1e-4}"


@check
def sgbm_shift(rng):
    big = rng.uniform(0, 1, (48, 72))
    left, right = big[:, :64], big[:, 8:72]
    dl, _ = matching.sgbm(left, right, matching.SgbmParams(num_disparities=16))
    v = np.isfinite(dl)
    frac = float(np.mean(np.abs(dl[v] - 8) <= 0.5)) if v.any() else 0.0
    return frac >= 0.99, f"within_half_px>=0.99={frac >= 0.99}"


@check
def protocol_arithmetic(rng):
    spec = [
        harness.DatasetEntry("tartanair", 306000),
        harness.DatasetEntry("small", 1000),
        harness.DatasetEntry("nerf_stereo", 27000, "multi_baseline", 27000),
    ]
    w = harness.mix_weights(spec)
    ok = w == {"tartanair": 306000, "small": 30600, "nerf_stereo": 270000}
    ok &= len(harness.tuple_pairs(range(5))) == 10 and len(harness.tuple_pairs(range(7))) == 21
    return ok, f"small={w['small']} multi={w['nerf_stereo']}"


def run(seed=0, map_fn=map):
    """Run every check; returns ``(lines, passed, failed)``."""

    def one(item):
        k, fn = item
        try:
            ok, detail = fn(make_rng(seed, fn.__name__))
        except Exception as exc:  # a crashing check is a failure, not a crash
            ok, detail = False, f"{type(exc).__name__}: {exc}"
        return f"{'PASS' if ok else 'FAIL'} {k:02d} {fn.__name__} {detail}", bool(ok)

    results = list(map_fn(one, list(enumerate(CHECKS))))
    passed = sum(ok for _, ok in results)
    return [line for line, _ in results], passed, len(results) - passed
