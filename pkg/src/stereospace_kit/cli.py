"""``stsp`` command-line interface.

Exit codes: 0 success, 1 domain error (one JSON line on stderr), 2 usage
error. Structured output is JSON lines by default, CSV with ``--format csv``.
"""

from __future__ import annotations

import argparse
import csv
import importlib
import io as _io
import json
import logging
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import diffusion as dif
from . import geometry as geo
from . import harness, imaging, losses, matching, selftest
from . import io as sio
from .errors import StereoSpaceError
from .seeding import make_rng

log = logging.getLogger("stereospace_kit")

COMMANDS = (
    "plucker", "canonicalize", "warp", "mask", "loss", "schedule", "ddim-roundtrip",
    "sgbm", "calibrate", "evaluate", "mix-weights", "tuple-pairs", "selftest",
)


def _threads(args):
    env = os.environ.get("STSP_THREADS")
    value = env if env else args.threads
    if value in (None, "auto"):
        return os.cpu_count() or 1
    n = int(value)
    if n < 1:
        raise StereoSpaceError(f"threads must be >= 1, got {n}")
    return n


def _map(args):
    n = _threads(args)
    if n == 1:
        return map
    pool = ThreadPoolExecutor(max_workers=n)
    args._pool = pool
    return pool.map


def _fmt(v):
    if isinstance(v, float):
        if math.isnan(v) or math.isinf(v):
            return None
        return float(repr(v))
    if isinstance(v, np.floating):
        return _fmt(float(v))
    if isinstance(v, np.integer):
        return int(v)
    return v


def _clean(obj):
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    return _fmt(obj)


def _emit(rows, fmt, out=None):
    out = out or sys.stdout
    rows = [_clean(r) for r in rows]
    if fmt == "csv":
        keys = []
        for r in rows:
            keys += [k for k in r if k not in keys]
        w = csv.DictWriter(out, fieldnames=keys, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: ("" if r.get(k) is None else r.get(k)) for k in keys})
    else:
        for r in rows:
            out.write(json.dumps(r, sort_keys=False) + "\n")


def _write_csv(path, rows):
    buf = _io.StringIO()
    _emit(rows, "csv", buf)
    Path(path).write_text(buf.getvalue())


# ---------------------------------------------------------------- subcommands


def cmd_plucker(args):
    intr, pose, baseline = sio.read_camera(args.camera)
    if args.side:
        if baseline is None and args.baseline is None:
            raise StereoSpaceError("--side needs a baseline (camera file or --baseline)")
        rig = geo.StereoRig.canonical(args.baseline or baseline)
        pose = rig.left_pose if args.side == "left" else rig.right_pose
    pm = geo.plucker_map(intr, pose)
    sio.write_stsp(args.out, pm)
    _emit([{"out": str(args.out), "shape": list(pm.shape)}], args.format)


def cmd_canonicalize(args):
    li, lp, lb = sio.read_camera(args.left_camera)
    ri, rp, rb = sio.read_camera(args.right_camera)
    baseline = args.baseline if args.baseline is not None else (lb if lb is not None else rb)
    rig = geo.canonicalize_rig(lp, rp, baseline, left_intrinsics=li, right_intrinsics=ri)
    if args.out_left:
        sio.write_camera(args.out_left, li, rig.left_pose, rig.baseline_m)
    if args.out_right:
        sio.write_camera(args.out_right, ri, rig.right_pose, rig.baseline_m)
    _emit([{
        "baseline_m": rig.baseline_m,
        "left_center": rig.left_pose.center.tolist(),
        "right_center": rig.right_pose.center.tolist(),
    }], args.format)


def cmd_warp(args):
    img = sio.read_image(args.image)
    disp = sio.read_disparity(args.disparity)
    fn = imaging.backward_warp if args.mode == "backward" else imaging.forward_warp
    out, mask = fn(img, disp, args.direction)
    sio.write_image(args.out, out)
    if args.out_mask:
        sio.write_pfm(args.out_mask, mask.astype(np.float32))
    _emit([{"out": str(args.out), "valid_fraction": float(mask.mean())}], args.format)


def cmd_mask(args):
    dl = sio.read_disparity(args.disp_left)
    dr = sio.read_disparity(args.disp_right)
    m = imaging.lr_consistency_mask(dl, dr, args.tau)
    if args.out:
        sio.write_pfm(args.out, m.astype(np.float32))
    _emit([{"valid_fraction": float(m.mean()), "valid": int(m.sum())}], args.format)


def cmd_loss(args):
    w = losses.LossWeights(alpha=args.alpha, lambda_pix=args.lambda_pix, lambda_warp=args.lambda_warp)
    pred = sio.read_image(args.pred)
    target = sio.read_image(args.target)
    record = {}
    l_vel = l_warp = None
    if args.v_pred or args.v_true:
        if not (args.v_pred and args.v_true):
            raise StereoSpaceError("--v-pred and --v-true go together")
        l_vel = losses.velocity_loss(sio.read_stsp(args.v_pred), sio.read_stsp(args.v_true))
        record["l_vel"] = l_vel.value
    l_pix = losses.pixel_loss(pred, target, w)
    record["l_pix"] = l_pix.value
    if args.source or args.disparity:
        if not (args.source and args.disparity):
            raise StereoSpaceError("--source and --disparity go together")
        source = sio.read_image(args.source)
        disp = sio.read_disparity(args.disparity)
        if args.mask:
            mask = sio.read_disparity(args.mask) > 0.5
        else:
            other = sio.read_disparity(args.disp_target) if args.disp_target else None
            mask = imaging.warp_validity_mask(disp, other, tau=args.tau)
        l_warp = losses.warp_loss(pred, source, disp, mask)
        record["l_warp"] = l_warp.value
    record["total"] = losses.total_loss(l_vel, l_pix, l_warp, w).value
    _emit([record], "json")


def cmd_schedule(args):
    s = dif.scaled_linear_schedule(args.steps, args.beta_start, args.beta_end)
    if args.zero_terminal_snr:
        s = dif.rescale_zero_terminal_snr(s)
    snr = s.snr()
    rows = [
        {
            "t": t,
            "beta": float(s.betas[t]),
            "alpha_bar": float(s.alpha_bars[t]),
            "sqrt_alpha_bar": float(s.sqrt_alpha_bars[t]),
            "snr": float(snr[t]),
            "weight": dif.min_snr_weight(t, s, args.gamma),
        }
        for t in range(s.num_steps)
    ]
    _emit(rows, "json" if args.json else "csv")


def cmd_ddim_roundtrip(args):
    s = dif.default_schedule(args.steps, zero_terminal_snr=True)
    rng = make_rng(args.seed, "ddim-roundtrip")
    x0 = rng.standard_normal(tuple(args.shape))
    z = rng.standard_normal(x0.shape)
    out = dif.ddim_sample(dif.oracle_denoiser(x0, s), z, s, args.inference_steps)
    _emit([{"max_abs_error": float(np.max(np.abs(out - x0))), "steps": args.inference_steps}], "json")


def _sgbm_params(args):
    return matching.SgbmParams(
        min_disparity=args.min_disparity,
        num_disparities=args.num_disparities,
        block_size=args.block_size,
        p1=args.p1,
        p2=args.p2,
        num_paths=args.num_paths,
        uniqueness_ratio=args.uniqueness_ratio,
        lr_threshold=args.lr_threshold,
    ).check()


def cmd_sgbm(args):
    params = _sgbm_params(args)
    dl, dr = matching.sgbm(sio.read_image(args.left), sio.read_image(args.right), params)
    sio.write_pfm(args.out_left, dl)
    sio.write_pfm(args.out_right, dr)
    _emit([{
        "valid_left": float(np.isfinite(dl).mean()),
        "valid_right": float(np.isfinite(dr).mean()),
        "params": params.as_dict(),
    }], "json")


def _read_manifest(path):
    base = Path(path).parent
    scenes = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        if not line.strip():
            continue
        try:
            entry = json.loads(line)
        except json.JSONDecodeError as exc:
            raise StereoSpaceError(f"{path}:{lineno}: {exc.msg}") from None
        for key, value in list(entry.items()):
            if key in ("left", "right", "synth", "inverse_depth", "disparity", "camera") and value:
                entry[key] = str(base / value)
        entry.setdefault("scene", f"scene{len(scenes):04d}")
        scenes.append(entry)
    return scenes


def _resolve_generator(spec, scene):
    if spec == "warp":
        key = "inverse_depth" if "inverse_depth" in scene else "disparity"
        if key not in scene:
            raise StereoSpaceError(f"{scene['scene']}: warp generator needs 'inverse_depth'")
        relative = sio.read_disparity(scene[key]).astype(np.float64)

        def generate(source, scale):
            return imaging.forward_warp(source, scale * relative)[0]

        return generate
    module, _, attr = spec.partition(":")
    if not attr:
        raise StereoSpaceError(f"generator must be 'warp' or 'module:callable', got {spec!r}")
    return getattr(importlib.import_module(module), attr)


def _search_config(args):
    return harness.SearchConfig(args.lo, args.hi, args.levels, args.samples, args.shrink,
                                args.min_joint_valid)


def _maybe_resize(img, res):
    return img if not res else harness.resize_center_crop(img, res, res)


def cmd_calibrate(args):
    params = _sgbm_params(args)
    cfg = _search_config(args)
    scenes = _read_manifest(args.manifest)

    def run(scene):
        left = _maybe_resize(sio.read_image(scene["left"]), args.resolution)
        right = _maybe_resize(sio.read_image(scene["right"]), args.resolution)
        gen = _resolve_generator(args.generator, scene)
        res = harness.calibrate_scale(left, right, gen, params, cfg)
        row = {"scene": scene["scene"], "best_scale": res.best_scale, "best_rmse": res.best_rmse}
        if args.trace:
            row["trace"] = [vars(e) for e in res.trace]
        return row

    rows = list(_map(args)(run, scenes))
    _emit(rows, args.format)
    if args.summary_csv:
        summary = [{k: v for k, v in r.items() if k != "trace"} for r in rows]
        summary.append({"scene": "mean", **harness.aggregate_records(summary)})
        _write_csv(args.summary_csv, summary)


def cmd_evaluate(args):
    params = _sgbm_params(args)
    scenes = _read_manifest(args.manifest)

    def run(scene):
        imgs = [_maybe_resize(sio.read_image(scene[k]), args.resolution) for k in ("left", "right", "synth")]
        rec = harness.evaluate_pair(*imgs, sgbm_params=params)
        return {"scene": scene["scene"], **rec}

    rows = list(_map(args)(run, scenes))
    _emit(rows, args.format)
    if args.summary_csv:
        summary = rows + [{"scene": "mean", **harness.aggregate_records(rows)}]
        _write_csv(args.summary_csv, summary)


def _stdin_json(args):
    text = sys.stdin.read()
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return [json.loads(line) for line in text.splitlines() if line.strip()]


def cmd_mix_weights(args):
    data = _stdin_json(args)
    entries = [harness.DatasetEntry(**d) for d in (data if isinstance(data, list) else [data])]
    weights = harness.mix_weights(entries)
    _emit([{"name": k, "effective": v} for k, v in weights.items()], args.format)


def cmd_tuple_pairs(args):
    rows = []
    for line in sys.stdin.read().splitlines():
        line = line.strip()
        if not line:
            continue
        views = json.loads(line) if line.startswith("[") else [float(x) for x in line.replace(",", " ").split()]
        pairs = harness.tuple_pairs(views)
        rows.append({"views": len(views), "count": len(pairs), "pairs": [list(p) for p in pairs]})
    _emit(rows, "json")


def cmd_selftest(args):
    lines, passed, failed = selftest.run(args.seed, _map(args))
    for line in lines:
        sys.stdout.write(line + "\n")
    sys.stdout.write(json.dumps({"passed": passed, "failed": failed}) + "\n")
    return 0 if failed == 0 else 1


# --------------------------------------------------------------------- parser


def _add_sgbm_flags(p):
    g = p.add_argument_group("SGBM parameters")
    g.add_argument("--min-disparity", type=int, default=0)
    g.add_argument("--num-disparities", type=int, default=128)
    g.add_argument("--block-size", type=int, default=5)
    g.add_argument("--p1", type=int, default=None, help="default 8*block_size^2")
    g.add_argument("--p2", type=int, default=None, help="default 32*block_size^2")
    g.add_argument("--num-paths", type=int, default=8, choices=(4, 8))
    g.add_argument("--uniqueness-ratio", type=float, default=10.0)
    g.add_argument("--lr-threshold", type=float, default=1.0)


def _add_search_flags(p):
    g = p.add_argument_group("scale search")
    g.add_argument("--lo", type=float, default=harness.SCALE_BOUNDS[0])
    g.add_argument("--hi", type=float, default=harness.SCALE_BOUNDS[1])
    g.add_argument("--levels", type=int, default=3)
    g.add_argument("--samples", type=int, default=16, help="samples per level")
    g.add_argument("--shrink", type=float, default=4.0)
    g.add_argument("--min-joint-valid", type=float, default=0.05)


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="global seed (default 0)")
    common.add_argument("--threads", default="1",
                        help="worker count or 'auto'; STSP_THREADS overrides (default 1)")
    common.add_argument("--format", choices=("json", "csv"), default="json",
                        help="structured output format (default json lines)")
    common.add_argument("-v", "--verbose", action="count", default=0)

    parser = argparse.ArgumentParser(prog="stsp", description="Stereo geometry and evaluation toolkit.")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", required=True)

    def add(name, fn, help_):
        p = sub.add_parser(name, parents=[common], help=help_, description=help_)
        p.set_defaults(func=fn)
        return p

    p = add("plucker", cmd_plucker, "Export a (6, H, W) Plücker ray map as an STSP tensor.")
    p.add_argument("--camera", required=True, help="camera key=value file")
    p.add_argument("--out", required=True, help="output .stsp path")
    p.add_argument("--side", choices=("left", "right"), help="use the canonical rig pose for this side")
    p.add_argument("--baseline", type=float, help="baseline in meters for --side")

    p = add("canonicalize", cmd_canonicalize, "Canonicalize a rectified camera pair.")
    p.add_argument("--left-camera", required=True)
    p.add_argument("--right-camera", required=True)
    p.add_argument("--baseline", type=float)
    p.add_argument("--out-left")
    p.add_argument("--out-right")

    p = add("warp", cmd_warp, "Warp an image along a disparity map.")
    p.add_argument("--image", required=True)
    p.add_argument("--disparity", required=True)
    p.add_argument("--direction", choices=(imaging.LEFT_TO_RIGHT, imaging.RIGHT_TO_LEFT),
                   default=imaging.LEFT_TO_RIGHT)
    p.add_argument("--mode", choices=("backward", "forward"), default="backward")
    p.add_argument("--out", required=True)
    p.add_argument("--out-mask", help="validity mask as 0/1 PFM")

    p = add("mask", cmd_mask, "Left-right consistency mask of two disparity maps.")
    p.add_argument("--disp-left", required=True)
    p.add_argument("--disp-right", required=True)
    p.add_argument("--tau", type=float, default=imaging.DEFAULT_LR_TAU)
    p.add_argument("--out", help="mask as 0/1 PFM")

    p = add("loss", cmd_loss, "Evaluate the training losses on image files.")
    p.add_argument("--pred", required=True, help="predicted target view")
    p.add_argument("--target", required=True, help="ground-truth target view")
    p.add_argument("--source", help="source view for the warp loss")
    p.add_argument("--disparity", help="source-view disparity (PFM)")
    p.add_argument("--mask", help="explicit validity mask (PFM, >0.5 is valid)")
    p.add_argument("--disp-target", help="target-view disparity for the LR check")
    p.add_argument("--tau", type=float, default=imaging.DEFAULT_LR_TAU)
    p.add_argument("--v-pred", help="predicted velocity (STSP)")
    p.add_argument("--v-true", help="target velocity (STSP)")
    p.add_argument("--alpha", type=float, default=0.85)
    p.add_argument("--lambda-pix", type=float, default=1.0)
    p.add_argument("--lambda-warp", type=float, default=0.3)

    p = add("schedule", cmd_schedule, "Dump a noise schedule as CSV.")
    p.add_argument("--steps", type=int, default=dif.DEFAULT_TRAIN_STEPS)
    p.add_argument("--beta-start", type=float, default=dif.DEFAULT_BETA_START)
    p.add_argument("--beta-end", type=float, default=dif.DEFAULT_BETA_END)
    p.add_argument("--zero-terminal-snr", action="store_true")
    p.add_argument("--gamma", type=float, default=5.0, help="min-SNR gamma")
    p.add_argument("--json", action="store_true", help="emit JSON lines instead of CSV")

    p = add("ddim-roundtrip", cmd_ddim_roundtrip, "Run DDIM against the oracle denoiser.")
    p.add_argument("--steps", type=int, default=dif.DEFAULT_TRAIN_STEPS)
    p.add_argument("--inference-steps", type=int, default=dif.DEFAULT_INFERENCE_STEPS)
    p.add_argument("--shape", type=int, nargs="+", default=[4, 16, 16])

    p = add("sgbm", cmd_sgbm, "Semi-global block matching on a rectified pair.")
    p.add_argument("--left", required=True)
    p.add_argument("--right", required=True)
    p.add_argument("--out-left", required=True)
    p.add_argument("--out-right", required=True)
    _add_sgbm_flags(p)

    p = add("calibrate", cmd_calibrate, "Per-scene scale calibration over a manifest.")
    p.add_argument("--manifest", required=True, help="JSON lines: left, right, inverse_depth, ...")
    p.add_argument("--generator", default="warp", help="'warp' or 'module:callable'")
    p.add_argument("--resolution", type=int, default=0, help="resize+crop side length (0: keep)")
    p.add_argument("--summary-csv")
    p.add_argument("--trace", action="store_true", help="include the search trace")
    _add_search_flags(p)
    _add_sgbm_flags(p)

    p = add("evaluate", cmd_evaluate, "Metric records for generated right views.")
    p.add_argument("--manifest", required=True, help="JSON lines: left, right, synth")
    p.add_argument("--resolution", type=int, default=harness.EVAL_RESOLUTION,
                   help="resize+crop side length (0: keep)")
    p.add_argument("--no-resize", dest="resolution", action="store_const", const=0,
                   help="evaluate at native resolution")
    p.add_argument("--summary-csv")
    _add_sgbm_flags(p)

    add("mix-weights", cmd_mix_weights, "Effective dataset sizes from a JSON spec on stdin.")
    add("tuple-pairs", cmd_tuple_pairs, "Stereo pairs per tuple; one tuple of offsets per stdin line.")
    add("selftest", cmd_selftest, "Run the invariant suite.")
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), stream=sys.stderr)
    try:
        code = args.func(args)
    except (StereoSpaceError, OSError) as exc:
        sys.stderr.write(json.dumps({"error": type(exc).__name__, "message": str(exc)}) + "\n")
        return 1
    finally:
        pool = getattr(args, "_pool", None)
        if pool is not None:
            pool.shutdown()
    return code or 0


if __name__ == "__main__":
    sys.exit(main())
