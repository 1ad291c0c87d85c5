import csv
import io
import json
import os
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from stereospace_kit import forward_warp
from stereospace_kit import io as sio
from stereospace_kit.cli import COMMANDS, build_parser, main
from stereospace_kit.geometry import CameraIntrinsics, RigidPose

SNAPSHOTS = Path(__file__).parent / "snapshots"
UPDATE = os.environ.get("STSP_UPDATE_SNAPSHOTS") == "1"


def run(capsys, monkeypatch, *argv, stdin=None):
    if stdin is not None:
        monkeypatch.setattr(sys, "stdin", io.StringIO(stdin))
    code = main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


def run_process(*argv, env=None, stdin=None):
    full_env = {**os.environ, **(env or {})}
    return subprocess.run([sys.executable, "-m", "stereospace_kit", *argv], capture_output=True,
                          env=full_env, input=stdin, timeout=120)


def json_lines(text):
    return [json.loads(line) for line in text.splitlines() if line.strip()]


class TestDispatch:
    def test_unknown_command_is_usage_error(self):
        assert run_process("frobnicate").returncode == 2

    def test_missing_command_is_usage_error(self):
        assert run_process().returncode == 2

    def test_bad_flag_is_usage_error(self):
        assert run_process("schedule", "--steps", "many").returncode == 2

    def test_domain_error_is_one_json_line(self, tmp_path):
        proc = run_process("sgbm", "--left", str(tmp_path / "nope.ppm"), "--right", "x.ppm",
                           "--out-left", "a.pfm", "--out-right", "b.pfm")
        assert proc.returncode == 1
        lines = proc.stderr.decode().strip().splitlines()
        assert len(lines) == 1
        assert set(json.loads(lines[0])) == {"error", "message"}

    def test_bad_params_exit_one(self, capsys, monkeypatch, tmp_path):
        img = tmp_path / "a.ppm"
        sio.write_ppm(img, np.zeros((8, 8)))
        code, _, err = run(capsys, monkeypatch, "sgbm", "--left", str(img), "--right", str(img),
                           "--out-left", str(tmp_path / "l.pfm"), "--out-right", str(tmp_path / "r.pfm"),
                           "--block-size", "4")
        assert code == 1 and json.loads(err)["error"] == "BadParams"

    def test_every_command_registered(self):
        choices = build_parser()._subparsers._group_actions[0].choices
        assert tuple(choices) == COMMANDS


class TestSchedule:
    def test_zero_terminal_csv(self, capsys, monkeypatch):
        code, out, _ = run(capsys, monkeypatch, "schedule", "--steps", "1000", "--zero-terminal-snr")
        rows = list(csv.DictReader(io.StringIO(out)))
        assert code == 0 and len(rows) == 1000
        assert float(rows[-1]["sqrt_alpha_bar"]) == 0.0
        assert float(rows[-1]["beta"]) == 1.0
        assert float(rows[0]["sqrt_alpha_bar"]) > 0.99

    def test_json_mode(self, capsys, monkeypatch):
        _, out, _ = run(capsys, monkeypatch, "schedule", "--steps", "10", "--json")
        rows = json_lines(out)
        assert len(rows) == 10 and rows[0]["t"] == 0

    def test_invalid_range(self, capsys, monkeypatch):
        code, _, err = run(capsys, monkeypatch, "schedule", "--beta-start", "0.1", "--beta-end", "0.01")
        assert code == 1 and json.loads(err)["error"] == "InvalidRange"


class TestNumericCommands:
    def test_ddim_roundtrip(self, capsys, monkeypatch):
        code, out, _ = run(capsys, monkeypatch, "ddim-roundtrip", "--shape", "2", "8", "8")
        assert code == 0 and json.loads(out)["max_abs_error"] < 1e-4

    def test_loss(self, capsys, monkeypatch, tmp_path, rng):
        left = rng.uniform(size=(24, 40, 3))
        disp = np.full((24, 40), 4.0)
        right = forward_warp(left, disp)[0]
        for name, img in (("left.ppm", left), ("right.ppm", right)):
            sio.write_ppm(tmp_path / name, img)
        sio.write_pfm(tmp_path / "d.pfm", disp)
        code, out, _ = run(capsys, monkeypatch, "loss", "--pred", str(tmp_path / "right.ppm"),
                           "--target", str(tmp_path / "right.ppm"), "--source", str(tmp_path / "left.ppm"),
                           "--disparity", str(tmp_path / "d.pfm"))
        rec = json.loads(out)
        assert code == 0 and set(rec) == {"l_pix", "l_warp", "total"}
        assert rec["l_pix"] == 0.0
        assert rec["total"] == pytest.approx(rec["l_pix"] + 0.3 * rec["l_warp"], abs=1e-12)

    def test_warp_and_mask(self, capsys, monkeypatch, tmp_path, rng):
        sio.write_ppm(tmp_path / "img.ppm", rng.uniform(size=(8, 12)))
        sio.write_pfm(tmp_path / "d.pfm", np.full((8, 12), 3.0))
        code, _, _ = run(capsys, monkeypatch, "warp", "--image", str(tmp_path / "img.ppm"),
                         "--disparity", str(tmp_path / "d.pfm"), "--out", str(tmp_path / "w.pfm"),
                         "--out-mask", str(tmp_path / "m.pfm"))
        assert code == 0
        assert np.array_equal(sio.read_pfm(tmp_path / "m.pfm")[:, :3], np.zeros((8, 3)))
        code, out, _ = run(capsys, monkeypatch, "mask", "--disp-left", str(tmp_path / "d.pfm"),
                           "--disp-right", str(tmp_path / "d.pfm"))
        assert code == 0 and json.loads(out)["valid_fraction"] == pytest.approx(9 / 12)

    def test_sgbm_writes_nan_for_invalid(self, capsys, monkeypatch, tmp_path):
        big = np.random.default_rng(0).uniform(size=(48, 72))
        sio.write_ppm(tmp_path / "l.ppm", big[:, :64])
        sio.write_ppm(tmp_path / "r.ppm", big[:, 8:])
        code, out, _ = run(capsys, monkeypatch, "sgbm", "--left", str(tmp_path / "l.ppm"),
                           "--right", str(tmp_path / "r.ppm"), "--out-left", str(tmp_path / "dl.pfm"),
                           "--out-right", str(tmp_path / "dr.pfm"), "--num-disparities", "16")
        assert code == 0 and json.loads(out)["params"]["num_disparities"] == 16
        dl = sio.read_pfm(tmp_path / "dl.pfm")
        assert np.isnan(dl[:, :10]).all()
        assert np.nanmedian(dl) == pytest.approx(8.0, abs=0.1)


class TestGeometryCommands:
    def write_rig(self, tmp_path, baseline=0.2):
        intr = CameraIntrinsics(100.0, 100.0, 16.0, 12.0, 32, 24)
        sio.write_camera(tmp_path / "l.cam", intr, RigidPose(np.eye(3), np.array([1.0, 2.0, 3.0])), baseline)
        sio.write_camera(tmp_path / "r.cam", intr, RigidPose(np.eye(3), np.array([1.0 + baseline, 2.0, 3.0])),
                         baseline)

    def test_canonicalize(self, capsys, monkeypatch, tmp_path):
        self.write_rig(tmp_path)
        code, out, _ = run(capsys, monkeypatch, "canonicalize", "--left-camera", str(tmp_path / "l.cam"),
                           "--right-camera", str(tmp_path / "r.cam"), "--out-left", str(tmp_path / "cl.cam"))
        assert code == 0
        _, pose, _ = sio.read_camera(tmp_path / "cl.cam")
        np.testing.assert_allclose(pose.translation, [-0.1, 0.0, 0.0], atol=1e-12)

    def test_plucker(self, capsys, monkeypatch, tmp_path):
        self.write_rig(tmp_path)
        code, _, _ = run(capsys, monkeypatch, "plucker", "--camera", str(tmp_path / "l.cam"),
                         "--out", str(tmp_path / "p.stsp"), "--side", "right")
        rays = sio.read_stsp(tmp_path / "p.stsp")
        assert code == 0 and rays.shape == (6, 24, 32)
        np.testing.assert_allclose(np.einsum("chw,chw->hw", rays[:3], rays[3:]), 0.0, atol=1e-6)


class TestStdinCommands:
    def test_mix_weights(self, capsys, monkeypatch):
        spec = [{"name": "big", "size": 306000}, {"name": "small", "size": 1000},
                {"name": "multi", "size": 27000, "kind": "multi_baseline", "tuple_count": 27000}]
        code, out, _ = run(capsys, monkeypatch, "mix-weights", stdin=json.dumps(spec))
        assert code == 0
        assert {r["name"]: r["effective"] for r in json_lines(out)} == {
            "big": 306000, "small": 30600, "multi": 270000}

    def test_mix_weights_csv(self, capsys, monkeypatch):
        _, out, _ = run(capsys, monkeypatch, "mix-weights", "--format", "csv",
                        stdin='{"name": "only", "size": 5}')
        assert out.splitlines() == ["name,effective", "only,5"]

    def test_empty_spec(self, capsys, monkeypatch):
        code, _, err = run(capsys, monkeypatch, "mix-weights", stdin="[]")
        assert code == 1 and json.loads(err)["error"] == "EmptySpec"

    def test_tuple_pairs(self, capsys, monkeypatch):
        code, out, _ = run(capsys, monkeypatch, "tuple-pairs", stdin="0 5 10 15 20\n[0, 1, 2, 3, 4, 5, 6]\n")
        assert code == 0 and [r["count"] for r in json_lines(out)] == [10, 21]

    def test_too_few_views(self, capsys, monkeypatch):
        code, _, err = run(capsys, monkeypatch, "tuple-pairs", stdin="3\n")
        assert code == 1 and json.loads(err)["error"] == "TooFewViews"


def write_scenes(root, n=2, h=48, w=80):
    lines = []
    for k in range(n):
        r = np.random.default_rng(k)
        left = np.rint(r.uniform(size=(h, w)) * 255) / 255
        j = np.arange(w)[None, :]
        inv = (0.5 + 0.5 * j / w) * np.ones((h, 1))
        right = forward_warp(left, 10.0 * inv)[0]
        synth = forward_warp(left, 9.0 * inv)[0]
        for name, img in (("left", left), ("right", right), ("synth", synth)):
            sio.write_ppm(root / f"{name}{k}.ppm", img)
        sio.write_pfm(root / f"inv{k}.pfm", inv)
        lines.append(json.dumps({"left": f"left{k}.ppm", "right": f"right{k}.ppm",
                                 "synth": f"synth{k}.ppm", "inverse_depth": f"inv{k}.pfm"}))
    (root / "scenes.jsonl").write_text("\n".join(lines) + "\n")
    return root / "scenes.jsonl"


SEARCH = ["--num-disparities", "16", "--lo", "1", "--hi", "20", "--levels", "2", "--samples", "5"]


class TestManifestCommands:
    def test_calibrate(self, capsys, monkeypatch, tmp_path):
        manifest = write_scenes(tmp_path)
        code, out, _ = run(capsys, monkeypatch, "calibrate", "--manifest", str(manifest), *SEARCH,
                           "--summary-csv", str(tmp_path / "cal.csv"), "--trace")
        rows = json_lines(out)
        assert code == 0 and [r["scene"] for r in rows] == ["scene0000", "scene0001"]
        for r in rows:
            assert abs(r["best_scale"] - 10.0) <= 19 / 4 / 4
            assert len(r["trace"]) == 10
        summary = list(csv.DictReader((tmp_path / "cal.csv").open()))
        assert [s["scene"] for s in summary] == ["scene0000", "scene0001", "mean"]
        assert "trace" not in summary[0]

    def test_evaluate(self, capsys, monkeypatch, tmp_path):
        manifest = write_scenes(tmp_path, n=1)
        code, out, _ = run(capsys, monkeypatch, "evaluate", "--manifest", str(manifest), "--no-resize",
                           "--num-disparities", "16", "--summary-csv", str(tmp_path / "ev.csv"))
        (rec,) = json_lines(out)
        assert code == 0 and rec["scene"] == "scene0000"
        assert rec["psnr"] is not None and 0.0 < rec["ssim"] < 1.0
        assert "surrogate_consistency" in rec
        assert (tmp_path / "ev.csv").read_text().splitlines()[-1].startswith("mean,")

    def test_bad_manifest_line(self, capsys, monkeypatch, tmp_path):
        (tmp_path / "m.jsonl").write_text("{not json}\n")
        code, _, err = run(capsys, monkeypatch, "evaluate", "--manifest", str(tmp_path / "m.jsonl"))
        assert code == 1 and "m.jsonl:1" in json.loads(err)["message"]

    def test_thread_counts_agree(self, tmp_path):
        manifest = write_scenes(tmp_path, n=3)
        args = ["calibrate", "--manifest", str(manifest), *SEARCH]
        one = run_process(*args, "--threads", "1")
        many = run_process(*args, "--threads", "3")
        via_env = run_process(*args, env={"STSP_THREADS": "2"})
        assert one.returncode == 0
        assert one.stdout == many.stdout == via_env.stdout


class TestSelftest:
    def test_passes(self, capsys, monkeypatch):
        code, out, _ = run(capsys, monkeypatch, "selftest")
        assert code == 0
        assert json.loads(out.splitlines()[-1])["failed"] == 0

    def test_bad_thread_env(self, capsys, monkeypatch):
        monkeypatch.setenv("STSP_THREADS", "0")
        code, _, err = run(capsys, monkeypatch, "selftest")
        assert code == 1 and "threads" in json.loads(err)["message"]


def help_text(command):
    proc = run_process(command, "--help", env={"COLUMNS": "100"})
    assert proc.returncode == 0
    return proc.stdout.decode()


@pytest.mark.parametrize("command", COMMANDS)
def test_help_snapshot(command):
    path = SNAPSHOTS / f"{command}.txt"
    text = help_text(command)
    if UPDATE or not path.exists():
        SNAPSHOTS.mkdir(exist_ok=True)
        path.write_text(text)
    assert text == path.read_text()
