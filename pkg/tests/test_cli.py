import csv
import hashlib
import json
import subprocess
import sys

import numpy as np
import pytest

from semtrack import __version__
from semtrack.cli import benchmark, main, random_box_pairs, write_atomic
from semtrack.kitti_io import write_point_cloud
from semtrack.voxelizer import PointCloud, VoxelGrid

from test_kitti_io import load_hex

CAR = "10,2,-0.9,4,1.8,1.5,0.3"
CAR_FLIPPED = "10,2,-0.9,4,1.8,1.5,3.441592653589793"


@pytest.fixture
def cwd(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    return tmp_path


def pipeline(root, seed=3, frames=100):
    """simulate -> track -> eval in ``root``; returns the MOT report.

    Fresh tracks need roughly 15 frames to clear the 0.7 SRTs gate, so short
    runs score low by construction.
    """
    cfg = root / "scenario.json"
    cfg.write_text(json.dumps({"duration": frames, "num_targets": 3}))
    assert main(["simulate", "--config", str(cfg), "--seed", str(seed),
                 "--out-dir", str(root / "sim")]) == 0
    assert main(["track", "--detections", str(root / "sim" / "detections.txt"),
                 "--calib", str(root / "sim" / "calib.txt"), "--out", str(root / "tracks.txt")]) == 0
    assert main(["eval", "--gt", str(root / "sim" / "truth.txt"), "--hyp", str(root / "tracks.txt"),
                 "--calib", str(root / "sim" / "calib.txt"), "--out", str(root / "mot.json")]) == 0
    return json.loads((root / "mot.json").read_text())


# -------------------------------------------------------------------- srts

def test_srts_prints_score(cwd, capsys):
    assert main(["srts", "--box-a", CAR, "--box-b", CAR]) == 0
    assert capsys.readouterr().out == "1.000000\n"
    assert main(["srts", "--box-a", CAR, "--box-b", CAR_FLIPPED]) == 0
    assert capsys.readouterr().out == "0.600000\n"
    assert main(["srts", "--metric", "iou", "--box-a", CAR, "--box-b", CAR_FLIPPED]) == 0
    assert capsys.readouterr().out == "1.000000\n"
    manifest = json.loads((cwd / "semtrack-srts.manifest.json").read_text())
    assert manifest["subcommand"] == "srts" and manifest["tool_version"] == __version__


def test_srts_custom_params(cwd, capsys):
    (cwd / "p.json").write_text(json.dumps({"alpha": 0, "beta": 0, "gamma": 1, "w_r": 1}))
    turned = "10,2,-0.9,4,1.8,1.5,1.8707963267948966"
    assert main(["srts", "--params", "p.json", "--box-a", CAR, "--box-b", turned]) == 0
    assert capsys.readouterr().out == "0.500000\n"


@pytest.mark.parametrize("argv", [
    ["srts", "--box-a", CAR],  # missing flag
    ["srts", "--box-a", CAR, "--box-b", CAR, "--bogus"],
    ["frobnicate"],
    [],
])
def test_usage_errors_exit_1(cwd, capsys, argv):
    with pytest.raises(SystemExit) as err:
        main(argv)
    assert err.value.code == 1
    assert "usage" in capsys.readouterr().err


@pytest.mark.parametrize("argv", [
    ["srts", "--box-a", "1,2,3", "--box-b", CAR],
    ["srts", "--box-a", "1,2,3,a,b,c,d", "--box-b", CAR],
    ["srts", "--box-a", "0,0,0,0,1,1,0", "--box-b", CAR],
    ["srts", "--params", "missing.json", "--box-a", CAR, "--box-b", CAR],
    ["track", "--detections", "missing.txt", "--out", "t.txt"],
    ["voxelize", "--cloud", "missing.bin", "--out", "g.svxl"],
    ["replay", "missing.manifest.json"],
])
def test_bad_inputs_exit_1(cwd, capsys, argv):
    assert main(argv) == 1
    err = capsys.readouterr().err
    assert err.startswith("semtrack: error:")
    assert "Traceback" not in err


def test_malformed_labels_exit_1(cwd, capsys):
    (cwd / "bad.txt").write_text("0 0 Car 0 0 0 0 0 0 0 1 1 4 0 1 nan 0\n")
    assert main(["track", "--detections", "bad.txt", "--out", "t.txt"]) == 1
    assert "line 1" in capsys.readouterr().err
    assert not (cwd / "t.txt").exists()


def test_version_flag(capsys):
    with pytest.raises(SystemExit) as err:
        main(["--version"])
    assert err.value.code == 0
    assert capsys.readouterr().out.strip() == __version__


# ---------------------------------------------------------------- pipeline

def test_pipeline_produces_all_artifacts(cwd, capsys):
    report = pipeline(cwd)
    assert {p.name for p in (cwd / "sim").iterdir()} == \
        {"truth.txt", "detections.txt", "calib.txt", "scenario.json", "manifest.json"}
    assert 0.6 < report["mota"] <= 1.0
    assert (cwd / "mot.json.txt").read_text().startswith("mode")
    assert "mota" in capsys.readouterr().out


def test_truth_against_itself_is_perfect(cwd):
    pipeline(cwd, frames=10)
    truth = str(cwd / "sim" / "truth.txt")
    calib = str(cwd / "sim" / "calib.txt")
    for matcher in ("srts", "iou"):
        out = cwd / f"self-{matcher}.json"
        assert main(["eval", "--gt", truth, "--hyp", truth, "--calib", calib,
                     "--matcher", matcher, "--out", str(out)]) == 0
        report = json.loads(out.read_text())
        assert report["mota"] == 1.0 and report["id_switches"] == 0
        assert report["motp"] == pytest.approx(1.0, abs=1e-6)


def test_eval_ap_mode_and_pr_csv(cwd, capsys):
    pipeline(cwd, frames=10)
    truth = str(cwd / "sim" / "truth.txt")
    assert main(["eval", "--mode", "ap", "--gt", truth, "--hyp", str(cwd / "tracks.txt"),
                 "--calib", str(cwd / "sim" / "calib.txt"), "--pr-csv", "pr.csv"]) == 0
    assert "average_precision" in capsys.readouterr().out
    rows = list(csv.reader((cwd / "pr.csv").read_text().splitlines()))
    assert len(rows) > 1
    # no --out: the manifest lands in the working directory
    assert (cwd / "semtrack-eval.manifest.json").exists()
    # truth files carry no scores
    assert main(["eval", "--mode", "ap", "--gt", truth, "--hyp", truth]) == 1
    assert "scores" in capsys.readouterr().err


def test_manifest_contents(cwd):
    pipeline(cwd)
    m = json.loads((cwd / "tracks.txt.manifest.json").read_text())
    assert m["subcommand"] == "track"
    assert m["argv"][0] == "track"
    det = cwd / "sim" / "detections.txt"
    assert m["inputs"]["detections"]["sha256"] == hashlib.sha256(det.read_bytes()).hexdigest()
    assert m["outputs"] == [str(cwd / "tracks.txt")]
    assert "birth_rate" in m["config"]["filter"]
    assert set(m["timings_s"]) == {"read", "track", "write"}
    sim = json.loads((cwd / "sim" / "manifest.json").read_text())
    assert sim["seed"] == 3 and sim["config"]["scenario"]["seed"] == 3


def test_explicit_manifest_path(cwd):
    assert main(["--manifest", "custom.json", "srts", "--box-a", CAR, "--box-b", CAR]) == 0
    assert json.loads((cwd / "custom.json").read_text())["subcommand"] == "srts"
    assert not (cwd / "semtrack-srts.manifest.json").exists()


def test_replay_reproduces_outputs(cwd):
    pipeline(cwd)
    before = (cwd / "tracks.txt").read_bytes()
    (cwd / "tracks.txt").unlink()
    assert main(["replay", str(cwd / "tracks.txt.manifest.json")]) == 0
    assert (cwd / "tracks.txt").read_bytes() == before


def test_replay_rejects_non_manifest(cwd):
    (cwd / "x.json").write_text("[1, 2]")
    assert main(["replay", "x.json"]) == 1


def test_config_file_overrides(cwd):
    (cwd / "f.json").write_text(json.dumps({"birth_rate": 0.9}))
    pipeline(cwd, frames=5)
    assert main(["track", "--detections", str(cwd / "sim" / "detections.txt"),
                 "--config", "f.json", "--out", "t2.txt"]) == 0
    m = json.loads((cwd / "t2.txt.manifest.json").read_text())
    assert m["config"]["filter"]["birth_rate"] == 0.9
    (cwd / "g.json").write_text(json.dumps({"birth_rat": 0.9}))
    assert main(["track", "--detections", str(cwd / "sim" / "detections.txt"),
                 "--config", "g.json", "--out", "t3.txt"]) == 1


# ---------------------------------------------------------------- voxelize

def test_voxelize_occupancy(cwd, capsys):
    pts = np.array([[10, 0, 0, 0.5], [10.01, 0.01, 0.01, 0.2], [30, -20, -1, 1],
                    [-1, 0, 0, 1], [10, 0, 3, 1]], dtype=np.float32)
    (cwd / "scan.bin").write_bytes(write_point_cloud(PointCloud(pts)))
    assert main(["voxelize", "--cloud", "scan.bin", "--out", "g.svxl"]) == 0
    grid = VoxelGrid.from_bytes((cwd / "g.svxl").read_bytes())
    assert grid.values.shape == (768, 1024, 21)
    # first two share a cell; the last two are behind the sensor / above the ROI
    assert np.count_nonzero(grid.values) == 2
    assert capsys.readouterr().out.startswith("2 occupied cells")


def test_fixture_scan_is_outside_default_roi(cwd, fixtures, capsys):
    (cwd / "scan.bin").write_bytes(load_hex(fixtures / "velodyne_3pts.hex"))
    assert main(["voxelize", "--cloud", "scan.bin", "--mode", "intensity", "--out", "g"]) == 0
    assert capsys.readouterr().out.startswith("0 occupied cells")


def test_voxelize_semantic_requires_inputs(cwd, fixtures):
    (cwd / "scan.bin").write_bytes(load_hex(fixtures / "velodyne_3pts.hex"))
    assert main(["voxelize", "--cloud", "scan.bin", "--mode", "semantic", "--out", "g"]) == 1


# ------------------------------------------------------------------- bench

def test_bench_writes_csv(cwd):
    assert main(["bench", "--pairs", "2000", "--seed", "1", "--out", "b.csv"]) == 0
    rows = list(csv.DictReader((cwd / "b.csv").open()))
    assert [r["metric"] for r in rows] == ["srts", "iou"]
    assert all(int(r["pairs"]) == 2000 for r in rows)
    assert float(rows[0]["iou_over_srts"]) > 0


def test_benchmark_scalar_mode():
    rows = benchmark(200, 0, "scalar")
    assert rows[0]["mode"] == "scalar" and rows[0]["pairs"] == 200


def test_random_box_pairs_seeded():
    a1, b1 = random_box_pairs(50, 9)
    a2, b2 = random_box_pairs(50, 9)
    assert np.array_equal(a1, a2) and np.array_equal(b1, b2)
    assert np.all(a1[:, 3:6] > 0) and np.all(b1[:, 3:6] > 0)


# ------------------------------------------------------------------- misc

def test_write_atomic_leaves_no_temp_files(tmp_path):
    write_atomic(tmp_path / "sub" / "f.txt", "hello")
    write_atomic(tmp_path / "sub" / "f.txt", b"again")
    assert [p.name for p in (tmp_path / "sub").iterdir()] == ["f.txt"]
    assert (tmp_path / "sub" / "f.txt").read_bytes() == b"again"


def test_module_entry_point(tmp_path):
    res = subprocess.run([sys.executable, "-m", "semtrack", "srts", "--box-a", CAR,
                          "--box-b", CAR], cwd=tmp_path, capture_output=True, text=True)
    assert res.returncode == 0 and res.stdout == "1.000000\n"
    res = subprocess.run([sys.executable, "-m", "semtrack", "--nope"], cwd=tmp_path,
                         capture_output=True, text=True)
    assert res.returncode == 1
