import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from fusiondet import cli
from fusiondet.dataset_io import store
from fusiondet.dataset_io.depth_png import depth_png_bytes, read_depth_png
from fusiondet.dataset_io.kitti import format_calibration, write_point_cloud
from fusiondet.dataset_io.synthetic import SyntheticSceneSpec, generate_synthetic_scene
from fusiondet.lidar_repr import RangeGeometry, build_lidar_image_geom, build_sparse_depth, densify


@pytest.fixture(scope="module")
def scene_files(tmp_path_factory):
    root = tmp_path_factory.mktemp("scene")
    f = generate_synthetic_scene(SyntheticSceneSpec(seed=3), 0)
    (root / "000000.bin").write_bytes(write_point_cloud(f.cloud))
    (root / "000000.txt").write_text(format_calibration(f.intr, f.ext))
    return root, f


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    out = tmp_path_factory.mktemp("data") / "ds"
    assert cli.main(["synth-dataset", "--count", "12", "--seed", "2", "--scene-seed", "5", "--out", str(out)]) == 0
    return out


def test_help_exits_zero(capsys):
    with pytest.raises(SystemExit) as exc:
        cli.main(["--help"])
    assert exc.value.code == 0
    assert "synth-dataset" in capsys.readouterr().out


def test_console_entry_help():
    res = subprocess.run([sys.executable, "-m", "fusiondet.cli", "train", "--help"], capture_output=True, text=True)
    assert res.returncode == 0 and "--repeats" in res.stdout


def test_unknown_flag_is_usage_error(capsys):
    with pytest.raises(SystemExit) as exc:
        cli.main(["train", "--data", "x", "--out", "y", "--bogus"])
    assert exc.value.code == 1
    assert "--bogus" in capsys.readouterr().err


def test_incompatible_combination_is_usage_error(dataset, tmp_path, capsys):
    code = cli.main(["train", "--data", str(dataset), "--arch", "early", "--repr", "range", "--out", str(tmp_path)])
    assert code == 1 and "early fusion" in capsys.readouterr().err


def test_missing_data_is_data_error(tmp_path):
    assert cli.main(["train", "--data", str(tmp_path / "nope"), "--out", str(tmp_path)]) == 2
    assert cli.main(["eval", "--checkpoint", str(tmp_path / "x.ckpt"), "--data", str(tmp_path), "--out", str(tmp_path)]) == 2


def test_bad_config_key(dataset, tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text('{"fusion": "late", "learning_rate": 1}')
    assert cli.main(["train", "--data", str(dataset), "--config", str(cfg), "--out", str(tmp_path)]) == 1


@pytest.mark.parametrize("kind", ["sparse", "dense", "range"])
def test_project_matches_library(scene_files, tmp_path, kind):
    root, f = scene_files
    args = ["project", "--cloud", str(root / "000000.bin"), "--repr", kind, "--out", str(tmp_path)]
    if kind != "range":
        args += ["--calib", str(root / "000000.txt")]
    assert cli.main(args) == 0
    written = (tmp_path / f"000000_{kind}.png").read_bytes()
    cloud = np.frombuffer(write_point_cloud(f.cloud), "<f4").reshape(-1, 4)[:, :3].astype(np.float64)
    if kind == "range":
        expected = build_lidar_image_geom(cloud, RangeGeometry.velodyne64()).grid
    else:
        expected = build_sparse_depth(cloud, f.intr, f.ext)
        if kind == "dense":
            expected = densify(expected, 9)
    assert written == depth_png_bytes(expected)


def test_project_dense_fills_holes_only_from_sparse_values(scene_files, tmp_path):
    root, _ = scene_files
    for kind in ("sparse", "dense"):
        cli.main(["project", "--cloud", str(root / "000000.bin"), "--calib", str(root / "000000.txt"),
                  "--repr", kind, "--out", str(tmp_path)])
    sparse = read_depth_png((tmp_path / "000000_sparse.png").read_bytes())
    dense = read_depth_png((tmp_path / "000000_dense.png").read_bytes())
    finite = np.isfinite(sparse)
    # densify averages every window, so returns survive and holes near returns get filled
    assert np.isfinite(dense[finite]).all()
    assert np.isfinite(dense[~finite]).any()
    lo, hi = sparse[finite].min(), sparse[finite].max()
    assert np.all((dense[np.isfinite(dense)] >= lo - 1 / 256) & (dense[np.isfinite(dense)] <= hi + 1 / 256))


def test_project_needs_calib(scene_files, tmp_path):
    root, _ = scene_files
    assert cli.main(["project", "--cloud", str(root / "000000.bin"), "--repr", "dense", "--out", str(tmp_path)]) == 1


def test_synth_dataset_manifest(dataset):
    meta = store.read_metadata(dataset)
    recs = store.read_manifest(dataset)
    assert meta["count"] == 12 and meta["representation"] == "dense"
    assert [r["index"] for r in recs] == list(range(12))
    assert {r["category"] for r in recs} <= {"clean", "partial", "camera_failed", "lidar_failed"}
    for r in recs:
        assert (r["category"] == "partial") == bool(r["patches"])
    assert (dataset / "velodyne" / "000000.bin").is_file() and (dataset / "calib" / "000000.txt").is_file()


def test_synth_dataset_from_existing_dir(dataset, tmp_path):
    out = tmp_path / "failed"
    assert cli.main(["synth-dataset", "--in", str(dataset), "--fail", "lidar", "--count", "4", "--out", str(out)]) == 0
    frames = store.read_dataset(out)
    assert len(frames) == 4 and all(np.isinf(f.depth).all() for f in frames)
    src = store.read_dataset(dataset)[:4]
    assert all(np.array_equal(a.rgb, b.rgb) for a, b in zip(src, frames))


def test_synth_dataset_rejects_bad_values(tmp_path):
    assert cli.main(["synth-dataset", "--count", "0", "--out", str(tmp_path)]) == 1
    assert cli.main(["synth-dataset", "--weights", "1,-2,4", "--out", str(tmp_path)]) == 1
    assert cli.main(["synth-dataset", "--repr", "range", "--out", str(tmp_path)]) == 1
    assert not (tmp_path / "dataset.json").exists()


def test_pipeline_smoke_and_reproducible(dataset, tmp_path, capsys):
    runs = []
    for name in ("a", "b"):
        out = tmp_path / name
        assert cli.main(["train", "--data", str(dataset), "--arch", "late", "--iters", "200",
                         "--seed", "4", "--out", str(out)]) == 0
        assert cli.main(["eval", "--checkpoint", str(out / "model.ckpt"), "--data", str(dataset),
                         "--out", str(out)]) == 0
        runs.append(out)
    a, b = runs
    for name in ("model.ckpt", "train_log.jsonl", "summary.json", "eval.csv", "eval.json"):
        assert (a / name).read_bytes() == (b / name).read_bytes(), name
    rows = list(csv.reader((a / "eval.csv").read_text().splitlines()))
    assert rows[0] == ["car", "truck", "tram", "pedestrian", "cyclist", "van", "mAP"]
    vals = [float(v) for v in rows[1]]
    assert all(0 <= v <= 1 for v in vals)
    assert vals[-1] == pytest.approx(np.mean(vals[:-1]), abs=1e-4)
    log = [json.loads(l) for l in (a / "train_log.jsonl").read_text().splitlines()]
    assert log[0]["iteration"] == 0 and log[-1]["iteration"] == 199
    assert {"loss", "lr"} <= set(log[0])


def test_train_repeats_and_bench(dataset, tmp_path, capsys):
    out = tmp_path / "rep"
    assert cli.main(["train", "--data", str(dataset), "--arch", "none", "--iters", "3", "--repeats", "2",
                     "--split", "4,6", "--out", str(out)]) == 0
    summary = json.loads((out / "summary.json").read_text())
    assert summary["repeats"] == 2 and len({r["seed"] for r in summary["runs"]}) == 2
    assert summary["mean_train_map"] == pytest.approx(np.mean([r["train_map"] for r in summary["runs"]]))
    assert "mean_val_map" in summary
    assert cli.main(["bench", "--checkpoint", str(out / "model_r0.ckpt"), "--data", str(dataset),
                     "--reps", "3", "--out", str(out)]) == 0
    bench = json.loads((out / "bench.json").read_text())
    assert bench["repetitions"] == 3 and bench["p90_ms"] >= bench["median_ms"] > 0
    assert cli.main(["bench", "--arch", "middle", "--reps", "2"]) == 0


def test_eval_rejects_representation_mismatch(dataset, tmp_path):
    out = tmp_path / "m"
    assert cli.main(["train", "--data", str(dataset), "--arch", "none", "--iters", "1", "--out", str(out)]) == 0
    other = tmp_path / "sparse"
    assert cli.main(["synth-dataset", "--count", "2", "--repr", "sparse", "--clean", "--out", str(other)]) == 0
    assert cli.main(["eval", "--checkpoint", str(out / "model.ckpt"), "--data", str(other), "--out", str(out)]) == 2
