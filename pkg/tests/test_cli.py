import csv
import json

import pytest

from deskewfuse.cli import EXIT_CONFIG, EXIT_DATA, main


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "short.json"
    cfg.write_text(json.dumps({"seed": 1}))
    scen = root / "radial6.json"
    scen.write_text(json.dumps({"objects": [{"id": 1, "center0": [22, 0, 0], "velocity": [-5, 0, 0]}], "n_frames": 6}))
    assert main(["simulate", f"custom:{scen}", str(root / "ds"), "--quiet"]) == 0
    for mode in ("fused", "lidar_only"):
        assert main(["run", str(root / "ds"), str(root / mode), "--mode", mode, "--config", str(cfg), "--quiet"]) == 0
        assert main(["eval", str(root / "ds"), str(root / mode), "--quiet"]) == 0
    return root


def test_run_outputs(workspace):
    run = workspace / "fused"
    for name in ("tracks_out.csv", "measurements.csv", "run_manifest.json", "timings.json", "metrics.json"):
        assert (run / name).exists()
    assert len(list((run / "frames_corrected").glob("*.csv"))) == 6
    manifest = json.loads((run / "run_manifest.json").read_text())
    assert manifest["mode"] == "fused" and manifest["config"]["seed"] == 1 and manifest["frame_count"] == 6
    timings = json.loads((run / "timings.json").read_text())
    assert set(timings) == {"camera_optical_flow", "point_cloud_optimization", "kf_tracking"}


def test_metrics_content(workspace):
    m = json.loads((workspace / "fused" / "metrics.json").read_text())
    obj = m["objects"]["1"]
    assert m["schema_version"] == 1 and m["scenario"] == "radial6"
    assert obj["crispness_corrected"] > obj["crispness_uncorrected"]
    assert obj["track_ids"] == [1]


def test_report(workspace, capsys):
    out = workspace / "report"
    rc = main(["report", str(workspace / "fused" / "metrics.json"), str(workspace / "lidar_only" / "metrics.json"),
               "--labels", "fused", "lidar_only", "--out", str(out)])
    assert rc == 0
    text = capsys.readouterr().out
    assert "fused" in text and "crispness_corrected" in text
    rows = list(csv.reader((out / "report.csv").open()))
    assert rows[0] == ["metric", "fused", "lidar_only"]
    assert (out / "report.txt").read_text() == text


def test_report_missing_values(tmp_path, workspace, capsys):
    m = json.loads((workspace / "fused" / "metrics.json").read_text())
    m["objects"]["1"]["crispness_corrected"] = None
    del m["objects"]["1"]["mean_iou"]
    p = tmp_path / "m.json"
    p.write_text(json.dumps(m))
    assert main(["report", str(p), str(workspace / "fused" / "metrics.json"), "--out", str(tmp_path)]) == 0
    rows = {r[0]: r[1:] for r in csv.reader((tmp_path / "report.csv").open())}
    assert rows["objects.1.crispness_corrected"][0] == "-"
    assert rows["objects.1.mean_iou"][0] == "-"


def test_eval_pairing_error(tmp_path, workspace):
    assert main(["simulate", "radial", str(tmp_path / "other"), "--seed", "9", "--quiet"]) == 0
    assert main(["eval", str(tmp_path / "other"), str(workspace / "fused"), "--quiet"]) == EXIT_DATA


def test_exit_codes(tmp_path, workspace, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"voxel": 1}))
    assert main(["run", str(workspace / "ds"), str(tmp_path / "r"), "--config", str(bad), "--quiet"]) == EXIT_CONFIG
    assert main(["simulate", "nowhere", str(tmp_path / "x"), "--quiet"]) == EXIT_CONFIG
    assert main(["simulate", "radial", "--quiet"]) == EXIT_CONFIG
    assert main(["run", str(tmp_path / "missing"), str(tmp_path / "r"), "--quiet"]) == EXIT_DATA
    assert main(["eval", str(workspace / "ds"), str(tmp_path / "missing"), "--quiet"]) == EXIT_DATA
    bad_metrics = tmp_path / "m.json"
    bad_metrics.write_text(json.dumps({"schema_version": 7}))
    assert main(["report", str(bad_metrics), "--quiet"]) == EXIT_DATA
    assert main([]) == EXIT_CONFIG


def test_print_defaults(capsys):
    assert main(["--print-defaults"]) == 0
    assert json.loads(capsys.readouterr().out)["voxel_size"] == 0.5


def test_custom_three_objects(tmp_path):
    scen = tmp_path / "three.json"
    scen.write_text(json.dumps({
        "objects": [
            {"id": 1, "center0": [22, -6, 0], "velocity": [-5, 0, 0]},
            {"id": 2, "center0": [15, 4, 0], "yaw": 1.5708, "velocity": [0, 3, 0]},
            {"id": 3, "center0": [30, 6, 0]},
        ],
        "n_frames": 5,
    }))
    assert main(["simulate", f"custom:{scen}", "--out", str(tmp_path / "ds"), "--quiet"]) == 0
    assert main(["run", str(tmp_path / "ds"), "--out", str(tmp_path / "run"), "--quiet"]) == 0
    assert main(["eval", str(tmp_path / "ds"), str(tmp_path / "run"), "--out", str(tmp_path / "ev"), "--quiet"]) == 0
    m = json.loads((tmp_path / "ev" / "metrics.json").read_text())
    assert set(m["objects"]) == {"1", "2", "3"}


def test_in_memory_outputs_match_disk(workspace):
    from deskewfuse.config import load_config
    from deskewfuse.dataset import load_dataset
    from deskewfuse.pipeline import run_pipeline
    from deskewfuse.scoring import evaluate, outputs_from_result

    ds = load_dataset(workspace / "ds")
    cfg = load_config(workspace / "short.json")
    mem = evaluate(ds, outputs_from_result(run_pipeline(ds, cfg), cfg))
    disk = json.loads((workspace / "fused" / "metrics.json").read_text())
    for key in ("crispness_corrected", "crispness_uncorrected", "mean_iou", "integrated_distance"):
        assert mem["objects"]["1"][key] == pytest.approx(disk["objects"]["1"][key], rel=1e-12)
