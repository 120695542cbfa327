import json
import subprocess
import sys
from datetime import datetime

import numpy as np

from qienet import cli
from qienet import model as qm
from qienet.channels import HIMAWARI8
from qienet.pipeline.dataset import frame_times, write_dataset
from qienet.pipeline.stations import StationRecord, write_station_csv
from qienet.pipeline.synth import synthesize_pcc_dataset
from qienet.pipeline.tiles import GridTile, write_tile
from qienet.reconstruct import GhiGrid, Period, hourly_name, read_grid, write_grid
from oracles import REFERENCE_PCC_MEAN

SMALL = ["--hidden", "2", "--head", "4", "1", "--batch-size", "16"]


def run(capsys, *argv):
    code = cli.main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, (json.loads(out) if out.strip() else None), err


def test_qc_report(tmp_path, capsys):
    recs = [StationRecord("S", 23.0, 113.0, 5.0, datetime(2020, 6, 1, 4), g) for g in (100, 120, 140, 160, 3000)]
    write_station_csv(recs, tmp_path / "obs.csv")
    code, rep, err = run(capsys, "qc", "--stations", tmp_path / "obs.csv", "--out", tmp_path / "kept.csv",
                         "--report", tmp_path / "qc.json")
    assert code == 0 and rep["input"] == 5 and rep["retained"] == 4
    assert [s["stage"] for s in rep["stages"]] == ["physical_threshold", "iqr_upper_whisker"]
    assert json.loads((tmp_path / "qc.json").read_text()) == rep
    manifest = json.loads((tmp_path / "kept.csv.manifest.json").read_text())
    assert "sha256" in json.dumps(manifest)
    assert "4/5" in err


def test_synth_train_evaluate(tmp_path, capsys):
    code, rep, _ = run(capsys, "synth", "--n", 300, "--spatial", "--seed", 1, "--out", tmp_path / "d.qdst")
    assert code == 0 and rep["shape"] == [300, 6, 16, 7, 7]
    code, rep, _ = run(capsys, "train", "--dataset", tmp_path / "d.qdst", "--variant", "Conv6", "--epochs", 3,
                       *SMALL, "--out", tmp_path / "m.qien")
    assert code == 0 and rep["stop_epoch"] == 3 and set(rep["validation"]) >= {"rmse", "mbe", "r2", "r"}
    code, rep, _ = run(capsys, "evaluate", "--checkpoint", tmp_path / "m.qien", "--dataset", tmp_path / "d.qdst",
                       "--per-station", "--csv", tmp_path / "st.csv")
    assert code == 0 and rep["overall"]["n"] == 300
    assert (tmp_path / "st.csv").read_text().startswith("station_id,")


def test_cross_validate(tmp_path, capsys):
    run(capsys, "synth", "--n", 40, "--out", tmp_path / "d.qdst")
    code, rep, _ = run(capsys, "cross-validate", "--dataset", tmp_path / "d.qdst", "--variant", "FC6",
                       "--folds", 3, "--epochs", 2, *SMALL, "--out", tmp_path / "cv")
    assert code == 0 and len(rep["folds"]) == 3
    assert sorted(p.name for p in (tmp_path / "cv").glob("*.qien")) == ["fold1.qien", "fold2.qien", "fold3.qien"]


def test_pcc_on_reference_dataset(tmp_path, capsys):
    write_dataset(synthesize_pcc_dataset(REFERENCE_PCC_MEAN, n=1000), tmp_path / "p.qdst")
    code, rep, err = run(capsys, "pcc", "--dataset", tmp_path / "p.qdst")
    assert code == 0 and rep["selected"] == ["B07", "B11", "B12", "B13", "B14", "B15"]
    assert "B07,B11,B12,B13,B14,B15" in err


def test_predict_grid_and_integrate(tmp_path, capsys):
    hour = datetime(2020, 7, 9, 4)
    tiles = tmp_path / "tiles"
    tiles.mkdir()
    rng = np.random.default_rng(0)
    lo = np.array([c.valid_range[0] for c in HIMAWARI8])[:, None, None]
    hi = np.array([c.valid_range[1] for c in HIMAWARI8])[:, None, None]
    for t in frame_times(hour):
        write_tile(GridTile(t, lo + (hi - lo) * rng.uniform(0.3, 0.7, (16, 10, 11)), 24.0, 112.0),
                   tiles / f"{t:%Y%m%dT%H%M}.qtil")
    cfg = qm.variant("Conv6", hidden=(2,), head_sizes=(4, 1))
    qm.save(qm.Checkpoint(cfg, qm.init_params(cfg)), tmp_path / "m.qien")
    out = tmp_path / "grids"
    out.mkdir()
    code, rep, _ = run(capsys, "predict-grid", "--checkpoint", tmp_path / "m.qien", "--tiles", tiles,
                       "--hour", "2020-07-09T04:00:00Z", "--out", out)
    assert code == 0 and rep["shape"] == [10, 11] and rep["interior_cells"] == 4 * 5
    g = read_grid(out / hourly_name(hour))
    assert g.timestamp == hour

    code, _, err = run(capsys, "predict-grid", "--checkpoint", tmp_path / "m.qien", "--tiles", tiles,
                       "--hour", "2020-07-09T05:00:00", "--out", out)
    assert code == 3 and json.loads(err)["error"] == "InputError"

    hourly_dir = tmp_path / "hourly"
    hourly_dir.mkdir()
    for t in Period.month(2020, 4).hours():
        v = np.full((2, 2), 500.0 if 2 <= t.hour < 12 else 0.0)
        write_grid(GhiGrid(v, 24.0, 112.0, 0.02, timestamp=t), hourly_dir / hourly_name(t))
    code, rep, _ = run(capsys, "integrate", "--grids", hourly_dir, "--period", "month:2020-04",
                       "--out", tmp_path / "e.asc")
    assert code == 0 and rep["used_hours"] == 720
    np.testing.assert_allclose(read_grid(tmp_path / "e.asc").values, 150.0)
    code, _, err = run(capsys, "integrate", "--grids", hourly_dir, "--period", "month:2020-05",
                       "--out", tmp_path / "f.asc")
    assert code == 3 and json.loads(err)["error"] == "CoverageError"


def test_grad_check_command(capsys):
    code, rep, _ = run(capsys, "grad-check", "--coords", 20)
    assert code == 0 and rep["passed"] and len(rep["checks"]) == 3


def test_exit_codes(tmp_path, capsys):
    code, _, err = run(capsys, "evaluate", "--checkpoint", tmp_path / "none.qien", "--dataset", tmp_path / "x")
    assert code == 3
    (tmp_path / "bad.qien").write_bytes(b"nope")
    run(capsys, "synth", "--n", 5, "--out", tmp_path / "d.qdst")
    code, _, err = run(capsys, "evaluate", "--checkpoint", tmp_path / "bad.qien", "--dataset", tmp_path / "d.qdst")
    assert code == 3 and json.loads(err)["error"] == "FormatError"
    code, _, _ = run(capsys, "train", "--dataset", tmp_path / "d.qdst", "--variant", "Conv9")
    assert code == 2
    code, _, _ = run(capsys, "integrate", "--grids", tmp_path, "--period", "week:3", "--out", tmp_path / "o.asc")
    assert code == 2


def test_config_file(tmp_path, capsys):
    run(capsys, "synth", "--n", 30, "--out", tmp_path / "d.qdst")
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"seed": 3, "train": {"epochs": 2, "hidden": [2], "head": [4, 1], "variant": "FC6"}}))
    code, rep, _ = run(capsys, "train", "--config", cfg, "--dataset", tmp_path / "d.qdst", "--epochs", 1)
    assert code == 0 and rep["stop_epoch"] == 1 and rep["variant"] == "FC6"
    cfg.write_text(json.dumps({"train": {"epochz": 2}}))
    code, _, err = run(capsys, "train", "--config", cfg, "--dataset", tmp_path / "d.qdst")
    assert code == 2 and "epochz" in err


def test_schema_covers_every_option():
    schema = cli.load_schema()
    props = set(schema["$defs"]["options"]["properties"])
    parser = cli.build_parser()
    for name, sub in parser._subparsers._group_actions[0].choices.items():
        dests = {a.dest for a in sub._actions} - {"help", "config", "func"}
        assert dests <= props, (name, dests - props)
        assert name in schema["properties"]


def test_help_and_unknown_flag():
    out = subprocess.run([sys.executable, "-m", "qienet.cli", "train", "--help"], capture_output=True, text=True)
    assert out.returncode == 0
    for flag in ("--variant", "--hidden", "--patience", "--val-every", "--threads", "--config"):
        assert flag in out.stdout
    bad = subprocess.run([sys.executable, "-m", "qienet.cli", "synth", "--n", "3", "--out", "x", "--bogus"],
                         capture_output=True, text=True)
    assert bad.returncode == 2 and "--bogus" in bad.stderr
