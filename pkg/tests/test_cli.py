import json
import subprocess
import sys

import numpy as np
import pytest

from qclscape.cli import EXIT_CONFIG, EXIT_IO, EXIT_OK, main
from qclscape.harness import load_records

GRID = {"layouts": ["cycle"], "depths": [1], "optimizers": ["adam", "sgd"], "inits": ["normal:pi/2"],
        "batch_sizes": [8], "steps": 20}


@pytest.fixture
def workdir(tmp_path, monkeypatch):
    monkeypatch.setenv("QCLSCAPE_OUT", str(tmp_path))
    return tmp_path


@pytest.fixture
def ams_file(workdir):
    centers = [[1.6, 1.5, 1.2, -0.1], [0.9, 0.4, -0.1, -1.3], [3.9, 0.5, 3.0, 1.9]]
    path = workdir / "ams_in.json"
    path.write_text(json.dumps([{"center": c, "test_mse": 0.008, "cluster_size": 1} for c in centers]))
    return path


class TestGenData:
    def test_default_and_reproducible(self, workdir):
        assert main(["gen-data"]) == EXIT_OK
        first = (workdir / "data.csv").read_bytes()
        lines = first.decode().splitlines()
        assert lines[0] == "x,y,split" and len(lines) == 501
        assert sum(l.endswith(",train") for l in lines) == 400
        assert main(["gen-data"]) == EXIT_OK
        assert (workdir / "data.csv").read_bytes() == first

    def test_manifest_written(self, workdir):
        main(["gen-data", "--seed", "4"])
        (manifest,) = (workdir / "manifests").glob("gen-data-*.json")
        meta = json.loads(manifest.read_text())
        assert meta["seed"] == 4 and meta["tool_version"] and meta["experiment_id"] == manifest.stem

    def test_bad_path(self, workdir):
        assert main(["gen-data", "--out", str(workdir / "missing" / "dir" / "x.csv")]) == EXIT_IO


class TestSweepAndReport:
    def test_dry_run_writes_nothing(self, workdir, capsys):
        cfg = workdir / "grid.json"
        cfg.write_text(json.dumps(GRID))
        assert main(["sweep", "--config", str(cfg), "--dry-run"]) == EXIT_OK
        assert capsys.readouterr().out.strip() == "2 runs"
        assert not (workdir / "records.jsonl").exists()

    def test_sweep_resume_report(self, workdir, capsys):
        cfg = workdir / "grid.json"
        cfg.write_text(json.dumps(GRID))
        assert main(["sweep", "--config", str(cfg)]) == EXIT_OK
        assert main(["sweep", "--config", str(cfg)]) == EXIT_OK
        recs = load_records(workdir / "records.jsonl")
        assert len(recs) == 2 and recs[0].config.steps == 20
        assert main(["report", "--records", str(workdir / "records.jsonl")]) == EXIT_OK
        lines = (workdir / "report.csv").read_text().splitlines()
        assert lines[0].split(",")[:8] == ["layout", "depth", "optimizer", "n", "median", "lowest_bin", "n_occ",
                                           "mean_steps"]
        assert len(lines) == 3
        row = dict(zip(lines[0].split(","), lines[1].split(",")))
        adam = next(r for r in recs if r.config.optimizer == "adam")
        assert float(row["median"]) == adam.best_test_mse

    def test_malformed_config(self, workdir, capsys):
        cfg = workdir / "bad.json"
        cfg.write_text('{\n  "depths": [1,\n}')
        assert main(["sweep", "--config", str(cfg), "--dry-run"]) == EXIT_CONFIG
        assert "line 3" in capsys.readouterr().err

    def test_unknown_key(self, workdir, capsys):
        cfg = workdir / "bad.json"
        cfg.write_text('{"depths": [1], "learnrate": 0.1}')
        assert main(["sweep", "--config", str(cfg), "--dry-run"]) == EXIT_CONFIG
        assert "learnrate" in capsys.readouterr().err

    def test_empty_records(self, workdir):
        (workdir / "empty.jsonl").write_text("")
        assert main(["report", "--records", str(workdir / "empty.jsonl")]) == EXIT_CONFIG


class TestLandscapeCommands:
    def test_neb_outputs(self, workdir, ams_file):
        assert main(["neb", "--ams", str(ams_file), "--pair", "0,2", "--seed", "3"]) == EXIT_OK
        rows = (workdir / "neb_0_2.csv").read_text().splitlines()
        assert rows[0] == "step,pivot_index,loss_train" and len(rows) == 1 + 11 * 10
        meta = json.loads((workdir / "neb_0_2.json").read_text())
        assert meta["seed"] == 3 and meta["k"] == 1.0 and meta["profile"] == "localized"
        np.testing.assert_array_equal(meta["best_pivots"][0], [1.6, 1.5, 1.2, -0.1])

    def test_neb_reproducible(self, workdir, ams_file):
        main(["neb", "--ams", str(ams_file), "--pair", "0,1", "--out", str(workdir / "a")])
        main(["neb", "--ams", str(ams_file), "--pair", "0,1", "--out", str(workdir / "b")])
        assert (workdir / "a.csv").read_bytes() == (workdir / "b.csv").read_bytes()

    def test_bad_pair(self, workdir, ams_file, capsys):
        assert main(["neb", "--ams", str(ams_file), "--pair", "0,9"]) == EXIT_CONFIG
        assert "pair" in capsys.readouterr().err

    def test_cut2d_collinear(self, workdir, capsys):
        code = main(["cut2d", "--theta-a", "[0,0,0,0]", "--theta-b", "[1,1,1,1]", "--theta-c", "[2,2,2,2]"])
        assert code == EXIT_CONFIG and "collinear" in capsys.readouterr().err

    def test_cut2d_and_cut1d(self, workdir):
        args = ["--theta-a", "[0,0,0,0]", "--theta-b", "[1,0,0,0]"]
        assert main(["cut2d", *args, "--theta-c", "[0,1,0,0]", "--resolution", "4"]) == EXIT_OK
        assert json.loads((workdir / "cut2d.json").read_text())["basis"]["w1"] == [1, 0, 0, 0]
        assert main(["cut1d", *args, "--points", "6"]) == EXIT_OK
        assert len((workdir / "cut1d.csv").read_text().splitlines()) == 7

    def test_dropout(self, workdir, ams_file):
        assert main(["dropout", "--ams", str(ams_file), "--pair", "0,1", "--indices", "2,3", "--points", "8"]) == 0
        lines = (workdir / "dropout.csv").read_text().splitlines()
        assert lines[0] == "alpha,loss_free,loss_clamped" and len(lines) == 9

    def test_dropout_bad_index(self, workdir, ams_file, capsys):
        assert main(["dropout", "--ams", str(ams_file), "--pair", "0,1", "--indices", "2,6"]) == EXIT_CONFIG
        assert "indices" in capsys.readouterr().err

    def test_wrong_length_theta(self, workdir, capsys):
        assert main(["cut1d", "--theta-a", "[0,0]", "--theta-b", "[1,0]"]) == EXIT_CONFIG
        assert "theta_a" in capsys.readouterr().err

    def test_theta_from_file_not_mutated(self, workdir):
        f = workdir / "a.json"
        f.write_text("[0.1, 0.2, 0.3, 0.4]")
        before = f.read_bytes()
        assert main(["cut1d", "--theta-a", str(f), "--theta-b", "[1,0,0,0]", "--points", "3"]) == EXIT_OK
        assert f.read_bytes() == before


def test_ams_command(workdir):
    cfg = workdir / "grid.json"
    cfg.write_text(json.dumps({**GRID, "optimizers": ["adam"], "inits": ["normal:pi/2", "normal:pi/4"], "steps": 60}))
    main(["sweep", "--config", str(cfg)])
    assert main(["ams", "--records", str(workdir / "records.jsonl"), "--bandwidth", "1.0"]) == EXIT_OK
    items = json.loads((workdir / "ams.json").read_text())
    assert all({"center", "test_mse", "cluster_size"} == set(it) for it in items)


def test_console_script(tmp_path):
    out = subprocess.run([sys.executable, "-m", "qclscape.cli", "--version"], capture_output=True, text=True)
    assert out.returncode == 0 and out.stdout.strip()
