import json

import numpy as np
import pytest
from click.testing import CliRunner

from lmad.cli import main
from lmad.network import load_model
from lmad.timeseries import load_series_csv


def run(args, ok=True):
    result = CliRunner().invoke(main, [str(a) for a in args])
    if ok:
        assert result.exit_code == 0, result.output
    return result


@pytest.fixture(scope="module")
def engine_csv(tmp_path_factory):
    d = tmp_path_factory.mktemp("engine")
    run(["--seed", 0, "--out-dir", d, "gen"])
    return d / "engine.csv"


@pytest.fixture(scope="module")
def trained(engine_csv, tmp_path_factory):
    d = tmp_path_factory.mktemp("trained")
    run(["--seed", 0, "--out-dir", d, "train", engine_csv])
    return d


class TestGen:
    def test_engine_defaults(self, engine_csv):
        s = load_series_csv(engine_csv)
        assert len(s) == 6400 and s.n_events == 32

    def test_sinc(self, tmp_path):
        run(["--seed", 0, "--out-dir", tmp_path, "gen", "--preset", "sinc"])
        s = load_series_csv(tmp_path / "sinc.csv")
        assert len(s) == 100 and s.n_events == 1

    def test_same_seed_byte_identical(self, tmp_path):
        for name in ("a.csv", "b.csv"):
            run(["--seed", 9, "--out-dir", tmp_path, "gen", "--n-events", 8, "--out", name])
        assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()

    def test_bad_anomaly_event_is_input_error(self, tmp_path):
        r = run(["--seed", 0, "--out-dir", tmp_path, "gen", "--anomaly-events", "99"], ok=False)
        assert r.exit_code == 2

    def test_drawn_seed_is_reported(self, tmp_path):
        r = run(["--out-dir", tmp_path, "gen", "--n-events", 4])
        assert "seed:" in r.output


class TestTrain:
    def test_default_recipe_outputs(self, trained):
        net = load_model(trained / "model.json")
        assert net.param_count == 121
        report = json.loads((trained / "train_report.json").read_text())
        assert report["optimizer"] == "lm" and report["epoch_history"]

    @pytest.mark.parametrize("args,count", [
        (["--preset", "rprop", "--epochs", 3], 6551),
        (["--optimizer", "adam", "--epochs", 3], 121),
        (["--mode", "autoencoder", "--epochs", 1], 32 * 10 + 10 + 10 * 32 + 32),
    ])
    def test_recipes(self, engine_csv, tmp_path, args, count):
        run(["--seed", 1, "--out-dir", tmp_path, "train", engine_csv, *args])
        assert load_model(tmp_path / "model.json").param_count == count

    def test_missing_file(self, tmp_path):
        r = run(["--seed", 0, "train", tmp_path / "nope.csv"], ok=False)
        assert r.exit_code == 2

    def test_malformed_csv_is_input_error(self, tmp_path):
        (tmp_path / "bad.csv").write_text("index,input,output,event_end\n0,1,x,1\n")
        r = run(["--seed", 0, "--out-dir", tmp_path, "train", tmp_path / "bad.csv"], ok=False)
        assert r.exit_code == 2

    def test_too_few_events_is_input_error(self, tmp_path):
        run(["--seed", 0, "--out-dir", tmp_path, "gen", "--n-events", 4])
        r = run(["--seed", 0, "--out-dir", tmp_path, "train", tmp_path / "engine.csv"], ok=False)
        assert r.exit_code == 2


class TestDetect:
    def test_flags_and_residuals(self, trained, engine_csv):
        run(["--seed", 0, "--out-dir", trained, "detect", trained / "model.json", engine_csv])
        doc = json.loads((trained / "anomaly_report.json").read_text())
        assert doc["flagged_events"] == [30, 31]
        rows = (trained / "residuals.csv").read_text().splitlines()
        assert len(rows) == 6401

    def test_huge_threshold_flags_nothing(self, trained, engine_csv, tmp_path):
        run(["--seed", 0, "--out-dir", tmp_path, "detect", trained / "model.json", engine_csv,
             "--threshold", 1e9])
        assert json.loads((tmp_path / "anomaly_report.json").read_text())["flagged_events"] == []


class TestConsensus:
    def test_anomalous_data(self, engine_csv, tmp_path):
        run(["--seed", 0, "--out-dir", tmp_path, "consensus", engine_csv, "--runs", 5])
        doc = json.loads((tmp_path / "consensus_report.json").read_text())
        assert doc["consensus_events"] == [30, 31]
        assert len(doc["runs"]) == 5

    def test_clean_data(self, tmp_path):
        run(["--seed", 3, "--out-dir", tmp_path, "gen", "--anomaly-events", "none",
             "--failure-spike", 0])
        run(["--seed", 3, "--out-dir", tmp_path, "consensus", tmp_path / "engine.csv"])
        doc = json.loads((tmp_path / "consensus_report.json").read_text())
        assert doc["consensus_events"] == []

    def test_unanimous_quorum_is_subset_of_each_run(self, engine_csv, tmp_path):
        run(["--seed", 7, "--out-dir", tmp_path, "consensus", engine_csv, "--runs", 3,
             "--quorum", 1.0])
        doc = json.loads((tmp_path / "consensus_report.json").read_text())
        for r in doc["runs"]:
            assert set(doc["consensus_events"]) <= set(r["flagged_events"])

    def test_single_run_rejected(self, engine_csv, tmp_path):
        r = run(["--seed", 0, "--out-dir", tmp_path, "consensus", engine_csv, "--runs", 1], ok=False)
        assert r.exit_code == 2


class TestBench:
    def test_sinc_scenario(self, tmp_path):
        r = run(["--seed", 0, "--out-dir", tmp_path, "bench", "--scenario", "sinc", "--seeds", 1])
        lines = (tmp_path / "bench.csv").read_text().splitlines()
        assert lines[0].startswith("scenario,optimizer,architecture,seed")
        assert len(lines) == 3
        assert "sinc" in r.output

    def test_unknown_scenario(self, tmp_path):
        r = run(["--seed", 0, "--out-dir", tmp_path, "bench", "--scenario", "nope"], ok=False)
        assert r.exit_code == 2


def test_config_file_supplies_defaults(tmp_path):
    cfg = {"seed": 4, "out_dir": str(tmp_path / "o"), "gen": {"n_events": 6}}
    (tmp_path / "c.json").write_text(json.dumps(cfg))
    run(["--config", tmp_path / "c.json", "gen"])
    s = load_series_csv(tmp_path / "o" / "engine.csv")
    assert s.n_events == 6
    # explicit flags win over the file
    run(["--config", tmp_path / "c.json", "gen", "--n-events", 5])
    assert load_series_csv(tmp_path / "o" / "engine.csv").n_events == 5
    run(["--seed", 4, "--out-dir", tmp_path, "gen", "--n-events", 6, "--out", "ref.csv"])
    assert (tmp_path / "ref.csv").read_bytes() != b"" and np.array_equal(
        load_series_csv(tmp_path / "ref.csv").output, s.output)
