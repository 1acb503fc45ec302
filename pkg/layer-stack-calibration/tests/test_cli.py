import json

import numpy as np
import pytest

from lates import cli
from lates.core.dataio import write_dump
from lates.core.errors import NumericError

from conftest import make_dump

SUBCOMMANDS = ["train-probes", "fit", "evaluate", "compare", "theory", "demo", "inspect"]


def run_json(capsys, argv):
    code = cli.run(argv)
    out = capsys.readouterr().out
    return code, (json.loads(out) if code == 0 and out.strip().startswith("{") else out)


@pytest.fixture
def workspace(tmp_path):
    write_dump(make_dump(n=90, dims=(6, 5), n_classes=3, seed=0), tmp_path / "train.lats")
    write_dump(make_dump(n=60, dims=(6, 5), n_classes=3, seed=1), tmp_path / "holdout.lats")
    return tmp_path


@pytest.fixture
def fitted(workspace, capsys):
    """Probes plus both calibrators fitted on the holdout dump."""
    ws = workspace
    assert cli.run(["train-probes", "--dump", str(ws / "train.lats"), "--out", str(ws / "probes.lprb"),
                    "--epochs", "5", "--seed", "0", "--jobs", "1"]) == 0
    assert cli.run(["fit", "--method", "lates", "--holdout", str(ws / "holdout.lats"),
                    "--probes", str(ws / "probes.lprb"), "--out", str(ws / "lates.json"), "--seed", "0"]) == 0
    assert cli.run(["fit", "--method", "temperature", "--dump", str(ws / "holdout.lats"),
                    "--out", str(ws / "temperature.json")]) == 0
    capsys.readouterr()
    return ws


class TestUsage:
    def test_top_level_help(self, capsys):
        assert cli.run(["--help"]) == 0
        assert "train-probes" in capsys.readouterr().out

    @pytest.mark.parametrize("command", SUBCOMMANDS)
    def test_every_subcommand_documents_its_flags(self, capsys, command):
        assert cli.run([command, "--help"]) == 0
        text = capsys.readouterr().out
        assert "usage:" in text
        if command != "inspect":
            assert "default:" in text

    def test_missing_subcommand(self, capsys):
        assert cli.run([]) == 1
        assert "error" in capsys.readouterr().err

    def test_unknown_flag(self, workspace, capsys):
        assert cli.run(["fit", "--dump", str(workspace / "holdout.lats"), "--out", "x.json", "--bogus"]) == 1

    def test_invalid_configuration_is_a_validation_error(self, workspace, capsys):
        code = cli.run(["train-probes", "--dump", str(workspace / "train.lats"), "--out",
                        str(workspace / "p.lprb"), "--lr", "0"])
        assert code == 2
        assert "invalid configuration" in capsys.readouterr().err
        assert not (workspace / "p.lprb").exists()

    def test_lates_fit_needs_probes(self, workspace, capsys):
        assert cli.run(["fit", "--dump", str(workspace / "holdout.lats"), "--out", str(workspace / "c.json")]) == 1

    def test_stratify_needs_a_holdout_fraction(self, workspace, capsys):
        assert cli.run(["fit", "--method", "temperature", "--dump", str(workspace / "holdout.lats"),
                        "--out", str(workspace / "t.json"), "--stratify"]) == 1

    def test_unknown_theory_task(self, capsys):
        assert cli.run(["theory", "--task", "imagenet", "--seeds", "1", "--n", "50"]) == 1


class TestDataErrors:
    def test_missing_input_names_the_path(self, tmp_path, capsys):
        missing = tmp_path / "nowhere.lats"
        assert cli.run(["inspect", str(missing)]) == 2
        assert str(missing) in capsys.readouterr().err

    def test_corrupted_dump(self, workspace, capsys):
        raw = bytearray((workspace / "holdout.lats").read_bytes())
        raw[40] ^= 0xFF
        (workspace / "bad.lats").write_bytes(bytes(raw))
        assert cli.run(["fit", "--method", "temperature", "--dump", str(workspace / "bad.lats"),
                        "--out", str(workspace / "t.json")]) == 2
        assert "checksum" in capsys.readouterr().err.lower()

    def test_unrecognized_file(self, tmp_path, capsys):
        path = tmp_path / "notes.txt"
        path.write_text("hello world")
        assert cli.run(["inspect", str(path)]) == 2

    def test_numeric_failure(self, workspace, capsys, monkeypatch):
        def diverge(*args, **kwargs):
            raise NumericError("probe loss is nan", epoch=4)

        monkeypatch.setattr(cli, "train_probes", diverge)
        code = cli.run(["train-probes", "--dump", str(workspace / "train.lats"), "--out", str(workspace / "p.lprb")])
        assert code == 3
        assert "epoch 4" in capsys.readouterr().err


class TestWorkflow:
    def test_fit_outputs(self, fitted):
        lates = json.loads((fitted / "lates.json").read_text())
        assert lates["kind"] == "lates" and lates["d"] == 3 and lates["K"] == 3
        assert all(b >= 0 for b in lates["beta"])
        temperature = json.loads((fitted / "temperature.json").read_text())
        assert temperature["kind"] == "temperature" and temperature["d"] == 1

    def test_fit_is_reproducible(self, fitted, capsys):
        argv = ["fit", "--holdout", str(fitted / "holdout.lats"), "--probes", str(fitted / "probes.lprb"),
                "--out", str(fitted / "again.json"), "--seed", "0"]
        assert cli.run(argv) == 0
        assert (fitted / "again.json").read_bytes() == (fitted / "lates.json").read_bytes()

    def test_fit_on_a_stratified_share_of_the_dump(self, fitted, capsys):
        code, summary = run_json(capsys, [
            "fit", "--method", "temperature", "--dump", str(fitted / "train.lats"), "--holdout-fraction", "0.5",
            "--stratify", "--seed", "3", "--out", str(fitted / "strat.json"),
        ])
        assert code == 0
        assert summary["tau"] > 0
        assert json.loads((fitted / "strat.json").read_text())["kind"] == "temperature"

    def test_fit_warm_start_and_batch_flags(self, fitted, capsys):
        code, summary = run_json(capsys, [
            "fit", "--holdout", str(fitted / "holdout.lats"), "--probes", str(fitted / "probes.lprb"),
            "--init", "temperature", "--epochs", "0", "--out", str(fitted / "warm.json"),
        ])
        assert code == 0
        tau = json.loads((fitted / "temperature.json").read_text())["tau"]
        assert summary["beta"][:-1] == [0.0, 0.0]
        assert summary["beta"][-1] == pytest.approx(1.0 / tau, rel=1e-12)
        assert cli.run(["fit", "--holdout", str(fitted / "holdout.lats"), "--probes", str(fitted / "probes.lprb"),
                        "--batch-size", "16", "--epochs", "2", "--out", str(fitted / "mini.json")]) == 0

    def test_evaluate_calibrator(self, fitted, capsys):
        code, report = run_json(capsys, [
            "evaluate", "--calibrator", str(fitted / "lates.json"), "--dump", str(fitted / "holdout.lats"),
            "--probes", str(fitted / "probes.lprb"), "--out", str(fitted / "report.json"),
            "--bins-csv", str(fitted / "bins.csv"),
        ])
        assert code == 0
        assert {"ece", "nll", "brier", "acc", "auc"} <= set(report)
        assert report["n_examples"] == 60
        assert json.loads((fitted / "report.json").read_text())["ece"] == report["ece"]
        assert (fitted / "bins.csv").read_text().startswith("lower,upper,count,accuracy,mean_confidence")

    def test_evaluate_lates_without_probes(self, fitted, capsys):
        assert cli.run(["evaluate", "--calibrator", str(fitted / "lates.json"),
                        "--dump", str(fitted / "holdout.lats")]) == 1

    def test_evaluate_probability_file(self, fitted, capsys):
        probs = np.full((60, 3), 1 / 3)
        np.save(fitted / "probs.npy", probs)
        code, report = run_json(capsys, ["evaluate", "--probs", str(fitted / "probs.npy"),
                                         "--dump", str(fitted / "holdout.lats")])
        assert code == 0
        assert report["nll"] == pytest.approx(np.log(3))

    def test_compare_reports(self, fitted, capsys):
        for method in ("lates", "temperature"):
            extra = ["--probes", str(fitted / "probes.lprb")] if method == "lates" else []
            assert cli.run(["evaluate", "--calibrator", str(fitted / f"{method}.json"),
                            "--dump", str(fitted / "holdout.lats"), "--out", str(fitted / method / "holdout.json")] + extra) == 0
        capsys.readouterr()
        assert cli.run(["compare", "--a", str(fitted / "lates" / "holdout.json"), "--b", str(fitted / "temperature" / "holdout.json"),
                        "--metric", "ece", "nll", "--out", str(fitted / "cmp.json")]) == 0
        assert "gain %" in capsys.readouterr().out
        rows = json.loads((fitted / "cmp.json").read_text())["rows"]
        assert [row["metric"] for row in rows] == ["ece", "nll"]
        assert all(row["n_conditions"] == 1 for row in rows)

    def test_inspect_dump_and_bundle(self, fitted, capsys):
        code, header = run_json(capsys, ["inspect", str(fitted / "holdout.lats")])
        assert code == 0
        assert header["n_examples"] == 60
        assert [layer["feature_dim"] for layer in header["layers"]] == [6, 5, 3]
        assert sum(header["label_counts"]) == 60

        code, bundle = run_json(capsys, ["inspect", str(fitted / "probes.lprb")])
        assert code == 0
        assert [p["identity"] for p in bundle["probes"]] == [False, False, True]

    def test_theory(self, tmp_path, capsys):
        code, summary = run_json(capsys, ["theory", "--seeds", "2", "--n", "100", "--jobs", "1", "--seed", "0",
                                          "--out", str(tmp_path / "theory.json")])
        assert code == 0
        assert summary["holdout_n"] == 100
        assert summary["lambda"] == pytest.approx(0.1)
        assert 0.0 <= summary["oracle_delta_bound"] <= 1.0
        assert len(json.loads((tmp_path / "theory.json").read_text())["outcomes"]) == 2

    def test_demo(self, tmp_path, capsys):
        out = tmp_path / "demo"
        code, summary = run_json(capsys, [
            "demo", "--task", "gaussian_mixture", "--n", "300", "--hidden", "8", "8", "--epochs", "3",
            "--severities", "1", "--seed", "1", "--jobs", "1", "--out-dir", str(out),
        ])
        assert code == 0
        assert summary["layer_widths"] == [2, 8, 8, 3]
        assert (out / "reports_lates.json").is_file()
        assert (out / "summary.json").is_file()

    def test_demo_with_stratified_split(self, tmp_path, capsys):
        out = tmp_path / "strat"
        code, summary = run_json(capsys, [
            "demo", "--task", "gaussian_mixture", "--n", "300", "--hidden", "8", "--epochs", "3", "--severities",
            "--stratify", "--agg-epochs", "5", "--seed", "2", "--jobs", "1", "--out-dir", str(out),
        ])
        assert code == 0
        assert summary["holdout_nll"]["lates"] <= summary["holdout_nll"]["temperature"]
        assert (out / "holdout.lats").is_file()
