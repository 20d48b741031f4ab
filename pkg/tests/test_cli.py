import json
import os

import numpy as np
import pytest

from wassda.cli import main


def run_cli(*argv):
    return main(list(argv))


@pytest.fixture(scope="module")
def synth_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("synth")
    code = run_cli("synth", "--d", "38", "--shift", "2.0", "--seed", "7",
                   "--n-source", "1200", "--n-target", "1000", "-o", str(out))
    assert code == 0
    return out


@pytest.fixture(scope="module")
def trained_dir(tmp_path_factory, synth_dir):
    out = tmp_path_factory.mktemp("train")
    code = run_cli(
        "train", "--mode", "wd_wada", "--runs", "2", "--seed", "0",
        "--epochs", "2", "--batch-size", "32", "--n-critic", "1",
        "--source-csv", str(synth_dir / "source.csv"),
        "--target-csv", str(synth_dir / "target.csv"),
        "--source-sample", "600", "--target-sample", "500",
        "-o", str(out))
    assert code == 0
    return out


class TestSynth:
    def test_outputs_exist_with_expected_columns(self, synth_dir):
        header = (synth_dir / "source.csv").read_text().splitlines()[0]
        cols = header.split(",")
        assert len(cols) == 39 and cols[-1] == "label"
        manifest = json.loads((synth_dir / "manifest.json").read_text())
        assert manifest["spec"]["d"] == 38

    def test_byte_identical_reruns(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        for out in (a, b):
            assert run_cli("synth", "--seed", "3", "--n-source", "300",
                           "--n-target", "300", "-o", str(out)) == 0
        assert (a / "source.csv").read_bytes() == (b / "source.csv").read_bytes()
        assert (a / "target.csv").read_bytes() == (b / "target.csv").read_bytes()
        assert (a / "manifest.json").read_bytes() == (b / "manifest.json").read_bytes()

    def test_negative_shift_rejected(self, tmp_path, capsys):
        code = run_cli("synth", "--shift", "-1", "-o", str(tmp_path / "x"))
        assert code == 2
        assert "shift" in capsys.readouterr().err


class TestTrain:
    def test_artifacts_per_run(self, trained_dir):
        for run in ("run_000", "run_001"):
            base = trained_dir / run
            assert (base / "metrics.json").exists()
            assert (base / "trainlog.jsonl").exists()
            assert (base / "roc.csv").exists()
            assert (base / "checkpoint" / "params.bin").exists()
            assert (base / "dataset_manifest.json").exists()
        assert (trained_dir / "robustness.json").exists()
        assert (trained_dir / "experiment_manifest.json").exists()

    def test_manifest_echoes_effective_settings(self, trained_dir):
        manifest = json.loads((trained_dir / "experiment_manifest.json").read_text())
        s = manifest["settings"]
        assert s["mode"] == "wd_wada" and s["epochs"] == 2 and s["runs"] == 2
        assert "started" in manifest["meta"]

    def test_metric_reports_byte_identical_across_invocations(self, tmp_path, synth_dir):
        outs = []
        for name in ("r1", "r2"):
            out = tmp_path / name
            code = run_cli(
                "train", "--mode", "source_only_cnn", "--runs", "1", "--seed", "5",
                "--epochs", "1", "--batch-size", "32",
                "--source-csv", str(synth_dir / "source.csv"),
                "--target-csv", str(synth_dir / "target.csv"),
                "--source-sample", "400", "--target-sample", "400",
                "-o", str(out))
            assert code == 0
            outs.append((out / "run_000" / "metrics.json").read_bytes())
        assert outs[0] == outs[1]

    def test_missing_data_file_exit_2(self, tmp_path, capsys):
        code = run_cli("train", "--mode", "wd_wada",
                       "--source-csv", "/nonexistent/a.csv",
                       "--target-csv", "/nonexistent/b.csv",
                       "-o", str(tmp_path / "x"))
        assert code == 2

    def test_experiment_file_with_flag_override(self, tmp_path, synth_dir):
        exp = tmp_path / "exp.json"
        exp.write_text(json.dumps({"mode": "source_only_cnn", "epochs": 1,
                                   "runs": 1, "batch_size": 32,
                                   "source_sample": 400, "target_sample": 400}))
        out = tmp_path / "out"
        code = run_cli("train", "--experiment", str(exp), "--seed", "9",
                       "--source-csv", str(synth_dir / "source.csv"),
                       "--target-csv", str(synth_dir / "target.csv"),
                       "-o", str(out))
        assert code == 0
        manifest = json.loads((out / "experiment_manifest.json").read_text())
        assert manifest["settings"]["mode"] == "source_only_cnn"
        assert manifest["settings"]["seed"] == 9  # flag beats file default

    def test_unknown_experiment_key_exit_2(self, tmp_path, capsys):
        exp = tmp_path / "exp.json"
        exp.write_text(json.dumps({"not_a_key": 1}))
        code = run_cli("train", "--experiment", str(exp), "--synthetic",
                       "-o", str(tmp_path / "x"))
        assert code == 2

    def test_synthetic_source(self, tmp_path):
        out = tmp_path / "out"
        code = run_cli("train", "--mode", "source_only_cnn", "--runs", "1",
                       "--epochs", "1", "--batch-size", "32", "--synthetic",
                       "--n-source", "600", "--n-target", "500",
                       "--source-sample", "500", "--target-sample", "400",
                       "-o", str(out))
        assert code == 0
        manifest = json.loads((out / "experiment_manifest.json").read_text())
        assert manifest["synthetic_spec"] is not None


class TestReport:
    def test_comparison_table(self, tmp_path, trained_dir):
        out = tmp_path / "report"
        code = run_cli("report", str(trained_dir), "-o", str(out))
        assert code == 0
        table = (out / "comparison.txt").read_text()
        assert "wd_wada" in table
        assert "precision" in table and "auc" in table
        roc_copies = [f for f in os.listdir(out) if f.endswith("_roc.csv")]
        assert len(roc_copies) == 2

    def test_rendering_two_decimals(self):
        from wassda.cli import render_comparison
        table = render_comparison([{
            "task": "t", "mode": "wd_wada",
            "precision": [0.85], "f1": [0.5], "auc": [0.9],
            "ci": {"mean": 0.9, "half_width": 0.01, "lower": 0.89, "upper": 0.91},
        }])
        row = [ln for ln in table.splitlines() if "precision" in ln][0]
        assert "0.85" in row

    def test_corrupt_metrics_exit_2(self, tmp_path, trained_dir, capsys):
        import shutil
        broken = tmp_path / "broken"
        shutil.copytree(trained_dir, broken)
        (broken / "run_000" / "metrics.json").write_text("{not json")
        code = run_cli("report", str(broken), "-o", str(tmp_path / "rep"))
        assert code == 2
        assert "metrics.json" in capsys.readouterr().err

    def test_missing_dir_exit_2(self, tmp_path):
        assert run_cli("report", str(tmp_path / "ghost"), "-o", str(tmp_path / "r")) == 2


class TestExitCodes:
    def test_usage_error_is_2(self):
        assert run_cli("train") == 2  # missing required -o

    def test_bad_subcommand_is_2(self):
        assert run_cli("frobnicate") == 2
