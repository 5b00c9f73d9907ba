"""End-to-end command-line runs: artifacts, manifests, exit codes."""

import hashlib
import json

import pytest

from iongrid.cli import EXIT_CONFIG, EXIT_OK, EXIT_RUNTIME, main

FAST_PROFILE = (
    "[profile]\n"
    "grid_nx = 31\n"
    "grid_nsigma = 31\n"
    "grid_na = 5\n"
    "max_candidates = 5\n"
    "events = 30\n"
)


def write_cfg(tmp_path, text):
    path = tmp_path / "run.ini"
    path.write_text(text)
    return str(path)


def manifest_ok(run_dir):
    manifest = json.loads((run_dir / "manifest.json").read_text())
    for name, digest in manifest["files"].items():
        assert hashlib.sha256((run_dir / name).read_bytes()).hexdigest() == digest
    return set(manifest["files"])


class TestProfileCommand:
    def test_run_artifacts(self, tmp_path):
        cfg = write_cfg(tmp_path, FAST_PROFILE)
        out = tmp_path / "runs"
        rc = main(["--config", cfg, "--out", str(out), "--seed", "3", "profile"])
        assert rc == EXIT_OK
        run_dir = out / "profile"
        names = manifest_ok(run_dir)
        assert {"events.csv", "edge_histogram.csv", "posterior.json",
                "profile.png", "config.ini"} <= names
        assert len((run_dir / "events.csv").read_text().strip().splitlines()) == 31
        post = json.loads((run_dir / "posterior.json").read_text())
        assert post["n_events"] == 30
        assert post["sigma_mean_nm"] > 0

    def test_deterministic_and_auto_suffix(self, tmp_path):
        cfg = write_cfg(tmp_path, FAST_PROFILE)
        out = tmp_path / "runs"
        assert main(["--config", cfg, "--out", str(out), "--seed", "9",
                     "profile"]) == EXIT_OK
        assert main(["--config", cfg, "--out", str(out), "--seed", "9",
                     "profile"]) == EXIT_OK
        first = (out / "profile" / "events.csv").read_text()
        second = (out / "profile-1" / "events.csv").read_text()
        assert first == second

    def test_flag_overrides(self, tmp_path):
        cfg = write_cfg(tmp_path, FAST_PROFILE)
        out = tmp_path / "runs"
        rc = main(["--config", cfg, "--out", str(out), "profile",
                   "--events", "12", "--sigma", "30.7"])
        assert rc == EXIT_OK
        snap = (out / "profile" / "config.ini").read_text()
        assert "events = 12" in snap
        assert "sigma = 30.7" in snap


class TestSimulateAnalyze:
    def test_pipeline(self, tmp_path):
        out = tmp_path / "runs"
        rc = main(["--out", str(out), "--seed", "21", "simulate", "--area", "B"])
        assert rc == EXIT_OK
        sim_dir = out / "simulate"
        names = manifest_ok(sim_dir)
        assert {"emitters.csv", "scan_before.scan", "scan_after_implant.scan",
                "scan_after_second_anneal.scan", "scan_before.png"} <= names

        rc = main(["--out", str(out), "analyze",
                   str(sim_dir / "scan_before.scan"),
                   str(sim_dir / "scan_after_implant.scan"),
                   "--area", "B"])
        assert rc == EXIT_OK
        an_dir = out / "analyze"
        names = manifest_ok(an_dir)
        assert {"quantification.csv", "quantification.png", "config.ini"} <= names
        lines = (an_dir / "quantification.csv").read_text().strip().splitlines()
        assert len(lines) == 13  # header + 12 spots
        assert {"accuracy.json", "precision.json", "residuals.png",
                "accuracy_residuals.csv"} <= names
        acc = json.loads((an_dir / "accuracy.json").read_text())
        assert acc["statistic"] == "accuracy" and acc["sigma_nm"] > 0

    def test_noiseless_reproducible(self, tmp_path):
        out = tmp_path / "runs"
        args = ["--out", str(out), "--seed", "5", "simulate", "--no-noise"]
        assert main(args) == EXIT_OK
        assert main(args) == EXIT_OK
        a = (out / "simulate" / "scan_before.scan").read_bytes()
        b = (out / "simulate-1" / "scan_before.scan").read_bytes()
        assert a == b


class TestExitCodes:
    def test_missing_config_file(self, tmp_path):
        rc = main(["--config", str(tmp_path / "nope.ini"), "profile"])
        assert rc == EXIT_CONFIG

    def test_invalid_config_value(self, tmp_path):
        cfg = write_cfg(tmp_path, "[profile]\nevents = -2\n")
        rc = main(["--config", cfg, "profile"])
        assert rc == EXIT_CONFIG

    def test_unknown_key(self, tmp_path):
        cfg = write_cfg(tmp_path, "[profile]\nmystery = 3\n")
        rc = main(["--config", cfg, "profile"])
        assert rc == EXIT_CONFIG

    def test_runtime_failure(self, tmp_path):
        rc = main(["--out", str(tmp_path / "runs"), "analyze",
                   str(tmp_path / "missing_before.scan"),
                   str(tmp_path / "missing_after.scan")])
        assert rc == EXIT_RUNTIME

    def test_usage_error_exits_two(self):
        with pytest.raises(SystemExit) as exc:
            main(["profile", "--not-a-flag"])
        assert exc.value.code == 2
        with pytest.raises(SystemExit):
            main([])
