"""Tests for chernsim.cli module."""

import json
from pathlib import Path

import pytest

from chernsim.cli import EXIT_CONFIG, EXIT_IO, EXIT_OK, main
from chernsim.harness import RunReport, published_schema
from chernsim.persistence import TrialLog

FAST_TEST = ["test", "--env", "minimax", "--policies", "cs,uniform", "--trials", "3"]


class TestTestCommand:
    """Tests for ``chernsim test``."""

    def test_writes_report(self, tmp_path: Path):
        """A run writes a JSON report to --out."""
        out = tmp_path / "report.json"
        assert main([*FAST_TEST, "--out", str(out)]) == EXIT_OK
        report = json.loads(out.read_text())
        assert report["command"] == "test"
        assert [s["policy"] for s in report["testing"]] == ["cs", "uniform"]
        assert report["constants"]["d0"] > 0

    def test_stdout_csv(self, capsys):
        """Without --out the report goes to stdout."""
        assert main([*FAST_TEST, "--format", "csv"]) == EXIT_OK
        lines = capsys.readouterr().out.splitlines()
        assert lines[0] == "policy,trial,metric,checkpoint,value"
        assert len(lines) == 1 + 2 * 3

    def test_reproducible_bytes(self, tmp_path: Path):
        """Same seed gives byte-identical reports, whatever the worker count."""
        first, second = tmp_path / "a.json", tmp_path / "b.json"
        assert main([*FAST_TEST, "--seed", "5", "--out", str(first)]) == EXIT_OK
        assert main([*FAST_TEST, "--seed", "5", "--workers", "2", "--out", str(second)]) == EXIT_OK
        assert first.read_bytes() == second.read_bytes()

    def test_trial_log(self, tmp_path: Path):
        """--trial-log keeps every trial report."""
        log = tmp_path / "trials.jsonl"
        assert main([*FAST_TEST, "--trial-log", str(log), "--out", str(tmp_path / "r.json")]) == EXIT_OK
        assert len(TrialLog(log).load()) == 6

    def test_trial_log_replaced_on_rerun(self, tmp_path: Path, caplog):
        """A rerun rewrites the trial log instead of appending to it."""
        log = tmp_path / "trials.jsonl"
        args = [*FAST_TEST, "--trial-log", str(log), "--out", str(tmp_path / "r.json")]
        assert main(args) == EXIT_OK
        with caplog.at_level("INFO", logger="chernsim.cli"):
            assert main(args) == EXIT_OK
        assert TrialLog(log).count() == 6
        assert "holds 6 report(s)" in caplog.text

    def test_env_params(self, tmp_path: Path):
        """--param values are parsed as JSON."""
        out = tmp_path / "r.json"
        args = ["test", "--env", "minimax", "--param", "hyp_count=5", "--policies", "cs", "--trials", "2"]
        assert main([*args, "--out", str(out)]) == EXIT_OK
        assert json.loads(out.read_text())["env"].startswith("minimax(J=5")

    def test_config_file(self, tmp_path: Path):
        """Settings can come from a JSON file."""
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"env": {"name": "minimax"}, "policies": ["top2"], "trials": 2}))
        out = tmp_path / "r.json"
        assert main(["test", "--config", str(cfg), "--out", str(out)]) == EXIT_OK
        report = json.loads(out.read_text())
        assert report["config"]["trials"] == 2
        assert "workers" not in report["config"]


class TestExitCodes:
    """Tests for error handling in main."""

    def test_bad_delta(self, capsys):
        """Out-of-range delta is a config error."""
        assert main([*FAST_TEST, "--delta", "2"]) == EXIT_CONFIG
        assert "--delta" in capsys.readouterr().err

    def test_unknown_env(self):
        """Unknown environments are config errors."""
        assert main(["test", "--env", "nowhere"]) == EXIT_CONFIG

    def test_unknown_policy(self):
        """Unknown policies are config errors."""
        assert main(["test", "--env", "minimax", "--policies", "thompson"]) == EXIT_CONFIG

    def test_param_needs_env(self):
        """--param without --env is rejected."""
        assert main(["test", "--param", "seed=1"]) == EXIT_CONFIG

    def test_unknown_param(self):
        """Builder parameters are checked."""
        assert main(["test", "--env", "example1", "--param", "seed=1"]) == EXIT_CONFIG

    def test_sub_gaussian_on_zero_gap(self):
        """The bounded rule needs eta0 > 0."""
        args = ["test", "--env", "three_group", "--stopping", "sub_gaussian", "--trials", "1"]
        assert main(args) == EXIT_CONFIG

    def test_bad_config_file_line(self, tmp_path: Path, capsys):
        """File errors carry file and line."""
        cfg = tmp_path / "cfg.json"
        cfg.write_text('{\n  "trials": 0\n}\n')
        assert main(["test", "--config", str(cfg)]) == EXIT_CONFIG
        assert f"{cfg}:2:" in capsys.readouterr().err

    def test_missing_config_file(self, tmp_path: Path):
        """An unreadable config file is an I/O error."""
        assert main(["test", "--config", str(tmp_path / "absent.json")]) == EXIT_IO

    def test_missing_dataset(self, tmp_path: Path):
        """A missing dataset is an I/O error."""
        args = ["regress", "--env", "csv", "--param", f"path={tmp_path / 'absent.csv'}"]
        assert main(args) == EXIT_IO

    def test_bad_means_csv(self, tmp_path: Path):
        """A malformed means table is an I/O error."""
        path = tmp_path / "m.csv"
        path.write_text("1,x\n")
        assert main(["test", "--env", "means_csv", "--param", f"path={path}"]) == EXIT_IO

    def test_help_lists_env_summaries(self, capsys):
        """Subcommand help shows every environment with its summary."""
        with pytest.raises(SystemExit) as info:
            main(["test", "--help"])
        assert info.value.code == 0
        out = capsys.readouterr().out
        assert "example1" in out
        assert "two arms, three hypotheses" in out

    def test_design_help_lists_both_registries(self, capsys):
        """design help covers testing and regression environments."""
        with pytest.raises(SystemExit):
            main(["design", "--help"])
        out = capsys.readouterr().out
        assert "two-unit ReLU network" in out
        assert "one arm carries all discrimination power" in out

    def test_version(self, capsys):
        """--version prints the package version."""
        with pytest.raises(SystemExit) as info:
            main(["--version"])
        assert info.value.code == 0
        assert "chernsim" in capsys.readouterr().out


class TestRegressCommand:
    """Tests for ``chernsim regress``."""

    def test_linear_run(self, tmp_path: Path):
        """A short regression run reports curves."""
        out = tmp_path / "r.json"
        args = ["regress", "--env", "linear", "--param", "arm_count=8", "--param", "dim=2"]
        assert main([*args, "--policies", "uniform", "--horizon", "10", "--trials", "2", "--out", str(out)]) == EXIT_OK
        report = json.loads(out.read_text())
        assert report["command"] == "regress"
        assert report["regression"][0]["checkpoints"][-1] == 10

    def test_horizon_below_dimension(self):
        """A horizon shorter than the dimension is rejected."""
        assert main(["regress", "--env", "linear", "--horizon", "2"]) == EXIT_CONFIG

    def test_rejects_top2(self):
        """Top-2 is testing-only."""
        assert main(["regress", "--policies", "top2"]) == EXIT_CONFIG

    def test_eog_needs_single_index(self):
        """The most-orthogonal baseline is refused on the ReLU network."""
        assert main(["regress", "--env", "relu_net", "--policies", "eog", "--horizon", "10"]) == EXIT_CONFIG

    def test_eog_run(self, tmp_path: Path):
        """The most-orthogonal baseline runs on a linear model."""
        out = tmp_path / "r.json"
        args = ["regress", "--env", "linear", "--param", "arm_count=8", "--param", "dim=2"]
        assert main([*args, "--policies", "eog", "--horizon", "10", "--trials", "2", "--out", str(out)]) == EXIT_OK
        assert json.loads(out.read_text())["regression"][0]["policy"] == "eog"

    def test_testing_rejects_eog(self):
        """eog has no testing counterpart."""
        assert main(["test", "--env", "minimax", "--policies", "eog"]) == EXIT_CONFIG


class TestDesignCommand:
    """Tests for ``chernsim design``."""

    def test_example1_truth(self, capsys):
        """Example 1, hypothesis 0, gives [1, 0]."""
        assert main(["design", "--env", "example1", "--hyp", "0"]) == EXIT_OK
        report = json.loads(capsys.readouterr().out)
        assert report["kind"] == "lp"
        assert report["probs"] == pytest.approx([1.0, 0.0], abs=1e-9)
        assert report["objective"] == pytest.approx(0.998001)

    def test_regression_design(self, capsys):
        """Regression envs give a sparse eigenvalue design at theta*."""
        assert main(["design", "--env", "linear", "--param", "arm_count=10", "--param", "dim=2"]) == EXIT_OK
        report = json.loads(capsys.readouterr().out)
        assert report["kind"] == "eig"
        assert report["support_size"] <= 3
        assert report["objective"] > 0

    def test_bad_theta(self):
        """theta of the wrong size is a config error."""
        assert main(["design", "--env", "linear", "--theta", "1,2"]) == EXIT_CONFIG

    def test_bad_hyp(self):
        """An out-of-range hypothesis is a config error."""
        assert main(["design", "--env", "example1", "--hyp", "7"]) == EXIT_CONFIG


class TestDiagnoseCommand:
    """Tests for ``chernsim diagnose``."""

    def test_example1(self, capsys):
        """Rounded Example 1 designs give D1 = 4e-6."""
        assert main(["diagnose", "--env", "example1", "--decimals", "4"]) == EXIT_OK
        report = json.loads(capsys.readouterr().out)
        assert report["constants"]["d1"] == pytest.approx(4e-6, abs=1e-12)
        assert report["predicted"]["exploitation_term"] == pytest.approx(3.4, rel=0.05)

    def test_schema(self, tmp_path: Path):
        """schema writes the shipped RunReport JSON schema."""
        out = tmp_path / "schema.json"
        assert main(["schema", "--out", str(out)]) == EXIT_OK
        assert json.loads(out.read_text()) == published_schema()

    def test_schema_from_model(self, capsys):
        """--model regenerates the same schema from the report model."""
        assert main(["schema", "--model"]) == EXIT_OK
        assert json.loads(capsys.readouterr().out) == RunReport.model_json_schema()
