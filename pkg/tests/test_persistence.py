"""Tests for chernsim.persistence module."""

import io
import json
from pathlib import Path

import pandas as pd

from chernsim.core import TrialReport
from chernsim.harness import PolicySummary, RunReport, tukey_box
from chernsim.persistence import TrialLog, render_report, write_report


def _report(stop_time: int, seed: int = 0) -> TrialReport:
    return TrialReport(
        stop_time=stop_time,
        declared_hyp=0,
        correct=True,
        arm_counts=[stop_time, 0],
        seed=seed,
        policy="cs",
    )


def _run_report() -> RunReport:
    stops = [3, 5, 4]
    summary = PolicySummary(
        policy="cs",
        trials=3,
        stop_time=tukey_box(stops),
        stop_times=stops,
        errors=0,
        error_rate=0.0,
        truncated=0,
    )
    return RunReport(command="test", env="example1", config={"trials": 3}, testing=[summary])


class TestTrialLog:
    """Tests for TrialLog."""

    def test_append_and_load(self, tmp_path: Path):
        """Can append reports and load them back."""
        log = TrialLog(tmp_path / "trials.jsonl")
        log.open()
        first, second = _report(3, seed=1), _report(7, seed=2)
        log.append(first)
        log.append(second)
        log.close()

        loaded = log.load()
        assert loaded == [first, second]

    def test_creates_parent_dirs(self, tmp_path: Path):
        """Creates parent directories if they don't exist."""
        file_path = tmp_path / "nested" / "dir" / "trials.jsonl"
        with TrialLog(file_path) as log:
            log.append(_report(1))
        assert file_path.exists()

    def test_load_missing_file(self, tmp_path: Path):
        """Load returns an empty list for a nonexistent file."""
        assert TrialLog(tmp_path / "empty.jsonl").load() == []

    def test_skips_corrupted_lines(self, tmp_path: Path, caplog):
        """Load skips lines that are not valid reports and warns."""
        file_path = tmp_path / "corrupted.jsonl"
        good = json.dumps(_report(2).to_dict())
        bad_counts = json.dumps({**_report(2).to_dict(), "arm_counts": [9, 9]})
        file_path.write_text(f"{good}\nnot valid json\n{bad_counts}\n\n{good}\n")

        loaded = TrialLog(file_path).load()
        assert len(loaded) == 2
        assert "skipped 2" in caplog.text

    def test_extend_and_count(self, tmp_path: Path):
        """extend appends many reports; count sees them."""
        log = TrialLog(tmp_path / "many.jsonl")
        assert log.count() == 0
        assert log.extend(_report(t + 1, seed=t) for t in range(5)) == 5
        log.close()
        assert log.count() == 5

    def test_clear(self, tmp_path: Path):
        """Clear removes every report."""
        log = TrialLog(tmp_path / "clear.jsonl")
        log.append(_report(1))
        log.clear()
        assert log.load() == []
        assert not log.file_path.exists()

    def test_fsync(self, tmp_path: Path):
        """fsync mode writes durably and reads back."""
        with TrialLog(tmp_path / "sync.jsonl", fsync=True) as log:
            log.append(_report(4))
        assert len(log.load()) == 1


class TestReports:
    """Tests for render_report and write_report."""

    def test_json(self, tmp_path: Path):
        """JSON output parses back into the same report."""
        report = _run_report()
        path = write_report(report, tmp_path / "out" / "report.json")
        assert RunReport.model_validate_json(path.read_text()) == report

    def test_csv(self, tmp_path: Path):
        """CSV output is the tidy long format."""
        path = write_report(_run_report(), tmp_path / "report.csv", "csv")
        frame = pd.read_csv(path)
        assert list(frame.columns) == ["policy", "trial", "metric", "checkpoint", "value"]
        assert frame["value"].tolist() == [3, 5, 4]
        assert frame["trial"].tolist() == [0, 1, 2]

    def test_identical_bytes(self):
        """Rendering is deterministic."""
        report = _run_report()
        assert render_report(report) == render_report(report)
        assert render_report(report, "csv") == render_report(report, "csv")

    def test_overwrite_leaves_no_temp_files(self, tmp_path: Path):
        """Atomic replacement leaves only the target behind."""
        target = tmp_path / "report.json"
        write_report(_run_report(), target)
        write_report(_run_report(), target)
        assert [p.name for p in tmp_path.iterdir()] == ["report.json"]

    def test_csv_text_parses(self):
        """Rendered CSV text is readable without touching disk."""
        frame = pd.read_csv(io.StringIO(render_report(_run_report(), "csv")))
        assert set(frame["metric"]) == {"stop_time"}
