"""Report and trial-log persistence.

Reports are written atomically (temp file, then rename) as JSON or as a
tidy long-format CSV. Per-trial reports can additionally be kept in a
JSONL ledger, one TrialReport per line.
"""

from __future__ import annotations

import json
import logging
import os
import tempfile
from collections.abc import Iterable
from pathlib import Path
from typing import IO, Literal

import pandas as pd
from pydantic import ValidationError

from chernsim.core import TrialReport
from chernsim.harness import RunReport

logger = logging.getLogger(__name__)

TIDY_COLUMNS = ["policy", "trial", "metric", "checkpoint", "value"]


def render_report(report: RunReport, fmt: Literal["json", "csv"] = "json") -> str:
    """The report as JSON text or tidy CSV text."""
    if fmt == "json":
        return report.model_dump_json(indent=2) + "\n"
    frame = pd.DataFrame(report.tidy_rows(), columns=TIDY_COLUMNS)
    frame["trial"] = frame["trial"].astype("Int64")
    frame["checkpoint"] = frame["checkpoint"].astype("Int64")
    return str(frame.to_csv(index=False, lineterminator="\n", float_format="%.17g"))


def write_report(
    report: RunReport,
    path: str | Path,
    fmt: Literal["json", "csv"] = "json",
    *,
    fsync: bool = False,
) -> Path:
    """Atomically write ``report`` to ``path``, creating parent directories.

    Args:
        report: Report to write.
        path: Destination file.
        fmt: ``json`` for the full report, ``csv`` for tidy rows.
        fsync: Flush to disk before the rename.
    """
    path = Path(path).expanduser()
    path.parent.mkdir(parents=True, exist_ok=True)
    text = render_report(report, fmt)
    fd, tmp_name = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as handle:
            handle.write(text)
            if fsync:
                handle.flush()
                os.fsync(handle.fileno())
        os.replace(tmp_name, path)
    except BaseException:
        Path(tmp_name).unlink(missing_ok=True)
        raise
    logger.info("wrote %s report to %s", fmt, path)
    return path


class TrialLog:
    """JSONL ledger of per-trial reports.

    Reports are appended one per line. On load, lines that are not valid
    JSON or not valid reports are skipped.

    Example:
        log = TrialLog("runs/example1.jsonl")
        log.extend(reports)
        again = log.load()
    """

    def __init__(self, file_path: str | Path, *, fsync: bool = False) -> None:
        """Initialize the ledger.

        Args:
            file_path: JSONL file (created on first append).
            fsync: Flush and fsync after each write.
        """
        self.file_path = Path(file_path).expanduser()
        self.fsync = fsync
        self._file: IO[str] | None = None

    def open(self) -> None:
        """Open the file for appending."""
        self.file_path.parent.mkdir(parents=True, exist_ok=True)
        self._file = open(self.file_path, "a", encoding="utf-8")

    def close(self) -> None:
        """Close the file handle."""
        if self._file:
            self._file.close()
            self._file = None

    def __enter__(self) -> TrialLog:
        self.open()
        return self

    def __exit__(self, *exc_info: object) -> None:
        self.close()

    def append(self, report: TrialReport) -> None:
        """Append one report."""
        if not self._file:
            self.open()
        assert self._file is not None
        line = json.dumps(report.to_dict(), separators=(",", ":"))
        self._file.write(line + "\n")
        if self.fsync:
            self._file.flush()
            os.fsync(self._file.fileno())

    def extend(self, reports: Iterable[TrialReport]) -> int:
        """Append several reports; returns how many."""
        count = 0
        for report in reports:
            self.append(report)
            count += 1
        if self._file:
            self._file.flush()
        return count

    def load(self) -> list[TrialReport]:
        """Every readable report in file order."""
        if not self.file_path.exists():
            return []
        reports: list[TrialReport] = []
        skipped = 0
        with open(self.file_path, encoding="utf-8") as f:
            for line in f:
                line = line.strip()
                if not line:
                    continue
                try:
                    reports.append(TrialReport.from_dict(json.loads(line)))
                except (json.JSONDecodeError, ValidationError, TypeError):
                    skipped += 1
        if skipped:
            logger.warning("%s: skipped %d unreadable line(s)", self.file_path, skipped)
        return reports

    def clear(self) -> None:
        """Remove every report."""
        self.close()
        if self.file_path.exists():
            self.file_path.unlink()

    def count(self) -> int:
        """Non-empty lines in the file."""
        if not self.file_path.exists():
            return 0
        with open(self.file_path, encoding="utf-8") as f:
            return sum(1 for line in f if line.strip())
