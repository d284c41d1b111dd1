"""Monte-Carlo harness.

Runs seeded trials of every requested policy on a bounded worker pool,
reduces them deterministically into box-plot statistics and regression
curves, and assembles the RunReport the CLI writes.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
from collections.abc import Callable, Iterable, Sequence
from concurrent.futures import ProcessPoolExecutor
from importlib import resources
from typing import Any, Literal, TypeVar

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from chernsim._version import __version__
from chernsim.core import TestingEnv, TrialReport
from chernsim.design_opt import VerificationDesigns
from chernsim.diagnostics import PredictedTerms, ProblemConstants, compute_constants, predicted_terms
from chernsim.regression import RegressionEnv, RegressionMetrics, checkpoint_schedule, run_regression
from chernsim.testing_policies import PolicyConfig, StoppingRule, run_trial
from chernsim.types import FloatArray

logger = logging.getLogger(__name__)

SCHEMA_DIR = "schemas"
SCHEMA_FILE = "run_report.schema.json"

T = TypeVar("T")
R = TypeVar("R")


def derive_seed(master_seed: int, policy: str, trial: int) -> int:
    """Per-trial seed: 64 bits of ``blake2b(master_seed, policy, trial)``."""
    digest = hashlib.blake2b(f"{master_seed}:{policy}:{trial}".encode(), digest_size=8).digest()
    return int.from_bytes(digest, "little")


class BoxStats(BaseModel):
    """Tukey box-plot statistics of a sample."""

    model_config = ConfigDict(frozen=True)

    count: int
    mean: float
    minimum: float
    q1: float
    median: float
    q3: float
    maximum: float
    whisker_low: float
    whisker_high: float
    outliers: list[float] = Field(default_factory=list)


def tukey_box(values: Iterable[float]) -> BoxStats:
    """Quartiles by Tukey's hinges, whiskers at the extreme points within 1.5 IQR.

    Raises:
        ValueError: Empty sample.
    """
    data = np.sort(np.asarray(list(values), dtype=np.float64))
    n = data.size
    if n == 0:
        raise ValueError("tukey_box needs at least one value")
    q1 = float(np.median(data[: (n + 1) // 2]))
    q3 = float(np.median(data[n // 2 :]))
    spread = 1.5 * (q3 - q1)
    inside = data[(data >= q1 - spread) & (data <= q3 + spread)]
    outliers = data[(data < q1 - spread) | (data > q3 + spread)]
    return BoxStats(
        count=n,
        mean=float(data.mean()),
        minimum=float(data[0]),
        q1=q1,
        median=float(np.median(data)),
        q3=q3,
        maximum=float(data[-1]),
        whisker_low=float(inside[0]),
        whisker_high=float(inside[-1]),
        outliers=[float(v) for v in outliers],
    )


class PolicySummary(BaseModel):
    """Aggregate of one policy's testing trials."""

    policy: str
    trials: int
    stop_time: BoxStats
    stop_times: list[int]
    errors: int
    error_rate: float = Field(ge=0.0, le=1.0)
    truncated: int
    degenerate_rounds: int = 0
    mean_refreshes: float = 0.0


class CurveSummary(BaseModel):
    """Median and quartiles of regression curves across trials, per checkpoint."""

    policy: str
    trials: int
    checkpoints: list[int]
    est_err_q1: list[float]
    est_err_median: list[float]
    est_err_q3: list[float]
    pt_gap_q1: list[float]
    pt_gap_median: list[float]
    pt_gap_q3: list[float]
    support_median: list[float]
    final_est_err: BoxStats
    non_spanning_rounds: int = 0
    diverged_fits: int = 0


class RunReport(BaseModel):
    """Everything one ``test`` or ``regress`` run produces."""

    model_config = ConfigDict(ser_json_inf_nan="constants")

    version: str = __version__
    command: Literal["test", "regress"]
    env: str
    config: dict[str, Any]
    testing: list[PolicySummary] = Field(default_factory=list)
    regression: list[CurveSummary] = Field(default_factory=list)
    constants: ProblemConstants | None = None
    predicted: PredictedTerms | None = None

    def tidy_rows(self) -> list[dict[str, Any]]:
        """Long-format rows ``policy, trial, metric, checkpoint, value``.

        Testing runs emit one ``stop_time`` row per trial; regression runs
        emit the per-checkpoint medians with ``trial`` left empty.
        """
        rows: list[dict[str, Any]] = []
        for summary in self.testing:
            for trial, value in enumerate(summary.stop_times):
                rows.append(
                    {"policy": summary.policy, "trial": trial, "metric": "stop_time", "checkpoint": None, "value": value}
                )
        for curve in self.regression:
            series = {
                "est_err_median": curve.est_err_median,
                "pt_gap_median": curve.pt_gap_median,
                "support_median": curve.support_median,
            }
            for metric, values in series.items():
                for checkpoint, value in zip(curve.checkpoints, values, strict=True):
                    rows.append(
                        {"policy": curve.policy, "trial": None, "metric": metric, "checkpoint": checkpoint, "value": value}
                    )
        return rows


def published_schema() -> dict[str, Any]:
    """The RunReport JSON schema shipped with the package.

    It is the output of ``RunReport.model_json_schema()``, frozen so that
    report consumers can validate against a file; regenerate it with
    ``chernsim schema --model --out chernsim/schemas/run_report.schema.json``
    whenever a report model changes.
    """
    resource = resources.files("chernsim").joinpath(SCHEMA_DIR).joinpath(SCHEMA_FILE)
    schema: dict[str, Any] = json.loads(resource.read_text(encoding="utf-8"))
    return schema


def _map(func: Callable[[T], R], tasks: Sequence[T], workers: int) -> list[R]:
    if workers <= 1 or len(tasks) <= 1:
        return [func(task) for task in tasks]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(func, tasks))


def _chunks(items: list[T], count: int) -> list[list[T]]:
    size = max(1, -(-len(items) // count))
    return [items[i : i + size] for i in range(0, len(items), size)]


def _testing_chunk(task: tuple[TestingEnv, list[PolicyConfig], StoppingRule]) -> list[TrialReport]:
    env, policies, rule = task
    designs = VerificationDesigns(env.table)
    return [run_trial(env, policy, rule, designs) for policy in policies]


def run_testing_trials(
    env: TestingEnv,
    policies: Sequence[PolicyConfig],
    rule: StoppingRule,
    trials: int,
    master_seed: int = 0,
    workers: int = 1,
) -> dict[str, list[TrialReport]]:
    """``trials`` seeded trials of every policy, keyed by policy name in trial order."""
    jobs = [
        dataclasses.replace(policy, seed=derive_seed(master_seed, policy.name, trial))
        for policy in policies
        for trial in range(trials)
    ]
    chunks = _chunks(jobs, max(1, workers) * 4)
    logger.info("running %d testing trials on %s with %d worker(s)", len(jobs), env.name, workers)
    reports = [r for chunk in _map(_testing_chunk, [(env, c, rule) for c in chunks], workers) for r in chunk]
    results: dict[str, list[TrialReport]] = {policy.name: [] for policy in policies}
    for report in reports:
        results[report.policy].append(report)
    return results


def _regression_task(
    task: tuple[RegressionEnv, PolicyConfig, int, list[int], bool],
) -> RegressionMetrics:
    env, policy, horizon, marks, sparsify = task
    return run_regression(env, policy, horizon, checkpoints=marks, sparsify=sparsify)


def run_regression_trials(
    env: RegressionEnv,
    policies: Sequence[PolicyConfig],
    horizon: int,
    trials: int,
    master_seed: int = 0,
    workers: int = 1,
    *,
    per_decade: int = 10,
    sparsify: bool = True,
) -> dict[str, list[RegressionMetrics]]:
    """``trials`` seeded regression runs of every policy, keyed by policy name."""
    marks = checkpoint_schedule(horizon, per_decade)
    tasks = [
        (env, dataclasses.replace(policy, seed=derive_seed(master_seed, policy.name, trial)), horizon, marks, sparsify)
        for policy in policies
        for trial in range(trials)
    ]
    logger.info("running %d regression runs on %s with %d worker(s)", len(tasks), env.name, workers)
    results: dict[str, list[RegressionMetrics]] = {policy.name: [] for policy in policies}
    for metrics in _map(_regression_task, tasks, workers):
        results[metrics.policy].append(metrics)
    return results


def summarize_testing(name: str, reports: Sequence[TrialReport]) -> PolicySummary:
    """Box statistics, error rate and truncation count of one policy."""
    stops = [r.stop_time for r in reports]
    errors = sum(not r.correct for r in reports)
    truncated = sum(r.truncated for r in reports)
    if truncated:
        logger.warning("%s: %d of %d trials truncated", name, truncated, len(reports))
    return PolicySummary(
        policy=name,
        trials=len(reports),
        stop_time=tukey_box(stops),
        stop_times=stops,
        errors=errors,
        error_rate=errors / len(reports),
        truncated=truncated,
        degenerate_rounds=sum(r.degenerate_rounds for r in reports),
        mean_refreshes=float(np.mean([r.refreshes for r in reports])),
    )


def summarize_regression(name: str, runs: Sequence[RegressionMetrics]) -> CurveSummary:
    """Per-checkpoint quartiles of estimation error and loss gap across runs."""
    est = np.array([m.est_err for m in runs])
    gap = np.array([m.pt_gap for m in runs])
    support = np.array([m.support_sizes for m in runs], dtype=np.float64)

    def quantile(values: FloatArray, q: float) -> list[float]:
        return [float(v) for v in np.quantile(values, q, axis=0)]

    return CurveSummary(
        policy=name,
        trials=len(runs),
        checkpoints=list(runs[0].checkpoints),
        est_err_q1=quantile(est, 0.25),
        est_err_median=quantile(est, 0.5),
        est_err_q3=quantile(est, 0.75),
        pt_gap_q1=quantile(gap, 0.25),
        pt_gap_median=quantile(gap, 0.5),
        pt_gap_q3=quantile(gap, 0.75),
        support_median=quantile(support, 0.5),
        final_est_err=tukey_box(est[:, -1]),
        non_spanning_rounds=sum(m.non_spanning_rounds for m in runs),
        diverged_fits=sum(m.diverged_fits for m in runs),
    )


def testing_report(
    env: TestingEnv,
    policies: Sequence[PolicyConfig],
    rule: StoppingRule,
    trials: int,
    master_seed: int = 0,
    workers: int = 1,
    *,
    config: dict[str, Any] | None = None,
    constants: bool = True,
) -> tuple[RunReport, dict[str, list[TrialReport]]]:
    """Run every policy on ``env`` and reduce into a RunReport (plus the raw trials)."""
    results = run_testing_trials(env, policies, rule, trials, master_seed, workers)
    summaries = [summarize_testing(name, reports) for name, reports in results.items()]
    for summary in summaries:
        logger.info(
            "%s: mean stop %.1f, error rate %.3f", summary.policy, summary.stop_time.mean, summary.error_rate
        )
    consts = terms = None
    if constants:
        consts = compute_constants(env.table, env.true_hyp, noise=env.noise)
        terms = predicted_terms(consts, env.table.hyp_count, rule.delta)
    report = RunReport(
        command="test",
        env=env.name,
        config=config or {},
        testing=summaries,
        constants=consts,
        predicted=terms,
    )
    return report, results


def regression_report(
    env: RegressionEnv,
    policies: Sequence[PolicyConfig],
    horizon: int,
    trials: int,
    master_seed: int = 0,
    workers: int = 1,
    *,
    config: dict[str, Any] | None = None,
    per_decade: int = 10,
    sparsify: bool = True,
) -> RunReport:
    """Run every policy's regression trials and reduce into a RunReport."""
    results = run_regression_trials(
        env, policies, horizon, trials, master_seed, workers, per_decade=per_decade, sparsify=sparsify
    )
    curves = [summarize_regression(name, runs) for name, runs in results.items()]
    for curve in curves:
        logger.info("%s: median final error %.4g", curve.policy, curve.final_est_err.median)
    return RunReport(command="regress", env=env.name, config=config or {}, regression=curves)
