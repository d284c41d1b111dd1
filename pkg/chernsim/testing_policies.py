"""Sequential policies for finite active testing.

This module provides the delta-PAC stopping rule, the per-round arm choice
of every policy (Chernoff sampling, Top-2, batched and epsilon-explored
Chernoff sampling, uniform), sampler objects that carry per-trial state,
and the trial loop that ties them together.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Any, Literal, get_args

import numpy as np

from chernsim.core import (
    Design,
    MeansTable,
    TestingEnv,
    TrialHistory,
    TrialReport,
    draw_reward,
    most_likely,
    update_losses,
)
from chernsim.design_opt import VerificationDesigns
from chernsim.exceptions import AssumptionError
from chernsim.types import ArmSampler

logger = logging.getLogger(__name__)

StoppingVariant = Literal["gaussian", "sub_gaussian"]
PolicyKind = Literal["cs", "top2", "batch_cs", "eps_cs", "uniform", "eog"]
POLICY_KINDS: tuple[str, ...] = get_args(PolicyKind)
TESTING_POLICIES: tuple[str, ...] = ("cs", "top2", "batch_cs", "eps_cs", "uniform")
DEFAULT_MAX_ROUNDS = 10_000_000


@dataclass(frozen=True)
class StoppingRule:
    """Stop once the leader beats every competitor's loss by more than beta.

    Attributes:
        delta: Target error probability in (0, 1).
        hyp_count: Number of hypotheses J.
        variant: ``gaussian`` uses ``log(J/delta)``; ``sub_gaussian`` uses
            ``log((1 + eta**2/eta0**2) * J/delta)``.
        eta: Sub-Gaussian range parameter (sub_gaussian only).
        eta0: Smallest squared mean gap of the table (sub_gaussian only).
    """

    delta: float
    hyp_count: int
    variant: StoppingVariant = "gaussian"
    eta: float = 0.0
    eta0: float = 0.0
    beta: float = field(init=False)

    def __post_init__(self) -> None:
        if not 0.0 < self.delta < 1.0:
            raise ValueError(f"delta must lie in (0, 1), got {self.delta}")
        if self.hyp_count < 2:
            raise ValueError("need at least two hypotheses")
        if self.variant == "gaussian":
            beta = math.log(self.hyp_count / self.delta)
        else:
            if self.eta0 <= 0.0:
                raise AssumptionError(
                    "sub_gaussian threshold needs eta0 > 0; use the gaussian rule or eps_cs"
                )
            if self.eta <= 0.0:
                raise ValueError("sub_gaussian threshold needs eta > 0")
            factor = 1.0 + self.eta**2 / self.eta0**2
            beta = math.log(factor * self.hyp_count / self.delta)
        object.__setattr__(self, "beta", beta)

    @classmethod
    def for_table(
        cls,
        table: MeansTable,
        delta: float,
        variant: StoppingVariant = "gaussian",
        eta: float | None = None,
    ) -> StoppingRule:
        """Build a rule for a means table, computing eta0 from it when needed."""
        if variant == "gaussian":
            return cls(delta, table.hyp_count)
        if eta is None:
            raise ValueError("sub_gaussian threshold needs eta")
        return cls(delta, table.hyp_count, variant, eta, table.eta0())


@dataclass(frozen=True)
class PolicyConfig:
    """Which policy to run and how.

    Attributes:
        kind: Policy family (``eog`` runs in regression only).
        batch_size: Design refresh period B (batch_cs only).
        max_rounds: Safety cap; trials reaching it are reported truncated.
        seed: Seed of the trial's random stream.
        refresh_on_leader_change: batch_cs also refreshes when the leading
            hypothesis changes (set False for a strictly periodic refresh).
    """

    kind: PolicyKind
    batch_size: int = 1
    max_rounds: int = DEFAULT_MAX_ROUNDS
    seed: int = 0
    refresh_on_leader_change: bool = True

    def __post_init__(self) -> None:
        if self.kind not in POLICY_KINDS:
            raise ValueError(f"unknown policy {self.kind!r}")
        if self.batch_size < 1:
            raise ValueError("batch size must be at least 1")
        if self.max_rounds < 1:
            raise ValueError("max_rounds must be at least 1")

    @classmethod
    def parse(cls, text: str, **kwargs: Any) -> PolicyConfig:
        """Parse ``cs``, ``top2``, ``eps_cs``, ``uniform``, ``eog`` or ``batch_cs:<B>``.

        Raises:
            ValueError: Unknown policy or malformed batch size.
        """
        kind, sep, arg = text.strip().partition(":")
        if kind not in POLICY_KINDS:
            raise ValueError(f"unknown policy {text!r} (known: {', '.join(POLICY_KINDS)})")
        if kind == "batch_cs":
            if not sep or not arg.isdigit():
                raise ValueError(f"batch policy needs a size, e.g. batch_cs:10, got {text!r}")
            kwargs["batch_size"] = int(arg)
        elif sep:
            raise ValueError(f"policy {kind!r} takes no argument")
        return cls(kind, **kwargs)  # type: ignore[arg-type]

    @property
    def name(self) -> str:
        """Label used in reports, e.g. ``batch_cs:10``."""
        return f"batch_cs:{self.batch_size}" if self.kind == "batch_cs" else self.kind


@dataclass(frozen=True)
class BatchCache:
    """Design reused between batch refreshes."""

    design: Design
    hyp: int
    refreshes: int = 1


def _uniform_arm(table: MeansTable, rng: np.random.Generator) -> int:
    return int(rng.integers(table.arm_count))


def uniform_next_arm(hist: TrialHistory, env_means: MeansTable, rng: np.random.Generator) -> int:
    """Uniform baseline: every arm with probability 1/n."""
    return _uniform_arm(env_means, rng)


def cs_next_arm(
    hist: TrialHistory,
    env_means: MeansTable,
    rng: np.random.Generator,
    designs: VerificationDesigns | None = None,
) -> int:
    """Chernoff sampling: draw from the verification design of the current leader.

    The first round (empty history) picks a uniformly random arm.
    """
    if hist.t == 0:
        return _uniform_arm(env_means, rng)
    leader, _ = most_likely(hist, rng)
    designs = designs if designs is not None else VerificationDesigns(env_means)
    return designs.design(leader).sample(rng)


def top2_next_arm(hist: TrialHistory, env_means: MeansTable, rng: np.random.Generator) -> int:
    """Pull an arm that best separates the leader from the runner-up.

    Ties among maximizing arms are broken uniformly at random.
    """
    if hist.t == 0:
        return _uniform_arm(env_means, rng)
    leader, runner = most_likely(hist, rng)
    diffs = env_means.means[:, leader] - env_means.means[:, runner]
    gaps = diffs * diffs
    best = np.flatnonzero(gaps == gaps.max())
    if best.size == 1:
        return int(best[0])
    return int(best[rng.integers(best.size)])


def eps_cs_next_arm(
    hist: TrialHistory,
    env_means: MeansTable,
    rng: np.random.Generator,
    designs: VerificationDesigns | None = None,
) -> int:
    """Chernoff sampling with forced exploration at rate ``1/sqrt(t)``."""
    t = hist.t + 1
    if rng.random() < 1.0 / math.sqrt(t):
        return _uniform_arm(env_means, rng)
    return cs_next_arm(hist, env_means, rng, designs)


def batch_cs_next_arm(
    hist: TrialHistory,
    env_means: MeansTable,
    cache: BatchCache | None,
    batch_size: int,
    rng: np.random.Generator,
    designs: VerificationDesigns | None = None,
    *,
    refresh_on_leader_change: bool = True,
) -> tuple[int, BatchCache | None]:
    """Chernoff sampling that refreshes its design only every ``batch_size`` rounds.

    A refresh also happens on the first designed round (no cache yet) and,
    unless disabled, whenever the leading hypothesis changes.

    Returns:
        The arm and the (possibly refreshed) cache.
    """
    if batch_size < 1:
        raise ValueError("batch size must be at least 1")
    if hist.t == 0:
        return _uniform_arm(env_means, rng), cache
    t = hist.t + 1
    leader, _ = most_likely(hist, rng)
    stale = cache is None or t % batch_size == 0
    if cache is not None and refresh_on_leader_change and leader != cache.hyp:
        stale = True
    if stale:
        designs = designs if designs is not None else VerificationDesigns(env_means)
        refreshes = cache.refreshes + 1 if cache is not None else 1
        cache = BatchCache(designs.design(leader), leader, refreshes)
        logger.debug("round %d: batch design refreshed for hypothesis %d", t, leader)
    assert cache is not None
    return cache.design.sample(rng), cache


def check_stop(hist: TrialHistory, rule: StoppingRule) -> int | None:
    """Hypothesis to declare, or None to keep sampling."""
    if hist.t == 0:
        raise ValueError("check_stop needs at least one observation")
    losses = hist.cum_sq_err
    leader, runner = np.argpartition(losses, 1)[:2]
    if losses[runner] - losses[leader] > rule.beta:
        return int(leader)
    return None


class UniformSampler:
    """Uniform baseline sampler."""

    name = "uniform"

    def __init__(self, table: MeansTable) -> None:
        self.table = table

    def next_arm(self, hist: TrialHistory, rng: np.random.Generator) -> int:
        return uniform_next_arm(hist, self.table, rng)

    def stats(self) -> dict[str, Any]:
        return {}


class ChernoffSampler:
    """Chernoff sampling over memoized verification designs."""

    name = "cs"

    def __init__(self, table: MeansTable, designs: VerificationDesigns | None = None) -> None:
        self.table = table
        self.designs = designs if designs is not None else VerificationDesigns(table)
        self._degenerate_base = self.designs.degenerate_hits

    def next_arm(self, hist: TrialHistory, rng: np.random.Generator) -> int:
        return cs_next_arm(hist, self.table, rng, self.designs)

    def stats(self) -> dict[str, Any]:
        return {"degenerate_rounds": self.designs.degenerate_hits - self._degenerate_base}


class EpsilonChernoffSampler(ChernoffSampler):
    """Chernoff sampling with ``1/sqrt(t)`` uniform exploration."""

    name = "eps_cs"

    def next_arm(self, hist: TrialHistory, rng: np.random.Generator) -> int:
        return eps_cs_next_arm(hist, self.table, rng, self.designs)


class TopTwoSampler:
    """Top-2 sampler."""

    name = "top2"

    def __init__(self, table: MeansTable) -> None:
        self.table = table

    def next_arm(self, hist: TrialHistory, rng: np.random.Generator) -> int:
        return top2_next_arm(hist, self.table, rng)

    def stats(self) -> dict[str, Any]:
        return {}


class BatchChernoffSampler(ChernoffSampler):
    """Chernoff sampling with a design cache refreshed every B rounds."""

    def __init__(
        self,
        table: MeansTable,
        batch_size: int,
        designs: VerificationDesigns | None = None,
        *,
        refresh_on_leader_change: bool = True,
    ) -> None:
        super().__init__(table, designs)
        self.batch_size = batch_size
        self.refresh_on_leader_change = refresh_on_leader_change
        self.cache: BatchCache | None = None
        self.name = f"batch_cs:{batch_size}"

    def next_arm(self, hist: TrialHistory, rng: np.random.Generator) -> int:
        arm, self.cache = batch_cs_next_arm(
            hist,
            self.table,
            self.cache,
            self.batch_size,
            rng,
            self.designs,
            refresh_on_leader_change=self.refresh_on_leader_change,
        )
        return arm

    def stats(self) -> dict[str, Any]:
        refreshes = self.cache.refreshes if self.cache is not None else 0
        return {**super().stats(), "refreshes": refreshes}


def make_sampler(
    config: PolicyConfig,
    table: MeansTable,
    designs: VerificationDesigns | None = None,
) -> ArmSampler:
    """Build the sampler described by ``config`` for ``table``.

    Raises:
        ValueError: A regression-only policy.
    """
    if config.kind not in TESTING_POLICIES:
        raise ValueError(f"policy {config.kind!r} has no testing counterpart")
    if config.kind == "cs":
        return ChernoffSampler(table, designs)
    if config.kind == "eps_cs":
        return EpsilonChernoffSampler(table, designs)
    if config.kind == "batch_cs":
        return BatchChernoffSampler(
            table,
            config.batch_size,
            designs,
            refresh_on_leader_change=config.refresh_on_leader_change,
        )
    if config.kind == "top2":
        return TopTwoSampler(table)
    return UniformSampler(table)


def run_trial(
    env: TestingEnv,
    policy: PolicyConfig,
    rule: StoppingRule,
    designs: VerificationDesigns | None = None,
) -> TrialReport:
    """Sample, observe, update and test until a hypothesis is declared.

    A trial that reaches ``policy.max_rounds`` without declaring is
    reported as truncated, declaring the current leader.
    """
    table = env.table
    env.noise.check_envelope(table.means)
    rng = np.random.default_rng(policy.seed)
    sampler = make_sampler(policy, table, designs)
    hist = TrialHistory.empty(table.hyp_count, policy.seed)

    declared: int | None = None
    while hist.t < policy.max_rounds:
        arm = sampler.next_arm(hist, rng)
        obs = draw_reward(table, env.true_hyp, arm, env.noise, rng)
        update_losses(hist, table, arm, obs)
        declared = check_stop(hist, rule)
        if declared is not None:
            break

    truncated = declared is None
    if declared is None:
        declared, _ = most_likely(hist, rng)
        logger.warning(
            "%s on %s truncated at %d rounds (seed %d)", policy.name, env.name, hist.t, policy.seed
        )
    ordered = np.sort(hist.cum_sq_err)
    stats = sampler.stats()
    return TrialReport(
        stop_time=hist.t,
        declared_hyp=declared,
        correct=declared == env.true_hyp,
        arm_counts=hist.arm_counts(table.arm_count),
        seed=policy.seed,
        policy=policy.name,
        truncated=truncated,
        degenerate_rounds=int(stats.get("degenerate_rounds", 0)),
        refreshes=int(stats.get("refreshes", 0)),
        final_gap=float(ordered[1] - ordered[0]),
    )
