"""Domain types and per-round primitives for finite active testing.

This module provides the means table of a finite environment, the noise
model, sampling designs, the running loss ledger of a trial, and the
per-trial report, plus the reward / loss-update / leader primitives that
every policy is built from.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Any, Literal

import numpy as np
import numpy.typing as npt
from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy.stats import truncnorm

from chernsim.exceptions import DimensionError
from chernsim.types import FloatArray

logger = logging.getLogger(__name__)

NoiseKind = Literal["gaussian", "bounded_uniform", "truncated_gaussian"]

DEFAULT_STD = math.sqrt(0.5)
ETA_PROXY_FACTOR = 16.0
ETA_PROXY_NOISELESS = 1.0
SUM_TOL = 1e-9


def _frozen(values: npt.ArrayLike, ndim: int) -> FloatArray:
    arr = np.array(values, dtype=np.float64, copy=True)
    if arr.ndim != ndim:
        raise DimensionError(f"expected a {ndim}-d array, got shape {arr.shape}")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class MeansTable:
    """The n x J matrix of arm means under every hypothesis.

    Row ``i`` holds ``mu_i(theta_j)`` for every hypothesis ``j``.
    """

    means: FloatArray

    def __post_init__(self) -> None:
        arr = _frozen(self.means, 2)
        if arr.shape[0] < 1 or arr.shape[1] < 2:
            raise DimensionError(f"need n >= 1 arms and J >= 2 hypotheses, got {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise DimensionError("means table has non-finite entries")
        object.__setattr__(self, "means", arr)

    @property
    def arm_count(self) -> int:
        """Number of arms n."""
        return int(self.means.shape[0])

    @property
    def hyp_count(self) -> int:
        """Number of hypotheses J."""
        return int(self.means.shape[1])

    def check_arm(self, arm: int) -> None:
        if not 0 <= arm < self.arm_count:
            raise DimensionError(f"arm {arm} out of range [0, {self.arm_count})")

    def check_hyp(self, hyp: int) -> None:
        if not 0 <= hyp < self.hyp_count:
            raise DimensionError(f"hypothesis {hyp} out of range [0, {self.hyp_count})")

    def gaps_sq(self, hyp: int) -> FloatArray:
        """Squared mean gaps between ``hyp`` and every alternative.

        Returns:
            (J-1) x n matrix; row ``r`` is ``(mu_i(hyp) - mu_i(alt_r))**2``
            over arms, alternatives in increasing index order.
        """
        self.check_hyp(hyp)
        diffs = self.means[:, [hyp]] - np.delete(self.means, hyp, axis=1)
        return np.ascontiguousarray((diffs * diffs).T)

    def eta0(self) -> float:
        """Smallest squared gap over arms and hypothesis pairs."""
        diffs = self.means[:, :, None] - self.means[:, None, :]
        upper = np.triu_indices(self.hyp_count, k=1)
        return float(np.min(diffs[:, upper[0], upper[1]] ** 2))


@dataclass(frozen=True)
class NoiseSpec:
    """Observation noise model.

    Attributes:
        kind: Noise family.
        std: Standard deviation (gaussian, truncated_gaussian).
        bound: Half-width (bounded_uniform) or truncation half-range
            (truncated_gaussian); unused for gaussian.
        eta: Range parameter; rewards of bounded kinds stay inside
            ``[-sqrt(eta)/2, sqrt(eta)/2]``. For gaussian noise it is a
            diagnostic proxy defaulting to ``16 * std**2``, or to
            ``ETA_PROXY_NOISELESS`` when ``std`` is 0 (the proxy must stay
            positive); pass ``eta`` to override either default.
    """

    kind: NoiseKind = "gaussian"
    std: float = DEFAULT_STD
    bound: float = 0.0
    eta: float | None = None

    def __post_init__(self) -> None:
        if self.std < 0 or self.bound < 0:
            raise ValueError("noise std and bound must be non-negative")
        if self.kind == "gaussian" and self.eta is None:
            proxy = ETA_PROXY_FACTOR * self.std**2
            if proxy <= 0:
                logger.debug("noiseless gaussian: eta proxy set to %s", ETA_PROXY_NOISELESS)
                proxy = ETA_PROXY_NOISELESS
            object.__setattr__(self, "eta", proxy)
        if self.eta is None:
            raise ValueError(f"{self.kind} noise needs an explicit eta")
        if self.eta <= 0:
            raise ValueError("eta must be positive")
        if self.kind == "bounded_uniform" and self.bound > self.envelope:
            raise ValueError("uniform half-width exceeds the eta envelope")
        if self.kind == "truncated_gaussian" and self.bound <= 0:
            raise ValueError("truncated gaussian needs a positive half-range")

    @classmethod
    def gaussian(cls, std: float = DEFAULT_STD, eta: float | None = None) -> NoiseSpec:
        return cls("gaussian", std=std, eta=eta)

    @classmethod
    def bounded_uniform(cls, half_width: float, eta: float) -> NoiseSpec:
        return cls("bounded_uniform", std=half_width / math.sqrt(3.0), bound=half_width, eta=eta)

    @classmethod
    def truncated_gaussian(cls, std: float, half_range: float, eta: float) -> NoiseSpec:
        return cls("truncated_gaussian", std=std, bound=half_range, eta=eta)

    @property
    def is_bounded(self) -> bool:
        return self.kind != "gaussian"

    @property
    def is_eta_proxy(self) -> bool:
        """True when eta is the gaussian diagnostic convention, not a real bound."""
        return self.kind == "gaussian"

    @property
    def envelope(self) -> float:
        """Half-length ``sqrt(eta)/2`` of the reward range."""
        assert self.eta is not None
        return math.sqrt(self.eta) / 2.0

    @property
    def variance(self) -> float:
        """Per-observation noise variance."""
        if self.kind == "truncated_gaussian":
            if self.std == 0.0:
                return 0.0
            a = self.bound / self.std
            return float(truncnorm.var(-a, a, scale=self.std))
        if self.kind == "bounded_uniform":
            return self.bound**2 / 3.0
        return self.std**2

    def check_envelope(self, means: npt.ArrayLike) -> None:
        """Ensure every ``mean +- bound`` fits in the reward range (bounded kinds only)."""
        if not self.is_bounded:
            return
        reach = float(np.max(np.abs(np.asarray(means)))) + self.bound
        if reach > self.envelope + 1e-12:
            raise DimensionError(
                f"means reach {reach:.6g} but eta={self.eta} bounds rewards to "
                f"+-{self.envelope:.6g}"
            )

    def sample(self, rng: np.random.Generator) -> float:
        """One zero-mean noise draw."""
        if self.kind == "gaussian":
            return float(rng.normal(0.0, self.std))
        if self.kind == "bounded_uniform":
            return float(rng.uniform(-self.bound, self.bound))
        if self.std == 0.0:
            return 0.0
        a = self.bound / self.std
        return float(truncnorm.rvs(-a, a, scale=self.std, random_state=rng))


@dataclass(frozen=True, eq=False)
class Design:
    """Probability mass function over arms.

    Attributes:
        probs: Non-negative weights summing to 1 (within 1e-9).
        support_eps: Weights at or below this count as zero.
    """

    probs: FloatArray
    support_eps: float = 1e-12
    _cdf: FloatArray = field(init=False, repr=False)

    def __post_init__(self) -> None:
        arr = np.array(self.probs, dtype=np.float64, copy=True)
        if arr.ndim != 1 or arr.size == 0:
            raise DimensionError(f"design must be a non-empty vector, got shape {arr.shape}")
        if np.any(arr < -SUM_TOL) or not np.all(np.isfinite(arr)):
            raise ValueError("design weights must be finite and non-negative")
        arr = np.clip(arr, 0.0, None)
        if abs(float(arr.sum()) - 1.0) > SUM_TOL:
            raise ValueError(f"design weights sum to {arr.sum():.12g}, not 1")
        arr /= arr.sum()
        arr.setflags(write=False)
        cdf = np.cumsum(arr)
        cdf[-1] = 1.0
        object.__setattr__(self, "probs", arr)
        object.__setattr__(self, "_cdf", cdf)

    @classmethod
    def from_weights(cls, weights: npt.ArrayLike, support_eps: float = 1e-12) -> Design:
        """Normalize non-negative weights into a design."""
        w = np.clip(np.asarray(weights, dtype=np.float64), 0.0, None)
        total = float(w.sum())
        if total <= 0.0:
            raise ValueError("weights have no positive mass")
        return cls(w / total, support_eps)

    @classmethod
    def uniform(cls, n: int) -> Design:
        return cls(np.full(n, 1.0 / n))

    @classmethod
    def point(cls, n: int, arm: int) -> Design:
        probs = np.zeros(n)
        probs[arm] = 1.0
        return cls(probs)

    @property
    def n(self) -> int:
        return int(self.probs.size)

    @property
    def support(self) -> npt.NDArray[np.int64]:
        """Indices carrying more than ``support_eps`` mass."""
        return np.flatnonzero(self.probs > self.support_eps)

    @property
    def support_size(self) -> int:
        return int(self.support.size)

    def mix(self, other: Design, weight: float) -> Design:
        """``(1 - weight) * self + weight * other``."""
        return Design.from_weights((1.0 - weight) * self.probs + weight * other.probs, self.support_eps)

    def sample(self, rng: np.random.Generator) -> int:
        """Draw one arm index."""
        return int(np.searchsorted(self._cdf, rng.random(), side="right"))

    def to_list(self) -> list[float]:
        return [float(x) for x in self.probs]


@dataclass
class TrialHistory:
    """Arms pulled, rewards seen, and the running squared-error ledger.

    ``cum_sq_err[j]`` is ``sum_s (obs_s - mu_{arm_s}(theta_j))**2``.
    """

    arms: list[int]
    obs: list[float]
    cum_sq_err: FloatArray
    rng_seed: int = 0

    @classmethod
    def empty(cls, hyp_count: int, rng_seed: int = 0) -> TrialHistory:
        return cls([], [], np.zeros(hyp_count), rng_seed)

    @property
    def t(self) -> int:
        """Number of completed rounds."""
        return len(self.arms)

    def recompute_losses(self, table: MeansTable) -> FloatArray:
        """Rebuild the ledger from scratch (O(tJ))."""
        if not self.arms:
            return np.zeros(table.hyp_count)
        rows = table.means[np.asarray(self.arms)]
        resid = np.asarray(self.obs)[:, None] - rows
        return np.sum(resid * resid, axis=0)

    def arm_counts(self, n: int) -> list[int]:
        return [int(c) for c in np.bincount(np.asarray(self.arms, dtype=np.int64), minlength=n)]


class TrialReport(BaseModel):
    """Outcome of one finite-testing trial."""

    model_config = ConfigDict(frozen=True)

    stop_time: int = Field(ge=1)
    declared_hyp: int = Field(ge=0)
    correct: bool
    arm_counts: list[int]
    seed: int
    policy: str = ""
    truncated: bool = False
    degenerate_rounds: int = 0
    refreshes: int = 0
    final_gap: float = 0.0

    @model_validator(mode="after")
    def _counts_match_stop_time(self) -> TrialReport:
        if sum(self.arm_counts) != self.stop_time:
            raise ValueError(
                f"arm counts sum to {sum(self.arm_counts)}, stop time is {self.stop_time}"
            )
        return self

    def to_dict(self) -> dict[str, Any]:
        """Serialize the report to a dictionary."""
        return self.model_dump()

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> TrialReport:
        """Deserialize a report from a dictionary."""
        return cls.model_validate(data)


def draw_reward(
    env_means: MeansTable,
    true_hyp: int,
    arm: int,
    noise: NoiseSpec,
    rng: np.random.Generator,
) -> float:
    """Observe arm ``arm`` under hypothesis ``true_hyp``: its mean plus one noise draw."""
    env_means.check_arm(arm)
    env_means.check_hyp(true_hyp)
    value = float(env_means.means[arm, true_hyp]) + noise.sample(rng)
    if noise.is_bounded:
        value = min(max(value, -noise.envelope), noise.envelope)
    return value


def update_losses(
    hist: TrialHistory,
    env_means: MeansTable,
    arm: int,
    obs: float,
) -> TrialHistory:
    """Append ``(arm, obs)`` and add its squared error to every hypothesis.

    The history is updated in place and returned.
    """
    env_means.check_arm(arm)
    resid = obs - env_means.means[arm]
    hist.cum_sq_err = hist.cum_sq_err + resid * resid
    hist.arms.append(arm)
    hist.obs.append(obs)
    return hist


def _pick(candidates: npt.NDArray[np.int64], rng: np.random.Generator) -> int:
    if candidates.size == 1:
        return int(candidates[0])
    return int(candidates[rng.integers(candidates.size)])


def most_likely(hist: TrialHistory, rng: np.random.Generator) -> tuple[int, int]:
    """Leader and runner-up by cumulative squared error.

    Exact ties are broken uniformly at random with ``rng``.
    """
    if hist.t == 0:
        raise ValueError("most_likely needs at least one observation")
    losses = hist.cum_sq_err
    tied = np.flatnonzero(losses == losses.min())
    if tied.size > 1:
        pair = rng.choice(tied, size=2, replace=False)
        return int(pair[0]), int(pair[1])
    leader = int(tied[0])
    rest = losses.copy()
    rest[leader] = np.inf
    return leader, _pick(np.flatnonzero(rest == rest.min()), rng)


@dataclass(frozen=True, eq=False)
class TestingEnv:
    """A finite testing environment: means table, true hypothesis, noise."""

    __test__ = False

    name: str
    table: MeansTable
    true_hyp: int
    noise: NoiseSpec = field(default_factory=NoiseSpec)

    def __post_init__(self) -> None:
        self.table.check_hyp(self.true_hyp)
