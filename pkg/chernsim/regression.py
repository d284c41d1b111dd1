"""Active regression over smooth parameter spaces.

Parametric mean models with analytic gradients, damped Gauss-Newton
estimation of the current parameter, the Chernoff sampling loop driven by
the minimum-eigenvalue design, and the running expected-loss metric.
"""

from __future__ import annotations

import dataclasses
import itertools
import logging
import math
from abc import ABC, abstractmethod
from collections.abc import Sequence
from dataclasses import dataclass, field
from typing import Any, ClassVar

import numpy as np
import numpy.typing as npt
import scipy.linalg
from pydantic import BaseModel, Field
from scipy.special import expit

from chernsim.core import Design, NoiseSpec
from chernsim.design_opt import EigInstance, solve_min_eig_design, sparsify_design
from chernsim.exceptions import DimensionError
from chernsim.testing_policies import PolicyConfig
from chernsim.types import FloatArray

logger = logging.getLogger(__name__)

REGRESSION_POLICIES = ("cs", "eps_cs", "uniform", "batch_cs", "eog")
EOG_EPSILON = 0.1

LM_LAMBDA0 = 1e-3
LM_LAMBDA_MIN = 1e-12
LM_LAMBDA_MAX = 1e12
LM_MAX_FAILURES = 10
FIT_TOL = 1e-8
FIT_MAX_ITERS = 200

# Relative gap and iteration cap of the warm-started per-round design solve.
ROUND_DESIGN_TOL = 1e-3
ROUND_DESIGN_ITERS = 50


def _features(values: npt.ArrayLike) -> FloatArray:
    arr = np.array(values, dtype=np.float64, copy=True)
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise DimensionError(f"features must be an n x k matrix, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise DimensionError("features have non-finite entries")
    arr.setflags(write=False)
    return arr


class ParamModel(ABC):
    """Arm means ``mu_i(theta)`` over a parameter vector.

    ``theta`` has ``theta_size`` entries; the first ``dim`` are continuous
    and carry gradients, any remaining ones are fixed discrete choices.
    ``single_index`` models have means that depend on ``x_i^T theta`` only.
    """

    kind: ClassVar[str]
    single_index: ClassVar[bool] = False

    def __init__(self, features: npt.ArrayLike) -> None:
        self.features = _features(features)

    @property
    def arm_count(self) -> int:
        return int(self.features.shape[0])

    @property
    @abstractmethod
    def dim(self) -> int:
        """Number of continuous parameters d."""

    @property
    def theta_size(self) -> int:
        return self.dim

    def check_theta(self, theta: npt.ArrayLike) -> FloatArray:
        arr = np.asarray(theta, dtype=np.float64)
        if arr.shape != (self.theta_size,):
            raise DimensionError(f"{self.kind} expects theta of size {self.theta_size}, got {arr.shape}")
        return arr

    @abstractmethod
    def means(self, theta: npt.ArrayLike) -> FloatArray:
        """Every arm's mean, shape (n,)."""

    @abstractmethod
    def jacobian(self, theta: npt.ArrayLike) -> FloatArray:
        """Gradient of every arm's mean, shape (n, dim)."""

    def mean(self, arm: int, theta: npt.ArrayLike) -> float:
        return float(self.means(theta)[arm])

    def grad(self, arm: int, theta: npt.ArrayLike) -> FloatArray:
        return self.jacobian(theta)[arm]

    def init_theta(self, rng: np.random.Generator) -> FloatArray:
        """Initial estimate before any data."""
        return np.zeros(self.theta_size)

    def distance(self, theta: npt.ArrayLike, theta_star: npt.ArrayLike) -> float:
        """Estimation error ``||theta - theta_star||_2``."""
        return float(np.linalg.norm(self.check_theta(theta) - self.check_theta(theta_star)))

    def starts(self, init: FloatArray) -> list[FloatArray]:
        """Starting points for a least-squares fit from ``init``."""
        return [init]


class LinearModel(ParamModel):
    """``mu_i = x_i^T theta``."""

    kind = "linear"
    single_index = True

    @property
    def dim(self) -> int:
        return int(self.features.shape[1])

    def means(self, theta: npt.ArrayLike) -> FloatArray:
        return self.features @ self.check_theta(theta)

    def jacobian(self, theta: npt.ArrayLike) -> FloatArray:
        self.check_theta(theta)
        return np.array(self.features)


class LogisticModel(ParamModel):
    """``mu_i = 1 / (1 + exp(-x_i^T theta))``."""

    kind = "logistic"
    single_index = True

    @property
    def dim(self) -> int:
        return int(self.features.shape[1])

    def means(self, theta: npt.ArrayLike) -> FloatArray:
        return expit(self.features @ self.check_theta(theta))

    def jacobian(self, theta: npt.ArrayLike) -> FloatArray:
        mu = self.means(theta)
        return (mu * (1.0 - mu))[:, None] * self.features


class ReluNetModel(ParamModel):
    """Two hidden ReLU units over 2-D inputs.

    ``theta = (w1[0], w1[1], b1, w2[0], w2[1], b2, c1, c2)`` with output
    weights ``c1, c2`` in {-1, 1}. The ReLU derivative at 0 is 0.
    """

    kind = "relu_net"
    SIGN_PATTERNS: ClassVar[tuple[tuple[float, float], ...]] = tuple(
        itertools.product((1.0, -1.0), repeat=2)
    )

    def __init__(self, features: npt.ArrayLike) -> None:
        super().__init__(features)
        if self.features.shape[1] != 2:
            raise DimensionError(f"relu_net inputs must be 2-d, got {self.features.shape[1]}")

    @property
    def dim(self) -> int:
        return 6

    @property
    def theta_size(self) -> int:
        return 8

    def check_theta(self, theta: npt.ArrayLike) -> FloatArray:
        arr = super().check_theta(theta)
        if not np.all(np.isin(arr[6:], (-1.0, 1.0))):
            raise DimensionError(f"output weights must be +-1, got {arr[6:]}")
        return arr

    def _preactivations(self, theta: FloatArray) -> tuple[FloatArray, FloatArray]:
        pre1 = self.features @ theta[0:2] + theta[2]
        pre2 = self.features @ theta[3:5] + theta[5]
        return pre1, pre2

    def means(self, theta: npt.ArrayLike) -> FloatArray:
        th = self.check_theta(theta)
        pre1, pre2 = self._preactivations(th)
        return th[6] * np.maximum(pre1, 0.0) + th[7] * np.maximum(pre2, 0.0)

    def jacobian(self, theta: npt.ArrayLike) -> FloatArray:
        th = self.check_theta(theta)
        pre1, pre2 = self._preactivations(th)
        on1 = th[6] * (pre1 > 0.0)
        on2 = th[7] * (pre2 > 0.0)
        return np.column_stack(
            [
                on1[:, None] * self.features,
                on1,
                on2[:, None] * self.features,
                on2,
            ]
        )

    def init_theta(self, rng: np.random.Generator) -> FloatArray:
        return np.concatenate([0.1 * rng.standard_normal(6), [1.0, 1.0]])

    def swapped(self, theta: npt.ArrayLike) -> FloatArray:
        """Same network with the hidden units exchanged."""
        th = self.check_theta(theta)
        return np.concatenate([th[3:6], th[0:3], th[7:8], th[6:7]])

    def distance(self, theta: npt.ArrayLike, theta_star: npt.ArrayLike) -> float:
        star = self.check_theta(theta_star)
        th = self.check_theta(theta)
        return float(min(np.linalg.norm(th - star), np.linalg.norm(self.swapped(th) - star)))

    def starts(self, init: FloatArray) -> list[FloatArray]:
        return [np.concatenate([init[:6], signs]) for signs in self.SIGN_PATTERNS]


@dataclass(frozen=True)
class FitResult:
    """Outcome of a least-squares fit.

    Attributes:
        theta: Best parameter found.
        loss: Sum of squared residuals at ``theta``.
        grad_norm: ``||grad L(theta)||``.
        iters: Damped Gauss-Newton iterations over all starts.
        converged: Gradient test met.
        diverged: The damped system could not be solved ``LM_MAX_FAILURES``
            times in a row.
        stalled: Damping passed ``LM_LAMBDA_MAX`` without a decrease, which
            happens at a local minimum or on a ReLU kink; ``theta`` is the
            best point reached.
    """

    theta: FloatArray
    loss: float
    grad_norm: float
    iters: int
    converged: bool
    diverged: bool = False
    stalled: bool = False


def _residuals(
    model: ParamModel, arms: npt.NDArray[np.int64], obs: FloatArray, theta: FloatArray
) -> FloatArray:
    return obs - model.means(theta)[arms]


def _damped_gauss_newton(
    model: ParamModel,
    arms: npt.NDArray[np.int64],
    obs: FloatArray,
    init: FloatArray,
    tol: float,
    max_iters: int,
) -> FitResult:
    d = model.dim
    theta = init.copy()
    resid = _residuals(model, arms, obs, theta)
    loss = float(resid @ resid)
    lam = LM_LAMBDA0
    failures = 0
    grad_norm = math.inf
    for it in range(max_iters):
        jac = model.jacobian(theta)[arms]
        jtr = jac.T @ resid
        grad_norm = 2.0 * float(np.linalg.norm(jtr))
        if grad_norm <= tol * (1.0 + loss):
            return FitResult(theta, loss, grad_norm, it, True)
        normal = jac.T @ jac
        while True:
            try:
                step = scipy.linalg.solve(normal + lam * np.eye(d), jtr, assume_a="pos")
            except (np.linalg.LinAlgError, ValueError):
                step = None
            if step is None or not np.all(np.isfinite(step)):
                failures += 1
                if failures >= LM_MAX_FAILURES:
                    return FitResult(theta, loss, grad_norm, it + 1, False, diverged=True)
            else:
                failures = 0
                candidate = theta.copy()
                candidate[:d] += step
                cand_resid = _residuals(model, arms, obs, candidate)
                cand_loss = float(cand_resid @ cand_resid)
                if cand_loss < loss:
                    theta, resid, loss = candidate, cand_resid, cand_loss
                    lam = max(lam * 0.1, LM_LAMBDA_MIN)
                    break
            lam *= 10.0
            if lam > LM_LAMBDA_MAX:
                return FitResult(theta, loss, grad_norm, it + 1, False, stalled=True)
    jac = model.jacobian(theta)[arms]
    grad_norm = 2.0 * float(np.linalg.norm(jac.T @ resid))
    return FitResult(theta, loss, grad_norm, max_iters, grad_norm <= tol * (1.0 + loss))


def fit_least_squares(
    model: ParamModel,
    arms: Sequence[int] | npt.NDArray[np.int64],
    obs: Sequence[float] | FloatArray,
    init: npt.ArrayLike | None = None,
    *,
    tol: float = FIT_TOL,
    max_iters: int = FIT_MAX_ITERS,
) -> FitResult:
    """Minimize ``sum_s (obs_s - mu_{arm_s}(theta))**2``.

    Linear models use the minimum-norm least-squares solution. Other models
    run damped Gauss-Newton from ``init`` (one start per discrete pattern
    for ReLU nets) and return the lowest-loss result.

    Raises:
        ValueError: No observations.
    """
    arm_idx = np.asarray(arms, dtype=np.int64)
    y = np.asarray(obs, dtype=np.float64)
    if arm_idx.size == 0:
        raise ValueError("fit_least_squares needs at least one observation")
    if arm_idx.shape != y.shape:
        raise DimensionError(f"{arm_idx.size} arms but {y.size} observations")
    if np.any(arm_idx < 0) or np.any(arm_idx >= model.arm_count):
        raise DimensionError("arm index out of range")

    if isinstance(model, LinearModel):
        design = model.features[arm_idx]
        theta, *_ = np.linalg.lstsq(design, y, rcond=None)
        resid = y - design @ theta
        grad_norm = 2.0 * float(np.linalg.norm(design.T @ resid))
        return FitResult(theta, float(resid @ resid), grad_norm, 1, True)

    start = model.check_theta(init) if init is not None else np.zeros(model.theta_size)
    best: FitResult | None = None
    iters = 0
    for begin in model.starts(start.copy()):
        result = _damped_gauss_newton(model, arm_idx, y, begin, tol, max_iters)
        iters += result.iters
        if best is None or result.loss < best.loss:
            best = result
    assert best is not None
    if best.diverged:
        logger.debug("least-squares fit diverged (loss %.6g, |grad| %.3g)", best.loss, best.grad_norm)
    return dataclasses.replace(best, iters=iters)


@dataclass(frozen=True, eq=False)
class RegressionEnv:
    """A regression environment: mean model, true parameter, noise."""

    name: str
    model: ParamModel
    theta_star: FloatArray
    noise: NoiseSpec = field(default_factory=NoiseSpec)

    def __post_init__(self) -> None:
        theta = np.array(self.model.check_theta(self.theta_star), copy=True)
        theta.setflags(write=False)
        object.__setattr__(self, "theta_star", theta)

    def true_means(self) -> FloatArray:
        return self.model.means(self.theta_star)

    def observe(self, arm: int, rng: np.random.Generator) -> float:
        """One noisy reward from ``arm``."""
        value = self.model.mean(arm, self.theta_star) + self.noise.sample(rng)
        if self.noise.is_bounded:
            value = min(max(value, -self.noise.envelope), self.noise.envelope)
        return value


class RegressionMetrics(BaseModel):
    """Checkpointed curves of one regression run."""

    policy: str = ""
    seed: int = 0
    checkpoints: list[int] = Field(default_factory=list)
    est_err: list[float] = Field(default_factory=list)
    pt_gap: list[float] = Field(default_factory=list)
    support_sizes: list[int] = Field(default_factory=list)
    non_spanning_rounds: int = 0
    diverged_fits: int = 0

    def to_dict(self) -> dict[str, Any]:
        """Serialize the metrics to a dictionary."""
        return self.model_dump()

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> RegressionMetrics:
        """Deserialize metrics from a dictionary."""
        return cls.model_validate(data)


@dataclass
class RegressionState:
    """Running state of one regression run."""

    theta_hat: FloatArray
    arms: list[int] = field(default_factory=list)
    obs: list[float] = field(default_factory=list)
    design_trace: list[Design] = field(default_factory=list)
    metrics: RegressionMetrics = field(default_factory=RegressionMetrics)
    design_sum: FloatArray | None = None
    cached_design: Design | None = None
    design_grads: FloatArray | None = None

    @classmethod
    def start(cls, model: ParamModel, rng: np.random.Generator) -> RegressionState:
        """Fresh state with ``theta_hat`` from the model's initializer."""
        return cls(model.init_theta(rng))

    @property
    def t(self) -> int:
        return len(self.arms)

    def mean_design(self) -> FloatArray:
        """Average of the design trace."""
        if self.design_sum is None or self.t == 0:
            raise ValueError("empty design trace")
        return self.design_sum / len(self.design_trace)


def _pt_gap(mean_probs: FloatArray, model: ParamModel, theta: npt.ArrayLike, theta_star: npt.ArrayLike) -> float:
    diffs = model.means(theta) - model.means(theta_star)
    return float(mean_probs @ (diffs * diffs))


def compute_pt_gap(
    design_trace: Sequence[Design],
    model: ParamModel,
    theta: npt.ArrayLike,
    theta_star: npt.ArrayLike,
) -> float:
    """``P_t(theta) - P_t(theta_star)`` over the realized design trace.

    Equals ``(1/t) sum_s sum_i p_s(i) (mu_i(theta) - mu_i(theta_star))**2``;
    the noise variance cancels.
    """
    if not design_trace:
        raise ValueError("compute_pt_gap needs a non-empty design trace")
    mean_probs = np.mean([d.probs for d in design_trace], axis=0)
    if mean_probs.shape != (model.arm_count,):
        raise DimensionError(f"designs have {mean_probs.size} arms, model has {model.arm_count}")
    return _pt_gap(mean_probs, model, theta, theta_star)


def _cs_design(
    state: RegressionState, model: ParamModel, sparsify: bool
) -> tuple[Design, bool]:
    """Eigenvalue design at ``theta_hat``, warm-started from the last one.

    Unchanged gradients (always for linear models, and for ReLU nets
    whose activation pattern is fixed) reuse the cached design.
    """
    grads = model.jacobian(state.theta_hat)
    cached = state.cached_design
    if cached is not None and state.design_grads is not None and np.array_equal(grads, state.design_grads):
        return cached, False
    inst = EigInstance(grads)
    solution = solve_min_eig_design(inst, ROUND_DESIGN_ITERS, ROUND_DESIGN_TOL, init=cached)
    if solution.non_spanning:
        state.design_grads = None
        uniform = Design.uniform(model.arm_count)
        base = state.design_trace[-1] if state.design_trace else uniform
        return base.mix(uniform, 0.5), True
    design = solution.design
    if sparsify:
        design = sparsify_design(design, inst)
    state.design_grads = inst.grads
    return design, False


def _eog_design(state: RegressionState, model: ParamModel, epsilon: float = EOG_EPSILON) -> Design:
    """Epsilon-greedy pull of the arm most orthogonal to ``theta_hat``.

    With probability ``1 - epsilon`` the arm minimizing
    ``|x_i^T theta_hat| / ||x_i||`` (lowest index on ties, zero rows
    skipped); otherwise a uniform arm.
    """
    feats = model.features
    norms = np.linalg.norm(feats, axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratios = np.where(norms > 0.0, np.abs(feats @ state.theta_hat[: model.dim]) / norms, np.inf)
    n = model.arm_count
    return Design.point(n, int(np.argmin(ratios))).mix(Design.uniform(n), epsilon)


def regression_step(
    state: RegressionState,
    model: ParamModel,
    env: RegressionEnv,
    rng: np.random.Generator,
    policy: str = "cs",
    *,
    batch_size: int = 1,
    sparsify: bool = True,
) -> RegressionState:
    """One round: design, sample, observe, refit.

    ``cs`` samples from the minimum-eigenvalue design at the current
    estimate; ``batch_cs`` recomputes that design only every
    ``batch_size`` rounds; ``eps_cs`` mixes it with uniform at rate
    ``1/sqrt(t)``; ``uniform`` ignores the estimate; ``eog`` is the
    epsilon-greedy most-orthogonal baseline (single-index models only).
    When the gradients do not span, the round mixes the previous design
    50/50 with uniform. The state is updated in place and returned.
    """
    if policy not in REGRESSION_POLICIES:
        raise ValueError(f"unknown regression policy {policy!r}")
    t = state.t + 1
    n = model.arm_count
    if policy == "uniform":
        design = Design.uniform(n)
    elif policy == "eog":
        if not model.single_index:
            raise ValueError(f"eog needs a single-index model, not {model.kind}")
        design = _eog_design(state, model)
    else:
        refresh = policy != "batch_cs" or state.cached_design is None or t % batch_size == 0
        if refresh:
            design, non_spanning = _cs_design(state, model, sparsify)
            if non_spanning:
                state.metrics.non_spanning_rounds += 1
                logger.debug("round %d: gradients do not span, mixing with uniform", t)
            state.cached_design = design
        else:
            assert state.cached_design is not None
            design = state.cached_design
        if policy == "eps_cs":
            design = design.mix(Design.uniform(n), 1.0 / math.sqrt(t))

    arm = design.sample(rng)
    obs = env.observe(arm, rng)
    state.arms.append(arm)
    state.obs.append(obs)
    state.design_trace.append(design)
    state.design_sum = design.probs.copy() if state.design_sum is None else state.design_sum + design.probs

    fit = fit_least_squares(model, state.arms, state.obs, state.theta_hat)
    if fit.diverged:
        state.metrics.diverged_fits += 1
    state.theta_hat = fit.theta
    return state


def checkpoint_schedule(horizon: int, per_decade: int = 10) -> list[int]:
    """Logarithmically spaced rounds in ``[1, horizon]``, always with 1 and ``horizon``."""
    if horizon < 1 or per_decade < 1:
        raise ValueError("horizon and per_decade must be positive")
    count = int(math.floor(math.log10(horizon) * per_decade)) + 1
    points = {int(round(10 ** (k / per_decade))) for k in range(count)}
    points.update({1, horizon})
    return sorted(p for p in points if 1 <= p <= horizon)


def run_regression(
    env: RegressionEnv,
    policy: PolicyConfig,
    horizon: int,
    rng: np.random.Generator | None = None,
    *,
    checkpoints: Sequence[int] | None = None,
    sparsify: bool = True,
) -> RegressionMetrics:
    """Run ``horizon`` rounds of the chosen sampler and record checkpoint metrics.

    Raises:
        ValueError: ``horizon`` below the model dimension, or a policy
            without a regression counterpart.
    """
    model = env.model
    if horizon < model.dim:
        raise ValueError(f"horizon {horizon} is below the model dimension {model.dim}")
    if policy.kind not in REGRESSION_POLICIES:
        raise ValueError(f"policy {policy.kind!r} has no regression counterpart")
    if policy.kind == "eog" and not model.single_index:
        raise ValueError(f"eog needs a single-index model, not {model.kind}")
    rng = rng if rng is not None else np.random.default_rng(policy.seed)
    marks = set(checkpoints if checkpoints is not None else checkpoint_schedule(horizon))

    state = RegressionState.start(model, rng)
    state.metrics = RegressionMetrics(policy=policy.name, seed=policy.seed)
    metrics = state.metrics
    for t in range(1, horizon + 1):
        regression_step(
            state, model, env, rng, policy.kind, batch_size=policy.batch_size, sparsify=sparsify
        )
        if t in marks:
            metrics.checkpoints.append(t)
            metrics.est_err.append(model.distance(state.theta_hat, env.theta_star))
            metrics.pt_gap.append(_pt_gap(state.mean_design(), model, state.theta_hat, env.theta_star))
            metrics.support_sizes.append(state.design_trace[-1].support_size)
    if metrics.non_spanning_rounds or metrics.diverged_fits:
        logger.warning(
            "%s on %s: %d non-spanning rounds, %d diverged fits",
            policy.name,
            env.name,
            metrics.non_spanning_rounds,
            metrics.diverged_fits,
        )
    return metrics
