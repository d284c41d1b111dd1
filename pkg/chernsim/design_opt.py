"""Optimal sampling designs.

Two kernels live here:

* the finite max-min verification problem, solved exactly as a linear
  program by a dense simplex on the epigraph form
  ``max l  s.t.  gaps_sq @ p >= l,  sum(p) <= 1,  p >= 0``;
* the continuous minimum-eigenvalue (E-optimal) design
  ``max_p lambda_min(sum_i p_i g_i g_i^T)``, solved by Frank-Wolfe with a batched grid
  line search on the concave objective.

Plus Caratheodory support reduction and an exhaustive simplex-grid oracle.
"""

from __future__ import annotations

import logging
import math
from collections.abc import Iterator
from dataclasses import dataclass, field
from typing import Union

import numpy as np
import numpy.typing as npt

from chernsim.core import Design, MeansTable
from chernsim.exceptions import DimensionError
from chernsim.linalg import jacobi_eigh
from chernsim.types import FloatArray

logger = logging.getLogger(__name__)

PIVOT_TOL = 1e-12
DEGENERATE_TOL = 1e-15
BRUTE_FORCE_MAX_ARMS = 6
LINE_SEARCH_GRID = np.geomspace(1e-8, 1.0, 33)
LINE_SEARCH_REFINE = 17


@dataclass(frozen=True, eq=False)
class LpInstance:
    """Coefficients of the verification LP.

    ``gaps_sq[r, i]`` is the squared mean gap on arm ``i`` between the
    hypothesis being verified and alternative ``r``.
    """

    gaps_sq: FloatArray

    def __post_init__(self) -> None:
        arr = np.array(self.gaps_sq, dtype=np.float64, copy=True)
        if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise DimensionError(f"gap matrix needs at least one row and arm, got {arr.shape}")
        if not np.all(np.isfinite(arr)) or np.any(arr < 0):
            raise ValueError("gap entries must be finite and non-negative")
        arr.setflags(write=False)
        object.__setattr__(self, "gaps_sq", arr)

    @classmethod
    def for_hypothesis(cls, table: MeansTable, hyp: int) -> LpInstance:
        """The instance whose solution verifies ``hyp`` against every alternative."""
        return cls(table.gaps_sq(hyp))

    @property
    def n(self) -> int:
        return int(self.gaps_sq.shape[1])

    def value(self, probs: npt.ArrayLike) -> float:
        """Worst-case (smallest) expected squared gap under ``probs``."""
        return float(np.min(self.gaps_sq @ np.asarray(probs, dtype=np.float64)))


@dataclass(frozen=True, eq=False)
class EigInstance:
    """Gradients of the arm means at the current estimate, one row per arm."""

    grads: FloatArray

    def __post_init__(self) -> None:
        arr = np.array(self.grads, dtype=np.float64, copy=True)
        if arr.ndim == 1:
            arr = arr[:, None]
        if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise DimensionError(f"gradients must be an n x d matrix, got {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("gradients must be finite")
        arr.setflags(write=False)
        object.__setattr__(self, "grads", arr)

    @property
    def n(self) -> int:
        return int(self.grads.shape[0])

    @property
    def dim(self) -> int:
        return int(self.grads.shape[1])

    @property
    def spanning(self) -> bool:
        """True when the gradients span R^d."""
        return int(np.linalg.matrix_rank(self.grads)) == self.dim

    def information(self, probs: npt.ArrayLike) -> FloatArray:
        """``sum_i p_i g_i g_i^T``."""
        p = np.asarray(probs, dtype=np.float64)
        return self.grads.T @ (p[:, None] * self.grads)

    def value(self, probs: npt.ArrayLike) -> float:
        """Smallest eigenvalue of the information matrix under ``probs``."""
        return float(np.linalg.eigvalsh(self.information(probs))[0])


Instance = Union[LpInstance, EigInstance]


@dataclass(frozen=True)
class DesignSolution:
    """Result of a design solve.

    Attributes:
        design: The optimizing design.
        objective: Attained max-min gap (LP) or smallest eigenvalue (eig).
        iters: Simplex pivots or Frank-Wolfe iterations.
        converged: Optimality certified within tolerance.
        duality_gap: Certified upper bound on suboptimality.
        degenerate: LP objective is zero for every design.
        non_spanning: Gradients do not span R^d.
        objective_trace: Objective after each Frank-Wolfe iteration.
    """

    design: Design
    objective: float
    iters: int
    converged: bool
    duality_gap: float = math.nan
    degenerate: bool = False
    non_spanning: bool = False
    objective_trace: tuple[float, ...] = field(default=(), repr=False)


def _pivot(tableau: FloatArray, row: int, col: int) -> None:
    tableau[row] /= tableau[row, col]
    column = tableau[:, col].copy()
    column[row] = 0.0
    tableau -= np.outer(column, tableau[row])


def _run_simplex(tableau: FloatArray, basis: list[int], max_iters: int) -> tuple[int, bool]:
    """Primal simplex with Bland's rule on a feasible maximization tableau."""
    m = len(basis)
    for it in range(max_iters):
        entering = np.flatnonzero(tableau[-1, :-1] < -PIVOT_TOL)
        if entering.size == 0:
            return it, True
        col = int(entering[0])
        column = tableau[:m, col]
        rhs = tableau[:m, -1]
        eligible = np.flatnonzero(column > PIVOT_TOL)
        if eligible.size == 0:
            raise ArithmeticError("verification LP reported unbounded")
        ratios = rhs[eligible] / column[eligible]
        best = ratios.min()
        ties = eligible[ratios <= best + PIVOT_TOL * (1.0 + abs(best))]
        row = int(min(ties, key=lambda r: basis[r]))
        _pivot(tableau, row, col)
        basis[row] = col
    return max_iters, False


def solve_verification_lp(inst: LpInstance, *, max_iters: int | None = None) -> DesignSolution:
    """Exact max-min design ``argmax_p min_r (gaps_sq @ p)_r`` over the simplex.

    An instance whose max-min value is zero (for example an all-zero row)
    is degenerate: every design is optimal, the uniform one is returned.
    """
    a = inst.gaps_sq
    rows, n = a.shape
    scale = float(a.max())
    if scale <= 0.0:
        logger.debug("all-zero verification instance")
        return DesignSolution(Design.uniform(n), 0.0, 0, True, 0.0, degenerate=True)
    scaled = a / scale

    # Columns: p_1..p_n, l, slacks (rows + 1), rhs.
    m = rows + 1
    tableau = np.zeros((m + 1, n + 1 + m + 1))
    tableau[:rows, :n] = -scaled
    tableau[:rows, n] = 1.0
    tableau[rows, :n] = 1.0
    tableau[:m, n + 1 : n + 1 + m] = np.eye(m)
    tableau[rows, -1] = 1.0
    tableau[-1, n] = -1.0
    basis = list(range(n + 1, n + 1 + m))

    limit = max_iters if max_iters is not None else 50 * (n + m)
    iters, finished = _run_simplex(tableau, basis, limit)
    if not finished:
        logger.warning("verification LP hit the pivot limit (%d)", limit)

    x = np.zeros(n + 1 + m)
    for r, var in enumerate(basis):
        x[var] = tableau[r, -1]
    probs = np.clip(x[:n], 0.0, None)
    if probs.sum() <= 0.0:
        return DesignSolution(Design.uniform(n), inst.value(np.full(n, 1.0 / n)), iters, finished, degenerate=True)
    design = Design.from_weights(probs)
    objective = inst.value(design.probs)

    duals = np.clip(tableau[-1, n + 1 : n + 1 + rows], 0.0, None)
    if duals.sum() > 0.0:
        bound = float(np.max(duals @ a)) / float(duals.sum())
        gap = max(bound - objective, 0.0)
    else:
        gap = math.inf

    if objective <= DEGENERATE_TOL * scale:
        logger.debug("verification LP objective is zero; using the uniform design")
        uniform = Design.uniform(n)
        return DesignSolution(uniform, inst.value(uniform.probs), iters, finished, gap, degenerate=True)
    converged = finished and gap <= 1e-8 * max(1.0, scale)
    logger.debug("verification LP: %d pivots, objective %.6g, gap %.3g", iters, objective, gap)
    return DesignSolution(design, objective, iters, converged, gap)


def _certificate(eigvals: FloatArray, eigvecs: FloatArray, grads: FloatArray) -> tuple[float, FloatArray]:
    """Tightest dual bound from averaged bottom eigenspaces.

    For ``W_k = (1/k) sum_{j<k} v_j v_j^T`` (PSD, unit trace) every design
    satisfies ``lambda_min <= max_i g_i^T W_k g_i``. Returns the smallest
    such bound and the per-arm scores of the ``W_k`` attaining it.
    """
    proj = (grads @ eigvecs) ** 2
    cumulative = np.cumsum(proj, axis=1) / np.arange(1, eigvals.size + 1)
    bounds = cumulative.max(axis=0)
    k = int(np.argmin(bounds))
    return float(bounds[k]), cumulative[:, k]


def _segment_values(info: FloatArray, target: FloatArray, gammas: FloatArray) -> FloatArray:
    mats = info[None, :, :] + gammas[:, None, None] * (target - info)[None, :, :]
    return np.asarray(np.linalg.eigvalsh(mats)[:, 0], dtype=np.float64)


def _line_search(info: FloatArray, target: FloatArray, current: float, schedule: float) -> tuple[float, float]:
    """Best step toward ``target`` for the concave ``lambda_min`` along the segment.

    A geometric grid on (0, 1] plus the open-loop step brackets the
    maximizer; a uniform grid inside the bracket refines it. Both grids
    are evaluated in one batched eigenvalue call each.
    """
    coarse = np.unique(np.append(LINE_SEARCH_GRID, schedule))
    values = _segment_values(info, target, coarse)
    k = int(np.argmax(values))
    lo = coarse[k - 1] if k > 0 else 0.0
    hi = coarse[k + 1] if k + 1 < coarse.size else 1.0
    fine = np.linspace(lo, hi, LINE_SEARCH_REFINE)[1:]
    fine_values = _segment_values(info, target, fine)
    gammas = np.concatenate([coarse, fine])
    values = np.concatenate([values, fine_values])
    best = int(np.argmax(values))
    if values[best] <= current:
        return 0.0, current
    return float(gammas[best]), float(values[best])


def solve_min_eig_design(
    inst: EigInstance,
    max_iters: int = 300,
    tol: float = 1e-6,
    *,
    init: Design | None = None,
) -> DesignSolution:
    """Frank-Wolfe maximization of ``lambda_min(sum_i p_i g_i g_i^T)``.

    Each iteration moves toward the best vertex under the bottom
    eigenvector or under the averaged eigenspace of the dual certificate,
    with the step chosen by line search and accepted only if the objective
    does not decrease.

    Args:
        inst: Gradients at the current estimate.
        max_iters: Frank-Wolfe iteration cap.
        tol: Stop once the certified gap is at most ``tol`` times the dual
            bound.
        init: Warm-start design (uniform when omitted or of the wrong size).
    """
    n, d = inst.n, inst.dim
    if not inst.spanning:
        logger.debug("gradients do not span R^%d", d)
        return DesignSolution(Design.uniform(n), 0.0, 0, False, math.inf, non_spanning=True)

    probs = init.probs.copy() if init is not None and init.n == n else np.full(n, 1.0 / n)
    grads = inst.grads
    info = inst.information(probs)
    eigvals, eigvecs = jacobi_eigh(info)
    objective = float(eigvals[0])
    trace = [objective]
    gap = math.inf
    converged = False
    for it in range(1, max_iters + 1):
        bound, smooth_scores = _certificate(eigvals, eigvecs, grads)
        gap = max(bound - objective, 0.0)
        if gap <= tol * bound:
            converged = True
            break
        sharp_scores = (grads @ eigvecs[:, 0]) ** 2
        candidates = dict.fromkeys([int(np.argmax(sharp_scores)), int(np.argmax(smooth_scores))])
        schedule = 2.0 / (it + 2.0)
        best: tuple[float, int, float] | None = None
        for arm in candidates:
            target = np.outer(grads[arm], grads[arm])
            gamma, value = _line_search(info, target, objective, schedule)
            if gamma > 0.0 and (best is None or value > best[2]):
                best = (gamma, arm, value)
        if best is None:
            logger.debug("Frank-Wolfe stalled at iteration %d (gap %.3g)", it, gap)
            break
        gamma, arm, _ = best
        probs *= 1.0 - gamma
        probs[arm] += gamma
        info = inst.information(probs)
        eigvals, eigvecs = jacobi_eigh(info)
        objective = float(eigvals[0])
        trace.append(objective)

    design = Design.from_weights(probs)
    steps = len(trace) - 1
    logger.debug("min-eig design: %d steps, objective %.6g, gap %.3g", steps, objective, gap)
    return DesignSolution(design, objective, steps, converged, gap, objective_trace=tuple(trace))


def _vech_outer(grads: FloatArray) -> FloatArray:
    """Upper-triangular entries of every ``g g^T`` as columns (d(d+1)/2 x n)."""
    d = grads.shape[1]
    iu = np.triu_indices(d)
    return (grads[:, iu[0]] * grads[:, iu[1]]).T


def sparsify_design(design: Design, inst: Instance) -> Design:
    """Caratheodory support reduction.

    Moves mass along null directions of the per-arm statistic vectors
    (vech of ``g g^T`` for eigenvalue designs, gap columns for LP designs)
    until the support vectors are linearly independent, so the support is
    at most d(d+1)/2 (eigenvalue) or J-1 (LP) arms. Steps only shrink the
    total mass, so after renormalizing the objective never decreases.
    Returns the input unchanged if the reduction loses objective
    numerically.
    """
    if design.n != inst.n:
        raise DimensionError(f"design has {design.n} arms, instance has {inst.n}")
    vectors = _vech_outer(inst.grads) if isinstance(inst, EigInstance) else inst.gaps_sq
    before = inst.value(design.probs)

    probs = design.probs.copy()
    probs[~np.any(vectors != 0.0, axis=0)] = 0.0
    if probs.sum() <= 0.0:
        return design
    support = np.flatnonzero(probs > design.support_eps)
    while support.size > int(np.linalg.matrix_rank(vectors[:, support])):
        _, _, vt = np.linalg.svd(vectors[:, support], full_matrices=True)
        direction = vt[-1]
        if direction.sum() > 0.0:
            direction = -direction
        shrinking = np.flatnonzero(direction < -1e-14)
        if shrinking.size == 0:
            break
        ratios = probs[support][shrinking] / -direction[shrinking]
        hit = int(shrinking[np.argmin(ratios)])
        probs[support] += float(ratios.min()) * direction
        probs[support[hit]] = 0.0
        probs = np.clip(probs, 0.0, None)
        support = np.flatnonzero(probs > design.support_eps)

    probs[probs <= design.support_eps] = 0.0
    reduced = Design.from_weights(probs, design.support_eps)
    after = inst.value(reduced.probs)
    if not math.isfinite(after) or after < before - 1e-6 * max(1.0, abs(before)):
        logger.warning("support reduction lost objective (%.6g -> %.6g); keeping input", before, after)
        return design
    return reduced


def _compositions3(total: int) -> npt.NDArray[np.int64]:
    counts = total + 1 - np.arange(total + 1)
    first = np.repeat(np.arange(total + 1), counts)
    starts = np.cumsum(counts) - counts
    second = np.arange(int(counts.sum())) - np.repeat(starts, counts)
    return np.column_stack([first, second, total - first - second])


def _grid_chunks(total: int, parts: int) -> Iterator[npt.NDArray[np.int64]]:
    if parts == 1:
        yield np.array([[total]])
    elif parts == 2:
        k = np.arange(total + 1)
        yield np.column_stack([k, total - k])
    elif parts == 3:
        yield _compositions3(total)
    else:
        for head in range(total + 1):
            for rest in _grid_chunks(total - head, parts - 1):
                yield np.column_stack([np.full(len(rest), head), rest])


def simplex_grid(n: int, resolution: int) -> Iterator[FloatArray]:
    """All points ``k / resolution`` of the n-simplex, in chunks."""
    for chunk in _grid_chunks(resolution, n):
        yield chunk / resolution


def brute_force_design(inst: Instance, grid_resolution: int) -> DesignSolution:
    """Best design on the simplex grid of the given resolution (test oracle)."""
    n = inst.n
    if n > BRUTE_FORCE_MAX_ARMS:
        raise ValueError(f"brute force limited to {BRUTE_FORCE_MAX_ARMS} arms, got {n}")
    if grid_resolution < 1:
        raise ValueError("grid resolution must be positive")

    best_value = -math.inf
    best_point: FloatArray | None = None
    evaluated = 0
    for points in simplex_grid(n, grid_resolution):
        if isinstance(inst, LpInstance):
            values = np.min(inst.gaps_sq @ points.T, axis=0)
        else:
            mats = np.einsum("ki,id,ie->kde", points, inst.grads, inst.grads)
            values = np.linalg.eigvalsh(mats)[:, 0]
        evaluated += len(points)
        k = int(np.argmax(values))
        if values[k] > best_value:
            best_value = float(values[k])
            best_point = points[k]
    assert best_point is not None
    return DesignSolution(Design.from_weights(best_point), best_value, evaluated, True)


def pairwise_gap_instance(table: MeansTable) -> LpInstance:
    """Squared gaps for every unordered hypothesis pair, one row per pair."""
    j, k = np.triu_indices(table.hyp_count, k=1)
    diffs = table.means[:, j] - table.means[:, k]
    return LpInstance((diffs * diffs).T)


class VerificationDesigns:
    """Lazily solved, memoized verification designs of one means table.

    Example:
        designs = VerificationDesigns(table)
        p = designs.design(hyp)   # solves the LP for ``hyp`` once
    """

    def __init__(self, table: MeansTable) -> None:
        self.table = table
        self._solutions: dict[int, DesignSolution] = {}
        self.solves = 0
        self.degenerate_hits = 0

    def solution(self, hyp: int) -> DesignSolution:
        """LP solution verifying ``hyp`` (solved on first request)."""
        cached = self._solutions.get(hyp)
        if cached is None:
            cached = solve_verification_lp(LpInstance.for_hypothesis(self.table, hyp))
            self._solutions[hyp] = cached
            self.solves += 1
            if cached.degenerate:
                logger.warning("verification design for hypothesis %d is degenerate", hyp)
        return cached

    def design(self, hyp: int) -> Design:
        """Verification design for ``hyp``; degenerate ones (uniform) are counted."""
        solution = self.solution(hyp)
        if solution.degenerate:
            self.degenerate_hits += 1
        return solution.design

    def all(self) -> list[DesignSolution]:
        """Solutions for every hypothesis in index order."""
        return [self.solution(j) for j in range(self.table.hyp_count)]
