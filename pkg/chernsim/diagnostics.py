"""Problem constants and sample-complexity predictors.

The constants characterize how hard a finite testing instance is for each
policy family; the predicted terms are the scaling expressions of the
matching upper bounds with their constant factors dropped, for
cross-checking simulated stopping times against theory.
"""

from __future__ import annotations

import logging
import math
from collections.abc import Sequence
from typing import Any

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from chernsim.core import Design, MeansTable, NoiseSpec
from chernsim.design_opt import VerificationDesigns, pairwise_gap_instance, solve_verification_lp

logger = logging.getLogger(__name__)

CONSTANT_FORMULAS: dict[str, str] = {
    "d0": "max_p min_{j != j*} sum_i p(i) (mu_i(j) - mu_i(j*))^2",
    "d1": "min_{k} min_{j != j*} sum_i p_k(i) (mu_i(j) - mu_i(j*))^2",
    "de": "min_{j != j*} sum_i (1/n) (mu_i(j) - mu_i(j*))^2",
    "dnj": "(min_k min_{j != k} sum_i p_k(i) (mu_i(j) - mu_i(k))^2)^2 "
    "* max_p min_k min_{j != k} sum_i p(i) (mu_i(j) - mu_i(k))^2",
    "eta0": "min_i min_{j != k} (mu_i(j) - mu_i(k))^2",
}

TERM_FORMULAS: dict[str, str] = {
    "exploration_term": "log(J) / d1",
    "exploitation_term": "log(J / delta) / d0",
    "uniform_term": "log(J) / de",
}


class ProblemConstants(BaseModel):
    """Hardness constants of a finite testing instance.

    Attributes:
        d0: Verification value of the true hypothesis.
        d1: Worst separation of the truth under any verification design.
        de: Separation of the truth under uniform sampling.
        dnj: Two-phase constant (literal product form; reported only).
        eta0: Smallest squared mean gap over arms and hypothesis pairs.
        eta: Noise range parameter, when a noise model was given.
        per_hyp_designs: Verification design of every hypothesis.
        flags: Degenerate or inconsistent conditions found.
    """

    model_config = ConfigDict(frozen=True, ser_json_inf_nan="constants")

    true_hyp: int
    d0: float
    d1: float
    de: float
    dnj: float
    eta0: float
    eta: float | None = None
    per_hyp_designs: list[list[float]]
    flags: list[str] = Field(default_factory=list)
    formulas: dict[str, str] = Field(default_factory=lambda: dict(CONSTANT_FORMULAS))

    def to_dict(self) -> dict[str, Any]:
        """Serialize the constants to a dictionary."""
        return self.model_dump()

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> ProblemConstants:
        """Deserialize constants from a dictionary."""
        return cls.model_validate(data)


class PredictedTerms(BaseModel):
    """Scaling terms of the sample-complexity bounds (constant factors omitted)."""

    model_config = ConfigDict(frozen=True, ser_json_inf_nan="constants")

    hyp_count: int
    delta: float
    exploration_term: float
    exploitation_term: float
    uniform_term: float
    infinite: list[str] = Field(default_factory=list)
    formulas: dict[str, str] = Field(default_factory=lambda: dict(TERM_FORMULAS))

    def to_dict(self) -> dict[str, Any]:
        """Serialize the terms to a dictionary."""
        return self.model_dump()


def _rounded(design: Design, decimals: int | None) -> Design:
    if decimals is None:
        return design
    return Design.from_weights(np.round(design.probs, decimals))


def compute_constants(
    table: MeansTable,
    true_hyp: int,
    *,
    noise: NoiseSpec | None = None,
    designs: VerificationDesigns | None = None,
    decimals: int | None = None,
    override: Sequence[Design] | None = None,
) -> ProblemConstants:
    """Evaluate the hardness constants of ``table`` with ``true_hyp`` as the truth.

    Args:
        table: Means table.
        true_hyp: Index of the true hypothesis.
        noise: Noise model, for reporting ``eta``.
        designs: Memoized verification designs to reuse.
        decimals: Round every verification design to this many decimals
            before evaluating ``d1`` (reported proportions are often
            rounded).
        override: Use these designs (one per hypothesis) instead of
            solving for them.
    """
    table.check_hyp(true_hyp)
    designs = designs if designs is not None else VerificationDesigns(table)
    solutions = designs.all()
    if override is not None:
        if len(override) != table.hyp_count:
            raise ValueError(f"need {table.hyp_count} designs, got {len(override)}")
        per_hyp = list(override)
    else:
        per_hyp = [_rounded(s.design, decimals) for s in solutions]

    truth_gaps = table.gaps_sq(true_hyp)
    d0 = solutions[true_hyp].objective
    d1 = min(float(np.min(truth_gaps @ p.probs)) for p in per_hyp)
    de = float(np.min(truth_gaps.mean(axis=1)))
    verify_floor = min(
        float(np.min(table.gaps_sq(k) @ per_hyp[k].probs)) for k in range(table.hyp_count)
    )
    pairwise = solve_verification_lp(pairwise_gap_instance(table)).objective
    dnj = verify_floor**2 * pairwise
    eta0 = table.eta0()

    flags: list[str] = []
    if eta0 <= 0.0:
        flags.append("eta0_zero")
        logger.warning("eta0 = 0: two hypotheses share a mean on some arm")
    if d1 <= 0.0:
        flags.append("d1_zero")
    if d1 > 0.0 and dnj > d1:
        flags.append("dnj_exceeds_d1")
        logger.warning("dnj %.6g exceeds d1 %.6g", dnj, d1)
    if d1 > d0 + 1e-12 or de > d0 + 1e-12:
        flags.append("ordering_violation")
        logger.warning("constants out of order: d0 %.6g, d1 %.6g, de %.6g", d0, d1, de)
    if noise is not None and noise.is_eta_proxy:
        flags.append("eta_proxy")
    flags.append("dnj_literal_form")

    return ProblemConstants(
        true_hyp=true_hyp,
        d0=d0,
        d1=d1,
        de=de,
        dnj=dnj,
        eta0=eta0,
        eta=noise.eta if noise is not None else None,
        per_hyp_designs=[p.to_list() for p in per_hyp],
        flags=flags,
    )


def predicted_terms(consts: ProblemConstants, hyp_count: int, delta: float) -> PredictedTerms:
    """``log(J)/d1``, ``log(J/delta)/d0`` and ``log(J)/de``.

    A term whose constant is zero is reported as infinite and listed in
    ``infinite``.
    """
    if hyp_count < 2:
        raise ValueError("need at least two hypotheses")
    if not 0.0 < delta < 1.0:
        raise ValueError(f"delta must lie in (0, 1), got {delta}")
    infinite: list[str] = []

    def term(name: str, numerator: float, constant: float) -> float:
        if constant <= 0.0:
            infinite.append(name)
            return math.inf
        return numerator / constant

    return PredictedTerms(
        hyp_count=hyp_count,
        delta=delta,
        exploration_term=term("exploration_term", math.log(hyp_count), consts.d1),
        exploitation_term=term("exploitation_term", math.log(hyp_count / delta), consts.d0),
        uniform_term=term("uniform_term", math.log(hyp_count), consts.de),
        infinite=infinite,
    )
