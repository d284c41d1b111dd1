"""Tests for chernsim.diagnostics module."""

import json
import logging
import math

import numpy as np
import pytest

from chernsim.core import Design, MeansTable, NoiseSpec
from chernsim.diagnostics import ProblemConstants, compute_constants, predicted_terms
from chernsim.envs import build_example1, build_minimax, build_three_group


class TestComputeConstants:
    """Tests for compute_constants."""

    def test_example1_d0(self):
        """D0 is the truth's verification value 0.999^2."""
        consts = compute_constants(build_example1().table, 0)
        assert consts.d0 == pytest.approx(0.998001, abs=1e-9)

    def test_example1_rounded_designs(self):
        """With the proportions rounded, D1 is 0.002^2."""
        consts = compute_constants(build_example1().table, 0, decimals=4)
        assert consts.d1 == pytest.approx(4e-6, abs=1e-12)
        assert consts.per_hyp_designs == [[1.0, 0.0], [0.0, 1.0], [0.0, 1.0]]

    def test_example1_override(self):
        """Supplied designs replace the solved ones."""
        designs = [Design.point(2, 0), Design.point(2, 1), Design.point(2, 1)]
        consts = compute_constants(build_example1().table, 0, override=designs)
        assert consts.d1 == pytest.approx(4e-6, abs=1e-12)

    def test_example1_exact_d1(self):
        """The exact designs put a sliver of mass on arm 0, raising D1 slightly."""
        consts = compute_constants(build_example1().table, 0)
        assert 4e-6 < consts.d1 < 1e-4

    def test_example1_de(self):
        """De averages the truth's gaps over arms."""
        consts = compute_constants(build_example1().table, 0)
        assert consts.de == pytest.approx((0.999**2 + 0.002**2) / 2)

    def test_ordering(self):
        """D1 <= D0 and De <= D0 on well-posed tables."""
        for table in (build_example1().table, build_minimax().table):
            consts = compute_constants(table, 0)
            assert consts.d1 <= consts.d0 + 1e-12
            assert consts.de <= consts.d0 + 1e-12
            assert "ordering_violation" not in consts.flags

    def test_three_group_flags_eta0(self, caplog):
        """three_group has a zero minimum gap, flagged and logged."""
        with caplog.at_level(logging.WARNING):
            consts = compute_constants(build_three_group().table, 0)
        assert consts.eta0 == 0.0
        assert "eta0_zero" in consts.flags
        assert "eta0" in caplog.text

    def test_degenerate_table_flags_d1(self):
        """Indistinguishable hypotheses give D1 = 0."""
        table = MeansTable(np.array([[0.0, 0.0, 1.0], [1.0, 1.0, 0.0]]))
        consts = compute_constants(table, 0)
        assert consts.d1 == 0.0
        assert "d1_zero" in consts.flags

    def test_noise_reported(self):
        """Gaussian noise reports its eta proxy and flags it."""
        consts = compute_constants(build_example1().table, 0, noise=NoiseSpec())
        assert consts.eta == pytest.approx(8.0)
        assert "eta_proxy" in consts.flags

    def test_literal_dnj_flag(self):
        """The two-phase constant is always marked as the literal form."""
        consts = compute_constants(build_minimax().table, 0)
        assert "dnj_literal_form" in consts.flags
        assert consts.dnj >= 0.0

    def test_override_length(self):
        """One override design per hypothesis."""
        with pytest.raises(ValueError):
            compute_constants(build_example1().table, 0, override=[Design.uniform(2)])

    def test_dict_round_trip(self):
        """Constants survive to_dict / from_dict."""
        consts = compute_constants(build_example1().table, 0)
        assert ProblemConstants.from_dict(consts.to_dict()) == consts


class TestPredictedTerms:
    """Tests for predicted_terms."""

    def test_example1_terms(self):
        """Example 1 at delta = 0.1 matches the reported orders of magnitude."""
        consts = compute_constants(build_example1().table, 0, decimals=4)
        terms = predicted_terms(consts, 3, 0.1)
        assert terms.exploitation_term == pytest.approx(3.4, rel=0.05)
        assert terms.exploration_term == pytest.approx(3e5, rel=0.2)
        assert terms.exploration_term == pytest.approx(math.log(3) / 4e-6)
        assert terms.uniform_term == pytest.approx(math.log(3) / consts.de)
        assert terms.infinite == []

    def test_zero_constant_is_infinite(self):
        """A zero constant makes its term infinite, listed and serializable."""
        table = MeansTable(np.array([[0.0, 0.0, 1.0], [1.0, 1.0, 0.0]]))
        terms = predicted_terms(compute_constants(table, 0), 3, 0.1)
        assert math.isinf(terms.exploration_term)
        assert "exploration_term" in terms.infinite
        assert json.loads(terms.model_dump_json())["exploration_term"] == math.inf

    def test_bad_delta(self):
        """delta outside (0, 1) is rejected."""
        consts = compute_constants(build_example1().table, 0)
        with pytest.raises(ValueError):
            predicted_terms(consts, 3, 1.5)
