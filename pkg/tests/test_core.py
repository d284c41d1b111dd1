"""Tests for chernsim.core module."""

import math

import numpy as np
import pytest
from pydantic import ValidationError

from chernsim.core import (
    ETA_PROXY_NOISELESS,
    Design,
    MeansTable,
    NoiseSpec,
    TestingEnv,
    TrialHistory,
    TrialReport,
    draw_reward,
    most_likely,
    update_losses,
)
from chernsim.envs import build_example1
from chernsim.exceptions import DimensionError


class TestMeansTable:
    """Tests for MeansTable."""

    def test_shape(self):
        """Counts come from the matrix shape."""
        table = build_example1().table
        assert table.arm_count == 2
        assert table.hyp_count == 3

    def test_rejects_single_hypothesis(self):
        """A one-column table is not a testing problem."""
        with pytest.raises(DimensionError):
            MeansTable(np.ones((3, 1)))

    def test_rejects_non_finite(self):
        """NaN entries are refused."""
        with pytest.raises(DimensionError):
            MeansTable(np.array([[0.0, np.nan]]))

    def test_is_read_only(self):
        """The stored matrix cannot be mutated."""
        table = build_example1().table
        with pytest.raises(ValueError):
            table.means[0, 0] = 5.0

    def test_gaps_sq_example1(self):
        """Gap rows follow alternative order, arms along columns."""
        gaps = build_example1().table.gaps_sq(0)
        np.testing.assert_allclose(gaps, [[0.999**2, 0.002**2], [1.0, 0.002**2]])

    def test_gaps_sq_bad_hyp(self):
        """Out-of-range hypothesis raises."""
        with pytest.raises(DimensionError):
            build_example1().table.gaps_sq(3)

    def test_eta0(self):
        """Smallest squared gap over arms and hypothesis pairs."""
        table = build_example1().table
        assert table.eta0() == pytest.approx(0.001**2)


class TestNoiseSpec:
    """Tests for NoiseSpec."""

    def test_gaussian_defaults(self):
        """Default noise has variance 1/2 and the 16 std^2 eta proxy."""
        noise = NoiseSpec()
        assert noise.variance == pytest.approx(0.5)
        assert noise.eta == pytest.approx(8.0)
        assert noise.is_eta_proxy
        assert not noise.is_bounded

    def test_noiseless_gaussian_eta(self):
        """Zero std falls back to the noiseless proxy unless eta is given."""
        noise = NoiseSpec.gaussian(0.0)
        assert noise.eta == ETA_PROXY_NOISELESS
        assert noise.variance == 0.0
        assert NoiseSpec.gaussian(0.0, eta=3.0).eta == 3.0

    def test_bounded_needs_eta(self):
        """Bounded kinds refuse to guess eta."""
        with pytest.raises(ValueError):
            NoiseSpec("bounded_uniform", bound=0.5)

    def test_uniform_inside_envelope(self):
        """Uniform half-width must fit in the eta envelope."""
        with pytest.raises(ValueError):
            NoiseSpec.bounded_uniform(2.0, eta=4.0)

    def test_uniform_variance(self):
        """Uniform on [-a, a] has variance a^2 / 3."""
        noise = NoiseSpec.bounded_uniform(0.6, eta=4.0)
        assert noise.variance == pytest.approx(0.12)

    def test_truncated_variance_below_std(self):
        """Truncation shrinks the variance."""
        noise = NoiseSpec.truncated_gaussian(1.0, 1.0, eta=16.0)
        assert 0.0 < noise.variance < 1.0

    def test_check_envelope(self):
        """Means plus noise must stay inside the reward range."""
        noise = NoiseSpec.bounded_uniform(0.5, eta=4.0)
        noise.check_envelope([[0.5, -0.5]])
        with pytest.raises(DimensionError):
            noise.check_envelope([[0.8, 0.0]])

    def test_gaussian_envelope_not_checked(self):
        """Gaussian noise has no hard envelope."""
        NoiseSpec().check_envelope([[100.0, -100.0]])


class TestDesign:
    """Tests for Design."""

    def test_must_sum_to_one(self):
        """Weights away from the simplex are rejected."""
        with pytest.raises(ValueError):
            Design(np.array([0.5, 0.4]))

    def test_rejects_negative(self):
        """Clearly negative weights are rejected."""
        with pytest.raises(ValueError):
            Design(np.array([1.5, -0.5]))

    def test_from_weights_normalizes(self):
        """from_weights rescales positive mass."""
        design = Design.from_weights([2.0, 2.0, 4.0])
        np.testing.assert_allclose(design.probs, [0.25, 0.25, 0.5])

    def test_support(self):
        """Support lists the arms with positive mass."""
        design = Design(np.array([0.0, 1.0, 0.0]))
        assert design.support.tolist() == [1]
        assert design.support_size == 1

    def test_point_design_always_samples_its_arm(self):
        """A point mass never leaves its arm."""
        rng = np.random.default_rng(0)
        design = Design.point(4, 2)
        assert {design.sample(rng) for _ in range(200)} == {2}

    def test_sample_frequencies(self):
        """Empirical frequencies track the probabilities."""
        rng = np.random.default_rng(1)
        design = Design(np.array([0.2, 0.8]))
        draws = np.array([design.sample(rng) for _ in range(20_000)])
        assert np.mean(draws == 1) == pytest.approx(0.8, abs=0.02)

    def test_mix(self):
        """mix interpolates linearly."""
        mixed = Design.point(2, 0).mix(Design.uniform(2), 0.5)
        np.testing.assert_allclose(mixed.probs, [0.75, 0.25])


class TestRewardsAndLosses:
    """Tests for draw_reward, update_losses and most_likely."""

    def test_reward_moments(self):
        """Example 1 arm 0 under the truth has mean 1 and variance 1/2."""
        env = build_example1()
        rng = np.random.default_rng(42)
        n = 100_000
        draws = np.array([draw_reward(env.table, 0, 0, env.noise, rng) for _ in range(n)])
        assert abs(draws.mean() - 1.0) < 3.0 * math.sqrt(0.5) / math.sqrt(n)
        assert draws.var() == pytest.approx(0.5, rel=0.02)

    def test_reward_bad_arm(self):
        """Out-of-range arm raises."""
        env = build_example1()
        with pytest.raises(DimensionError):
            draw_reward(env.table, 0, 5, env.noise, np.random.default_rng(0))

    def test_bounded_reward_is_clipped(self):
        """Bounded noise keeps rewards inside the envelope."""
        table = MeansTable(np.array([[0.4, -0.4]]))
        noise = NoiseSpec.truncated_gaussian(1.0, 0.5, eta=4.0)
        rng = np.random.default_rng(3)
        draws = [draw_reward(table, 0, 0, noise, rng) for _ in range(500)]
        assert max(abs(v) for v in draws) <= noise.envelope

    def test_update_matches_recompute(self):
        """Incremental losses equal a full recomputation."""
        env = build_example1()
        rng = np.random.default_rng(7)
        hist = TrialHistory.empty(env.table.hyp_count)
        for _ in range(50):
            arm = int(rng.integers(2))
            update_losses(hist, env.table, arm, draw_reward(env.table, 0, arm, env.noise, rng))
        assert hist.t == 50
        np.testing.assert_allclose(hist.cum_sq_err, hist.recompute_losses(env.table))

    def test_update_single_observation(self):
        """One observation adds its squared residual to every hypothesis."""
        table = build_example1().table
        hist = update_losses(TrialHistory.empty(3), table, 0, 1.0)
        np.testing.assert_allclose(hist.cum_sq_err, [0.0, 0.999**2, 1.0])

    def test_most_likely(self):
        """Leader has the smallest loss, runner-up the next."""
        hist = TrialHistory([0], [0.0], np.array([3.0, 1.0, 2.0]))
        assert most_likely(hist, np.random.default_rng(0)) == (1, 2)

    def test_most_likely_random_ties(self):
        """Exact ties are split at random."""
        hist = TrialHistory([0], [0.0], np.array([1.0, 1.0, 5.0]))
        leaders = {most_likely(hist, np.random.default_rng(seed))[0] for seed in range(40)}
        assert leaders == {0, 1}

    def test_most_likely_needs_data(self):
        """An empty history has no leader."""
        with pytest.raises(ValueError):
            most_likely(TrialHistory.empty(3), np.random.default_rng(0))


class TestTrialReport:
    """Tests for TrialReport."""

    def test_counts_must_match_stop_time(self):
        """Arm counts must add up to the stopping time."""
        with pytest.raises(ValidationError):
            TrialReport(stop_time=5, declared_hyp=0, correct=True, arm_counts=[1, 1], seed=0)

    def test_dict_round_trip(self):
        """to_dict and from_dict are inverse."""
        report = TrialReport(stop_time=3, declared_hyp=1, correct=False, arm_counts=[2, 1], seed=9, policy="cs")
        assert TrialReport.from_dict(report.to_dict()) == report


class TestTestingEnv:
    """Tests for TestingEnv."""

    def test_true_hyp_in_range(self):
        """The true hypothesis must index a column."""
        with pytest.raises(DimensionError):
            TestingEnv("bad", build_example1().table, 3)
