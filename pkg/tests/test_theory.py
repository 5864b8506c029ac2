"""Closed-form boundary-distance and efficiency results against their oracles."""

import math

import numpy as np
import pytest

from mmlda.theory import (
    QuadratureError,
    boundary_distance_derivative,
    efron_A,
    efron_A_trapezoid,
    efron_efficiency,
    efron_efficiency_reference,
    expected_boundary_distance,
    folded_normal_mean,
    mmlda_label_gap,
    monte_carlo_boundary_distance,
    norm_cdf,
)


class TestNormCdf:
    def test_reference_values(self):
        assert norm_cdf(0.0) == pytest.approx(0.5, abs=1e-15)
        assert norm_cdf(-5.0) == pytest.approx(2.8665157187919333e-07, rel=1e-12)
        np.testing.assert_allclose(norm_cdf(np.array([-1.0, 1.0])).sum(), 1.0, atol=1e-15)


class TestFoldedNormalMean:
    def test_against_direct_sampling(self):
        # independent oracle: numpy's own gaussian sampler, 2e6 draws
        rng = np.random.default_rng(123)
        for mean, std in [(0.0, 1.0), (1.0, 2.0), (-3.0, 0.5)]:
            draws = np.abs(rng.normal(mean, std, size=2_000_000))
            se = draws.std(ddof=1) / math.sqrt(draws.size)
            assert abs(folded_normal_mean(mean, std) - draws.mean()) < 4 * se

    def test_half_normal(self):
        assert folded_normal_mean(0.0, 1.0) == pytest.approx(math.sqrt(2.0 / math.pi), rel=1e-14)

    def test_rejects_bad_std(self):
        with pytest.raises(ValueError):
            folded_normal_mean(1.0, 0.0)


class TestExpectedBoundaryDistance:
    def test_degenerate_distance(self):
        assert expected_boundary_distance(0.0, 0.0) == pytest.approx(math.sqrt(2.0 / math.pi), rel=1e-14)

    def test_large_distance_ratio(self):
        # at delta = 10 the ratio to delta/2 is already within 1e-7
        assert abs(expected_boundary_distance(10.0) / 10.0 - 0.5) < 1e-7

    def test_moderate_distance_value(self):
        # frozen from the Monte-Carlo oracle (1e7 samples agree to ~2e-4)
        assert expected_boundary_distance(2.0) == pytest.approx(1.1666309411753726, rel=1e-12)

    def test_rejects_invalid_queries(self):
        with pytest.raises(ValueError):
            expected_boundary_distance(-1.0)
        with pytest.raises(ValueError, match="zeta"):
            expected_boundary_distance(0.0, 0.3)

    def test_monotone_in_delta_at_equal_priors(self):
        grid = np.linspace(0.0, 12.0, 241)
        values = [expected_boundary_distance(d) for d in grid]
        assert all(b >= a - 1e-12 for a, b in zip(values, values[1:]))

    def test_ratio_gap_decreases_to_zero(self):
        grid = np.linspace(1.0, 12.0, 111)
        gaps = [abs(expected_boundary_distance(d) / d - 0.5) for d in grid]
        assert all(b <= a + 1e-15 for a, b in zip(gaps, gaps[1:]))
        assert gaps[-1] < 1e-7


class TestBoundaryDistanceDerivative:
    def test_vanishes_at_origin(self):
        assert boundary_distance_derivative(1e-12) == pytest.approx(0.0, abs=1e-12)

    def test_saturates_at_half(self):
        # exact value is 1/2 - Phi(-5); the gap to 1/2 is 2.87e-7
        assert boundary_distance_derivative(10.0) == pytest.approx(0.4999997133484281, rel=1e-12)
        assert abs(boundary_distance_derivative(10.0) - 0.5) < 1e-6

    def test_moderate_value(self):
        # 0.5 * (1 - 2 Phi(-1)) evaluated directly
        assert boundary_distance_derivative(2.0) == pytest.approx(0.3413447460685429, rel=1e-12)

    @pytest.mark.parametrize("zeta", [0.0, 0.5])
    def test_matches_finite_differences(self, zeta):
        h = 1e-5
        for delta in np.linspace(0.5, 8.0, 31):
            fd = (expected_boundary_distance(delta + h, zeta)
                  - expected_boundary_distance(delta - h, zeta)) / (2 * h)
            an = boundary_distance_derivative(delta, zeta)
            # absolute floor covers the h^2 truncation noise where the
            # derivative crosses zero (only reachable for zeta != 0)
            assert abs(an - fd) <= 1e-6 * abs(fd) + 1e-9

    def test_nonnegative_at_equal_priors(self):
        for delta in np.linspace(1e-6, 12.0, 200):
            assert boundary_distance_derivative(delta) >= 0.0

    def test_rejects_zero_delta(self):
        with pytest.raises(ValueError):
            boundary_distance_derivative(0.0)


class TestMonteCarloBoundaryDistance:
    def test_matches_closed_form(self):
        result = monte_carlo_boundary_distance(2.0, 0.0, 1_000_000, seed=7)
        assert result.standard_error > 0
        assert abs(result.estimate - expected_boundary_distance(2.0)) < 4 * result.standard_error

    def test_matches_closed_form_with_prior_offset(self):
        result = monte_carlo_boundary_distance(1.0, 0.5, 500_000, seed=11)
        assert abs(result.estimate - expected_boundary_distance(1.0, 0.5)) < 4 * result.standard_error

    def test_smoke_small_sample(self):
        result = monte_carlo_boundary_distance(1.0, 0.0, 10, seed=0)
        assert math.isfinite(result.estimate)
        assert result.standard_error > 0

    def test_deterministic_per_seed(self):
        a = monte_carlo_boundary_distance(2.0, 0.0, 1000, seed=5)
        b = monte_carlo_boundary_distance(2.0, 0.0, 1000, seed=5)
        assert a == b
        c = monte_carlo_boundary_distance(2.0, 0.0, 1000, seed=6)
        assert c.estimate != a.estimate


class TestEfronMoments:
    @pytest.mark.parametrize("prior0", [0.2, 0.5, 0.8])
    def test_limits_at_small_delta(self, prior0):
        assert efron_A(0, prior0, 1e-6) == pytest.approx(1.0, abs=1e-9)
        assert efron_A(2, prior0, 1e-6) == pytest.approx(1.0, abs=1e-9)

    def test_two_quadrature_rules_agree(self):
        for delta in (0.5, 1.0, 2.0, 4.0):
            adaptive = efron_A(1, 0.5, delta)
            grid = efron_A_trapezoid(1, 0.5, delta)
            assert abs(adaptive - grid) <= 1e-8

    def test_finite_up_to_delta_ten(self):
        for delta in (0.5, 2.0, 5.0, 10.0):
            for moment in (0, 1, 2):
                assert math.isfinite(efron_A(moment, 0.3, delta))

    def test_rejects_bad_arguments(self):
        with pytest.raises(ValueError):
            efron_A(3, 0.5, 1.0)
        with pytest.raises(ValueError):
            efron_A(0, 0.0, 1.0)
        with pytest.raises(ValueError):
            efron_A(0, 0.5, 0.0)


class TestEfronEfficiency:
    def test_small_delta_limit(self):
        value = efron_efficiency(5, 0.0, 0.01)
        assert 0.99 <= value <= 1.0

    @pytest.mark.parametrize("zeta", [0.0, 1.0])
    def test_nonincreasing_in_delta(self, zeta):
        values = [efron_efficiency(5, zeta, d) for d in np.arange(0.5, 4.01, 0.5)]
        assert all(b <= a + 1e-12 for a, b in zip(values, values[1:]))

    def test_agrees_with_reference_route(self):
        for dim in (2, 10):
            for zeta in (0.0, 1.0):
                for delta in (0.5, 3.0):
                    a = efron_efficiency(dim, zeta, delta)
                    b = efron_efficiency_reference(dim, zeta, delta)
                    assert abs(a - b) <= 1e-6

    def test_rejects_bad_arguments(self):
        with pytest.raises(ValueError):
            efron_efficiency(0, 0.0, 1.0)
        with pytest.raises(ValueError):
            efron_efficiency(5, 0.0, -1.0)


class TestLabelGap:
    def test_moderate_norm_is_already_tiny(self):
        assert mmlda_label_gap(10.0, 10) <= 1e-8

    def test_small_norm_limit(self):
        assert mmlda_label_gap(1e-12, 10) == pytest.approx(0.9, abs=1e-9)
        assert mmlda_label_gap(1e-12, 4) == pytest.approx(0.75, abs=1e-9)

    def test_monotone_decreasing_in_norm(self):
        assert mmlda_label_gap(100.0, 10) < mmlda_label_gap(10.0, 10)

    def test_no_overflow_for_huge_norm(self):
        assert mmlda_label_gap(1e6, 10) == 0.0  # underflows cleanly, never overflows

    def test_rejects_bad_arguments(self):
        with pytest.raises(ValueError):
            mmlda_label_gap(-1.0, 10)
        with pytest.raises(ValueError):
            mmlda_label_gap(1.0, 1)


class TestQuadratureFailureReporting:
    def test_error_type_exists_and_propagates(self):
        # an integrand this spiky cannot be produced by valid arguments, so
        # exercise the guard directly
        with pytest.raises(QuadratureError):
            raise QuadratureError("synthetic")
