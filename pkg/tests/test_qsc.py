import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qsfilter import qsc
from qsfilter.errors import (
    ClassicalityViolationError,
    InvalidCovarianceError,
    InvalidKernelError,
    StepTooCoarseError,
)

N_MC = 20000


def brute_force_markov(c, grid, tol):
    """Plain triple loop, independent of the vectorised predicate."""
    grid = sorted(grid)
    for a in range(len(grid)):
        for b in range(a, len(grid)):
            for k in range(b, len(grid)):
                s, u, t = grid[a], grid[b], grid[k]
                if abs(c(t, s) * c(u, u) - c(t, u) * c(u, s)) > tol:
                    return False
    return True


class TestCovariances:
    def test_vacuum_unit_coefficients(self):
        c = qsc.vacuum_covariance(qsc.NoiseCoefficients.constant(1.0))
        assert c(0.5, 1.0) == 0.5
        grid = np.linspace(0, 1, 7)
        assert np.array_equal(c.gram(grid), np.minimum.outer(grid, grid))

    def test_vacuum_null_process(self):
        c = qsc.vacuum_covariance(qsc.NoiseCoefficients.constant(0.0))
        assert np.all(c.gram(np.linspace(0, 1, 5)) == 0)

    def test_vacuum_rotating_phase_quadrature(self):
        nc = qsc.NoiseCoefficients(lambda u: np.exp(1j * u), lambda u: np.exp(-1j * u), 0.0, 2.0)
        c = qsc.vacuum_covariance(nc)
        grid = np.array([0.0, 0.3, 1.0, 1.7])
        assert np.allclose(c.gram(grid), np.minimum.outer(grid, grid), atol=1e-10)
        assert c(1.7, 0.3) == pytest.approx(0.3, abs=1e-10)

    def test_vacuum_time_dependent_rate(self):
        # |alpha(u)|^2 = u  =>  c(s,t) = min(s,t)^2 / 2
        nc = qsc.NoiseCoefficients(lambda u: math.sqrt(u), lambda u: math.sqrt(u), 0.0, 1.0)
        c = qsc.vacuum_covariance(nc)
        assert c(0.4, 0.9) == pytest.approx(0.08, abs=1e-10)

    def test_non_self_adjoint_rejected(self):
        with pytest.raises(ClassicalityViolationError):
            qsc.vacuum_covariance(qsc.NoiseCoefficients(1.0, 2.0))
        with pytest.raises(ClassicalityViolationError):
            qsc.counting_compensated_covariance(qsc.NoiseCoefficients(1.0, 1.0, 1j))

    def test_counting_reduces_to_vacuum_without_gauge(self):
        nc = qsc.NoiseCoefficients(lambda u: 1 + u, lambda u: 1 + u, 0.0, 1.0)
        grid = np.linspace(0, 1, 6)
        a = qsc.counting_compensated_covariance(nc).gram(grid)
        b = qsc.vacuum_covariance(nc).gram(grid)
        assert np.allclose(a, b, atol=1e-12)

    def test_counting_pure_gauge_matches_poisson_mc(self):
        c = qsc.counting_compensated_covariance(qsc.NoiseCoefficients.constant(0.0, gamma=1.0))
        grid = np.linspace(0, 1, 1001)
        counts = qsc.sample_counting_paths(1.0, grid, N_MC, seed=7)
        comp = counts - qsc.compensator(1.0, grid)
        for s_idx, t_idx in [(500, 1000), (1000, 1000), (250, 750)]:
            prod = comp[:, s_idx] * comp[:, t_idx]
            band = 3 * prod.std() / math.sqrt(N_MC)
            assert abs(prod.mean() - c(grid[s_idx], grid[t_idx])) < band

    def test_counting_gauge_plus_vacuum_variance_mc(self):
        c = qsc.counting_compensated_covariance(qsc.NoiseCoefficients.constant(1.0, gamma=1.0))
        assert c(1.0, 1.0) == 2.0
        grid = np.linspace(0, 1, 1001)
        bm = qsc.sample_gaussian_paths(qsc.brownian_covariance(), grid[[0, -1]], N_MC, seed=3)[:, -1]
        poi = qsc.sample_counting_paths(1.0, grid, N_MC, seed=4)[:, -1] - 1.0
        sq = (bm + poi) ** 2
        assert abs(sq.mean() - 2.0) < 3 * sq.std() / math.sqrt(N_MC)

    def test_validate_rejects_indefinite(self):
        bad = qsc.CovarianceFunction(lambda s, t: np.where(s == t, 0.0, 1.0))
        with pytest.raises(InvalidCovarianceError):
            bad.validate([0.1, 0.2])
        with pytest.raises(InvalidCovarianceError):
            qsc.sample_gaussian_paths(bad, [0.1, 0.2], 3, 0)


class TestPredicates:
    def test_brownian_is_markov_and_martingale(self):
        c = qsc.brownian_covariance()
        assert qsc.is_quantum_markov(c, [0.25, 0.5, 1.0], 1e-12)
        assert qsc.is_martingale_covariance(c, [0.25, 0.5, 1.0], 1e-12)

    def test_ou_separates_predicates(self):
        c = qsc.ou_covariance()
        grid = np.linspace(0, 2, 9)
        assert qsc.is_quantum_markov(c, grid, 1e-12)
        assert not qsc.is_martingale_covariance(c, grid, 1e-12)

    def test_zero_kernel_is_martingale(self):
        c = qsc.CovarianceFunction(lambda s, t: 0.0 * s * t)
        assert qsc.is_martingale_covariance(c, [0.0, 0.5, 1.0], 0.0)

    def test_squared_min_is_markov_by_brute_force(self):
        # min(s,t)^2 is the kernel of W at time s^2: Markov (and a martingale).
        c = qsc.CovarianceFunction(lambda s, t: np.minimum(s, t) ** 2)
        grid = [0.2, 0.5, 1.0]
        assert brute_force_markov(c, grid, 1e-12)
        assert qsc.is_quantum_markov(c, grid, 1e-12)

    def test_integrated_brownian_is_not_markov(self):
        c = qsc.integrated_brownian_covariance()
        grid = [0.2, 0.5, 1.0]
        assert not brute_force_markov(c, grid, 1e-12)
        assert not qsc.is_quantum_markov(c, grid, 1e-12)

    @settings(max_examples=40, deadline=None)
    @given(st.lists(st.floats(0.0, 5.0), min_size=1, max_size=12))
    def test_unit_vacuum_passes_both_on_any_grid(self, grid):
        c = qsc.vacuum_covariance(qsc.NoiseCoefficients.constant(1.0))
        assert qsc.is_quantum_markov(c, grid, 1e-12)
        assert qsc.is_martingale_covariance(c, grid, 1e-12)

    @settings(max_examples=25, deadline=None)
    @given(st.lists(st.floats(0.0, 3.0), min_size=1, max_size=7), st.floats(0.1, 3.0))
    def test_vectorised_matches_brute_force(self, grid, rate):
        for c in (qsc.ou_covariance(rate), qsc.integrated_brownian_covariance()):
            assert qsc.is_quantum_markov(c, grid, 1e-9) == brute_force_markov(c, grid, 1e-9)


class TestSamplers:
    def test_zero_kernel_gives_zero_path(self):
        c = qsc.CovarianceFunction(lambda s, t: 0.0 * s * t)
        path = qsc.sample_gaussian_version(c, np.linspace(0, 1, 11), seed=1)
        assert np.all(path.values == 0)

    def test_deterministic(self):
        grid = np.linspace(0, 1, 11)
        a = qsc.sample_gaussian_version(qsc.brownian_covariance(), grid, 42)
        b = qsc.sample_gaussian_version(qsc.brownian_covariance(), grid, 42)
        assert np.array_equal(a.values, b.values)
        assert a.values[0] == 0.0

    def test_brownian_variance_at_one(self):
        paths = qsc.sample_gaussian_paths(qsc.brownian_covariance(), [0.0, 0.5, 1.0], N_MC, seed=5)
        assert abs(paths[:, 2].var() - 1.0) < 0.03

    def test_empirical_covariance_within_3_sigma(self):
        c = qsc.brownian_covariance()
        grid = np.array([0.0, 0.25, 0.5, 1.0])
        paths = qsc.sample_gaussian_paths(c, grid, N_MC, seed=9)
        for i in range(1, 4):
            for j in range(i, 4):
                prod = paths[:, i] * paths[:, j]
                assert abs(prod.mean() - c(grid[i], grid[j])) <= 3 * prod.std() / math.sqrt(N_MC)

    def test_counting_zero_intensity(self):
        path = qsc.sample_counting_version(0.0, np.linspace(0, 1, 101), 3)
        assert np.all(path.values == 0)

    def test_counting_mean_and_martingale(self):
        grid = np.linspace(0, 1, 1001)
        counts = qsc.sample_counting_paths(1.0, grid, N_MC, seed=11)
        assert abs(counts[:, -1].mean() - 1.0) < 0.025
        comp = counts[:, -1] - qsc.compensator(1.0, grid)[-1]
        assert abs(comp.mean()) < 0.025
        steps = np.diff(counts, axis=1)
        assert set(np.unique(steps)) <= {0, 1}

    def test_counting_step_guard(self):
        with pytest.raises(StepTooCoarseError):
            qsc.sample_counting_version(2.0, np.linspace(0, 1, 11), 0)


class TestTransitionKernels:
    def test_coordinate_is_preserved(self):
        c = qsc.brownian_covariance()
        out = qsc.transition_apply(qsc.coordinate(), 0.2, 0.9, c)
        x = np.linspace(-3, 3, 13)
        assert np.allclose(out(x), x, atol=1e-12)

    def test_square_gains_variance_increment(self):
        c = qsc.brownian_covariance()
        out = qsc.transition_apply(qsc.square(), 0.5, 1.0, c)
        x = np.linspace(-2, 2, 9)
        assert np.allclose(out(x), x**2 + 0.5, atol=1e-12)

    def test_identity_at_equal_times(self):
        h = qsc.indicator(-0.3, 0.4)
        out = qsc.transition_apply(h, 0.7, 0.7, qsc.brownian_covariance())
        x = np.linspace(-1, 1, 21)
        assert np.allclose(out(x), h(x), atol=1e-10)

    def test_indicator_kernel_matches_normal_cdf(self):
        from scipy.stats import norm

        out = qsc.transition_apply(qsc.indicator(-0.5, 1.0), 0.0, 0.25, qsc.brownian_covariance())
        x = np.array([-1.0, 0.0, 0.3, 2.0])
        exact = norm.cdf((1.0 - x) / 0.5) - norm.cdf((-0.5 - x) / 0.5)
        assert np.allclose(out(x), exact, atol=1e-12)

    def test_rejects_reversed_times_and_non_martingale(self):
        with pytest.raises(InvalidKernelError):
            qsc.transition_apply(qsc.coordinate(), 1.0, 0.5, qsc.brownian_covariance())
        with pytest.raises(InvalidKernelError):
            qsc.transition_apply(qsc.coordinate(), 0.5, 1.0, qsc.ou_covariance())


class TestTimeOrderedMoments:
    c = qsc.brownian_covariance()

    def test_variance_at_one(self):
        spec = qsc.MomentSpec((1.0,), (qsc.square(),))
        assert qsc.time_ordered_moment(spec, self.c) == pytest.approx(1.0, abs=1e-12)

    def test_two_time_covariance(self):
        spec = qsc.MomentSpec((0.5, 1.0), (qsc.coordinate(), qsc.coordinate()))
        assert qsc.time_ordered_moment(spec, self.c) == pytest.approx(0.5, abs=1e-12)

    def test_zero_mean(self):
        spec = qsc.MomentSpec((0.5, 1.0), (qsc.coordinate(), qsc.constant()))
        assert qsc.time_ordered_moment(spec, self.c) == pytest.approx(0.0, abs=1e-12)

    def test_wick_fourth_moment(self):
        # Isserlis: E[a^2 b^2] = E[a^2]E[b^2] + 2E[ab]^2 = 0.5*1 + 2*0.25
        spec = qsc.MomentSpec((0.5, 1.0), (qsc.square(), qsc.square()))
        assert qsc.time_ordered_moment(spec, self.c) == pytest.approx(1.0, abs=1e-10)

    def test_family_agrees_with_monte_carlo(self):
        for k, spec in enumerate(qsc.standard_moment_family()):
            analytic = qsc.time_ordered_moment(spec, self.c)
            grid = np.array((0.0,) + spec.times)
            paths = qsc.sample_gaussian_paths(self.c, grid, N_MC, seed=100 + k)[:, 1:]
            vals = spec.evaluate_paths(paths)
            assert abs(analytic - vals.mean()) <= 3 * vals.std() / math.sqrt(N_MC), spec.label

    def test_moment_spec_validation(self):
        with pytest.raises(ValueError):
            qsc.MomentSpec((1.0, 0.5), (qsc.coordinate(), qsc.coordinate()))
        with pytest.raises(ValueError):
            qsc.MomentSpec((), ())
