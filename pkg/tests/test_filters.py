import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qsfilter import filters as fl
from qsfilter import hilbert as hb
from qsfilter.dynamics import MeasurementRecord, Scheme, SimConfig, simulate
from qsfilter.errors import ZeroRateJumpError

from conftest import DT, driven_qubit


def random_model(seed, d):
    rng = np.random.default_rng(seed)

    def cplx():
        return rng.standard_normal((d, d)) + 1j * rng.standard_normal((d, d))

    A, B, C = cplx(), cplx(), cplx()
    rho = C @ C.conj().T
    rho /= np.trace(rho).real
    m = hb.SystemModel(0.5 * (A + A.conj().T), cplx() / 2, rho)
    return m, rho, 0.5 * (B + B.conj().T), rng


class TestHomodyneStep:
    def test_nothing_to_learn(self):
        m = hb.SystemModel(np.zeros((2, 2)), np.zeros((2, 2)), np.diag([0.4, 0.6]))
        for dY in (0.0, 0.3, -2.0):
            assert np.max(np.abs(fl.ks_homodyne_step(m, m.rho0, dY, DT) - m.rho0)) < 1e-15

    def test_zero_innovation_is_pure_drift(self):
        m = driven_qubit()
        rho = m.rho0
        dY = np.trace((m.L + m.L.conj().T) @ rho).real * DT
        step = fl.ks_homodyne_increment(m, rho, dY, DT)
        assert np.max(np.abs(step - hb.adjoint_generator(m, rho) * DT)) < 1e-16

    def test_identity_moment_is_conserved(self):
        m, rho, _, rng = random_model(1, 2)
        assert fl.pi_step_homodyne(m, rho, np.eye(2), rng.standard_normal() * 0.03, DT) == pytest.approx(0, abs=1e-15)

    def test_closed_system_ehrenfest(self):
        m = hb.SystemModel(hb.SIGMA_X, np.zeros((2, 2)), hb.projector(hb.KET_E))
        X = hb.SIGMA_Z
        expected = hb.expectation(m.rho0, 1j * hb.commutator(m.H, X)) * DT
        assert fl.pi_step_homodyne(m, m.rho0, X, 0.05, DT) == pytest.approx(expected, abs=1e-16)

    def test_duality_random_qubits(self):
        rng = np.random.default_rng(0)
        worst = 0.0
        for k in range(1000):
            m, rho, X, _ = random_model(k, 2)
            dY = rng.standard_normal() * math.sqrt(DT)
            direct = hb.expectation(fl.ks_homodyne_increment(m, rho, dY, DT), X)
            worst = max(worst, abs(fl.pi_step_homodyne(m, rho, X, dY, DT) - direct))
        assert worst <= 1e-12


class TestCountingStep:
    def test_idle(self):
        m = hb.SystemModel(np.zeros((2, 2)), np.zeros((2, 2)), np.diag([0.4, 0.6]))
        assert np.max(np.abs(fl.jump_filter_step(m, m.rho0, 0, DT) - m.rho0)) < 1e-15

    def test_jump_collapses_excited_to_ground(self):
        m = hb.decaying_qubit()
        rho = hb.projector(hb.KET_E)
        # LρL*/tr(L*Lρ) computed by hand: σ₋|e><e|σ₊ = |g><g|
        collapsed = m.L @ rho @ m.L.conj().T / np.trace(m.L.conj().T @ m.L @ rho).real
        assert np.allclose(collapsed, hb.projector(hb.KET_G), atol=0)
        after = fl.jump_filter_step(m, rho, 1, DT)
        assert np.max(np.abs(after - hb.projector(hb.KET_G))) <= 2 * DT

    def test_zero_rate_jump(self):
        m = hb.decaying_qubit(hb.projector(hb.KET_G))
        with pytest.raises(ZeroRateJumpError):
            fl.jump_filter_step(m, m.rho0, 1, DT)
        with pytest.raises(ZeroRateJumpError):
            fl.pi_step_counting(m, m.rho0, hb.SIGMA_Z, 1, DT)
        # no count: gain suppressed, dark state unchanged
        assert np.allclose(fl.jump_filter_step(m, m.rho0, 0, DT), m.rho0, atol=1e-15)
        grid = DT * np.arange(4)
        with pytest.raises(ZeroRateJumpError) as info:
            fl.run_filter(m, MeasurementRecord(grid, [0, 0, 1], "counting"))
        assert info.value.step == 3

    def test_duality_random_qubits(self):
        rng = np.random.default_rng(1)
        worst = 0.0
        for k in range(1000):
            m, rho, X, _ = random_model(10_000 + k, 2)
            dN = float(rng.random() < 0.5)
            direct = hb.expectation(fl.jump_filter_increment(m, rho, dN, DT), X)
            worst = max(worst, abs(fl.pi_step_counting(m, rho, X, dN, DT) - direct))
        assert worst <= 1e-12


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), d=st.sampled_from([2, 3, 4]), dN=st.sampled_from([0.0, 1.0]))
def test_duality_any_dimension(seed, d, dN):
    m, rho, X, rng = random_model(seed, d)
    dY = rng.standard_normal() * math.sqrt(DT)
    scale = 1 + np.linalg.norm(X, 2) * (1 + np.linalg.norm(m.L, 2) ** 2 + np.linalg.norm(m.H, 2))
    h = hb.expectation(fl.ks_homodyne_increment(m, rho, dY, DT), X)
    assert abs(fl.pi_step_homodyne(m, rho, X, dY, DT) - h) <= 1e-12 * scale
    c = hb.expectation(fl.jump_filter_increment(m, rho, dN, DT), X)
    assert abs(fl.pi_step_counting(m, rho, X, dN, DT) - c) <= 1e-12 * scale


class TestRunFilter:
    @pytest.mark.parametrize("scheme", list(Scheme))
    def test_self_consistency(self, scheme):
        m = driven_qubit()
        truth = simulate(m, SimConfig(DT, 2.0, 0, scheme))
        if scheme is Scheme.COUNTING:
            assert truth.record.increments.sum() >= 1  # the jump branch is exercised
        ft = fl.run_filter(m, truth.record, {"sz": hb.SIGMA_Z, "sx": hb.SIGMA_X})
        assert np.max(np.abs(ft.states - truth.states)) <= 1e-10
        assert ft.coherence_error({"sz": hb.SIGMA_Z, "sx": hb.SIGMA_X}) <= 1e-10
        assert np.max(np.abs(np.einsum("kii->k", ft.states) - 1)) <= 1e-9

    @pytest.mark.parametrize("scheme", list(Scheme))
    def test_matches_numpy_step_functions(self, scheme):
        m = driven_qubit()
        truth = simulate(m, SimConfig(DT, 1.0, 3, scheme))
        ft = fl.run_filter(m, truth.record)
        step = fl.ks_homodyne_step if scheme is Scheme.HOMODYNE else fl.jump_filter_step
        rho = m.rho0
        worst = 0.0
        for k, inc in enumerate(truth.record.increments, start=1):
            rho = step(m, rho, inc, DT)
            worst = max(worst, float(np.max(np.abs(rho - ft.states[k]))))
        assert worst <= 1e-12

    def test_states_only_and_constant(self):
        m = hb.SystemModel(np.zeros((2, 2)), np.zeros((2, 2)), np.diag([0.2, 0.8]))
        rec = MeasurementRecord(DT * np.arange(101), np.zeros(100), "homodyne")
        ft = fl.run_filter(m, rec)
        assert ft.moments == {}
        assert np.max(np.abs(ft.states - m.rho0)) < 1e-15
        assert np.array_equal(ft.innovations, np.zeros(100))

    def test_innovations_definition(self):
        m = driven_qubit()
        truth = simulate(m, SimConfig(DT, 0.2, 2, "homodyne"))
        ft = fl.run_filter(m, truth.record)
        h = m.L + m.L.conj().T
        expected = truth.record.increments - hb.expectation(ft.states[:-1], h) * DT
        assert np.max(np.abs(ft.innovations - expected)) < 1e-15


class TestInnovationStatistics:
    def test_uncoupled_homodyne_slope(self):
        m = hb.SystemModel(np.zeros((2, 2)), np.zeros((2, 2)), np.eye(2) / 2)
        truth = simulate(m, SimConfig(DT, 10.0, 0, "homodyne"))
        stats = fl.innovations_statistics(fl.run_filter(m, truth.record))
        # quadratic variation of n = 10^4 Wiener increments: sd of slope is sqrt(2/n)
        assert abs(stats.variance_slope - 1.0) <= 3 * math.sqrt(2 / 10_000)
        assert np.array_equal(stats.cumulative, truth.record.path)
        assert abs(stats.excess_kurtosis) <= 3 * math.sqrt(24 / 10_000)

    def test_mismatched_prior_is_reported(self):
        m = hb.SystemModel(np.zeros((2, 2)), 0.5 * (hb.SIGMA_Z + np.eye(2)), hb.projector(hb.KET_E))
        truth = simulate(m, SimConfig(DT, 5.0, 1, "homodyne"))
        wrong = fl.run_filter(m, truth.record, rho0=hb.projector(hb.KET_G))
        stats = fl.innovations_statistics(wrong, n_windows=5)
        assert len(stats.window_means) == 5
        assert all(math.isfinite(w) for w in stats.window_means)
