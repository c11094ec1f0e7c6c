"""Nonlinear filters for homodyne and photon-counting records.

Homodyne (diffusive) observation::

    d pi(X) = pi(Lgen(X)) dt
              + (pi(L* X + X L) - pi(L + L*) pi(X)) (dY - pi(L + L*) dt)

Counting observation::

    d pi(X) = pi(Lgen(X)) dt
              + (pi(L* X L) / pi(L* L) - pi(X)) (dN - pi(L* L) dt)

Both are carried in density form (``rho`` closes over every observable at
once); the moment forms are kept as per-step cross-checks.
"""

from dataclasses import dataclass, field
import math

import numpy as np
from scipy import stats

from . import hilbert as hb
from .dynamics import RATE_FLOOR, MeasurementRecord, Scheme, StackStepper, default_repair_tol
from .errors import ZeroRateJumpError


@dataclass
class FilterTrajectory:
    grid: np.ndarray
    states: np.ndarray
    moments: dict
    innovations: np.ndarray
    scheme: Scheme

    def coherence_error(self, tracked):
        """Largest ``|moments[X][k] - tr(states[k] X)|``."""
        worst = 0.0
        for name, X in tracked.items():
            direct = hb.expectation(self.states, X)
            worst = max(worst, float(np.max(np.abs(direct - self.moments[name]))))
        return worst


def _model_parts(m):
    L = m.L
    Ld = L.conj().T
    return L, Ld, Ld @ L


def ks_homodyne_increment(m, rho, dY, dt):
    """Unrepaired density-form increment of the homodyne filter."""
    rho = hb.as_matrix(rho, "rho")
    L, Ld, _ = _model_parts(m)
    ex = hb.expectation(rho, L + Ld)
    gain = L @ rho + rho @ Ld - ex * rho
    return hb.adjoint_generator(m, rho) * dt + gain * (dY - ex * dt)


def ks_homodyne_step(m, rho, dY, dt, tol=None):
    tol = default_repair_tol(m, dt) if tol is None else tol
    return hb.repair_state(rho + ks_homodyne_increment(m, rho, dY, dt), tol)


def pi_step_homodyne(m, rho, X, dY, dt):
    """Moment-form increment ``d pi(X)``, computed from the Heisenberg generator."""
    L, Ld, _ = _model_parts(m)
    pi = lambda A: hb.expectation(rho, A)  # noqa: E731
    pi_h = pi(L + Ld)
    gain = pi(Ld @ X + X @ L) - pi_h * pi(X)
    return pi(hb.lindblad_generator(m, X)) * dt + gain * (dY - pi_h * dt)


def jump_filter_increment(m, rho, dN, dt):
    """Unrepaired density-form increment of the counting filter."""
    rho = hb.as_matrix(rho, "rho")
    L, Ld, LdL = _model_parts(m)
    rate = hb.expectation(rho, LdL)
    drift = hb.adjoint_generator(m, rho) * dt
    if rate < RATE_FLOOR:
        if dN:
            raise ZeroRateJumpError(rate)
        return drift
    return drift + (L @ rho @ Ld / rate - rho) * (dN - rate * dt)


def jump_filter_step(m, rho, dN, dt, tol=None):
    tol = default_repair_tol(m, dt) if tol is None else tol
    return hb.repair_state(rho + jump_filter_increment(m, rho, dN, dt), tol)


def pi_step_counting(m, rho, X, dN, dt):
    L, Ld, LdL = _model_parts(m)
    pi = lambda A: hb.expectation(rho, A)  # noqa: E731
    rate = pi(LdL)
    drift = pi(hb.lindblad_generator(m, X)) * dt
    if rate < RATE_FLOOR:
        if dN:
            raise ZeroRateJumpError(rate)
        return drift
    return drift + (pi(Ld @ X @ L) / rate - pi(X)) * (dN - rate * dt)


class FilterBank:
    """A stack of filters driven in lock-step by their own records."""

    def __init__(self, m, scheme, dt, n=1, rho0=None):
        self.m = m
        self.scheme = Scheme(scheme)
        self.stepper = StackStepper(m, scheme, dt)
        rho0 = m.rho0 if rho0 is None else hb.check_density(rho0, "rho0")
        self.rhos = np.repeat(rho0[None], n, axis=0)
        self.k = 0

    def step(self, increments, indices=None):
        """Consume one record increment per filter; returns the innovations."""
        self.k += 1
        rhos = self.rhos
        if self.scheme is Scheme.HOMODYNE:
            _, innov = self.stepper.step(rhos, increments, True, step=self.k, indices=indices)
            return innov
        dn, rate = self.stepper.step(rhos, increments, True, step=self.k, indices=indices)
        return dn - rate * self.stepper.dt

    def measure(self, X):
        return self.stepper.measure(self.rhos, self.stepper.functional(X))


def _tracked_dict(tracked):
    if tracked is None:
        return {}
    if isinstance(tracked, dict):
        return {k: hb.check_hermitian(v, k) for k, v in tracked.items()}
    return {f"X{i}": hb.check_hermitian(X, f"X{i}") for i, X in enumerate(tracked)}


def run_filter(m, record, tracked=None, rho0=None):
    """Filter one record; ``rho0`` overrides the model prior (mismatched-prior studies)."""
    tracked = _tracked_dict(tracked)
    n = len(record.increments)
    bank = FilterBank(m, record.scheme, record.dt, 1, rho0)
    states = np.empty((n + 1, m.dim, m.dim), dtype=complex)
    states[0] = bank.rhos[0]
    innov = np.empty(n)
    incs = np.ascontiguousarray(record.increments)
    for k in range(n):
        innov[k] = bank.step(incs[k : k + 1])[0]
        states[k + 1] = bank.rhos[0]
    moments = {name: hb.expectation(states, X) for name, X in tracked.items()}
    return FilterTrajectory(record.grid.copy(), states, moments, innov, record.scheme)


@dataclass
class InnovationStats:
    cumulative: np.ndarray
    mean: float
    variance_slope: float
    excess_kurtosis: float
    compensated_final: float
    window_means: list = field(default_factory=list)


def innovations_statistics(ft, n_windows=10):
    """Summaries of the innovations ``dY - pi(h) dt`` of one filter run.

    ``variance_slope`` is the realised quadratic variation per unit time and
    ``excess_kurtosis`` refers to increments normalised by ``sqrt(dt)``.
    """
    innov = np.asarray(ft.innovations, dtype=float)
    dt = float(ft.grid[1] - ft.grid[0])
    T = dt * len(innov)
    cum = np.concatenate([[0.0], np.cumsum(innov)])
    z = innov / math.sqrt(dt)
    kurt = float(stats.kurtosis(z)) if np.std(z) > 0 else math.nan
    windows = [float(np.mean(w)) / dt for w in np.array_split(innov, n_windows) if len(w)]
    return InnovationStats(
        cumulative=cum,
        mean=float(np.mean(innov)) / dt,
        variance_slope=float(math.fsum(innov * innov)) / T,
        excess_kurtosis=kurt,
        compensated_final=float(cum[-1]),
        window_means=windows,
    )


def record_from_increments(grid, increments, scheme):
    return MeasurementRecord(grid, increments, scheme)
