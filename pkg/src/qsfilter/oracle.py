"""Independent references for validating the filters.

The Kraus/Bayes filter treats each time step as a discrete generalized
measurement and conditions by Bayes' rule, so it shares no Ito calculus with
the continuous filters.  The statistical checks compare filter output with
Monte-Carlo evidence in units of the estimated standard error.
"""

from dataclasses import dataclass, field
import math

import numpy as np

from . import hilbert as hb
from . import qsc
from .dynamics import EnsembleRunner, Scheme, SimConfig, born_samples, lindblad_evolve, simulate_homodyne
from .errors import DegenerateUpdateError, NumericalConsistencyError
from .filters import FilterBank, FilterTrajectory, _tracked_dict, run_filter
from .rng import AUXILIARY, MEASUREMENT, stream

NORM_FLOOR = 1e-300
COMPLETENESS_FACTOR = 10.0
SIGMA_BAND = 3.0
EXACT_TOL = 1e-12


def fsum_mean(values, axis=0):
    """Mean along ``axis`` with compensated summation (order-insensitive)."""
    values = np.moveaxis(np.asarray(values, dtype=float), axis, -1)
    n = values.shape[-1]
    flat = values.reshape(-1, n)
    out = np.array([math.fsum(row) for row in flat]) / n
    return out.reshape(values.shape[:-1]) if values.ndim > 1 else float(out[0])


def _z_score(diff, sigma):
    if sigma > 0:
        return diff / sigma
    return 0.0 if abs(diff) <= EXACT_TOL else math.copysign(math.inf, diff)


@dataclass(frozen=True)
class KrausStep:
    """Measurement operators of one time step.

    Counting: ``(M0, M1)`` for no-count and count.  Homodyne: ``(A, L)`` with
    ``M(y) = A + y L`` for an outcome ``y`` drawn from the reference measure
    Normal(0, dt), so completeness reads ``A* A + dt L* L = I + O(dt^2)``.
    """

    operators: tuple
    scheme: Scheme
    dt: float

    def completeness_defect(self):
        a, b = self.operators
        total = a.conj().T @ a + b.conj().T @ b * (self.dt if self.scheme is Scheme.HOMODYNE else 1.0)
        return float(np.linalg.norm(total - np.eye(a.shape[0]), 2))

    def bound(self):
        """Tolerance 10 dt^2, widened by the size of the no-jump generator for strong models."""
        a = self.operators[0]
        K = (a - np.eye(a.shape[0])) / self.dt
        return COMPLETENESS_FACTOR * max(1.0, float(np.linalg.norm(K.conj().T @ K, 2))) * self.dt**2

    def check(self):
        defect = self.completeness_defect()
        bound = self.bound()
        if defect > bound:
            raise NumericalConsistencyError(f"Kraus completeness defect {defect:.3e} > {bound:.3e}")
        return defect

    def operator(self, increment):
        a, b = self.operators
        if self.scheme is Scheme.HOMODYNE:
            return a + increment * b
        return b if increment else a


def kraus_step(m, scheme, dt):
    scheme = Scheme(scheme)
    L = m.L
    no_jump = np.eye(m.dim) + (-1j * m.H - 0.5 * L.conj().T @ L) * dt
    if scheme is Scheme.HOMODYNE:
        return KrausStep((no_jump, L.copy()), scheme, dt)
    return KrausStep((no_jump, L * math.sqrt(dt)), scheme, dt)


def bayes_update(M, rho, step=None):
    post = M @ rho @ M.conj().T
    norm = float(np.trace(post).real)
    if not norm >= NORM_FLOOR:
        where = "" if step is None else f" at step {step}"
        raise DegenerateUpdateError(f"Bayes normalization {norm:.3e} vanished{where}")
    post = post / norm
    return 0.5 * (post + post.conj().T)


def kraus_bayes_filter(m, record, tracked=None, rho0=None):
    """Condition on ``record`` by repeated discrete measurements with Bayes' rule."""
    tracked = _tracked_dict(tracked)
    ks = kraus_step(m, record.scheme, record.dt)
    ks.check()
    L = m.L
    h = L.conj().T @ L if record.scheme is Scheme.COUNTING else L + L.conj().T
    rho = m.rho0 if rho0 is None else hb.check_density(rho0, "rho0")
    n = len(record.increments)
    states = np.empty((n + 1, m.dim, m.dim), dtype=complex)
    states[0] = rho
    innov = np.empty(n)
    for k, dy in enumerate(record.increments):
        innov[k] = dy - hb.expectation(rho, h) * record.dt
        rho = bayes_update(ks.operator(dy), rho, step=k + 1)
        states[k + 1] = rho
    moments = {name: hb.expectation(states, X) for name, X in tracked.items()}
    return FilterTrajectory(record.grid.copy(), states, moments, innov, record.scheme)


@dataclass
class Deviation:
    label: str
    expected: float
    actual: float
    sigma: float
    z: float
    passed: bool
    tolerance: str = ""


@dataclass
class CheckReport:
    name: str
    rows: list = field(default_factory=list)

    @property
    def passed(self):
        return all(r.passed for r in self.rows)

    def add(self, label, expected, actual, sigma, band=SIGMA_BAND):
        z = _z_score(actual - expected, sigma)
        row = Deviation(label, float(expected), float(actual), float(sigma), float(z), bool(abs(z) <= band), f"|z| <= {band:g}")
        self.rows.append(row)
        return row

    def add_bound(self, label, actual, upper=None, lower=None):
        """Deterministic check ``lower <= actual <= upper``."""
        actual = float(actual)
        ok = (upper is None or actual <= upper) and (lower is None or actual >= lower)
        parts = ([f">= {lower:g}"] if lower is not None else []) + ([f"<= {upper:g}"] if upper is not None else [])
        expected = upper if upper is not None else lower
        row = Deviation(label, float(expected), actual, 0.0, math.nan, bool(ok), " and ".join(parts))
        self.rows.append(row)
        return row

    def worst(self):
        return max((abs(r.z) for r in self.rows), default=0.0)


def _observation_functionals(record_half):
    """The conditioning family ``g`` evaluated on ``Y_{t/2}``."""
    return {
        "1": np.ones_like(record_half),
        "Y(t/2)": record_half,
        "1[Y(t/2)>0]": (record_half > 0).astype(float),
    }


def tower_property_check(m, scheme, n_traj, seed=0, X=None, times=(0.5, 1.0, 2.0), dt=1e-3, filter_rho0=None):
    """Compare ``E[pi_t(X) g(Y)]`` with ``E[x_t g(Y)]``.

    ``x_t`` is a projective measurement outcome of ``X`` drawn (from the
    auxiliary stream) on the hidden truth state, so the right-hand side uses
    no filter output.  A filter started from ``filter_rho0`` runs on the
    truth record.  The paired difference gives the standard error.
    """
    if n_traj < 1000:
        raise ValueError("tower_property_check needs n_traj >= 1000")
    X = hb.SIGMA_Z if X is None else hb.check_hermitian(X, "X")
    times = sorted(float(t) for t in times)
    cfg = SimConfig(dt, times[-1], seed, scheme)
    half_steps = {int(round(0.5 * t / dt)) for t in times}
    at_steps = {int(round(t / dt)): t for t in times}
    runner = EnsembleRunner(m, cfg, range(n_traj))
    bank = FilterBank(m, cfg.scheme, dt, n_traj, filter_rho0)
    aux = [stream(seed, i, AUXILIARY) for i in range(n_traj)]
    y = np.zeros(n_traj)
    y_half = {}
    report = CheckReport(f"tower:{cfg.scheme.value}")
    for k, rhos, dY, _ in runner.steps():
        bank.step(dY, runner.indices)
        y += dY
        if k in half_steps:
            y_half[k] = y.copy()
        if k in at_steps:
            t = at_steps[k]
            pi = bank.measure(X)
            truth = hb.expectation(rhos, X)
            u = np.array([g.random() for g in aux])
            outcome = born_samples(rhos, X, u)
            for name, g in _observation_functionals(y_half[int(round(0.5 * k))]).items():
                diff = (pi - outcome) * g
                sigma = float(np.std(diff, ddof=1)) / math.sqrt(n_traj)
                report.add(f"t={t:g} g={name}", fsum_mean(outcome * g), fsum_mean(pi * g), sigma)
                exact = float(np.max(np.abs((pi - truth) * g)))
                report.add_bound(f"t={t:g} g={name} filter=truth", exact, upper=EXACT_TOL)
    return report


def ensemble_check(m, cfg, n_traj, observables=None, times=None, reference=None):
    """Ensemble means of conditional expectations against unconditional evolution.

    ``reference`` maps an observable name to a callable ``t -> value``; by
    default the RK4 Lindblad solution is used.
    """
    observables = {"sigma_z": hb.SIGMA_Z} if observables is None else dict(observables)
    times = [cfg.t_max] if times is None else sorted(float(t) for t in times)
    stride_steps = [int(round(t / cfg.dt)) for t in times]
    stride = math.gcd(*stride_steps) if len(stride_steps) > 1 else stride_steps[0]
    res = EnsembleRunner(m, cfg, range(n_traj)).run(observables, stride=max(stride, 1))
    ref_states = lindblad_evolve(m, cfg.grid) if reference is None else None
    report = CheckReport(f"ensemble:{cfg.scheme.value}")
    for t, k in zip(times, stride_steps):
        j = int(np.argmin(np.abs(res.times - t)))
        for name, X in observables.items():
            vals = res.expectations[name][:, j]
            mean = fsum_mean(vals)
            sigma = float(np.std(vals, ddof=1)) / math.sqrt(n_traj)
            ref = reference[name](t) if reference is not None else hb.expectation(ref_states[k], X)
            report.add(f"t={t:g} {name}", ref, mean, sigma)
    return report, res


def moment_mc_check(spec, c, n_paths=20000, seed=0):
    """Monte-Carlo estimate of one time-ordered moment against the chained-kernel value."""
    if n_paths < 10000:
        raise ValueError("moment_mc_check needs n_paths >= 10000")
    analytic = qsc.time_ordered_moment(spec, c)
    values = qsc.sample_gaussian_paths(c, np.asarray(spec.times), n_paths, seed)
    samples = spec.evaluate_paths(values)
    sigma = float(np.std(samples, ddof=1)) / math.sqrt(n_paths)
    report = CheckReport(f"moment:{spec.label}")
    report.add(spec.label, analytic, fsum_mean(samples), sigma)
    return report


@dataclass
class HalvingStudy:
    dts: np.ndarray
    rms: np.ndarray
    order: float

    @property
    def monotone(self):
        order = np.argsort(self.dts)
        return bool(np.all(np.diff(self.rms[order]) > 0))


def dt_halving_study(m, dts=(4e-3, 2e-3, 1e-3), n_paths=20, t_max=2.0, seed=0, X=None):
    """RMS gap between the Kraus/Bayes and Euler homodyne filters on coupled paths.

    Every path draws one Brownian path on the finest grid; coarser grids sum
    consecutive fine increments, so all step sizes see the same noise.
    """
    X = hb.SIGMA_Z if X is None else X
    dts = np.asarray(sorted(dts, reverse=True), dtype=float)
    fine = float(dts.min())
    ratios = np.rint(dts / fine).astype(int)
    if np.any(np.abs(ratios * fine - dts) > 1e-12 * dts):
        raise ValueError("step sizes must be integer multiples of the finest one")
    n_fine = int(round(t_max / fine))
    if np.any(n_fine % ratios):
        raise ValueError("t_max must be a multiple of every step size")
    sq = np.zeros(len(dts))
    for p in range(n_paths):
        dw = stream(seed, p, MEASUREMENT).standard_normal(n_fine) * math.sqrt(fine)
        for j, (dt, r) in enumerate(zip(dts, ratios)):
            noise = dw.reshape(-1, r).sum(axis=1)
            truth = simulate_homodyne(m, SimConfig(dt, t_max, seed, Scheme.HOMODYNE), index=p, noise=noise)
            euler = run_filter(m, truth.record, {"X": X})
            kraus = kraus_bayes_filter(m, truth.record, {"X": X})
            sq[j] += float(np.mean((kraus.moments["X"] - euler.moments["X"]) ** 2))
    rms = np.sqrt(sq / n_paths)
    order = float(np.polyfit(np.log(dts), np.log(rms), 1)[0])
    return HalvingStudy(dts, rms, order)
