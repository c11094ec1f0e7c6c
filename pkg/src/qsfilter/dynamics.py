"""Truth simulation of conditional states and measurement records.

Homodyne and counting trajectories are generated by the Ito-Euler form of
the conditional master equation, one trajectory per random stream.  All
trajectories of an ensemble are advanced together as a stack of vectorised
density matrices, which keeps ensembles of tens of thousands of qubit
trajectories affordable.
"""

from dataclasses import dataclass
from enum import Enum
import math

import numpy as np

from . import hilbert as hb
from . import _kernels as _k
from .errors import DimensionMismatchError, PositivityViolationError
from .rng import MEASUREMENT, stream

MAX_DT = 0.01
MAX_STEPS = 10**7
MAX_JUMP_PROB = 0.1
RATE_FLOOR = 1e-12
# Euler overshoot below zero scales like |<psi_perp|L|psi>|^2 (dW^2 - dt); 100 dt covers ~10 sigma.
REPAIR_TOL_PER_DT = 100.0
NOISE_CHUNK = 4096


class Scheme(str, Enum):
    HOMODYNE = "homodyne"
    COUNTING = "counting"


@dataclass(frozen=True)
class SimConfig:
    dt: float
    t_max: float
    seed: int = 0
    scheme: Scheme = Scheme.HOMODYNE

    def __post_init__(self):
        object.__setattr__(self, "scheme", Scheme(self.scheme))
        if not (self.dt > 0 and self.t_max > 0):
            raise ValueError("dt and t_max must be positive")
        if self.dt > MAX_DT:
            raise ValueError(f"dt = {self.dt} exceeds the Euler stability guard {MAX_DT}")
        if self.t_max / self.dt > MAX_STEPS:
            raise ValueError(f"t_max/dt exceeds {MAX_STEPS} steps")
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError("seed must be an unsigned 64-bit integer")

    @property
    def n_steps(self):
        return int(round(self.t_max / self.dt))

    @property
    def grid(self):
        return self.dt * np.arange(self.n_steps + 1)


@dataclass
class MeasurementRecord:
    grid: np.ndarray
    increments: np.ndarray
    scheme: Scheme

    def __post_init__(self):
        self.grid = np.asarray(self.grid, dtype=float)
        self.increments = np.asarray(self.increments, dtype=float)
        self.scheme = Scheme(self.scheme)
        if len(self.grid) != len(self.increments) + 1:
            raise ValueError("record needs one increment per grid interval")
        steps = np.diff(self.grid)
        if steps.size and np.max(np.abs(steps - steps[0])) > 1e-12:
            raise ValueError("record grid spacing is not uniform")
        if self.scheme is Scheme.COUNTING and not np.all((self.increments == 0) | (self.increments == 1)):
            raise ValueError("counting increments must be exactly 0 or 1")

    @property
    def dt(self):
        return float(self.grid[1] - self.grid[0])

    @property
    def path(self):
        return np.concatenate([[0.0], np.cumsum(self.increments)])


@dataclass
class Trajectory:
    grid: np.ndarray
    states: np.ndarray
    record: MeasurementRecord


def default_repair_tol(m, dt):
    norm_l = np.linalg.norm(m.L, 2)
    return REPAIR_TOL_PER_DT * dt * max(1.0, norm_l**2)


class StackStepper:
    """Owns the superoperators of one model and steps stacks of states in place."""

    def __init__(self, m, scheme, dt, tol=None):
        self.m = m
        self.scheme = Scheme(scheme)
        self.dt = float(dt)
        self.sup = hb.Superoperators(m)
        self.tol = default_repair_tol(m, dt) if tol is None else tol
        s = self.sup
        self._drift = np.ascontiguousarray(s.drift)
        self._gain = np.ascontiguousarray(s.gain)
        self._jump = np.ascontiguousarray(s.jump)
        self._h = np.ascontiguousarray(s.tr_homodyne if self.scheme is Scheme.HOMODYNE else s.tr_rate)
        self.kernels = _k.kernels_for(m.dim)

    def step(self, rhos, drive, from_record, repair=True, step=None, indices=None):
        """Advance ``rhos`` in place; returns ``(increment, innovation_or_rate)``.

        Homodyne returns ``(dY, innovation)``; counting returns ``(dN, rate)``.
        """
        n, d = rhos.shape[0], rhos.shape[-1]
        if d != self.m.dim:
            raise DimensionMismatchError(f"states have dimension {d}, model has {self.m.dim}")
        flat = rhos.reshape(n, d * d)
        if not np.shares_memory(flat, rhos):
            raise ValueError("state stack must be C-contiguous")
        out1 = np.empty(n)
        out2 = np.empty(n)
        err = _k.new_err()
        drive = np.ascontiguousarray(drive, dtype=float)
        if self.scheme is Scheme.HOMODYNE:
            self.kernels.homodyne_stack(flat, drive, self.dt, self._drift, self._gain, self._h,
                              from_record, repair, self.tol, out1, out2, err)
        else:
            self.kernels.counting_stack(flat, drive, self.dt, self._drift, self._jump, self._h,
                              from_record, repair, self.tol, RATE_FLOOR, MAX_JUMP_PROB, out1, out2, err)
        _k.raise_for(err, step, indices, self.tol)
        return out1, out2

    def functional(self, X):
        return np.ascontiguousarray(self.sup.functional(X))

    def measure(self, rhos, f):
        out = np.empty(rhos.shape[0])
        self.kernels.measure_stack(rhos.reshape(rhos.shape[0], -1), f, out)
        return out


@dataclass
class EnsembleResult:
    """Per-trajectory quantities sampled every ``stride`` steps.

    ``compensator`` is the running integral of the predicted observation drift
    (``<L+L*>`` or ``<L*L>``), so ``record_path - compensator`` is the
    innovations path.
    """

    times: np.ndarray
    indices: np.ndarray
    expectations: dict
    record_path: np.ndarray
    compensator: np.ndarray
    states: np.ndarray | None = None
    increments: np.ndarray | None = None
    max_trace_error: float = 0.0
    min_eigenvalue: float = math.inf
    max_purity_loss: float = 0.0


class EnsembleRunner:
    """Advance the trajectories ``indices`` of a master seed in lock-step.

    Trajectory ``i`` uses the stream ``(seed, i, MEASUREMENT)``, so a runner
    built for a single index reproduces that member of any ensemble.
    """

    def __init__(self, m, cfg, indices=(0,), rho0=None, noise=None):
        self.m = m
        self.cfg = cfg
        self.indices = np.asarray(list(indices), dtype=np.int64)
        self.rho0 = m.rho0 if rho0 is None else hb.check_density(rho0, "rho0")
        self.stepper = StackStepper(m, cfg.scheme, cfg.dt)
        self._noise = None if noise is None else np.atleast_2d(np.asarray(noise, dtype=float))
        if self._noise is not None and self._noise.shape != (len(self.indices), cfg.n_steps):
            raise ValueError(f"noise must have shape {(len(self.indices), cfg.n_steps)}")

    def _noise_chunks(self):
        n = self.cfg.n_steps
        if self._noise is not None:
            yield self._noise
            return
        gens = [stream(self.cfg.seed, i, MEASUREMENT) for i in self.indices]
        sd = math.sqrt(self.cfg.dt)
        for start in range(0, n, NOISE_CHUNK):
            size = min(NOISE_CHUNK, n - start)
            if self.cfg.scheme is Scheme.HOMODYNE:
                yield np.stack([g.standard_normal(size) for g in gens]) * sd
            else:
                yield np.stack([g.random(size) for g in gens])

    def initial(self):
        return np.repeat(self.rho0[None], len(self.indices), axis=0)

    def steps(self):
        """Yield ``(k, rhos, dY, h)`` after each step ``k = 1..n``.

        ``rhos`` is the live (repaired) stack, ``dY`` the record increments and
        ``h`` the predicted drift ``<L+L*>`` or ``<L*L>`` evaluated before the step.
        """
        rhos = self.initial()
        f = self.stepper._h
        k = 0
        for chunk in self._noise_chunks():
            chunk = np.ascontiguousarray(chunk.T)
            for col in range(chunk.shape[0]):
                k += 1
                h = self.stepper.measure(rhos, f)
                dY, _ = self.stepper.step(rhos, chunk[col], False, step=k, indices=self.indices)
                yield k, rhos, dY, h

    def run(self, observables=None, stride=1, keep_states=False, keep_increments=False):
        observables = dict(observables or {})
        funcs = {name: self.stepper.functional(X) for name, X in observables.items()}
        n, ntraj = self.cfg.n_steps, len(self.indices)
        store = list(range(0, n + 1, stride))
        if store[-1] != n:
            store.append(n)
        slot = {k: j for j, k in enumerate(store)}
        exps = {name: np.empty((ntraj, len(store))) for name in funcs}
        ypath = np.zeros((ntraj, len(store)))
        comp = np.zeros((ntraj, len(store)))
        states = np.empty((ntraj, len(store), self.m.dim, self.m.dim), dtype=complex) if keep_states else None
        incs = np.empty((ntraj, n)) if keep_increments else None
        y = np.zeros(ntraj)
        c = np.zeros(ntraj)
        worst = [0.0, math.inf, math.inf]

        def check(rhos):
            tr, lam, pur = self.stepper.kernels.hygiene_stack(rhos.reshape(rhos.shape[0], -1))
            worst[0] = max(worst[0], tr)
            worst[1] = min(worst[1], lam)
            worst[2] = min(worst[2], pur)

        def record(k, rhos):
            j = slot[k]
            for name, f in funcs.items():
                exps[name][:, j] = self.stepper.measure(rhos, f)
            ypath[:, j] = y
            comp[:, j] = c
            if keep_states:
                states[:, j] = rhos

        rhos = self.initial()
        check(rhos)
        record(0, rhos)
        for k, rhos, dY, h in self.steps():
            c += h * self.cfg.dt
            y += dY
            if incs is not None:
                incs[:, k - 1] = dY
            check(rhos)
            if k in slot:
                record(k, rhos)
        return EnsembleResult(
            times=self.cfg.dt * np.asarray(store, dtype=float),
            indices=self.indices,
            expectations=exps,
            record_path=ypath,
            compensator=comp,
            states=states,
            increments=incs,
            max_trace_error=worst[0],
            min_eigenvalue=worst[1],
            max_purity_loss=float(hb.purity(self.rho0)) - worst[2],
        )


def _single(m, cfg, scheme, seed, index, noise=None):
    if cfg.scheme is not scheme:
        raise ValueError(f"config scheme is {cfg.scheme.value}, expected {scheme.value}")
    if seed is not None:
        cfg = SimConfig(cfg.dt, cfg.t_max, seed, cfg.scheme)
    runner = EnsembleRunner(m, cfg, [index], noise=None if noise is None else np.asarray(noise)[None])
    res = runner.run(keep_states=True, keep_increments=True)
    grid = cfg.grid
    return Trajectory(grid, res.states[0], MeasurementRecord(grid, res.increments[0], scheme))


def simulate_homodyne(m, cfg, seed=None, index=0, noise=None):
    """One homodyne trajectory; ``noise`` optionally supplies the Wiener increments."""
    return _single(m, cfg, Scheme.HOMODYNE, seed, index, noise)


def simulate_counting(m, cfg, seed=None, index=0):
    return _single(m, cfg, Scheme.COUNTING, seed, index)


def simulate(m, cfg, seed=None, index=0):
    if Scheme(cfg.scheme) is Scheme.HOMODYNE:
        return simulate_homodyne(m, cfg, seed, index)
    return simulate_counting(m, cfg, seed, index)


def lindblad_evolve(m, grid, rho0=None):
    """Unconditional states on ``grid`` by classical RK4 on ``d rho/dt = L^dag(rho)``."""
    grid = np.asarray(grid, dtype=float)
    steps = np.diff(grid)
    if steps.size and (steps.max() > MAX_DT * (1 + 1e-9) or steps.min() <= 0):
        raise ValueError(f"grid steps must lie in (0, {MAX_DT}]")
    sup = hb.Superoperators(m)
    A = sup.drift.T
    v = sup.vec(m.rho0 if rho0 is None else rho0)
    out = np.empty((len(grid), m.dim, m.dim), dtype=complex)
    out[0] = sup.unvec(v)
    for k, h in enumerate(steps, start=1):
        k1 = v @ A
        k2 = (v + 0.5 * h * k1) @ A
        k3 = (v + 0.5 * h * k2) @ A
        k4 = (v + h * k3) @ A
        v = v + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        try:
            v = sup.vec(hb.repair_state(sup.unvec(v), hb.EIGEN_TOL))
        except PositivityViolationError as exc:
            raise PositivityViolationError(exc.eigenvalue, exc.tol, step=k) from None
        out[k] = sup.unvec(v)
    return out


def born_samples(rhos, X, u):
    """Projective measurement outcomes of ``X`` on each state given uniforms ``u``."""
    w, vecs = np.linalg.eigh(np.asarray(X, dtype=complex))
    probs = np.real(np.einsum("ia,tij,ja->ta", vecs.conj(), np.asarray(rhos), vecs))
    probs = np.clip(probs, 0.0, None)
    probs /= probs.sum(axis=1, keepdims=True)
    k = (np.cumsum(probs, axis=1) < u[:, None]).sum(axis=1)
    return w[np.minimum(k, len(w) - 1)]
