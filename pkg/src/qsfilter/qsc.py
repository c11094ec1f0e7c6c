"""Classical versions of the vacuum noise processes.

A process ``dZ = alpha dA + beta dA*`` (plus ``gamma dLambda`` for the
compensated counting part) is summarised by its covariance kernel
``c(s, t)``.  This module builds those kernels, checks the quantum Markov
factorisation ``c(t,s) c(u,u) = c(t,u) c(u,s)`` and the martingale criterion
``c(s,t) = c(s,s)``, samples the classical Gaussian and counting versions,
and evaluates time-ordered moments through chained transition kernels.
"""

from dataclasses import dataclass, field
import math
from typing import Callable

import numpy as np
from scipy import integrate

from .errors import (
    ClassicalityViolationError,
    InvalidCovarianceError,
    InvalidKernelError,
    StepTooCoarseError,
)
from .rng import stream

COEFF_TOL = 1e-12
PSD_TOL = 1e-10
QUAD_TOL = 1e-10
MAX_EVENT_PROB = 0.1
N_QUAD = 64
Z_CUT = 12.0

_GH_NODES, _GH_WEIGHTS = np.polynomial.hermite_e.hermegauss(N_QUAD)
_GH_WEIGHTS = _GH_WEIGHTS / math.sqrt(2 * math.pi)
_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(N_QUAD)


def _as_callable(value):
    if callable(value):
        return value
    return lambda t, _v=value: _v


def _evaluate(fn, grid):
    return np.array([complex(fn(float(t))) for t in grid])


@dataclass(frozen=True)
class NoiseCoefficients:
    """Time-dependent coefficients of ``alpha dA + beta dA* + gamma dLambda`` on ``[0, t_max]``."""

    alpha: Callable
    beta: Callable
    gamma: Callable = 0.0
    t_max: float = 1.0
    constant_rate: float | None = field(default=None, compare=False)

    def __post_init__(self):
        for name in ("alpha", "beta", "gamma"):
            object.__setattr__(self, name, _as_callable(getattr(self, name)))

    @classmethod
    def constant(cls, alpha=1.0, gamma=0.0, t_max=1.0):
        """Constant self-adjoint coefficients ``beta = conj(alpha)``."""
        alpha = complex(alpha)
        return cls(alpha, alpha.conjugate(), float(gamma), t_max, constant_rate=abs(alpha) ** 2)

    def check_classical(self, n_grid=257):
        grid = np.linspace(0.0, self.t_max, n_grid)
        a = _evaluate(self.alpha, grid)
        b = _evaluate(self.beta, grid)
        g = _evaluate(self.gamma, grid)
        dev = np.max(np.abs(b - np.conj(a)))
        if dev > COEFF_TOL:
            raise ClassicalityViolationError(f"beta != conj(alpha): max deviation {dev:.3e}")
        if np.max(np.abs(g.imag)) > COEFF_TOL or np.min(g.real) < -COEFF_TOL:
            raise ClassicalityViolationError("gamma must be real and non-negative")
        return self


class CovarianceFunction:
    """Symmetric kernel ``c(s, t)`` on ``[0, t_max]``.

    ``evaluator`` must broadcast over numpy arrays.
    """

    def __init__(self, evaluator, t_max=math.inf, name="kernel"):
        self.evaluator = evaluator
        self.t_max = t_max
        self.name = name

    def __call__(self, s, t):
        out = self.evaluator(np.asarray(s, dtype=float), np.asarray(t, dtype=float))
        return float(out) if np.ndim(out) == 0 else out

    def gram(self, grid):
        grid = np.asarray(grid, dtype=float)
        return np.asarray(self.evaluator(grid[:, None], grid[None, :]), dtype=float)

    def validate(self, grid):
        G = self.gram(grid)
        asym = np.max(np.abs(G - G.T)) if G.size else 0.0
        if asym > PSD_TOL:
            raise InvalidCovarianceError(f"{self.name}: asymmetric Gram matrix ({asym:.3e})")
        lam = np.linalg.eigvalsh(0.5 * (G + G.T)).min() if G.size else 0.0
        if lam < -PSD_TOL:
            raise InvalidCovarianceError(f"{self.name}: Gram matrix indefinite, min eigenvalue {lam:.3e}")
        return G

    def __repr__(self):
        return f"CovarianceFunction({self.name})"


class IntegratedCovariance(CovarianceFunction):
    """Kernel of independent-increment form ``c(s,t) = integral_0^min(s,t) rate(u) du``."""

    def __init__(self, rate, t_max=math.inf, name="integrated"):
        self.rate = rate
        super().__init__(self._evaluate, t_max, name)

    def variance(self, x):
        x = np.asarray(x, dtype=float)
        flat = x.reshape(-1)
        order = np.argsort(flat)
        out = np.empty_like(flat)
        acc, prev = 0.0, 0.0
        for idx in order:
            xi = flat[idx]
            if xi > prev:
                val, _ = integrate.quad(self.rate, prev, xi, epsabs=QUAD_TOL, epsrel=QUAD_TOL, limit=200)
                acc += val
                prev = xi
            out[idx] = acc
        return out.reshape(x.shape)

    def _evaluate(self, s, t):
        return self.variance(np.minimum(s, t))

    def gram(self, grid):
        grid = np.asarray(grid, dtype=float)
        var = self.variance(grid)
        i = np.arange(len(grid))
        lo = np.where(grid[:, None] <= grid[None, :], i[:, None], i[None, :])
        return var[lo]


class AnalyticMartingaleCovariance(CovarianceFunction):
    """``c(s,t) = rate * min(s,t)`` in closed form."""

    def __init__(self, rate=1.0, t_max=math.inf, name="brownian"):
        self.rate = float(rate)
        super().__init__(lambda s, t: self.rate * np.minimum(s, t), t_max, name)


def brownian_covariance(t_max=math.inf):
    return AnalyticMartingaleCovariance(1.0, t_max, "min(s,t)")


def ou_covariance(rate=1.0):
    return CovarianceFunction(lambda s, t: np.exp(-rate * np.abs(t - s)), name=f"exp(-{rate}|t-s|)")


def integrated_brownian_covariance():
    """Covariance of ``integral_0^t W_u du``; Gaussian but not Markov."""

    def c(s, t):
        lo, hi = np.minimum(s, t), np.maximum(s, t)
        return lo**2 * (3 * hi - lo) / 6.0

    return CovarianceFunction(c, name="integrated BM")


def vacuum_covariance(nc):
    """Vacuum covariance ``integral_0^min(s,t) alpha(u) beta(u) du`` of ``alpha dA + beta dA*``."""
    nc.check_classical()
    if nc.constant_rate is not None:
        return AnalyticMartingaleCovariance(nc.constant_rate, nc.t_max, f"{nc.constant_rate:g}*min(s,t)")

    def rate(u):
        return (complex(nc.alpha(u)) * complex(nc.beta(u))).real

    return IntegratedCovariance(rate, nc.t_max, "vacuum")


def counting_compensated_covariance(nc, intensity=1.0):
    """Covariance of ``Z_t + integral gamma (dN - intensity du)`` with Poisson ``N``."""
    nc.check_classical()
    lam = _as_callable(intensity)
    if nc.constant_rate is not None and not callable(intensity):
        gamma = complex(nc.gamma(0.0)).real
        total = nc.constant_rate + float(intensity) * gamma**2
        return AnalyticMartingaleCovariance(total, nc.t_max, f"{total:g}*min(s,t)")

    def rate(u):
        a = complex(nc.alpha(u))
        g = complex(nc.gamma(u)).real
        return abs(a) ** 2 + float(lam(u)) * g * g

    return IntegratedCovariance(rate, nc.t_max, "compensated counting")


def markov_defect(c, grid):
    """Largest ``|c(t,s)c(u,u) - c(t,u)c(u,s)|`` over grid triples ``s <= u <= t``."""
    grid = np.sort(np.asarray(grid, dtype=float))
    G = c.gram(grid)
    n = len(grid)
    if n == 0:
        return 0.0
    # axes (s, u, t) = (i, j, k)
    i, j, k = np.meshgrid(np.arange(n), np.arange(n), np.arange(n), indexing="ij")
    mask = (i <= j) & (j <= k)
    lhs = G[k, i] * G[j, j]
    rhs = G[k, j] * G[j, i]
    return float(np.max(np.abs(lhs - rhs)[mask]))


def is_quantum_markov(c, grid, tol):
    return markov_defect(c, grid) <= tol


def martingale_defect(c, grid):
    grid = np.sort(np.asarray(grid, dtype=float))
    G = c.gram(grid)
    if G.size == 0:
        return 0.0
    upper = np.triu(np.ones_like(G, dtype=bool))
    return float(np.max(np.abs(G - np.diag(G)[:, None])[upper]))


def is_martingale_covariance(c, grid, tol):
    return martingale_defect(c, grid) <= tol


@dataclass
class SamplePath:
    grid: np.ndarray
    values: np.ndarray


def gaussian_factor(G):
    """Return ``F`` with ``F @ F.T == G`` for a PSD Gram matrix.

    Rows with zero variance are deterministic zeros; the rest are Cholesky
    factored, with an eigen-factor fallback for singular blocks.
    """
    G = 0.5 * (G + G.T)
    if G.size and np.linalg.eigvalsh(G).min() < -PSD_TOL:
        raise InvalidCovarianceError(f"Gram matrix indefinite: min eigenvalue {np.linalg.eigvalsh(G).min():.3e}")
    F = np.zeros_like(G)
    live = np.flatnonzero(np.diag(G) > PSD_TOL)
    if live.size:
        sub = G[np.ix_(live, live)]
        try:
            chol = np.linalg.cholesky(sub)
        except np.linalg.LinAlgError:
            w, v = np.linalg.eigh(sub)
            chol = v * np.sqrt(np.clip(w, 0.0, None))
        F[np.ix_(live, live)] = chol
    return F


def sample_gaussian_paths(c, grid, n_paths, seed):
    """``n_paths`` mean-zero Gaussian paths with covariance ``c`` on ``grid``."""
    grid = np.asarray(grid, dtype=float)
    F = gaussian_factor(c.gram(grid))
    z = stream(seed).standard_normal((n_paths, len(grid)))
    return z @ F.T


def sample_gaussian_version(c, grid, seed):
    grid = np.asarray(grid, dtype=float)
    return SamplePath(grid, sample_gaussian_paths(c, grid, 1, seed)[0])


def _intensity_steps(intensity, grid):
    lam = _as_callable(intensity)
    grid = np.asarray(grid, dtype=float)
    dt = np.diff(grid)
    rates = np.array([float(lam(t)) for t in grid[:-1]])
    if np.any(rates < 0):
        raise ValueError("intensity must be non-negative")
    p = rates * dt
    if p.size and p.max() > MAX_EVENT_PROB:
        k = int(np.argmax(p))
        raise StepTooCoarseError(f"intensity*dt = {p[k]:.3g} > {MAX_EVENT_PROB} at t = {grid[k]:.6g}")
    return p


def compensator(intensity, grid):
    """Left-point integral of the intensity, the exact compensator of the thinned counts."""
    p = _intensity_steps(intensity, grid)
    return np.concatenate([[0.0], np.cumsum(p)])


def sample_counting_paths(intensity, grid, n_paths, seed):
    p = _intensity_steps(intensity, grid)
    u = stream(seed).random((n_paths, len(p)))
    jumps = (u < p).astype(np.int64)
    return np.concatenate([np.zeros((n_paths, 1), dtype=np.int64), np.cumsum(jumps, axis=1)], axis=1)


def sample_counting_version(intensity, grid, seed):
    grid = np.asarray(grid, dtype=float)
    return SamplePath(grid, sample_counting_paths(intensity, grid, 1, seed)[0])


@dataclass(frozen=True)
class MomentFunction:
    """Vectorised real function with the interval outside which it vanishes."""

    fn: Callable
    support: tuple = (-math.inf, math.inf)
    label: str = "h"

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        out = np.asarray(self.fn(x), dtype=float)
        return np.broadcast_to(out, x.shape) if out.shape != x.shape else out

    def __mul__(self, other):
        lo = max(self.support[0], other.support[0])
        hi = min(self.support[1], other.support[1])
        return MomentFunction(lambda x: self(x) * other(x), (lo, hi), f"{self.label}*{other.label}")


def coordinate():
    return MomentFunction(lambda x: x, label="x")


def square():
    return MomentFunction(lambda x: x * x, label="x^2")


def indicator(a, b):
    a, b = float(a), float(b)
    return MomentFunction(lambda x: ((x >= a) & (x <= b)).astype(float), (a, b), f"1[{a:g},{b:g}]")


def constant(value=1.0):
    value = float(value)
    return MomentFunction(lambda x: np.full(np.shape(x), value), label=f"{value:g}")


def gaussian_average(h, mean, var):
    """``E[h(mean + sqrt(var) Z)]`` for standard normal ``Z``, elementwise in ``mean``.

    Unbounded supports use 64-node Gauss-Hermite; bounded ones use 64-node
    Gauss-Legendre on the support mapped to ``z`` (cut at +-12).
    """
    mean = np.asarray(mean, dtype=float)
    if var <= 0:
        return h(mean)
    sd = math.sqrt(var)
    lo, hi = h.support
    if math.isinf(lo) and math.isinf(hi):
        vals = h(mean[..., None] + sd * _GH_NODES)
        return vals @ _GH_WEIGHTS
    za = np.clip((lo - mean) / sd, -Z_CUT, Z_CUT)
    zb = np.clip((hi - mean) / sd, -Z_CUT, Z_CUT)
    mid = 0.5 * (za + zb)
    half = 0.5 * (zb - za)
    z = mid[..., None] + half[..., None] * _GL_NODES
    phi = np.exp(-0.5 * z * z) / math.sqrt(2 * math.pi)
    vals = h(mean[..., None] + sd * z) * phi
    return half * (vals @ _GL_WEIGHTS)


def transition_apply(h, s, t, c):
    """Transition operator ``(K_{s,t} h)(x) = E[h(X_t) | X_s = x]`` of a Gaussian martingale kernel."""
    if t < s:
        raise InvalidKernelError(f"transition needs s <= t, got s={s}, t={t}")
    if abs(c(s, t) - c(s, s)) > PSD_TOL:
        raise InvalidKernelError(f"kernel {c.name} is not a martingale kernel at ({s}, {t})")
    var = c(t, t) - c(s, s)
    if var < -PSD_TOL:
        raise InvalidKernelError(f"negative variance increment {var:.3e} on [{s}, {t}]")
    if var <= 0:
        return h
    return MomentFunction(lambda x: gaussian_average(h, x, var), label=f"K[{s:g},{t:g}]({h.label})")


@dataclass(frozen=True)
class MomentSpec:
    times: tuple
    functions: tuple

    def __post_init__(self):
        times = tuple(float(t) for t in self.times)
        functions = tuple(self.functions)
        if len(times) < 1 or len(times) != len(functions):
            raise ValueError("MomentSpec needs n >= 1 times and as many functions")
        if any(b < a for a, b in zip(times, times[1:])):
            raise ValueError("MomentSpec times must be ascending")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "functions", functions)

    @property
    def label(self):
        return " ".join(f"{h.label}@{t:g}" for t, h in zip(self.times, self.functions))

    def evaluate_paths(self, values):
        """Product ``h_1(V_{t_1})...h_n(V_{t_n})`` for sampled columns ``values``."""
        out = np.ones(values.shape[0])
        for k, h in enumerate(self.functions):
            out *= h(values[:, k])
        return out


def time_ordered_moment(spec, c):
    """``E[h_1(X_{t_1})...h_n(X_{t_n})]`` via ``(h_1 . K(h_2 . K(...)))`` against the law of ``X_{t_1}``."""
    g = spec.functions[-1]
    for k in range(len(spec.times) - 2, -1, -1):
        g = spec.functions[k] * transition_apply(g, spec.times[k], spec.times[k + 1], c)
    t1 = spec.times[0]
    var = c(t1, t1)
    if var < -PSD_TOL:
        raise InvalidKernelError(f"negative variance {var:.3e} at t={t1}")
    return float(gaussian_average(g, np.array(0.0), max(var, 0.0)))


def standard_moment_family():
    """The fixed set of moment specifications exercised by the checks."""
    x, x2 = coordinate(), square()
    return [
        MomentSpec((1.0,), (x,)),
        MomentSpec((1.0,), (x2,)),
        MomentSpec((0.5, 1.0), (x, x)),
        MomentSpec((0.5, 1.0), (x, constant())),
        MomentSpec((0.5, 1.0), (x2, x2)),
        MomentSpec((0.5,), (indicator(0.0, 1.0),)),
        MomentSpec((0.25, 1.0), (indicator(-0.5, 0.5), x2)),
        MomentSpec((0.5, 1.0), (x, indicator(0.0, math.inf))),
        MomentSpec((0.25, 0.5, 1.0), (x, x, x2)),
        MomentSpec((0.25, 0.5, 1.0), (indicator(0.0, math.inf), indicator(-1.0, 0.2), x)),
    ]
