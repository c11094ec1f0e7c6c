"""Named verification suites behind ``qsfilter verify``.

Each suite returns a list of :class:`~qsfilter.oracle.CheckReport`; a suite
passes iff every row passes.  Monte-Carlo rows use 3-sigma bands, exact
identities use absolute bounds.
"""

import math

import numpy as np

from . import filters as fl
from . import hilbert as hb
from . import oracle as orc
from . import qsc
from .dynamics import EnsembleRunner, Scheme, SimConfig, simulate

SUITES = ("covariance", "markov", "moments", "duality", "oracle", "ensemble")
DESK_DT = 1e-3
PREDICATE_GRID = np.linspace(0.1, 2.0, 12)


def covariance_suite(seed=0, n_paths=20000):
    rep = orc.CheckReport("covariance")
    c = qsc.brownian_covariance()
    v = qsc.sample_gaussian_paths(c, np.array([0.5, 1.0]), n_paths, seed)
    prod = v[:, 0] * v[:, 1]
    rep.add("E[V(0.5) V(1)] = min(0.5, 1)", 0.5, orc.fsum_mean(prod), np.std(prod, ddof=1) / math.sqrt(n_paths))
    sq = v[:, 1] ** 2
    rep.add("Var V(1) = 1", 1.0, orc.fsum_mean(sq), np.std(sq, ddof=1) / math.sqrt(n_paths))
    unit = qsc.NoiseCoefficients(lambda u: np.exp(1j * u), lambda u: np.exp(-1j * u), t_max=2.0)
    vac = qsc.vacuum_covariance(unit)
    grid = np.linspace(0.0, 2.0, 9)
    gap = np.max(np.abs(vac.gram(grid) - np.minimum.outer(grid, grid)))
    rep.add_bound("vacuum covariance with |alpha| = 1 equals min(s,t)", gap, upper=1e-8)
    gauge = qsc.counting_compensated_covariance(qsc.NoiseCoefficients.constant(0.0, 1.0, 2.0))
    gap = np.max(np.abs(gauge.gram(grid) - np.minimum.outer(grid, grid)))
    rep.add_bound("compensated unit-rate counting covariance equals min(s,t)", gap, upper=1e-8)
    return [rep]


def markov_suite(tol=1e-12):
    rep = orc.CheckReport("markov")
    g = PREDICATE_GRID
    bm, ou, ibm = qsc.brownian_covariance(), qsc.ou_covariance(), qsc.integrated_brownian_covariance()
    rep.add_bound("min(s,t): Markov factorization defect", qsc.markov_defect(bm, g), upper=tol)
    rep.add_bound("min(s,t): martingale defect", qsc.martingale_defect(bm, g), upper=tol)
    rep.add_bound("exp(-|t-s|): Markov factorization defect", qsc.markov_defect(ou, g), upper=tol)
    rep.add_bound("exp(-|t-s|): martingale defect (must fail)", qsc.martingale_defect(ou, g), lower=1e3 * tol)
    rep.add_bound("integrated BM: Markov defect (must fail)", qsc.markov_defect(ibm, g), lower=1e3 * tol)
    return [rep]


def moments_suite(seed=0, n_paths=20000):
    c = qsc.brownian_covariance()
    out = orc.CheckReport("moments")
    for k, spec in enumerate(qsc.standard_moment_family()):
        out.rows.extend(orc.moment_mc_check(spec, c, n_paths, seed + k).rows)
    return [out]


def random_qubit_instance(rng):
    """Random Hermitian ``H``, arbitrary ``L``, full-rank ``rho`` and Hermitian ``X``."""

    def cplx(*shape):
        return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)

    A = cplx(2, 2)
    H = 0.5 * (A + A.conj().T)
    L = cplx(2, 2) / 2
    B = cplx(2, 2)
    rho = B @ B.conj().T
    rho /= np.trace(rho).real
    C = cplx(2, 2)
    X = 0.5 * (C + C.conj().T)
    return hb.SystemModel(H, L, rho), rho, X


def duality_worst(n_steps=1000, seed=0, dt=DESK_DT):
    """Largest ``|d pi(X) - tr(X d rho)|`` over random homodyne and counting steps."""
    rng = np.random.default_rng(seed)
    worst = {"homodyne": 0.0, "counting": 0.0}
    for _ in range(n_steps):
        m, rho, X = random_qubit_instance(rng)
        dY = rng.standard_normal() * math.sqrt(dt)
        moment = fl.pi_step_homodyne(m, rho, X, dY, dt)
        dual = hb.expectation(fl.ks_homodyne_increment(m, rho, dY, dt), X)
        worst["homodyne"] = max(worst["homodyne"], abs(moment - dual))
        dN = float(rng.random() < 0.5)
        moment = fl.pi_step_counting(m, rho, X, dN, dt)
        dual = hb.expectation(fl.jump_filter_increment(m, rho, dN, dt), X)
        worst["counting"] = max(worst["counting"], abs(moment - dual))
    return worst


def self_consistency_gap(m, scheme, seed=0, dt=DESK_DT, t_max=2.0):
    truth = simulate(m, SimConfig(dt, t_max, seed, scheme))
    ft = fl.run_filter(m, truth.record)
    return float(np.max(np.abs(ft.states - truth.states)))


def duality_suite(seed=0):
    rep = orc.CheckReport("duality")
    for scheme, gap in duality_worst(seed=seed).items():
        rep.add_bound(f"{scheme}: moment form vs trace of density increment (1000 steps)", gap, upper=1e-12)
    driven = hb.decaying_qubit(hb.projector((hb.KET_E + hb.KET_G) / math.sqrt(2)), omega=1.0)
    for scheme in Scheme:
        gap = self_consistency_gap(driven, scheme, seed)
        rep.add_bound(f"{scheme.value}: filter on truth record reproduces truth (2000 steps)", gap, upper=1e-10)
    return [rep]


def oracle_suite(seed=0, n_traj=5000):
    rep = orc.CheckReport("oracle")
    m = hb.decaying_qubit()
    for scheme in Scheme:
        ks = orc.kraus_step(m, scheme, DESK_DT)
        rep.add_bound(f"{scheme.value}: Kraus completeness defect", ks.completeness_defect(), upper=10 * DESK_DT**2)
    study = orc.dt_halving_study(m, seed=seed)
    rep.add_bound("RMS |Kraus - Euler| sigma_z at dt = 1e-3", study.rms[-1], upper=5e-2)
    rep.add_bound("RMS gap decreases monotonically under dt-halving", float(study.monotone), lower=1.0)
    rep.add_bound("observed order of RMS gap in dt", study.order, lower=0.9)
    tower = [orc.tower_property_check(m, Scheme.HOMODYNE, n_traj, seed)]
    driven = hb.decaying_qubit(omega=1.0)
    tower.append(orc.tower_property_check(driven, Scheme.COUNTING, n_traj, seed))
    return [rep, *tower]


def counting_physics(seed=0, n_traj=20000, t_max=20.0, dt=DESK_DT):
    """Jump totals and compensated counts for the decaying qubit started excited."""
    cfg = SimConfig(dt, t_max, seed, Scheme.COUNTING)
    res = EnsembleRunner(hb.decaying_qubit(), cfg, range(n_traj)).run(stride=cfg.n_steps)
    return res


def ensemble_suite(seed=0, n_traj=5000, n_counting=20000):
    m = hb.decaying_qubit()
    cfg = SimConfig(DESK_DT, 2.0, seed, Scheme.HOMODYNE)
    closed = {"sigma_z": lambda t: 2 * math.exp(-t) - 1}
    rep, res = orc.ensemble_check(m, cfg, n_traj, {"sigma_z": hb.SIGMA_Z}, (0.5, 1.0, 2.0), closed)
    hyg = orc.CheckReport("hygiene")
    hyg.add_bound("max |tr rho - 1|", res.max_trace_error, upper=1e-9)
    hyg.add_bound("min eigenvalue", res.min_eigenvalue, lower=-1e-8)
    hyg.add_bound("pure-state homodyne purity loss (2000 steps)", res.max_purity_loss, upper=1e-6)
    cnt = counting_physics(seed, n_counting)
    counts = cnt.record_path[:, -1]
    comp = counts - cnt.compensator[:, -1]
    phys = orc.CheckReport("counting")
    phys.add_bound("jumps per trajectory outside {0, 1}", float(np.sum((counts != 0) & (counts != 1))), upper=0)
    phys.add_bound("mean jumps over T = 20 (1.00 +- 0.02)", abs(orc.fsum_mean(counts) - 1.0), upper=0.02)
    phys.add("compensated count at T = 20", 0.0, orc.fsum_mean(comp), np.std(comp, ddof=1) / math.sqrt(n_traj))
    hyg.add_bound("counting: max |tr rho - 1|", cnt.max_trace_error, upper=1e-9)
    hyg.add_bound("counting: min eigenvalue", cnt.min_eigenvalue, lower=-1e-8)
    return [rep, phys, hyg]


def run_suite(name, seed=0, n_traj=None):
    if name == "all":
        return [r for s in SUITES for r in run_suite(s, seed, n_traj)]
    if name == "covariance":
        return covariance_suite(seed)
    if name == "markov":
        return markov_suite()
    if name == "moments":
        return moments_suite(seed)
    if name == "duality":
        return duality_suite(seed)
    if name == "oracle":
        return oracle_suite(seed) if n_traj is None else oracle_suite(seed, n_traj)
    if name == "ensemble":
        if n_traj is None:
            return ensemble_suite(seed)
        return ensemble_suite(seed, n_traj, n_traj)
    raise ValueError(f"unknown suite {name!r}; choose from {', '.join(SUITES)} or all")
