"""Acceptance criteria 1-11 at desk scale (qubit, dt = 1e-3).

Each test prints one ``PASS``/``FAIL`` line and then asserts.  Run with
``pytest tests/test_acceptance.py`` to see the lines; ``-s`` is not needed.
"""

import math
from pathlib import Path
import subprocess
import sys

import numpy as np
import pytest

from qsfilter import hilbert as hb
from qsfilter import oracle as orc
from qsfilter import qsc
from qsfilter.config import load_scenario
from qsfilter.dynamics import Scheme, SimConfig, simulate
from qsfilter.filters import run_filter
from qsfilter.scenario import run_scenario
from qsfilter.verify import duality_worst, self_consistency_gap

from conftest import DT, driven_qubit

EXAMPLE = Path(__file__).resolve().parent.parent / "scenarios" / "decaying_qubit.toml"


def verdict(capsys, number, title, ok, detail):
    with capsys.disabled():
        print(f"\n{'PASS' if ok else 'FAIL'} criterion {number:>2} {title}: {detail}")
    assert ok, detail


def test_criterion_01_covariance(capsys):
    n = 20000
    v = qsc.sample_gaussian_paths(qsc.brownian_covariance(), np.array([0.5, 1.0]), n, seed=0)
    prod = v[:, 0] * v[:, 1]
    est, sigma = orc.fsum_mean(prod), np.std(prod, ddof=1) / math.sqrt(n)
    z = (est - 0.5) / sigma
    verdict(capsys, 1, "covariance at (0.5, 1.0)", abs(z) <= 3, f"{est:.4f} vs 0.5, sigma {sigma:.4f}, z {z:+.2f}")


def test_criterion_02_markov_and_martingale(capsys):
    grid = np.linspace(0.1, 2.0, 12)
    bm, ou = qsc.brownian_covariance(), qsc.ou_covariance()
    results = {
        "min Markov": qsc.is_quantum_markov(bm, grid, 1e-12),
        "min martingale": qsc.is_martingale_covariance(bm, grid, 1e-12),
        "OU Markov": qsc.is_quantum_markov(ou, grid, 1e-12),
        "OU not martingale": not qsc.is_martingale_covariance(ou, grid, 1e-12),
    }
    detail = ", ".join(f"{k} {'ok' if v else 'WRONG'}" for k, v in results.items())
    verdict(capsys, 2, "Markov/martingale predicates", all(results.values()), detail)


def test_criterion_03_time_ordered_moments(capsys):
    c = qsc.brownian_covariance()
    worst, wick = 0.0, None
    for k, spec in enumerate(qsc.standard_moment_family()):
        row = orc.moment_mc_check(spec, c, 20000, seed=k).rows[0]
        worst = max(worst, abs(row.z))
        if spec.times == (0.5, 1.0) and all(f.label == "x^2" for f in spec.functions):
            wick = row.expected
    ok = worst <= 3 and wick is not None and abs(wick - 1.0) <= 1e-12
    verdict(capsys, 3, "time-ordered moments", ok, f"worst |z| {worst:.2f} over the family, E[V(0.5)^2 V(1)^2] = {wick}")


def test_criterion_04_duality(capsys):
    worst = duality_worst(1000, seed=0, dt=DT)
    ok = max(worst.values()) <= 1e-12
    verdict(capsys, 4, "moment vs density filter forms", ok, ", ".join(f"{k} {v:.2e}" for k, v in worst.items()))


def test_criterion_05_self_consistency(capsys):
    gaps = {s.value: self_consistency_gap(driven_qubit(), s, seed=0, dt=DT, t_max=2.0) for s in Scheme}
    ok = max(gaps.values()) <= 1e-10
    verdict(capsys, 5, "filter on truth record over 2000 steps", ok, ", ".join(f"{k} {v:.2e}" for k, v in gaps.items()))


def test_criterion_06_oracle_equivalence(capsys):
    m = hb.decaying_qubit()
    # single shared record at dt = 1e-3
    truth = simulate(m, SimConfig(DT, 2.0, 0, Scheme.HOMODYNE))
    a = orc.kraus_bayes_filter(m, truth.record, {"sz": hb.SIGMA_Z}).moments["sz"]
    b = run_filter(m, truth.record, {"sz": hb.SIGMA_Z}).moments["sz"]
    shared = math.sqrt(np.mean((a - b) ** 2))
    # pathwise dt-halving on coupled records
    study = orc.dt_halving_study(m, dts=(4e-3, 2e-3, 1e-3), seed=0)
    ok = shared <= 5e-2 and study.rms[-1] <= 5e-2 and study.monotone and study.order >= 0.9
    rms = ", ".join(f"{r:.3f}" for r in study.rms)
    detail = f"shared-record RMS {shared:.3f}, halving RMS [{rms}], monotone {study.monotone}, order {study.order:.2f} (needs >= 0.9)"
    verdict(capsys, 6, "Kraus/Bayes oracle vs Euler filter", ok, detail)


@pytest.mark.parametrize(
    "label, model, scheme",
    [
        ("homodyne decaying qubit", hb.decaying_qubit(), Scheme.HOMODYNE),
        ("counting decaying qubit", hb.decaying_qubit(), Scheme.COUNTING),
        ("counting driven qubit", hb.decaying_qubit(omega=1.0), Scheme.COUNTING),
    ],
)
def test_criterion_07_tower_property(capsys, label, model, scheme):
    rep = orc.tower_property_check(model, scheme, 5000, seed=0)
    mc = [r for r in rep.rows if r.sigma > 0]
    worst = max((abs(r.z) for r in mc), default=0.0)
    exact = [r for r in rep.rows if r.sigma == 0]
    detail = f"{len(mc)} Monte-Carlo rows, worst |z| {worst:.2f}; {len(exact)} exact rows {'ok' if all(r.passed for r in exact) else 'WRONG'}"
    verdict(capsys, 7, f"tower property, {label}", rep.passed, detail)


def test_criterion_08_ensemble_vs_lindblad(capsys, homodyne_decay_ensemble):
    res = homodyne_decay_ensemble
    n = len(res.indices)
    parts, ok = [], True
    for t in (0.5, 1.0, 2.0):
        j = int(np.argmin(np.abs(res.times - t)))
        vals = res.expectations["sigma_z"][:, j]
        sigma = np.std(vals, ddof=1) / math.sqrt(n)
        z = (orc.fsum_mean(vals) - (2 * math.exp(-t) - 1)) / sigma
        ok &= abs(z) <= 3
        parts.append(f"t={t:g} z {z:+.2f}")
    verdict(capsys, 8, f"mean sigma_z over {n} homodyne trajectories", ok, ", ".join(parts))


def test_criterion_09_counting_physics(capsys, counting_decay_ensemble):
    res = counting_decay_ensemble
    n = len(res.indices)
    counts = res.record_path[:, -1]
    comp = counts - res.compensator[:, -1]
    mean = orc.fsum_mean(counts)
    z = orc.fsum_mean(comp) / (np.std(comp, ddof=1) / math.sqrt(n))
    ok = abs(mean - 1.0) <= 0.02 and abs(z) <= 3
    verdict(capsys, 9, f"photon counting over {n} trajectories, T = 20", ok, f"mean jumps {mean:.4f}, compensated count z {z:+.2f}")


def test_criterion_10_state_hygiene(capsys, homodyne_decay_ensemble, counting_decay_ensemble):
    h, c = homodyne_decay_ensemble, counting_decay_ensemble
    trace = max(h.max_trace_error, c.max_trace_error)
    eig = min(h.min_eigenvalue, c.min_eigenvalue)
    purity = h.max_purity_loss
    ok = trace <= 1e-9 and eig >= -1e-8 and purity <= 1e-6
    detail = f"max |tr - 1| {trace:.1e}, min eigenvalue {eig:.1e}, homodyne purity loss {purity:.2e} (needs <= 1e-6)"
    verdict(capsys, 10, "state hygiene", ok, detail)


def test_criterion_11_reproducibility(capsys, tmp_path):
    cfg = load_scenario(EXAMPLE)
    run_scenario(cfg, tmp_path / "a")
    # second run in a fresh interpreter through the command line
    cmd = [sys.executable, "-m", "qsfilter", "simulate", str(EXAMPLE), "--out", str(tmp_path / "b")]
    proc = subprocess.run(cmd, capture_output=True, text=True)
    assert proc.returncode in (0, 1), proc.stderr
    files = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*.csv"))
    differ = [str(f) for f in files if (tmp_path / "a" / f).read_bytes() != (tmp_path / "b" / f).read_bytes()]
    ok = len(files) >= 5 and not differ
    verdict(capsys, 11, "byte-identical CSV on rerun", ok, f"{len(files)} CSV files compared, {len(differ)} differ")
