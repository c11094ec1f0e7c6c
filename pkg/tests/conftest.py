import math

import numpy as np
import pytest

from qsfilter import hilbert as hb
from qsfilter.dynamics import EnsembleRunner, Scheme, SimConfig

DT = 1e-3


def driven_qubit():
    """Driven, strongly damped qubit started in |+>: frequent jumps, nontrivial coherences."""
    plus = (hb.KET_E + hb.KET_G) / math.sqrt(2)
    return hb.SystemModel(3.0 * hb.SIGMA_X, 2.0 * hb.SIGMA_MINUS, hb.projector(plus))


@pytest.fixture(scope="session")
def homodyne_decay_ensemble():
    """5000 homodyne trajectories of the decaying qubit from |e>, T = 2."""
    cfg = SimConfig(DT, 2.0, 0, Scheme.HOMODYNE)
    runner = EnsembleRunner(hb.decaying_qubit(), cfg, range(5000))
    return runner.run({"sigma_z": hb.SIGMA_Z}, stride=500)


@pytest.fixture(scope="session")
def counting_decay_ensemble():
    """20000 counting trajectories of the decaying qubit from |e>, T = 20."""
    cfg = SimConfig(DT, 20.0, 0, Scheme.COUNTING)
    runner = EnsembleRunner(hb.decaying_qubit(), cfg, range(20000))
    return runner.run(stride=cfg.n_steps)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
