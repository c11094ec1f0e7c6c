"""Reproducible random streams.

Every stream is a Philox counter-based generator keyed by
``SeedSequence(master_seed, spawn_key=key)``.  A trajectory ``i`` draws its
measurement noise from key ``(i, MEASUREMENT)`` and any auxiliary sampling
from ``(i, AUXILIARY)``, so results never depend on batching or execution
order.
"""

import numpy as np

GENERATOR_FAMILY = "numpy.random.Philox/SeedSequence"

MEASUREMENT = 0
AUXILIARY = 1


def stream(seed, *key):
    seed = int(seed)
    if seed < 0 or seed >= 2**64:
        raise ValueError(f"seed must be an unsigned 64-bit integer, got {seed}")
    ss = np.random.SeedSequence(seed, spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(ss))


def trajectory_streams(master_seed, indices, purpose=MEASUREMENT):
    return [stream(master_seed, i, purpose) for i in indices]
