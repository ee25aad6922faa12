"""Deterministic, splittable random streams.

Every source of randomness in a run is drawn from its own counter-based
(Philox) stream keyed by ``(master_seed, purpose, *subkeys)``.  Streams are
independent of each other and of evaluation order, so sampling, noise
injection, and weight initialization can be reordered or parallelized
without changing results.
"""

import numpy as np

_PURPOSES = {
    "init": 0,
    "shuffle": 1,
    "subsample": 2,
    "noise": 3,
    "split": 4,
    "data": 5,
    "attack": 6,
}


def stream(master_seed, purpose, *subkeys):
    """Return a ``numpy.random.Generator`` for one named stream.

    ``master_seed`` must be a non-negative integer; ``purpose`` one of the
    registered purpose tags; ``subkeys`` further non-negative integers
    (epoch, round index, ...) identifying the stream.
    """
    if not isinstance(master_seed, (int, np.integer)) or master_seed < 0:
        raise ValueError(f"master_seed must be a non-negative integer, got {master_seed!r}")
    try:
        code = _PURPOSES[purpose]
    except KeyError:
        raise ValueError(f"unknown stream purpose {purpose!r}") from None
    for k in subkeys:
        if not isinstance(k, (int, np.integer)) or k < 0:
            raise ValueError(f"stream subkeys must be non-negative integers, got {k!r}")
    key = (int(master_seed), code, *[int(k) for k in subkeys])
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(key)))
