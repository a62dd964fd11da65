"""Deterministic random stream construction.

Every stochastic routine takes either a seed or an explicit
``numpy.random.Generator``.  Streams for sub-tasks are keyed by small
integer tuples so that the worker count or evaluation order can never
change which stream produces which numbers.
"""

import numpy as np

# Walks are processed in fixed-size chunks; chunk index keys the stream,
# so results are independent of how chunks are scheduled.
CHUNK = 4096


def stream(seed, *key):
    """Return a Generator for ``seed`` refined by an integer key path."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.default_rng(ss)
