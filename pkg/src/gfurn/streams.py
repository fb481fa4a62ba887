"""Reproducible random streams.

Replicate ``i`` of an experiment seeded with ``master_seed`` always uses
``Philox`` keyed by ``SeedSequence(master_seed, spawn_key=(i,))``.  The
stream therefore depends only on ``(master_seed, i)`` and never on how
replicates are scheduled across threads.  Limit-process ensembles use the
spawn key ``(i, channel)`` so independent Brownian drivers never share
a stream.
"""

import numpy as np


def make_stream(seed, *index):
    if isinstance(seed, np.random.Generator):
        return seed
    ss = np.random.SeedSequence(int(seed) & (2**64 - 1), spawn_key=tuple(int(i) for i in index))
    return np.random.Generator(np.random.Philox(ss))
