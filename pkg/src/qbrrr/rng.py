"""Reproducible random streams.

Every stream is a Philox counter-based generator keyed by a
:class:`numpy.random.SeedSequence` built from the master seed followed by
integer keys (replication index, stream role, ...). Two streams share state
only if their full key tuples are equal, so results never depend on the
order in which replications are scheduled.
"""

import numpy as np

# stream roles, appended after the replication index
DATA = 0
TUNE = 1
CHAIN = 2


def stream(seed, *keys):
    """Independent generator for ``(seed, *keys)``."""
    entropy = [int(seed) & 0xFFFFFFFFFFFFFFFF, *(int(k) for k in keys)]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))
