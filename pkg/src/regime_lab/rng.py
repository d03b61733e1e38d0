"""Keyed counter-based random streams.

Every replication draws from its own Philox generator keyed by
``(seed, replication, stream)``, so results do not depend on thread
scheduling or on how many replications run concurrently.
"""

import numpy as np

STREAM_SSA = 0
STREAM_EM = 1
STREAM_AUX = 2


def stream(seed: int, rep: int = 0, stream_id: int = STREAM_SSA) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(rep), int(stream_id)))
    return np.random.Generator(np.random.Philox(ss))
