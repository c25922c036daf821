"""Reproducible random streams.

Every stream is a numpy ``Generator`` backed by the Philox 4x64-10
counter-based bit generator. The 128-bit Philox key is derived from a
``SeedSequence`` whose entropy is the run seed and whose spawn key is the
tuple of integer labels identifying the stream (replica index, purpose,
...). Identical ``(seed, labels)`` always produce identical draws, and
distinct labels give statistically independent streams, independently of
how many other streams exist.
"""

import numpy as np

# stream purposes, used as the second label of per-replica streams
BROWNIAN = 0
SAMPLER = 1
AUX = 2


def stream(seed, *labels):
    """Return the Philox generator for ``seed`` and integer ``labels``."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(v) for v in labels))
    key = ss.generate_state(2, dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def replica_streams(seed, replicas, purpose):
    """Per-replica streams for one purpose, ordered by replica index."""
    return [stream(seed, r, purpose) for r in replicas]
