"""Deterministic random-stream derivation.

Every command takes a single 64-bit seed; each subsystem draws from a
substream identified by a namespace constant plus an index (patient
ordinal, trial number, ...). Streams are counter-based (Philox), so a
worker handling patient i gets the same stream regardless of sharding
or evaluation order.
"""

from __future__ import annotations

import numpy as np

# Namespace constants. These are part of the reproducibility contract:
# changing them changes every generated artifact.
NS_GENERATOR = 1
NS_INDEX_SELECT = 2
NS_SPLIT = 3
NS_CLASSIFIER_INIT = 4
NS_DISCRIMINATOR_INIT = 5
NS_BATCHES = 6
NS_SEARCH = 7

_INDEX_BITS = 48
_INDEX_MASK = (1 << _INDEX_BITS) - 1


def substream(seed: int, namespace: int, index: int = 0) -> np.random.Generator:
    """Independent generator for (seed, namespace, index)."""
    if index < 0 or index > _INDEX_MASK:
        raise ValueError(f"stream index out of range: {index}")
    key = np.array(
        [np.uint64(seed & 0xFFFFFFFFFFFFFFFF),
         np.uint64((namespace << _INDEX_BITS) | index)],
        dtype=np.uint64,
    )
    return np.random.Generator(np.random.Philox(key=key))
