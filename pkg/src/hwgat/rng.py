"""Deterministic random streams.

Every source of randomness in the package derives a fresh Generator from
(seed, purpose keys...) through SeedSequence, so no mutable RNG state ever
needs to be saved: resuming a run at epoch e rebuilds the exact streams
from the integers alone.
"""

from __future__ import annotations

import numpy as np

# purpose keys, kept distinct so streams never collide
INIT_STREAM = 1       # parameter initialization
EPOCH_STREAM = 2      # per-epoch shuffling / batching
DROPOUT_STREAM = 3    # attention-dropout thresholds
DATA_STREAM = 4       # synthetic data generation
AUGMENT_STREAM = 5    # per-sequence augmentation (combined with crc32 of id)


def stream_rng(seed: int, *keys: int) -> np.random.Generator:
    """A Generator that depends only on the integers given."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), *map(int, keys)]))
