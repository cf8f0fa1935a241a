"""Named random streams derived from a single run seed.

Every source of randomness in the package pulls from a stream identified by
a short name ("init", "data", "dropout", ...), so any component can be
reproduced in isolation without replaying the rest of the pipeline.
"""

from __future__ import annotations

import numpy as np


def stream(seed: int, name: str) -> np.random.Generator:
    """Return the generator for the named stream of the given run seed.

    The same (seed, name) pair always yields an identical generator;
    distinct names yield statistically independent streams. Seeds must be
    nonnegative integers.
    """
    if seed < 0:
        raise ValueError(f"seed must be nonnegative, got {seed}")
    entropy = [int(seed)] + list(name.encode("utf-8"))
    return np.random.default_rng(np.random.SeedSequence(entropy))
