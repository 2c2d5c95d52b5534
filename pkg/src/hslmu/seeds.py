"""Deterministic named random streams derived from one root seed.

Every source of randomness in a run (parameter init, epoch shuffling,
quantizer residuals, the task permutation, evaluation-time residuals) draws
from its own stream, so each component can be reproduced independently of the
others.
"""

from __future__ import annotations

import numpy as np

_STREAMS = {"init": 0, "shuffle": 1, "residuals": 2, "permutation": 3, "eval": 4}


def stream_rng(root_seed: int, name: str) -> np.random.Generator:
    """Generator for a named substream of the root seed."""
    try:
        idx = _STREAMS[name]
    except KeyError:
        raise ValueError(f"unknown stream {name!r}; choose from {sorted(_STREAMS)}") from None
    return np.random.default_rng(np.random.SeedSequence((int(root_seed), idx)))
