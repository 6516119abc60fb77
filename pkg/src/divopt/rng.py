"""Deterministic, purpose-tagged random substreams.

Every stochastic operation in the library draws from a generator derived from
``(run_seed, iteration, purpose, chunk)``.  Two runs with the same seed use
exactly the same streams, independently of evaluation order elsewhere, and
concurrent consumers can request disjoint substreams by varying the chunk
index.
"""

from __future__ import annotations

import zlib

import numpy as np


def _purpose_id(purpose: str) -> int:
    # Stable across platforms and Python hash randomization.
    return zlib.crc32(purpose.encode("utf-8"))


def substream(run_seed: int, iteration: int, purpose: str, chunk: int = 0) -> np.random.Generator:
    """Return a generator for the given (seed, iteration, purpose, chunk) tuple.

    The derivation is a pure function of its arguments; requesting the same
    tuple twice yields generators producing identical draws.
    """
    seq = np.random.SeedSequence([int(run_seed), int(iteration), _purpose_id(purpose), int(chunk)])
    return np.random.default_rng(seq)
