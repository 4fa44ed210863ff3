"""Deterministic seed derivation.

Every stochastic component takes an explicit integer seed. Sub-seeds are
derived by hashing the parent seed together with string tags, so the whole
pipeline is a pure function of the master seed and the config.
"""

from __future__ import annotations

import hashlib
import json

import numpy as np

_MASK64 = (1 << 64) - 1


def derive_seed(master: int, *tags) -> int:
    """Derive a child seed from a master seed and a sequence of tags.

    Stable across runs, platforms and Python versions (no reliance on
    ``hash()``). Tags may be ints or strings.
    """
    payload = json.dumps([int(master)] + [str(t) for t in tags])
    digest = hashlib.sha256(payload.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big") & _MASK64


def make_rng(seed: int) -> np.random.Generator:
    return np.random.default_rng(seed)
