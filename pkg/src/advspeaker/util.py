"""Small shared helpers: canonical hashing and deterministic RNG derivation."""

from __future__ import annotations

import hashlib
import json

import numpy as np


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def fingerprint(obj) -> str:
    """Stable hex digest of a JSON-serializable object."""
    return hashlib.sha256(canonical_json(obj).encode()).hexdigest()[:16]


def stable_int(text: str) -> int:
    """Deterministic (process-independent) integer derived from a string."""
    return int.from_bytes(hashlib.sha256(text.encode()).digest()[:8], "big")


def rng_for(*keys) -> np.random.Generator:
    """Generator seeded from a tuple of ints/strings, independent of order of use."""
    seeds = [stable_int(k) if isinstance(k, str) else int(k) for k in keys]
    return np.random.default_rng(seeds)
