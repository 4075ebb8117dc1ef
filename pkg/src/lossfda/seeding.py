"""Deterministic RNG derivation.

Every random draw in the package flows from a single top-level integer seed
through :func:`spawn_rng`. A derivation path (mixed ints and strings) is
folded into a ``numpy.random.SeedSequence`` so independent components get
independent, reproducible streams regardless of evaluation order. Strings
are hashed with SHA-256, so paths are stable across platforms and runs.
"""

from __future__ import annotations

import hashlib

import numpy as np


def _path_token(part) -> int:
    if isinstance(part, (int, np.integer)):
        return int(part) & 0xFFFFFFFFFFFFFFFF
    if isinstance(part, str):
        digest = hashlib.sha256(part.encode("utf-8")).digest()
        return int.from_bytes(digest[:8], "big")
    raise TypeError(f"seed path parts must be int or str, got {type(part)!r}")


def spawn_rng(seed: int, *path) -> np.random.Generator:
    """Return a Generator for ``seed`` specialized by a derivation path.

    ``spawn_rng(seed, "bootstrap", b)`` and ``spawn_rng(seed, "folds")``
    are independent streams; calling either again reproduces it exactly.
    """
    entropy = [int(seed) & 0xFFFFFFFFFFFFFFFF] + [_path_token(p) for p in path]
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))
