"""Counter-based random streams.

Every stochastic routine takes a ``seed`` that is either an int or a tuple
of ints, e.g. ``(run_seed, iteration, chain)``.  The tuple is hashed by
:class:`numpy.random.SeedSequence` into a Philox key; replication ``r`` of
a Monte Carlo estimate is then simply the r-th block of that stream, so
the same key reproduces the same draws regardless of how they are chunked.
"""

from __future__ import annotations

import hashlib

import numpy as np


def _entropy(seed):
    if isinstance(seed, np.random.SeedSequence):
        return seed
    if isinstance(seed, (tuple, list)):
        return np.random.SeedSequence([int(s) & 0xFFFFFFFFFFFFFFFF for s in seed])
    return np.random.SeedSequence(int(seed) & 0xFFFFFFFFFFFFFFFF)


def philox(seed):
    """Generator backed by a Philox stream keyed by ``seed``."""
    key = _entropy(seed).generate_state(2, np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def derive(seed, *keys):
    """Child seed tuple ``(seed..., keys...)``."""
    base = tuple(seed) if isinstance(seed, (tuple, list)) else (int(seed),)
    return base + tuple(int(k) for k in keys)


def stable_hash(*parts):
    """64-bit integer from SHA-256 of the ``|``-joined string forms of ``parts``."""
    text = "|".join(str(p) for p in parts)
    return int.from_bytes(hashlib.sha256(text.encode("utf-8")).digest()[:8], "big")


def draw_normals(seed, R, m, q):
    """Standard normals for c-KG: fantasy ``Z`` (R, m+1, q) then LR ``W`` (R, m, q)."""
    g = philox(seed)
    Z = g.standard_normal((R, m + 1, q))
    W = g.standard_normal((R, m, q))
    return Z, W
