"""Deterministic seed derivation and order-preserving parallel mapping.

Every stochastic consumer (CV shuffles, country splits, bootstrap
replicates, permutation sampling) receives a labeled child seed derived by
hashing (master seed, purpose label, indices).  Adding or removing worker
threads therefore never changes results: tasks are pure functions of their
pre-derived seeds and results are merged in index order.
"""

from __future__ import annotations

import hashlib
from concurrent.futures import ThreadPoolExecutor

import numpy as np


def child_seed(master: int, label: str, *indices: int) -> int:
    """Derive a 64-bit child seed from a master seed and a purpose label."""
    key = "|".join([str(int(master)), label, *[str(int(i)) for i in indices]])
    digest = hashlib.sha256(key.encode("utf-8")).hexdigest()
    return int(digest[:16], 16)


def child_rng(master: int, label: str, *indices: int) -> np.random.Generator:
    """A numpy Generator seeded with :func:`child_seed`."""
    return np.random.default_rng(child_seed(master, label, *indices))


def parallel_map(fn, items, threads: int = 1) -> list:
    """Map ``fn`` over ``items``, optionally on a thread pool.

    Results are returned in input order regardless of completion order, so
    output is identical for any thread count.
    """
    items = list(items)
    if threads <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))
