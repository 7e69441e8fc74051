"""Batch-means estimators for correlated Monte Carlo output."""

from __future__ import annotations

import numpy as np


def batch_means(x, n_batches: int = 50) -> tuple[float, float]:
    """Mean of a correlated series and its batch-means standard error.

    The series is cut into ``n_batches`` contiguous batches of equal length
    (a remainder at the front is dropped). Returns ``(mean, stderr)`` where
    ``mean`` is over the retained samples.
    """
    x = np.asarray(x, dtype=float)
    if n_batches < 2:
        raise ValueError("need at least two batches")
    size = x.shape[0] // n_batches
    if size < 1:
        raise ValueError(f"series of length {x.shape[0]} too short for {n_batches} batches")
    kept = x[x.shape[0] - size * n_batches:]
    means = kept.reshape(n_batches, size, *x.shape[1:]).mean(axis=1)
    return means.mean(axis=0), means.std(axis=0, ddof=1) / np.sqrt(n_batches)
