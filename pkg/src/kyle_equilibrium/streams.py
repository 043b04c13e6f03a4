"""Deterministic per-path random streams and chunked path processing."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor

import numpy as np


def path_normals(seed: int, stream: int, first: int, count: int, n_cols: int) -> np.ndarray:
    """Standard normals for paths ``first .. first+count-1``.

    Row ``i`` depends only on ``(seed, stream, first + i)``, so results do not
    depend on how paths are split into chunks or workers.
    """
    out = np.empty((count, n_cols))
    for i in range(count):
        ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(stream), first + i))
        out[i] = np.random.Generator(np.random.PCG64(ss)).standard_normal(n_cols)
    return out


def chunk_bounds(n_paths: int, chunk: int):
    return [(a, min(n_paths, a + chunk)) for a in range(0, n_paths, chunk)]


def run_chunks(fn, n_paths: int, chunk: int = 2000, workers: int = 1):
    """Apply ``fn(first, count)`` over path chunks, returning results in path order."""
    bounds = chunk_bounds(n_paths, chunk)
    if workers <= 1 or len(bounds) == 1:
        return [fn(a, b - a) for a, b in bounds]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda ab: fn(ab[0], ab[1] - ab[0]), bounds))


def mean_se(values, axis=0):
    """Sample mean and its standard error along ``axis``."""
    values = np.asarray(values, dtype=float)
    n = values.shape[axis]
    mean = np.mean(values, axis=axis)
    se = np.std(values, axis=axis, ddof=1) / np.sqrt(n) if n > 1 else np.zeros_like(mean)
    return mean, se
