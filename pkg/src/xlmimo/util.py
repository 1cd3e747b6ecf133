"""Shared helpers: seeded RNG streams, worker pool sizing, deterministic maps."""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor

import numpy as np

THREADS_ENV = "XLMIMO_THREADS"


def stream_rng(seed, *path):
    """Independent generator derived from (seed, *path).

    Each (seed, path) pair yields a fixed stream regardless of how many
    other streams were opened before it, so trials can run in any order.
    """
    entropy = (int(seed),) + tuple(int(p) for p in path)
    return np.random.default_rng(np.random.SeedSequence(entropy))


def complex_normal(rng, shape, var):
    """Circularly-symmetric complex Gaussian with per-entry variance `var`."""
    scale = np.sqrt(np.asarray(var, dtype=float) / 2.0)
    return scale * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))


def thread_count():
    """Worker cap from XLMIMO_THREADS (0 or unset = auto)."""
    try:
        n = int(os.environ.get(THREADS_ENV, "0"))
    except ValueError:
        n = 0
    if n <= 0:
        n = min(os.cpu_count() or 1, 8)
    return n


def parallel_map(fn, n, chunk=256):
    """Evaluate fn(i) for i in range(n), results indexed by i.

    Output is identical for any worker count: every slot is written by
    index and reduced by the caller in a fixed order.
    """
    out = [None] * n
    workers = thread_count()
    if workers <= 1 or n < 2 * chunk:
        for i in range(n):
            out[i] = fn(i)
        return out

    def run(span):
        lo, hi = span
        for i in range(lo, hi):
            out[i] = fn(i)

    spans = [(lo, min(lo + chunk, n)) for lo in range(0, n, chunk)]
    with ThreadPoolExecutor(max_workers=workers) as ex:
        list(ex.map(run, spans))
    return out


def fmt_float(x):
    """17 significant digits: round-trips any double exactly."""
    return format(float(x), ".17g")
