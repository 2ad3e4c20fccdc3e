"""Deterministic counter-based random streams for the simulation modules.

Every draw in the package is produced by a Philox generator keyed by
(seed, tag, step, chunk).  Paths and batch rows are processed in fixed-size
row chunks, each owning its own key, so results are bit-identical no matter
how many worker threads consume the chunks.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor

import numpy as np

# Fixed chunk size: must never depend on the thread count, or determinism
# across --threads settings is lost.
CHUNK_ROWS = 4096

_MASK64 = (1 << 64) - 1
_TAG_SHIFT = 48
_STEP_SHIFT = 24
_STEP_LIMIT = 1 << 24
_CHUNK_LIMIT = 1 << 24

# Stream tags.  Values are part of the on-disk determinism contract; do not
# renumber.
TAG_FORWARD = 1
TAG_REVERSE = 2
TAG_SAMPLER = 3
TAG_BOOT = 4
TAG_START = 5
TAG_TRAIN = 6
TAG_INIT = 7
TAG_TASK = 8
TAG_PROBE = 9


def stream(seed: int, tag: int, step: int = 0, chunk: int = 0) -> np.random.Generator:
    """Returns the generator for one (seed, tag, step, chunk) cell.

    Args:
        seed: experiment seed, any Python int (folded to 64 bits).
        tag: stream tag, one of the TAG_* constants (or any int < 2**16).
        step: time-step or iteration index, < 2**24.
        chunk: row-chunk index, < 2**24.
    """
    if not 0 <= step < _STEP_LIMIT:
        raise ValueError(f"step index {step} outside [0, {_STEP_LIMIT})")
    if not 0 <= chunk < _CHUNK_LIMIT:
        raise ValueError(f"chunk index {chunk} outside [0, {_CHUNK_LIMIT})")
    sub = (int(tag) << _TAG_SHIFT) | (int(step) << _STEP_SHIFT) | int(chunk)
    key = np.array([int(seed) & _MASK64, sub & _MASK64], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def chunk_slices(n_rows: int) -> list[tuple[int, slice]]:
    """Splits row indices [0, n_rows) into (chunk_index, slice) pairs."""
    return [
        (c, slice(lo, min(lo + CHUNK_ROWS, n_rows)))
        for c, lo in enumerate(range(0, n_rows, CHUNK_ROWS))
    ]


def normal_matrix(seed: int, tag: int, step: int, n_rows: int, d: int) -> np.ndarray:
    """(n_rows, d) standard normals, row i fixed regardless of chunking."""
    out = np.empty((n_rows, d))
    for c, sl in chunk_slices(n_rows):
        rows = sl.stop - sl.start
        out[sl] = stream(seed, tag, step, c).standard_normal((rows, d))
    return out


def run_chunked(n_rows: int, threads: int, work) -> None:
    """Runs work(chunk_index, row_slice) over all chunks.

    The chunk decomposition is identical for every thread count; only the
    execution order differs, and work must write to disjoint row slices.
    """
    tasks = chunk_slices(n_rows)
    if threads <= 1 or len(tasks) == 1:
        for c, sl in tasks:
            work(c, sl)
        return
    with ThreadPoolExecutor(max_workers=threads) as pool:
        list(pool.map(lambda cs: work(*cs), tasks))
