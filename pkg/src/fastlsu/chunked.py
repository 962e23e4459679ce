"""Linear step-up over an arbitrary partition of the p-values.

Chunks are read through re-readable sources (anything with a
``blocks(block_size)`` method yielding float arrays). Thresholds are always
tiled by the global problem size, never by a chunk's own size, which is what
makes the result independent of the partition.

Two strategies return the whole-set rejection set:

* :func:`fast_lsu_chunked_sequential` rescans every chunk each round with
  one shared threshold ``(sum of survivor counts) * alpha / m``.
* :func:`fast_lsu_chunked_parallel` reduces each chunk independently (on a
  thread pool) and then runs the fixed point over the union of survivors,
  keeping resident survivors under a :class:`MemoryBudget`.

:func:`fast_lsu_chunked_binned` is the bin-window variant whose bin array
never exceeds the budget. :func:`union_of_chunks_bh` is the incorrect
per-chunk procedure, kept only to measure how much it inflates rejections.
"""

from __future__ import annotations

import os
import sys
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .core import (
    PValueBatch,
    RejectionReport,
    SignificanceLevel,
    _report,
    bh_oracle,
    bin_labels,
    fixed_point_scan,
    step_threshold,
    validate_pvalues,
)
from .errors import BudgetExceeded, ConsistencyError, InvariantError, ValidationError

__all__ = [
    "ArraySource",
    "ChunkDescriptor",
    "ChunkPassResult",
    "ChunkReduction",
    "MemoryBudget",
    "chunks_from_arrays",
    "chunk_local_pass",
    "reduce_chunk",
    "fast_lsu_chunked_sequential",
    "fast_lsu_chunked_parallel",
    "fast_lsu_chunked_binned",
    "union_of_chunks_bh",
]

IO_BLOCK = 1 << 15


class ArraySource:
    """In-memory chunk source. Values are validated when read."""

    def __init__(self, values):
        self.values = np.asarray(values, dtype=np.float64).reshape(-1)

    def __len__(self):
        return int(self.values.size)

    def blocks(self, block_size=IO_BLOCK):
        for start in range(0, self.values.size, block_size):
            yield self.values[start:start + block_size]


@dataclass(frozen=True)
class ChunkDescriptor:
    chunk_id: object
    m_c: int
    source: object

    def __post_init__(self):
        if isinstance(self.m_c, bool) or int(self.m_c) != self.m_c or self.m_c < 0:
            raise ValidationError(f"chunk {self.chunk_id!r}: m_c must be a nonnegative integer")
        object.__setattr__(self, "m_c", int(self.m_c))

    def read(self, block_size=IO_BLOCK):
        """Yield validated blocks; raise if the source length is not ``m_c``."""
        seen = 0
        try:
            for block in self.source.blocks(block_size):
                arr = validate_pvalues(block, offset=seen)
                seen += arr.size
                if seen > self.m_c:
                    break
                yield arr
        except ValidationError as exc:
            raise type(exc)(f"chunk {self.chunk_id!r}: {exc}") from None
        if seen != self.m_c:
            raise ConsistencyError(
                f"chunk {self.chunk_id!r} delivered {'more than ' if seen > self.m_c else ''}"
                f"{seen} values, manifest says m_c={self.m_c}"
            )


def chunks_from_arrays(arrays, ids=None) -> list:
    arrays = [np.asarray(a, dtype=np.float64).reshape(-1) for a in arrays]
    ids = ids if ids is not None else [f"c{i + 1}" for i in range(len(arrays))]
    return [ChunkDescriptor(cid, a.size, ArraySource(a)) for cid, a in zip(ids, arrays)]


class MemoryBudget:
    """Tracks resident survivor and bin items against a cap ``m_star``.

    Transient I/O blocks are not counted; they are bounded separately by the
    reader's block size.
    """

    def __init__(self, m_star: int | None):
        if m_star is not None:
            if isinstance(m_star, bool) or int(m_star) != m_star or m_star < 1:
                raise ValidationError(f"memory budget must be a positive integer, got {m_star!r}")
            m_star = int(m_star)
        self.m_star = m_star
        self._cap = sys.maxsize if m_star is None else m_star
        self._held = 0
        self.peak = 0
        self._lock = threading.Lock()

    @property
    def held(self) -> int:
        return self._held

    def try_acquire(self, n: int) -> bool:
        with self._lock:
            if self._held + n > self._cap:
                return False
            self._held += n
            self.peak = max(self.peak, self._held)
            return True

    def acquire(self, n: int):
        if not self.try_acquire(n):
            raise BudgetExceeded(f"holding {self._held} + {n} items exceeds m_star={self.m_star}")

    def release(self, n: int):
        with self._lock:
            if n > self._held:
                raise InvariantError(f"releasing {n} items but only {self._held} held")
            self._held -= n


@dataclass
class ChunkPassResult:
    """Survivors of one chunk after one counting pass.

    ``positions`` are global positions (chunk offset plus local index).
    """

    chunk_id: object
    r_c: int
    positions: np.ndarray
    survivors: np.ndarray
    cutoff: float


def _offsets(chunks):
    out, acc = [], 0
    for c in chunks:
        out.append(acc)
        acc += c.m_c
    return out


def _check_manifest(chunks, m_global):
    if not chunks:
        raise ValidationError("no chunks given")
    ids = [c.chunk_id for c in chunks]
    if len(set(ids)) != len(ids):
        raise ValidationError("chunk ids are not unique")
    total = sum(c.m_c for c in chunks)
    if m_global is None:
        m_global = total
    if total != m_global:
        raise ConsistencyError(f"chunk sizes sum to {total}, m_global is {m_global}")
    if m_global < 1:
        raise ValidationError("m_global must be positive")
    return int(m_global)


def chunk_local_pass(chunk: ChunkDescriptor, global_r: int, m_global: int, level,
                     previous: ChunkPassResult | None = None, offset: int = 0) -> ChunkPassResult:
    """One linear scan keeping values below ``global_r * alpha / m_global``.

    With ``previous`` the scan runs over that pass's survivors instead of
    re-reading the source; non-survivors were dropped, not flagged.
    """
    alpha = SignificanceLevel.coerce(level).alpha
    if not 0 <= global_r <= m_global:
        raise ValidationError(f"global_r={global_r} outside [0, {m_global}]")
    cutoff = step_threshold(global_r, alpha, m_global)
    if previous is not None:
        keep = previous.survivors < cutoff
        pos, vals = previous.positions[keep], previous.survivors[keep]
    else:
        pos, vals = _collect_below(chunk, cutoff, offset)
    return ChunkPassResult(chunk.chunk_id, int(vals.size), pos, vals, cutoff)


def _collect_below(chunk: ChunkDescriptor, cutoff: float, offset: int):
    pos_parts, val_parts, seen = [], [], 0
    for block in chunk.read():
        hit = np.flatnonzero(block < cutoff)
        pos_parts.append(hit + (offset + seen))
        val_parts.append(block[hit])
        seen += block.size
    pos = np.concatenate(pos_parts).astype(np.int64) if pos_parts else np.empty(0, np.int64)
    vals = np.concatenate(val_parts) if val_parts else np.empty(0, np.float64)
    return pos, vals


def _count_below(chunk: ChunkDescriptor, cutoff: float) -> int:
    return sum(int(np.count_nonzero(b < cutoff)) for b in chunk.read())


def fast_lsu_chunked_sequential(chunks, m_global: int | None, level) -> RejectionReport:
    """Rescan all chunks with a shared threshold until the total is a fixed point."""
    alpha = SignificanceLevel.coerce(level).alpha
    m = _check_manifest(chunks, m_global)
    offsets = _offsets(chunks)

    results = [chunk_local_pass(c, m, m, alpha, offset=o) for c, o in zip(chunks, offsets)]
    total = sum(res.r_c for res in results)
    scans = [total]
    while True:
        results = [
            chunk_local_pass(c, total, m, alpha, previous=res)
            for c, res in zip(chunks, results)
        ]
        new_total = sum(res.r_c for res in results)
        scans.append(new_total)
        if new_total == total:
            break
        if new_total > total:
            raise InvariantError(f"survivor total grew from {total} to {new_total}")
        if len(scans) > m + 1:
            raise InvariantError("no fixed point within m passes")
        total = new_total

    pos = np.concatenate([res.positions for res in results])
    vals = np.concatenate([res.survivors for res in results])
    return _report(
        pos, vals, step_threshold(max(total, 1), alpha, m), len(scans), m, alpha,
        "chunked-seq", scans, chunking=_provenance(chunks),
    )


@dataclass
class ChunkReduction:
    """Independent reduction of one chunk, tiled by the global ``m``.

    ``r_star`` is the chunk-local fixed point and ``cutoff`` the strict bound
    ``(r_star + m - m_c) * alpha / m`` its survivors satisfy. ``held`` holds
    the survivors when they fit in the budget, else ``None``.
    """

    chunk_id: object
    r_star: int
    cutoff: float
    passes: int
    scan_counts: list
    held: ChunkPassResult | None = None


def reduce_chunk(chunk: ChunkDescriptor, m_global: int, level, offset: int = 0,
                 budget: MemoryBudget | None = None) -> ChunkReduction:
    """Single-batch fixed point on one chunk, starting from ``r0 = m - m_c + #{p < alpha}``.

    Survivors are retained once their count fits in ``budget``; until then
    each pass only counts, re-reading the chunk source.
    """
    alpha = SignificanceLevel.coerce(level).alpha
    budget = budget if budget is not None else MemoryBudget(None)
    m, n = int(m_global), chunk.m_c
    shift = m - n
    prev = n
    held = None
    scans = []
    while True:
        if held is not None:
            before = held.r_c
            held = chunk_local_pass(chunk, prev + shift, m, alpha, previous=held)
            budget.release(before - held.r_c)
            r = held.r_c
        elif budget.try_acquire(prev):
            held = chunk_local_pass(chunk, prev + shift, m, alpha, offset=offset)
            budget.release(prev - held.r_c)
            r = held.r_c
        else:
            r = _count_below(chunk, step_threshold(prev + shift, alpha, m))
        scans.append(r)
        if r == prev:
            break
        if r > prev:
            raise InvariantError(f"chunk {chunk.chunk_id!r}: survivor count grew")
        prev = r
    cutoff = step_threshold(prev + shift, alpha, m)
    return ChunkReduction(chunk.chunk_id, prev, cutoff, len(scans), scans, held)


def _provenance(chunks, **more):
    info = {"n_chunks": len(chunks), "sizes": [c.m_c for c in chunks]}
    info.update(more)
    return info


def fast_lsu_chunked_parallel(chunks, m_global: int | None, level,
                              budget: MemoryBudget | None = None,
                              threads: int | None = None) -> RejectionReport:
    """Reduce chunks independently, then take the fixed point over their union.

    The combine step starts from ``m'``, the size of the survivor union. When
    every chunk's survivors are resident the fixed point runs in memory;
    otherwise the chunks are rescanned with the shared threshold (each chunk
    also capped by its own reduction cutoff) until the candidate count fits
    the budget or reaches the fixed point.
    """
    alpha = SignificanceLevel.coerce(level).alpha
    m = _check_manifest(chunks, m_global)
    budget = budget if budget is not None else MemoryBudget(None)
    offsets = _offsets(chunks)
    workers = max(1, min(threads or os.cpu_count() or 1, len(chunks)))

    def work(args):
        c, o = args
        return reduce_chunk(c, m, alpha, offset=o, budget=budget)

    if workers == 1:
        reductions = [work(a) for a in zip(chunks, offsets)]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            reductions = list(pool.map(work, zip(chunks, offsets)))

    m_prime = sum(red.r_star for red in reductions)
    chunk_passes = max(red.passes for red in reductions)

    if all(red.held is not None for red in reductions):
        pos = np.concatenate([red.held.positions for red in reductions])
        vals = np.concatenate([red.held.survivors for red in reductions])
        pos, vals, scans = fixed_point_scan(vals, pos, m_prime, 0, m, alpha,
                                            on_shrink=budget.release)
        charged, streamed = vals.size, 0
    else:
        for red in reductions:
            if red.held is not None:
                budget.release(red.held.r_c)
                red.held = None
        pos, vals, scans, charged, streamed = _streaming_combine(
            chunks, offsets, reductions, m_prime, m, alpha, budget)
    if budget.held != charged:
        raise InvariantError(f"budget tracker holds {budget.held}, expected {charged}")
    budget.release(charged)

    r = int(vals.size)
    return _report(
        pos, vals, step_threshold(max(r, 1), alpha, m), chunk_passes + len(scans) + streamed,
        m, alpha, "chunked-par", scans,
        chunking=_provenance(chunks, union_size=m_prime, m_star=budget.m_star, peak=budget.peak),
        reductions=reductions, m_prime=m_prime,
    )


def _streaming_combine(chunks, offsets, reductions, m_prime, m, alpha, budget):
    """Fixed point over the survivor union without holding it in memory.

    Each round counts, per chunk, values below ``min(shared cutoff, chunk
    cutoff)``. As soon as the previous count fits in the budget the
    candidates are collected and the rest runs in memory.
    Returns ``(positions, values, scans, charged, extra_passes)``.
    """
    caps = [red.cutoff for red in reductions]
    prev = m_prime
    scans = []
    while True:
        cutoff = step_threshold(prev, alpha, m)
        if budget.try_acquire(prev):
            parts = [_collect_below(c, min(cutoff, cap), o)
                     for c, o, cap in zip(chunks, offsets, caps)]
            pos = np.concatenate([p for p, _ in parts])
            vals = np.concatenate([v for _, v in parts])
            budget.release(prev - vals.size)
            scans.append(int(vals.size))
            if vals.size == prev:
                return pos, vals, scans, vals.size, 0
            pos, vals, more = fixed_point_scan(vals, pos, vals.size, 0, m, alpha,
                                               on_shrink=budget.release)
            return pos, vals, scans + more, vals.size, 0
        r = sum(_count_below(c, min(cutoff, cap)) for c, cap in zip(chunks, caps))
        scans.append(r)
        if r == prev:
            break
        if r > prev:
            raise InvariantError("survivor total grew during combine")
        prev = r
    # fixed point reached while only counting; the rejection set is output
    # and is gathered without charging the working budget
    cutoff = step_threshold(prev, alpha, m)
    parts = [_collect_below(c, min(cutoff, cap), o) for c, o, cap in zip(chunks, offsets, caps)]
    pos = np.concatenate([p for p, _ in parts])
    vals = np.concatenate([v for _, v in parts])
    return pos, vals, scans, 0, 1


def fast_lsu_chunked_binned(chunks, m_global: int | None, level,
                            budget: MemoryBudget | None = None) -> RejectionReport:
    """Bin/accumulate/return over chunks with at most ``m_star`` bins resident.

    Labels are computed against the global ``m`` and never stored. The first
    pass counts ``m'``, the values below ``alpha``. Bins are then histogrammed
    in windows of ``m_star`` from ``min(m, m')`` downward, one pass over all
    chunks per window, until the significant bin turns up. A last pass
    returns the values labelled at or below it.
    """
    alpha = SignificanceLevel.coerce(level).alpha
    m = _check_manifest(chunks, m_global)
    budget = budget if budget is not None else MemoryBudget(None)
    offsets = _offsets(chunks)
    width = budget.m_star or m

    def labelled():
        for c, o in zip(chunks, offsets):
            seen = 0
            for block in c.read():
                yield o + seen, block, bin_labels(block, m, alpha)
                seen += block.size

    m_prime = sum(int(np.count_nonzero(lab <= m)) for _, _, lab in labelled())
    passes = 1
    hi = min(m, m_prime)
    above = None  # values labelled above the current window
    r_star = 0
    windows = 0
    while hi >= 1:
        lo = max(1, hi - width + 1)
        budget.acquire(hi - lo + 1)
        counts = np.zeros(hi - lo + 1, dtype=np.int64)
        over = 0
        for _, _, lab in labelled():
            inside = lab[(lab >= lo) & (lab <= hi)]
            counts += np.bincount(inside - lo, minlength=hi - lo + 1)
            if above is None:
                over += int(np.count_nonzero((lab > hi) & (lab <= m)))
        passes += 1
        windows += 1
        if above is None:
            above = over
        # at_or_below[j] = values labelled <= lo + j
        at_or_below = m_prime - above - (counts.sum() - np.cumsum(counts))
        hits = np.flatnonzero(at_or_below == np.arange(lo, hi + 1))
        budget.release(hi - lo + 1)
        if hits.size:
            r_star = lo + int(hits[-1])
            break
        above += int(counts.sum())
        hi = lo - 1

    pos_parts, val_parts = [], []
    if r_star:
        for start, block, lab in labelled():
            hit = np.flatnonzero(lab <= r_star)
            pos_parts.append(hit + start)
            val_parts.append(block[hit])
        passes += 1
    pos = np.concatenate(pos_parts) if pos_parts else np.empty(0, np.int64)
    vals = np.concatenate(val_parts) if val_parts else np.empty(0, np.float64)
    if vals.size != r_star:
        raise InvariantError(f"returned {vals.size} values for significant bin {r_star}")
    return _report(
        pos, vals, step_threshold(max(r_star, 1), alpha, m), passes, m, alpha,
        "chunked-binned", (m_prime, r_star),
        chunking=_provenance(chunks, m_star=budget.m_star, peak=budget.peak, windows=windows),
    )


def union_of_chunks_bh(chunks, level) -> RejectionReport:
    """UNSAFE: per-chunk BH with each chunk's own size, rejections unioned.

    This does not control the FDR of the whole problem. It exists only so
    the inflation it causes can be measured against the correct procedure.
    """
    alpha = SignificanceLevel.coerce(level).alpha
    m = _check_manifest(chunks, None)
    pos_parts, val_parts, cutoffs = [], [], []
    for c, o in zip(chunks, _offsets(chunks)):
        if c.m_c == 0:
            continue
        values = np.concatenate(list(c.read()))
        rep = bh_oracle(PValueBatch(values, c.m_c), alpha)
        pos_parts.append(rep.rejected_indices + o)
        val_parts.append(rep.rejected_values)
        cutoffs.append(rep.threshold)
    pos = np.concatenate(pos_parts) if pos_parts else np.empty(0, np.int64)
    vals = np.concatenate(val_parts) if val_parts else np.empty(0, np.float64)
    return _report(
        pos, vals, max(cutoffs, default=alpha / m), 1, m, alpha, "union-unsafe",
        (vals.size,), chunking=_provenance(chunks), unsafe=True,
    )
