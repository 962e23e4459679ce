"""Single-batch linear step-up selection without sorting.

Three routes to the Benjamini-Hochberg rejection set live here:

* :func:`bh_oracle` sorts and searches for the largest ``i`` with
  ``p_(i) < i * alpha / m``. It is the reference everything else is checked
  against.
* :func:`fast_lsu_iterative` repeats linear counting scans with a shrinking
  threshold until the survivor count stops changing.
* :func:`fast_lsu_binned` labels every p-value with a bin of width
  ``alpha / m`` in one pass, finds the significant bin from the histogram,
  and returns everything at or below it.

All three use the strict ``<`` convention and the same threshold arithmetic
(:func:`step_threshold`), so their outputs agree exactly, ties and boundary
values included.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from .errors import ConsistencyError, InvariantError, ValidationError

__all__ = [
    "SignificanceLevel",
    "PValueBatch",
    "RejectionReport",
    "BinHistogram",
    "step_threshold",
    "validate_pvalues",
    "bin_labels",
    "build_histogram",
    "bh_oracle",
    "fast_lsu_iterative",
    "fixed_point_scan",
    "fast_lsu_binned",
]

# values per block when consuming a plain iterable
STREAM_BLOCK = 1 << 16


def step_threshold(rank, alpha, m):
    """Cutoff ``rank * alpha / m`` used by every selection route.

    Works on scalars and integer arrays alike; keeping one expression means
    the oracle, the counting scans and the bin labels never disagree by an
    ulp on a boundary.
    """
    return rank * alpha / m


@dataclass(frozen=True)
class SignificanceLevel:
    """FDR level ``alpha`` with ``0 < alpha < 1``."""

    alpha: float

    def __post_init__(self):
        a = self.alpha
        if isinstance(a, SignificanceLevel):
            a = a.alpha
        try:
            a = float(a)
        except (TypeError, ValueError):
            raise ValidationError(f"alpha must be a real number, got {self.alpha!r}") from None
        if not (0.0 < a < 1.0):
            raise ValidationError(f"alpha must lie in (0, 1), got {a!r}")
        object.__setattr__(self, "alpha", a)

    def __float__(self):
        return self.alpha

    @classmethod
    def coerce(cls, level) -> "SignificanceLevel":
        if isinstance(level, cls):
            return level
        return cls(level)


def validate_pvalues(values, offset: int = 0) -> np.ndarray:
    """Return ``values`` as a float64 array or raise on the first bad entry.

    ``offset`` is added to the reported position so that blocks of a longer
    stream report positions in the whole stream.
    """
    try:
        arr = np.asarray(values, dtype=np.float64)
    except (TypeError, ValueError) as exc:
        raise ValidationError(f"p-values must be real numbers: {exc}") from None
    if arr.ndim != 1:
        arr = arr.reshape(-1)
    bad = ~(np.isfinite(arr) & (arr >= 0.0) & (arr <= 1.0))
    if bad.any():
        i = int(np.flatnonzero(bad)[0])
        raise ValidationError(
            f"p-value {arr[i]!r} is not a finite number in [0, 1]", position=offset + i
        )
    return arr


@dataclass(frozen=True)
class PValueBatch:
    """Validated p-values in input order plus the global problem size.

    ``m_global`` equals ``len(values)`` for a self-contained problem. A larger
    ``m_global`` marks the batch as one chunk of a bigger problem, whose
    thresholds are still tiled by the global size.
    """

    values: np.ndarray
    m_global: int

    def __post_init__(self):
        arr = validate_pvalues(self.values)
        arr.setflags(write=False)
        object.__setattr__(self, "values", arr)
        m = self.m_global
        if m is None:
            m = arr.size
        if isinstance(m, bool) or int(m) != m:
            raise ValidationError(f"m_global must be an integer, got {m!r}")
        m = int(m)
        if m < 1:
            raise ValidationError(f"m_global must be positive, got {m}")
        if m < arr.size:
            raise ValidationError(
                f"m_global={m} is smaller than the number of values ({arr.size})"
            )
        object.__setattr__(self, "m_global", m)

    @classmethod
    def of(cls, values, m_global: int | None = None) -> "PValueBatch":
        return cls(values, m_global)

    def __len__(self):
        return int(self.values.size)

    @property
    def self_contained(self) -> bool:
        return self.m_global == self.values.size


@dataclass(frozen=True)
class RejectionReport:
    """Outcome of one selection run.

    ``rejected_indices`` are sorted 0-based positions into the input (the
    concatenation of all chunks, in manifest order, for chunked runs) and
    ``rejected_values`` the matching p-values. ``threshold`` is the final
    strict cutoff; with nothing rejected it is ``alpha / m_global``.
    ``scan_counts`` lists the survivor count after every counting scan.
    """

    rejected_indices: np.ndarray
    rejected_values: np.ndarray
    threshold: float
    passes: int
    m_global: int
    alpha: float
    variant: str
    scan_counts: tuple = ()
    chunking: dict | None = None
    extra: dict = field(default_factory=dict)

    @property
    def r(self) -> int:
        return int(self.rejected_indices.size)

    def rejected_set(self) -> frozenset:
        return frozenset(int(i) for i in self.rejected_indices)

    def summary_line(self) -> str:
        return (
            f"m={self.m_global} alpha={self.alpha!r} r={self.r} "
            f"threshold={self.threshold!r} passes={self.passes}"
        )

    def summary(self) -> dict:
        return {
            "m": self.m_global,
            "alpha": self.alpha,
            "r": self.r,
            "threshold": self.threshold,
            "passes": self.passes,
            "variant": self.variant,
            "chunking": self.chunking,
        }


def _report(positions, values, threshold, passes, m, alpha, variant, scans, chunking=None, **extra):
    order = np.argsort(positions, kind="stable")
    idx = np.asarray(positions, dtype=np.int64)[order]
    vals = np.asarray(values, dtype=np.float64)[order]
    return RejectionReport(
        rejected_indices=idx,
        rejected_values=vals,
        threshold=float(threshold),
        passes=int(passes),
        m_global=int(m),
        alpha=float(alpha),
        variant=variant,
        scan_counts=tuple(int(s) for s in scans),
        chunking=chunking,
        extra=extra,
    )


def bh_oracle(batch: PValueBatch, level) -> RejectionReport:
    """Sort-based linear step-up, used as the verification reference.

    Returns the ``r`` smallest p-values where ``r`` is the largest rank with
    ``p_(r) < r * alpha / m`` (``r = 0`` if no rank qualifies).
    """
    alpha = SignificanceLevel.coerce(level).alpha
    if not batch.self_contained:
        raise ValidationError(
            "bh_oracle needs a self-contained batch "
            f"(m_global={batch.m_global}, values={len(batch)})"
        )
    m = batch.m_global
    order = np.argsort(batch.values, kind="stable")
    ranked = batch.values[order]
    ranks = np.arange(1, m + 1, dtype=np.int64)
    hits = np.flatnonzero(ranked < step_threshold(ranks, alpha, m))
    r = int(hits[-1]) + 1 if hits.size else 0
    chosen = order[:r]
    threshold = step_threshold(max(r, 1), alpha, m)
    return _report(chosen, batch.values[chosen], threshold, 1, m, alpha, "oracle", (r,))


def fast_lsu_iterative(batch: PValueBatch, level) -> RejectionReport:
    """Repeated counting scans until the survivor count is a fixed point.

    Scan ``k`` keeps the values below ``(r_{k-1} + m - n) * alpha / m`` where
    ``n = len(batch)``; the first scan therefore counts values below
    ``alpha``. Non-survivors are dropped between scans, so later scans touch
    only the shrinking candidate set.

    For a chunk (``m_global > n``) the result is the chunk-local reduction: a
    superset of the chunk's share of the global rejection set.
    """
    alpha = SignificanceLevel.coerce(level).alpha
    m = batch.m_global
    n = len(batch)
    positions, survivors, scans = fixed_point_scan(
        batch.values, np.arange(n, dtype=np.int64), n, m - n, m, alpha
    )
    threshold = step_threshold(max(scans[-1], 1) + m - n, alpha, m)
    return _report(positions, survivors, threshold, len(scans), m, alpha, "iterative", scans)


def fixed_point_scan(values, positions, start, rank_offset, m, alpha, on_shrink=None):
    """Shrink ``values`` to the fixed point of ``r -> #{p < (r + rank_offset) alpha / m}``.

    Iteration starts from ``r = start`` and drops non-survivors after each
    scan. ``on_shrink(dropped)`` is called with the number of values released
    by a scan, which lets callers keep a memory tracker in step.
    Returns ``(positions, values, scan_counts)``.
    """
    prev = int(start)
    scans = []
    while True:
        cutoff = step_threshold(prev + rank_offset, alpha, m)
        keep = values < cutoff
        before = values.size
        values = values[keep]
        positions = positions[keep]
        r = int(values.size)
        if on_shrink is not None and before > r:
            on_shrink(before - r)
        scans.append(r)
        if r == prev:
            break
        if r > prev:
            raise InvariantError(f"survivor count grew from {prev} to {r}")
        if len(scans) > start + 1:
            raise InvariantError(f"no fixed point after {len(scans)} scans")
        prev = r
    return positions, values, scans


def bin_labels(values: np.ndarray, m: int, alpha: float) -> np.ndarray:
    """Bin label of every p-value, capped at ``m + 1`` for values >= alpha.

    The label is ``ceil(m * p / alpha)``, bumped by one when the quotient is
    an exact integer, so bins ``1..i`` hold exactly the values with
    ``p < i * alpha / m``. Rounding in the quotient can misplace a value by
    one bin; the correction loop re-checks each label against
    :func:`step_threshold` itself.
    """
    q = values * m / alpha
    k = np.ceil(q)
    k[k == q] += 1.0
    np.minimum(k, m + 1, out=k)
    k = k.astype(np.int64)
    while True:
        low = (k <= m) & (values >= step_threshold(k, alpha, m))
        high = (k >= 2) & (values < step_threshold(k - 1, alpha, m))
        if not (low.any() or high.any()):
            break
        k[low] += 1
        k[high] -= 1
    return k


@dataclass(frozen=True)
class BinHistogram:
    """Counts of p-values per bin of width ``alpha / m`` over ``[0, alpha)``.

    ``counts[k - 1]`` is the count for bin ``k``; ``sig_total`` is the number
    of values below ``alpha``.
    """

    counts: np.ndarray
    sig_total: int
    m: int
    alpha: float

    def nonempty(self) -> dict:
        ks = np.flatnonzero(self.counts)
        return {int(k) + 1: int(self.counts[k]) for k in ks}

    def significant_bin(self) -> int:
        """Largest ``i`` whose bins ``1..i`` hold exactly ``i`` values, else 0.

        Equivalent to scanning bins from ``m`` downward with a running total
        of the bins above ``i`` and stopping at the first
        ``sig_total - above == i``.
        """
        if self.m == 0:
            return 0
        at_or_below = np.cumsum(self.counts)
        hits = np.flatnonzero(at_or_below == np.arange(1, self.m + 1))
        return int(hits[-1]) + 1 if hits.size else 0


def build_histogram(labels: np.ndarray, m: int, alpha: float) -> BinHistogram:
    inside = labels[labels <= m]
    counts = np.bincount(inside, minlength=m + 1)[1:]
    return BinHistogram(counts=counts, sig_total=int(inside.size), m=m, alpha=alpha)


def _iter_blocks(stream) -> Iterable[np.ndarray]:
    if isinstance(stream, PValueBatch):
        yield stream.values
    elif isinstance(stream, np.ndarray):
        yield stream
    elif hasattr(stream, "blocks"):
        yield from stream.blocks(STREAM_BLOCK)
    else:
        it = iter(stream)
        while True:
            block = list(itertools.islice(it, STREAM_BLOCK))
            if not block:
                return
            yield block


def fast_lsu_binned(stream, m_global: int, level) -> RejectionReport:
    """Three-pass bin/accumulate/return selection.

    ``stream`` may be a :class:`PValueBatch`, an array, any object with a
    ``blocks(n)`` method, or a plain iterable of numbers. It is consumed once;
    values are validated as they arrive and must number exactly ``m_global``.
    """
    alpha = SignificanceLevel.coerce(level).alpha
    m = int(m_global)
    if m < 1:
        raise ValidationError(f"m_global must be positive, got {m_global!r}")

    label_dtype = np.int32 if m + 1 < np.iinfo(np.int32).max else np.int64
    labels = np.empty(m, dtype=label_dtype)
    values = np.empty(m, dtype=np.float64)
    filled = 0
    for block in _iter_blocks(stream):
        arr = validate_pvalues(block, offset=filled)
        end = filled + arr.size
        if end > m:
            raise ConsistencyError(f"stream holds more than m_global={m} values")
        values[filled:end] = arr
        labels[filled:end] = bin_labels(arr, m, alpha)
        filled = end
    if filled != m:
        raise ConsistencyError(f"stream held {filled} values, expected m_global={m}")

    hist = build_histogram(labels, m, alpha)
    r_star = hist.significant_bin()
    chosen = np.flatnonzero(labels <= r_star)
    if chosen.size != r_star:
        raise InvariantError(f"returned {chosen.size} values for significant bin {r_star}")
    threshold = step_threshold(max(r_star, 1), alpha, m)
    return _report(
        chosen, values[chosen], threshold, 3, m, alpha, "binned",
        (hist.sig_total, r_star), histogram=hist,
    )
