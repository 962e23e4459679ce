"""Adjustments applied after a selection run.

q-values are computed from the selected p-values alone, the BY level
``alpha / H_m`` guards against arbitrary dependence, and the two-step group
procedure reruns selection inside groups that had at least one discovery.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .core import (
    PValueBatch,
    RejectionReport,
    SignificanceLevel,
    _report,
    fast_lsu_iterative,
    step_threshold,
)
from .errors import ValidationError

__all__ = [
    "QValueTable",
    "DependenceRegime",
    "GroupSpec",
    "GroupResult",
    "compute_qvalues",
    "harmonic_number",
    "by_corrected_level",
    "by_two_stage",
    "group_two_step",
]

EULER_GAMMA = 0.57721566490153286060651209
EXACT_HARMONIC_LIMIT = 10**8
_HARMONIC_BLOCK = 1 << 20


@dataclass(frozen=True)
class QValueTable:
    """Selected tests with their BH-adjusted p-values, sorted by p then position."""

    positions: np.ndarray
    p: np.ndarray
    q: np.ndarray
    m_global: int

    @property
    def R(self) -> int:
        return int(self.p.size)

    def entries(self):
        return list(zip(self.positions.tolist(), self.p.tolist(), self.q.tolist()))

    def as_dict(self) -> dict:
        return dict(zip(self.positions.tolist(), self.q.tolist()))


class DependenceRegime(str, Enum):
    PRDS = "prds"
    GENERAL = "general"


def compute_qvalues(selected, m_global: int | None = None, *, positions=None,
                    alpha: float | None = None) -> QValueTable:
    """q-values of a selected set from its own p-values only.

    ``q_(R) = p_(R) m / R`` and ``q_(i) = min(p_(i) m / i, q_(i+1))`` walking
    down from the largest selected p-value. Costs ``O(R log R)``
    irrespective of ``m``.

    Parameters
    ----------
    selected : RejectionReport or array-like
        The rejection set of a selection run, or its p-values.
    m_global : int, optional
        Problem size; taken from the report when omitted.
    positions : array-like, optional
        Input positions of ``selected`` when it is a plain array.
    alpha : float, optional
        Level of the generating run. Every selected p-value must be below it.
    """
    if isinstance(selected, RejectionReport):
        m_global = selected.m_global if m_global is None else m_global
        positions = selected.rejected_indices
        alpha = selected.alpha if alpha is None else alpha
        values = selected.rejected_values
    else:
        values = np.asarray(selected, dtype=np.float64).reshape(-1)
    if m_global is None:
        raise ValidationError("m_global is required")
    m = int(m_global)
    if positions is None:
        positions = np.arange(values.size, dtype=np.int64)
    positions = np.asarray(positions, dtype=np.int64)
    R = values.size
    if R > m:
        raise ValidationError(f"{R} selected values exceed m_global={m}")
    if alpha is not None and R and values.max() > alpha:
        raise ValidationError(f"selected p-value {values.max()!r} exceeds alpha={alpha!r}")

    order = np.lexsort((positions, values))
    p = values[order]
    ranks = np.arange(1, R + 1, dtype=np.int64)
    # running minimum taken from the largest selected p-value downward
    q = np.minimum.accumulate((p * m / ranks)[::-1])[::-1]
    return QValueTable(positions=positions[order], p=p, q=q, m_global=m)


def _harmonic_exact(m: int) -> float:
    # smallest terms first; per-block sums are combined exactly by fsum
    parts = []
    hi = m
    while hi >= 1:
        lo = max(1, hi - _HARMONIC_BLOCK + 1)
        k = np.arange(hi, lo - 1, -1, dtype=np.float64)
        parts.append(float(np.sum(1.0 / k)))
        hi = lo - 1
    return math.fsum(parts)


def _harmonic_asymptotic(m: int) -> float:
    return math.log(m) + EULER_GAMMA + 1.0 / (2.0 * m)


def harmonic_number(m: int, exact_limit: int = EXACT_HARMONIC_LIMIT) -> float:
    """``H_m = sum_{k<=m} 1/k``; summed directly up to ``exact_limit``."""
    if isinstance(m, bool) or int(m) != m or m < 1:
        raise ValidationError(f"m must be a positive integer, got {m!r}")
    m = int(m)
    if m <= exact_limit:
        return _harmonic_exact(m)
    return _harmonic_asymptotic(m)


def by_corrected_level(m_global: int, level) -> SignificanceLevel:
    """Benjamini-Yekutieli level ``alpha / H_m``."""
    alpha = SignificanceLevel.coerce(level).alpha
    return SignificanceLevel(alpha / harmonic_number(m_global))


def _rerun_on_selected(report: RejectionReport, alpha_rerun: float, variant: str) -> RejectionReport:
    R = report.r
    sub = fast_lsu_iterative(PValueBatch(report.rejected_values, R), alpha_rerun)
    return _report(
        report.rejected_indices[sub.rejected_indices],
        sub.rejected_values,
        sub.threshold,
        sub.passes,
        R,
        alpha_rerun,
        variant,
        sub.scan_counts,
        chunking=report.chunking,
    )


def by_two_stage(selected: RejectionReport, m_global: int | None, level) -> RejectionReport:
    """Re-select the ``R`` survivors of a level-``alpha`` run at ``R * alpha_BY / m``.

    The survivors are treated as a self-contained batch of size ``R``; the
    returned report carries ``m_global = R`` and positions of the original
    input.
    """
    alpha = SignificanceLevel.coerce(level).alpha
    m = selected.m_global if m_global is None else int(m_global)
    R = selected.r
    if R == 0:
        return _report([], [], step_threshold(1, alpha, m), 0, m, alpha, "by-two-stage", ())
    alpha_star = by_corrected_level(m, alpha).alpha
    return _rerun_on_selected(selected, R * alpha_star / m, "by-two-stage")


@dataclass(frozen=True)
class GroupSpec:
    """Groups of tests: ``(group_id, batch_or_chunks, m_g)`` triples.

    The second element is a :class:`PValueBatch`, an array of p-values, or a
    list of chunk descriptors.
    """

    groups: tuple

    def __post_init__(self):
        groups = tuple(tuple(g) for g in self.groups)
        if not groups:
            raise ValidationError("group spec is empty")
        ids = [g[0] for g in groups]
        if len(set(ids)) != len(ids):
            raise ValidationError("group ids are not unique")
        for gid, _, m_g in groups:
            if int(m_g) != m_g or m_g < 1:
                raise ValidationError(f"group {gid!r}: m_g must be a positive integer")
        object.__setattr__(self, "groups", groups)

    @property
    def G(self) -> int:
        return len(self.groups)


@dataclass(frozen=True)
class GroupResult:
    step1: dict
    step2: dict
    S: int
    G: int


def _select_group(data, m_g, alpha):
    from .chunked import ChunkDescriptor, fast_lsu_chunked_parallel

    if isinstance(data, (list, tuple)) and data and isinstance(data[0], ChunkDescriptor):
        return fast_lsu_chunked_parallel(list(data), m_g, alpha)
    batch = data if isinstance(data, PValueBatch) else PValueBatch(data, m_g)
    if batch.m_global != m_g or batch.values.size != m_g:
        raise ValidationError(f"group holds {batch.values.size} values but m_g={m_g}")
    return fast_lsu_iterative(batch, alpha)


def group_two_step(spec: GroupSpec, level) -> GroupResult:
    """Two-step selection over groups of tests.

    Step 1 selects within every group at ``alpha``. With ``S`` of the ``G``
    groups having a discovery, step 2 reselects each such group's
    ``r_g`` survivors at ``S * r_g * alpha / (G * m_g)``, treating the
    survivors as a self-contained batch. Groups without discoveries keep an
    empty step-2 report.
    """
    alpha = SignificanceLevel.coerce(level).alpha
    step1 = {gid: _select_group(data, int(m_g), alpha) for gid, data, m_g in spec.groups}
    S = sum(1 for rep in step1.values() if rep.r > 0)
    G = spec.G
    step2 = {}
    for gid, _, m_g in spec.groups:
        rep = step1[gid]
        if rep.r == 0:
            step2[gid] = _report([], [], rep.threshold, 0, rep.m_global, alpha, "group-step2", ())
            continue
        alpha_group = S * rep.r * alpha / (G * int(m_g))
        step2[gid] = _rerun_on_selected(rep, alpha_group, "group-step2")
    return GroupResult(step1=step1, step2=step2, S=S, G=G)
