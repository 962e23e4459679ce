"""Synthetic p-values, realized FDP, the chunk-size inflation experiment and timings.

Randomness comes from numpy's PCG64 bit generator (``np.random.default_rng``)
so a seed reproduces the same p-values on every platform.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .chunked import chunks_from_arrays, fast_lsu_chunked_sequential, union_of_chunks_bh
from .core import PValueBatch, RejectionReport, bh_oracle, fast_lsu_binned, fast_lsu_iterative
from .errors import ValidationError

SCALE = "scale"
REPLACE = "replace"
DEMO_HEADER = ("chunk_size", "method", "rejections", "max_rejected_p", "realized_fdp")


@dataclass(frozen=True)
class TruthLabels:
    is_signal: np.ndarray

    @property
    def m(self) -> int:
        return int(self.is_signal.size)

    @property
    def m1(self) -> int:
        return int(np.count_nonzero(self.is_signal))

    @property
    def m0(self) -> int:
        return self.m - self.m1


@dataclass(frozen=True)
class SimParams:
    """Null p-values are Uniform(0, 1); each test is a signal with probability ``pi1``.

    With ``mode="scale"`` a signal's p-value is ``U * signal`` (the
    multiplicative recipe); with ``mode="replace"`` it is exactly ``signal``.
    """

    m: int = 30000
    pi1: float = 0.02
    signal: float = 1e-4
    mode: str = SCALE

    def __post_init__(self):
        if int(self.m) != self.m or self.m < 1:
            raise ValidationError(f"m must be a positive integer, got {self.m!r}")
        if not 0.0 <= self.pi1 <= 1.0:
            raise ValidationError(f"pi1 must lie in [0, 1], got {self.pi1!r}")
        if not 0.0 <= self.signal <= 1.0:
            raise ValidationError(f"signal must lie in [0, 1], got {self.signal!r}")
        if self.mode not in (SCALE, REPLACE):
            raise ValidationError(f"unknown signal mode {self.mode!r}")


def simulate(params: SimParams, rng) -> tuple[np.ndarray, TruthLabels]:
    rng = np.random.default_rng(rng)
    u = rng.random(params.m)
    is_signal = rng.random(params.m) < params.pi1
    if params.mode == SCALE:
        values = np.where(is_signal, u * params.signal, u)
    else:
        values = np.where(is_signal, params.signal, u)
    return values, TruthLabels(is_signal)


def evaluate_fdp(report: RejectionReport, truth: TruthLabels) -> tuple[int, int, float]:
    """``(R, V, FDP)`` with ``FDP = V / R`` and ``0`` when nothing is rejected."""
    idx = report.rejected_indices
    if idx.size and (idx.min() < 0 or idx.max() >= truth.m):
        raise ValidationError("rejected position outside the truth labels")
    R = int(idx.size)
    V = int(np.count_nonzero(~truth.is_signal[idx]))
    return R, V, (V / R if R else 0.0)


@dataclass(frozen=True)
class ExperimentRow:
    replicate: int
    chunk_size: int
    method: str
    rejections: int
    false_rejections: int
    fdp: float
    max_rejected_p: float
    seconds: float


def split_even(values: np.ndarray, size: int) -> list:
    return [values[i:i + size] for i in range(0, values.size, size)]


def run_replicate(values, truth, ladder, level, replicate=0) -> list:
    rows = []
    for size in ladder:
        chunks = chunks_from_arrays(split_even(values, size))
        for method, fn in (
            ("fastlsu", lambda c: fast_lsu_chunked_sequential(c, values.size, level)),
            ("union-unsafe", lambda c: union_of_chunks_bh(c, level)),
        ):
            t0 = time.perf_counter()
            rep = fn(chunks)
            elapsed = time.perf_counter() - t0
            R, V, fdp = evaluate_fdp(rep, truth)
            max_p = float(rep.rejected_values.max()) if R else 0.0
            rows.append(ExperimentRow(replicate, size, method, R, V, fdp, max_p, elapsed))
    return rows


def run_inflation_experiment(params: SimParams, ladder, level, replicates: int,
                             seed=0, workers: int = 1) -> list:
    """Rows for every (replicate, chunk size, method).

    Replicate ``i`` draws its data from ``SeedSequence(seed).spawn`` child
    ``i``, so results do not depend on ``workers``.
    """
    ladder = [int(s) for s in ladder]
    if not ladder or min(ladder) < 1:
        raise ValidationError("chunk-size ladder must hold positive sizes")
    if replicates < 1:
        raise ValidationError("replicates must be >= 1")
    children = np.random.SeedSequence(seed).spawn(replicates)
    tasks = [(params, children[i], ladder, level, i) for i in range(replicates)]
    if workers > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(workers) as pool:
            parts = list(pool.map(_replicate_task, tasks))
    else:
        parts = [_replicate_task(t) for t in tasks]
    return [row for part in parts for row in part]


def _replicate_task(args):
    params, child, ladder, level, i = args
    values, truth = simulate(params, child)
    return run_replicate(values, truth, ladder, level, replicate=i)


def summarize(rows) -> list:
    """Mean rejections, max rejected p and FDP per (chunk size, method)."""
    keys = []
    groups = {}
    for row in rows:
        key = (row.chunk_size, row.method)
        if key not in groups:
            keys.append(key)
            groups[key] = []
        groups[key].append(row)
    out = []
    for key in keys:
        g = groups[key]
        fdp = np.array([r.fdp for r in g])
        out.append({
            "chunk_size": key[0],
            "method": key[1],
            "rejections": float(np.mean([r.rejections for r in g])),
            "max_rejected_p": float(np.mean([r.max_rejected_p for r in g])),
            "realized_fdp": float(fdp.mean()),
            "fdp_se": float(fdp.std(ddof=1) / np.sqrt(fdp.size)) if fdp.size > 1 else 0.0,
            "replicates": len(g),
        })
    return out


def bench_scaling(sizes, level, seed=0, pi1=0.01, repeats=1) -> list:
    """Best-of-``repeats`` wall time of binned, iterative and oracle selection."""
    rows = []
    rng = np.random.default_rng(seed)
    for m in sizes:
        values, _ = simulate(SimParams(m=int(m), pi1=pi1), rng)
        batch = PValueBatch(values, int(m))
        for name, fn in (
            ("binned", lambda: fast_lsu_binned(batch, batch.m_global, level)),
            ("iterative", lambda: fast_lsu_iterative(batch, level)),
            ("oracle", lambda: bh_oracle(batch, level)),
        ):
            best = float("inf")
            try:
                for _ in range(repeats):
                    t0 = time.perf_counter()
                    rep = fn()
                    best = min(best, time.perf_counter() - t0)
            except MemoryError:
                rows.append({"m": int(m), "variant": name, "seconds": None, "r": None,
                             "passes": None, "error": "out of memory"})
                continue
            rows.append({"m": int(m), "variant": name, "seconds": best, "r": rep.r,
                         "passes": rep.passes, "error": ""})
    return rows
