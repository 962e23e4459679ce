import threading

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fastlsu.chunked import (
    ArraySource,
    ChunkDescriptor,
    MemoryBudget,
    chunk_local_pass,
    chunks_from_arrays,
    fast_lsu_chunked_binned,
    fast_lsu_chunked_parallel,
    fast_lsu_chunked_sequential,
    reduce_chunk,
    union_of_chunks_bh,
)
from fastlsu.core import PValueBatch, bh_oracle, fast_lsu_iterative, step_threshold
from fastlsu.errors import BudgetExceeded, ConsistencyError, ValidationError

from conftest import BH15, BH15_REJECTED, SPLIT_8_7, random_batch, random_partition, split_at


def split_chunks():
    return chunks_from_arrays(SPLIT_8_7, ids=["C1", "C2"])


def test_split_8_7_first_chunk_pass():
    c1 = split_chunks()[0]
    res = chunk_local_pass(c1, 15, 15, 0.05)
    assert res.cutoff == 0.05
    assert res.r_c == 5


def test_split_8_7_sequential():
    rep = fast_lsu_chunked_sequential(split_chunks(), 15, 0.05)
    assert set(rep.rejected_values.tolist()) == BH15_REJECTED
    assert rep.scan_counts == (9, 7, 5, 4, 4)


def test_split_8_7_parallel_intermediates():
    rep = fast_lsu_chunked_parallel(split_chunks(), 15, 0.05)
    c1, c2 = rep.extra["reductions"]
    assert c1.held.survivors.tolist() == [0.0298, 0.0278, 0.0001, 0.0019]
    assert c2.held.survivors.tolist() == [0.0004, 0.0201, 0.0095, 0.0344]
    assert c1.scan_counts == [5, 4, 4]
    assert c2.scan_counts == [4, 4]
    assert c1.cutoff == step_threshold(4 + 15 - 8, 0.05, 15)
    assert rep.extra["m_prime"] == 8
    assert set(rep.rejected_values.tolist()) == BH15_REJECTED


def test_reduce_chunk_global_positions():
    c2 = split_chunks()[1]
    red = reduce_chunk(c2, 15, 0.05, offset=8)
    assert red.held.positions.tolist() == [8, 9, 13, 14]


def test_all_ones_chunk():
    chunk = ChunkDescriptor("ones", 10, ArraySource(np.ones(10)))
    assert chunk_local_pass(chunk, 10, 10, 0.05).r_c == 0


def test_first_pass_matches_iterative_first_scan(rng):
    values = rng.random(5000) ** 3
    chunk = chunks_from_arrays([values])[0]
    first = chunk_local_pass(chunk, values.size, values.size, 0.1)
    assert first.r_c == fast_lsu_iterative(PValueBatch.of(values), 0.1).scan_counts[0]


def test_single_chunk_equals_iterative(rng):
    values = rng.random(3000) ** 5
    it = fast_lsu_iterative(PValueBatch.of(values), 0.05)
    seq = fast_lsu_chunked_sequential(chunks_from_arrays([values]), values.size, 0.05)
    np.testing.assert_array_equal(seq.rejected_indices, it.rejected_indices)
    assert seq.scan_counts == it.scan_counts
    assert seq.passes == it.passes


def test_pass_survivors_shrink():
    chunk = split_chunks()[0]
    first = chunk_local_pass(chunk, 15, 15, 0.05)
    second = chunk_local_pass(chunk, 9, 15, 0.05, previous=first)
    assert set(second.positions) <= set(first.positions)
    assert (second.survivors < second.cutoff).all()


def test_partition_sweep(rng):
    for _ in range(150):
        values, alpha = random_batch(rng, m_max=4000)
        ref = bh_oracle(PValueBatch.of(values), alpha).rejected_indices
        chunks = chunks_from_arrays(split_at(values, random_partition(rng, values.size)))
        m = values.size
        seq = fast_lsu_chunked_sequential(chunks, m, alpha)
        par = fast_lsu_chunked_parallel(chunks, m, alpha, threads=3)
        budget = MemoryBudget(int(rng.choice([1, 8, 64, 500])))
        tight = fast_lsu_chunked_parallel(chunks, m, alpha, budget)
        binned = fast_lsu_chunked_binned(chunks, m, alpha, MemoryBudget(64))
        for rep in (seq, par, tight, binned):
            np.testing.assert_array_equal(rep.rejected_indices, ref, err_msg=rep.variant)
        assert budget.peak <= budget.m_star
        assert budget.held == 0
        totals = seq.scan_counts
        assert all(a > b for a, b in zip(totals[:-2], totals[1:-1]))


def test_per_chunk_reduction_never_drops_a_final_rejection(rng):
    for _ in range(100):
        values, alpha = random_batch(rng, m_max=2000)
        m = values.size
        final = bh_oracle(PValueBatch.of(values), alpha).rejected_set()
        cuts = random_partition(rng, m)
        offset = 0
        for i, part in enumerate(split_at(values, cuts)):
            chunk = ChunkDescriptor(i, part.size, ArraySource(part))
            red = reduce_chunk(chunk, m, alpha, offset=offset)
            mine = {p for p in final if offset <= p < offset + part.size}
            assert mine <= set(red.held.positions.tolist())
            offset += part.size


def test_budget_at_least_m_matches_sequential(rng):
    values = rng.random(2000) ** 4
    chunks = chunks_from_arrays(np.array_split(values, 5))
    seq = fast_lsu_chunked_sequential(chunks, values.size, 0.1)
    par = fast_lsu_chunked_parallel(chunks, values.size, 0.1, MemoryBudget(values.size))
    np.testing.assert_array_equal(par.rejected_indices, seq.rejected_indices)


def test_tight_budget_streams_and_stays_within():
    rng = np.random.default_rng(7)
    values = rng.random(20000) ** 6
    chunks = chunks_from_arrays(np.array_split(values, 7))
    ref = bh_oracle(PValueBatch.of(values), 0.2)
    assert ref.r > 64
    budget = MemoryBudget(64)
    rep = fast_lsu_chunked_parallel(chunks, values.size, 0.2, budget)
    np.testing.assert_array_equal(rep.rejected_indices, ref.rejected_indices)
    assert 0 < budget.peak <= 64 or budget.peak == 0
    b2 = MemoryBudget(64)
    rep = fast_lsu_chunked_binned(chunks, values.size, 0.2, b2)
    np.testing.assert_array_equal(rep.rejected_indices, ref.rejected_indices)
    assert b2.peak == 64
    assert rep.chunking["windows"] > 1


def test_budget_tracker_rejects_overdraw():
    b = MemoryBudget(5)
    b.acquire(3)
    assert not b.try_acquire(3)
    with pytest.raises(BudgetExceeded):
        b.acquire(3)
    b.release(3)
    assert b.peak == 3
    with pytest.raises(ValidationError):
        MemoryBudget(0)


def test_empty_chunks_are_allowed():
    chunks = chunks_from_arrays([[], BH15[:8], [], BH15[8:], []])
    for fn in (fast_lsu_chunked_sequential, fast_lsu_chunked_parallel, fast_lsu_chunked_binned):
        rep = fn(chunks, 15, 0.05)
        assert set(rep.rejected_values.tolist()) == BH15_REJECTED


def test_manifest_consistency_errors():
    chunks = split_chunks()
    with pytest.raises(ConsistencyError):
        fast_lsu_chunked_sequential(chunks, 16, 0.05)
    dup = [chunks[0], ChunkDescriptor("C1", 7, ArraySource(BH15[8:]))]
    with pytest.raises(ValidationError):
        fast_lsu_chunked_parallel(dup, 15, 0.05)
    short = [chunks[0], ChunkDescriptor("C2", 8, ArraySource(BH15[8:]))]
    with pytest.raises(ConsistencyError):
        fast_lsu_chunked_sequential(short, 16, 0.05)


def test_bad_value_in_chunk_is_positioned():
    chunk = ChunkDescriptor("bad", 3, ArraySource([0.1, 2.0, 0.3]))
    with pytest.raises(ValidationError) as exc:
        fast_lsu_chunked_sequential([chunk], 3, 0.05)
    assert "bad" in str(exc.value) and "position 1" in str(exc.value)


def test_union_split_8_7():
    rep = union_of_chunks_bh(split_chunks(), 0.05)
    # C1 alone rejects 2 at m=8, C2 alone rejects 3 at m=7
    assert set(rep.rejected_values.tolist()) == {0.0001, 0.0019, 0.0004, 0.0095, 0.0201}
    assert set(rep.rejected_values.tolist()) >= BH15_REJECTED
    assert rep.extra["unsafe"]


def test_union_single_chunk_is_bh(rng):
    values = rng.random(500) ** 3
    rep = union_of_chunks_bh(chunks_from_arrays([values]), 0.1)
    np.testing.assert_array_equal(rep.rejected_indices, bh_oracle(PValueBatch.of(values), 0.1).rejected_indices)


def test_union_need_not_dominate():
    # the per-chunk rank of 0.035 is worse than its global rank
    values = [0.001, 0.002, 0.003, 0.035, 0.9]
    glob = bh_oracle(PValueBatch.of(values), 0.05).rejected_set()
    assert 3 in glob
    union = union_of_chunks_bh(chunks_from_arrays([values[:3], values[3:]]), 0.05).rejected_set()
    assert 3 not in union


def test_parallel_threads_share_one_budget():
    rng = np.random.default_rng(3)
    values = rng.random(40000) ** 5
    chunks = chunks_from_arrays(np.array_split(values, 16))
    ref = bh_oracle(PValueBatch.of(values), 0.1).rejected_indices
    results = []

    def run():
        b = MemoryBudget(300)
        rep = fast_lsu_chunked_parallel(chunks, values.size, 0.1, b, threads=4)
        results.append((rep.rejected_indices, b.peak))

    threads = [threading.Thread(target=run) for _ in range(4)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    for idx, peak in results:
        np.testing.assert_array_equal(idx, ref)
        assert peak <= 300


@settings(max_examples=150, deadline=None)
@given(
    st.lists(st.floats(0, 1), min_size=1, max_size=80),
    st.lists(st.integers(0, 80), max_size=6),
    st.floats(0.01, 0.6),
    st.integers(1, 20),
)
def test_property_partition_invariance(values, cuts, alpha, m_star):
    cuts = sorted(min(c, len(values)) for c in cuts)
    chunks = chunks_from_arrays(split_at(values, cuts))
    ref = bh_oracle(PValueBatch.of(values), alpha).rejected_set()
    m = len(values)
    assert fast_lsu_chunked_sequential(chunks, m, alpha).rejected_set() == ref
    budget = MemoryBudget(m_star)
    assert fast_lsu_chunked_parallel(chunks, m, alpha, budget).rejected_set() == ref
    assert budget.peak <= m_star
    assert fast_lsu_chunked_binned(chunks, m, alpha, MemoryBudget(m_star)).rejected_set() == ref
