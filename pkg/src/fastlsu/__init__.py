"""Sorting-free Benjamini-Hochberg selection for huge and chunked p-value sets."""

from .adjust import (
    DependenceRegime,
    GroupSpec,
    QValueTable,
    by_corrected_level,
    by_two_stage,
    compute_qvalues,
    group_two_step,
    harmonic_number,
)
from .chunked import (
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
from .core import (
    BinHistogram,
    PValueBatch,
    RejectionReport,
    SignificanceLevel,
    bh_oracle,
    fast_lsu_binned,
    fast_lsu_iterative,
)
from .errors import ConsistencyError, InvariantError, SourceError, ValidationError

__version__ = "0.1.0"
