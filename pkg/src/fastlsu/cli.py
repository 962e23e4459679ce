"""``fastlsu`` command line.

Exit codes: 0 success, 2 validation error, 3 I/O error, 4 internal invariant
failure.
"""

from __future__ import annotations

import argparse
import csv
import os
import secrets
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .adjust import by_corrected_level, compute_qvalues
from .chunked import (
    ChunkDescriptor,
    MemoryBudget,
    fast_lsu_chunked_binned,
    fast_lsu_chunked_parallel,
    fast_lsu_chunked_sequential,
)
from .core import PValueBatch, SignificanceLevel, bh_oracle, fast_lsu_binned, fast_lsu_iterative
from .errors import InvariantError, SourceError, ValidationError
from .ingest import FORMATS, lookup_ids, open_source, read_manifest, split_fixed, write_report
from .sim import DEMO_HEADER, REPLACE, SCALE, SimParams, run_inflation_experiment, run_replicate
from .sim import TruthLabels, bench_scaling, simulate, summarize

EXIT_OK, EXIT_VALIDATION, EXIT_IO, EXIT_INVARIANT = 0, 2, 3, 4
DEFAULT_ALPHA = 0.05
VARIANTS = ("iterative", "binned", "chunked-seq", "chunked-par", "oracle")


class _Input:
    def __init__(self, chunks, sources, default_alpha=None):
        self.chunks = chunks
        self.sources = sources
        self.default_alpha = default_alpha

    @property
    def n(self) -> int:
        return sum(c.m_c for c in self.chunks)

    def values(self) -> np.ndarray:
        return np.concatenate([b for c in self.chunks for b in c.read()] or [np.empty(0)])


def _load_input(args) -> _Input:
    files = getattr(args, "files", None) or []
    if bool(args.manifest) == bool(files):
        raise ValidationError("give either input files or --manifest, not both or neither")
    if args.manifest:
        manifest = read_manifest(args.manifest)
        return _Input(manifest.to_chunks(), manifest.sources(), manifest.default_alpha)
    sources = [open_source(f, args.format) for f in files]
    chunks = []
    for f, src in zip(files, sources):
        src.declared_count = src.count()
        chunks.append(ChunkDescriptor(str(f), src.declared_count, src))
    return _Input(chunks, sources)


def _run(args, inp: _Input):
    alpha = args.alpha if args.alpha is not None else (inp.default_alpha or DEFAULT_ALPHA)
    nominal = SignificanceLevel(alpha)
    n = inp.n
    m = args.m_override if args.m_override is not None else n
    if m < n:
        raise ValidationError(f"--m-override {m} is smaller than the input size {n}")
    level = nominal
    if args.dependence == "general":
        level = by_corrected_level(m, nominal)
    variant = args.variant or ("chunked-par" if len(inp.chunks) > 1 else "iterative")
    if variant.startswith("chunked") and m != n:
        raise ValidationError("--m-override is only supported by single-batch variants")

    if variant == "iterative":
        report = fast_lsu_iterative(PValueBatch(inp.values(), m), level)
    elif variant == "oracle":
        report = bh_oracle(PValueBatch(inp.values(), m), level)
    elif variant == "binned":
        report = fast_lsu_binned(inp.values(), m, level)
    elif variant == "chunked-seq":
        report = fast_lsu_chunked_sequential(inp.chunks, m, level)
    elif variant == "chunked-par":
        report = fast_lsu_chunked_parallel(inp.chunks, m, level, _budget(args), args.threads)
    else:
        raise ValidationError(f"unknown variant {variant!r}")
    return report


def _budget(args):
    return MemoryBudget(args.memory_budget) if args.memory_budget is not None else None


def _write(args, inp, report, qtable=None):
    if args.output:
        ids = lookup_ids(inp.sources, report.rejected_indices)
        write_report(report, qtable, args.output, ids, dependence=args.dependence)


def cmd_reject(args) -> int:
    inp = _load_input(args)
    report = _run(args, inp)
    _write(args, inp, report)
    print(report.summary_line())
    return EXIT_OK


def cmd_qvalues(args) -> int:
    inp = _load_input(args)
    report = _run(args, inp)
    qtable = compute_qvalues(report)
    _write(args, inp, report, qtable)
    print(report.summary_line())
    return EXIT_OK


def cmd_validate(args) -> int:
    """Run every variant on one input and check they reject the same positions."""
    inp = _load_input(args)
    alpha = args.alpha if args.alpha is not None else (inp.default_alpha or DEFAULT_ALPHA)
    level = SignificanceLevel(alpha)
    m = inp.n
    values = inp.values()
    batch = PValueBatch(values, m)
    reports = {
        "oracle": bh_oracle(batch, level),
        "iterative": fast_lsu_iterative(batch, level),
        "binned": fast_lsu_binned(batch, m, level),
        "chunked-seq": fast_lsu_chunked_sequential(inp.chunks, m, level),
        "chunked-par": fast_lsu_chunked_parallel(inp.chunks, m, level, _budget(args), args.threads),
        "chunked-binned": fast_lsu_chunked_binned(inp.chunks, m, level, _budget(args)),
    }
    reference = reports["oracle"].rejected_indices
    ok = True
    for name, rep in reports.items():
        same = np.array_equal(rep.rejected_indices, reference)
        ok &= same
        print(f"{name}\tr={rep.r}\tpasses={rep.passes}\t{'agree' if same else 'DISAGREE'}")
    return EXIT_OK if ok else EXIT_INVARIANT


def cmd_split(args) -> int:
    src = open_source(args.file, args.format)
    manifest = split_fixed(src, args.chunk_size, args.out_dir, prefix=args.prefix)
    print(f"wrote {len(manifest.chunks)} chunks, m={manifest.m_global}, "
          f"manifest={Path(args.out_dir) / 'manifest.json'}")
    return EXIT_OK


def cmd_simulate(args) -> int:
    seed = args.seed
    if seed is None:
        seed = secrets.randbits(63)
        print(f"seed={seed}", file=sys.stderr)
    params = SimParams(m=args.m, pi1=args.pi1, signal=args.signal, mode=args.signal_mode)
    values, truth = simulate(params, seed)
    out = Path(args.output)
    try:
        out.write_text("".join(f"{v!r}\n" for v in values.tolist()), encoding="utf-8")
        Path(str(out) + ".truth").write_text(
            "".join("1\n" if s else "0\n" for s in truth.is_signal.tolist()), encoding="utf-8"
        )
    except OSError as exc:
        raise SourceError(f"cannot write {out}: {exc.strerror}") from None
    print(f"m={params.m} signals={truth.m1} seed={seed} output={out}")
    return EXIT_OK


def _read_truth(path, m) -> TruthLabels:
    try:
        lines = Path(path).read_text(encoding="utf-8").split()
    except OSError as exc:
        raise SourceError(f"cannot read truth file {path}: {exc.strerror}") from None
    if any(x not in ("0", "1") for x in lines):
        raise ValidationError(f"truth file {path} must hold 0/1 per line")
    if len(lines) != m:
        raise ValidationError(f"truth file has {len(lines)} labels, input has {m} p-values")
    return TruthLabels(np.array([x == "1" for x in lines]))


def cmd_demo_inflation(args) -> int:
    alpha = SignificanceLevel(args.alpha if args.alpha is not None else DEFAULT_ALPHA)
    print("warning: 'union-unsafe' rows apply BH per chunk and do NOT control the FDR "
          "of the whole problem", file=sys.stderr)
    if args.file:
        if args.truth is None:
            raise ValidationError("--truth is required with an input file")
        _, values = open_source(args.file, args.format).read_all()
        truth = _read_truth(args.truth, values.size)
        sizes = args.sizes or [values.size]
        rows = run_replicate(values, truth, sizes, alpha)
    else:
        seed = args.seed if args.seed is not None else 0
        params = SimParams(m=args.m, pi1=args.pi1, signal=args.signal, mode=args.signal_mode)
        sizes = args.sizes or [params.m]
        rows = run_inflation_experiment(params, sizes, alpha, args.replicates, seed=seed)
    table = summarize(rows)
    fh = open(args.output, "w", newline="") if args.output else sys.stdout
    try:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(DEMO_HEADER)
        for row in table:
            writer.writerow([row["chunk_size"], row["method"], repr(row["rejections"]),
                             repr(row["max_rejected_p"]), repr(row["realized_fdp"])])
    finally:
        if fh is not sys.stdout:
            fh.close()
    return EXIT_OK


def cmd_bench(args) -> int:
    alpha = SignificanceLevel(args.alpha if args.alpha is not None else DEFAULT_ALPHA)
    rows = bench_scaling(args.sizes, alpha, seed=args.seed or 0, repeats=args.repeats)
    writer = csv.writer(sys.stdout, lineterminator="\n")
    writer.writerow(["m", "variant", "seconds", "r", "passes", "error"])
    for row in rows:
        writer.writerow([row["m"], row["variant"], row["seconds"], row["r"], row["passes"],
                         row["error"]])
    return EXIT_OK


def _sizes(text):
    try:
        sizes = [int(float(s)) for s in text.split(",") if s.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated list of sizes: {text!r}")
    if not sizes or min(sizes) < 1:
        raise argparse.ArgumentTypeError("sizes must be positive")
    return sizes


def _positive_int(text):
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}")
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {v}")
    return v


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fastlsu",
        description="Sorting-free Benjamini-Hochberg FDR control for huge, chunked p-value sets.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def input_opts(p, with_variant=True):
        p.add_argument("files", nargs="*", help="p-value files; several files are chunks")
        p.add_argument("--manifest", help="JSON chunk manifest")
        p.add_argument("--format", choices=FORMATS, help="input format (default: by extension)")
        p.add_argument("--alpha", type=float, help=f"FDR level (default {DEFAULT_ALPHA})")
        p.add_argument("--memory-budget", type=_positive_int, dest="memory_budget",
                       help="max resident survivors/bins for chunked variants")
        p.add_argument("--threads", type=_positive_int, default=os.cpu_count() or 1)
        if with_variant:
            p.add_argument("--variant", choices=VARIANTS)
            p.add_argument("--m-override", type=_positive_int, dest="m_override",
                           help="global number of tests if larger than the input")
            p.add_argument("--dependence", choices=("prds", "general"), default="prds")
            p.add_argument("-o", "--output", help="report path (summary goes to <output>.json)")

    p = sub.add_parser("reject", help="select significant tests")
    input_opts(p)
    p.set_defaults(func=cmd_reject)

    p = sub.add_parser("qvalues", help="select and report q-values of the selected tests")
    input_opts(p)
    p.set_defaults(func=cmd_qvalues)

    p = sub.add_parser("validate", help="check all variants against the sorting oracle")
    input_opts(p, with_variant=False)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("split", help="split a p-value file into fixed-size chunks")
    p.add_argument("file")
    p.add_argument("--chunk-size", type=_positive_int, required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--prefix", default="chunk")
    p.add_argument("--format", choices=FORMATS)
    p.set_defaults(func=cmd_split)

    def sim_opts(p):
        p.add_argument("-m", type=_positive_int, default=30000)
        p.add_argument("--pi1", type=float, default=0.02)
        p.add_argument("--signal", type=float, default=1e-4)
        p.add_argument("--signal-mode", choices=(SCALE, REPLACE), default=SCALE)
        p.add_argument("--seed", type=int)

    p = sub.add_parser("simulate", help="write synthetic p-values and a truth sidecar")
    sim_opts(p)
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("demo-inflation",
                       help="compare FastLSU with the unsafe per-chunk union over chunk sizes")
    p.add_argument("file", nargs="?", help="p-value file (synthetic data when omitted)")
    p.add_argument("--truth", help="0/1 truth sidecar for the input file")
    p.add_argument("--format", choices=FORMATS)
    p.add_argument("--sizes", type=_sizes, help="comma-separated chunk sizes")
    p.add_argument("--alpha", type=float)
    p.add_argument("--replicates", type=_positive_int, default=1)
    p.add_argument("-o", "--output", help="CSV path (default stdout)")
    sim_opts(p)
    p.set_defaults(func=cmd_demo_inflation)

    p = sub.add_parser("bench", help="time binned, iterative and sorting selection")
    p.add_argument("--sizes", type=_sizes, default=[10**5, 10**6])
    p.add_argument("--alpha", type=float)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--repeats", type=_positive_int, default=1)
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except InvariantError as exc:
        print(f"fastlsu: internal error: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    except ValidationError as exc:
        print(f"fastlsu: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (SourceError, OSError) as exc:
        print(f"fastlsu: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
