"""File formats: p-value sources, chunk manifests and rejection reports.

PLAIN files hold one decimal p-value per line. TSV files start with the
header ``id<TAB>p`` followed by one ``id<TAB>p`` row per test. PLAIN rows get
synthetic ids, their 1-based line numbers. All text is UTF-8 with LF line
endings.
"""

from __future__ import annotations

import json
import math
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConsistencyError, SourceError, ValidationError

PLAIN = "plain"
TSV = "tsv"
TSV_HEADER = "id\tp"
REPORT_HEADER = "id\tp\tq"
FORMATS = (PLAIN, TSV)


def infer_format(path) -> str:
    return TSV if str(path).lower().endswith((".tsv", ".tab")) else PLAIN


def _parse_p(text: str, lineno: int) -> float:
    try:
        p = float(text)
    except ValueError:
        raise ValidationError(f"cannot parse p-value {text!r}", line=lineno) from None
    if not (math.isfinite(p) and 0.0 <= p <= 1.0):
        raise ValidationError(f"p-value {text!r} is not a finite number in [0, 1]", line=lineno)
    return p


@dataclass
class PValueSource:
    """Re-openable reader over a PLAIN or TSV p-value file.

    Every iteration opens the file afresh, so multi-pass algorithms can scan
    it as often as they like while holding one block at a time.
    """

    path: Path
    format: str = PLAIN
    declared_count: int | None = None

    def __post_init__(self):
        self.path = Path(self.path)
        if self.format not in FORMATS:
            raise ValidationError(f"unknown format {self.format!r}")
        if self.declared_count is not None and self.declared_count < 0:
            raise ValidationError("declared_count must be nonnegative")

    def records(self):
        """Yield ``(id, p)`` in file order."""
        try:
            fh = open(self.path, "r", encoding="utf-8", newline="\n")
        except OSError as exc:
            raise SourceError(f"cannot open {self.path}: {exc.strerror}") from None
        count = 0
        with fh:
            first = 1
            if self.format == TSV:
                header = fh.readline().rstrip("\n")
                if header != TSV_HEADER:
                    raise ValidationError(
                        f"{self.path}: expected header 'id\\tp', got {header!r}", line=1
                    )
                first = 2
            for lineno, line in enumerate(fh, start=first):
                line = line.rstrip("\n")
                if self.format == TSV:
                    parts = line.split("\t")
                    if len(parts) != 2 or not parts[0]:
                        raise ValidationError(f"{self.path}: expected 'id<TAB>p'", line=lineno)
                    ident, text = parts
                else:
                    ident, text = str(lineno), line
                count += 1
                yield ident, _parse_p(text.strip(), lineno)
        if self.declared_count is not None and count != self.declared_count:
            raise ConsistencyError(
                f"{self.path}: {count} p-values, declared {self.declared_count}"
            )

    def __iter__(self):
        for _, p in self.records():
            yield p

    def blocks(self, block_size=1 << 15):
        buf = []
        for p in self:
            buf.append(p)
            if len(buf) == block_size:
                yield np.array(buf, dtype=np.float64)
                buf = []
        if buf:
            yield np.array(buf, dtype=np.float64)

    def read_all(self) -> tuple[list, np.ndarray]:
        ids, vals = [], []
        for ident, p in self.records():
            ids.append(ident)
            vals.append(p)
        return ids, np.array(vals, dtype=np.float64)

    def count(self) -> int:
        return sum(1 for _ in self.records())


def open_source(path, format: str | None = None, declared_count: int | None = None) -> PValueSource:
    path = Path(path)
    if not path.is_file():
        raise SourceError(f"no such file: {path}")
    if not os.access(path, os.R_OK):
        raise SourceError(f"file is not readable: {path}")
    return PValueSource(path, format or infer_format(path), declared_count)


def spill_to_temp(values, directory=None) -> PValueSource:
    """Buffer a one-shot iterable of p-values into a re-readable PLAIN file."""
    fd, name = tempfile.mkstemp(prefix="fastlsu-spill-", suffix=".txt", dir=directory)
    n = 0
    with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
        for v in values:
            fh.write(repr(float(v)) + "\n")
            n += 1
    return PValueSource(Path(name), PLAIN, n)


@dataclass
class ManifestChunk:
    chunk_id: str
    path: str
    m_c: int
    format: str = PLAIN


@dataclass
class Manifest:
    """Ordered list of chunk files covering a problem of size ``m_global``.

    Relative chunk paths resolve against ``base_dir`` (the manifest's own
    directory when loaded from disk).
    """

    m_global: int
    chunks: list
    default_alpha: float | None = None
    base_dir: Path = field(default=Path("."), compare=False)

    def __post_init__(self):
        if sum(c.m_c for c in self.chunks) != self.m_global:
            raise ConsistencyError(
                f"chunk sizes sum to {sum(c.m_c for c in self.chunks)}, "
                f"manifest m_global is {self.m_global}"
            )
        paths = [c.path for c in self.chunks]
        if len(set(paths)) != len(paths):
            raise ValidationError("manifest chunk paths are not distinct")
        ids = [c.chunk_id for c in self.chunks]
        if len(set(ids)) != len(ids):
            raise ValidationError("manifest chunk ids are not unique")
        for c in self.chunks:
            if c.format not in FORMATS:
                raise ValidationError(f"chunk {c.chunk_id!r}: unknown format {c.format!r}")

    def resolve(self, chunk: ManifestChunk) -> Path:
        p = Path(chunk.path)
        return p if p.is_absolute() else Path(self.base_dir) / p

    def sources(self) -> list:
        return [PValueSource(self.resolve(c), c.format, c.m_c) for c in self.chunks]

    def to_chunks(self) -> list:
        from .chunked import ChunkDescriptor

        return [
            ChunkDescriptor(c.chunk_id, c.m_c, src)
            for c, src in zip(self.chunks, self.sources())
        ]

    def to_json(self) -> dict:
        return {
            "m_global": self.m_global,
            "default_alpha": self.default_alpha,
            "chunks": [
                {"chunk_id": c.chunk_id, "path": c.path, "format": c.format, "m_c": c.m_c}
                for c in self.chunks
            ],
        }

    def write(self, path):
        path = Path(path)
        try:
            path.write_text(json.dumps(self.to_json(), indent=2) + "\n", encoding="utf-8")
        except OSError as exc:
            raise SourceError(f"cannot write manifest {path}: {exc.strerror}") from None


def read_manifest(path) -> Manifest:
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise SourceError(f"cannot read manifest {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise ValidationError(f"manifest {path} is not valid JSON: {exc}") from None
    try:
        chunks = [
            ManifestChunk(str(c["chunk_id"]), str(c["path"]), int(c["m_c"]),
                          c.get("format") or infer_format(c["path"]))
            for c in doc["chunks"]
        ]
        return Manifest(int(doc["m_global"]), chunks, doc.get("default_alpha"),
                        base_dir=path.parent)
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, ValidationError):
            raise
        raise ValidationError(f"manifest {path} is malformed: {exc!r}") from None


def split_fixed(source: PValueSource, chunk_size: int, out_dir, prefix: str = "chunk") -> Manifest:
    """Copy ``source`` into files of ``chunk_size`` rows and write ``manifest.json``.

    Row text is copied verbatim, so concatenating the chunk files (dropping
    the repeated TSV header) reproduces the input byte for byte.
    """
    if isinstance(chunk_size, bool) or int(chunk_size) != chunk_size or chunk_size < 1:
        raise ValidationError(f"chunk size must be a positive integer, got {chunk_size!r}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    # validate everything before writing a single chunk
    m = source.count()
    if m == 0:
        raise ValidationError(f"{source.path} holds no p-values")
    n_chunks = -(-m // chunk_size)
    width = max(4, len(str(n_chunks)))
    ext = ".tsv" if source.format == TSV else ".txt"

    chunks = []
    try:
        with open(source.path, "r", encoding="utf-8", newline="\n") as fh:
            header = fh.readline() if source.format == TSV else None
            for i in range(n_chunks):
                name = f"{prefix}_{i + 1:0{width}d}{ext}"
                rows = 0
                with open(out_dir / name, "w", encoding="utf-8", newline="\n") as out:
                    if header is not None:
                        out.write(header)
                    while rows < chunk_size:
                        line = fh.readline()
                        if not line:
                            break
                        out.write(line)
                        rows += 1
                chunks.append(ManifestChunk(f"{prefix}_{i + 1}", name, rows, source.format))
    except OSError as exc:
        raise SourceError(f"splitting {source.path} failed: {exc}") from None
    manifest = Manifest(m, chunks, None, base_dir=out_dir)
    manifest.write(out_dir / "manifest.json")
    return manifest


def lookup_ids(sources, positions) -> list:
    """Ids at the given global positions of the concatenated sources.

    PLAIN rows have no ids of their own; they get ``position + 1``, which is
    the line number when the input is a single file.
    """
    wanted = np.asarray(positions, dtype=np.int64)
    order = np.argsort(wanted, kind="stable")
    out = [None] * wanted.size
    j = 0
    base = 0
    for src in sources:
        if src.format == PLAIN:
            n = src.declared_count if src.declared_count is not None else src.count()
            while j < order.size and wanted[order[j]] < base + n:
                out[order[j]] = str(int(wanted[order[j]]) + 1)
                j += 1
            base += n
            continue
        pos = base
        for ident, _ in src.records():
            while j < order.size and wanted[order[j]] == pos:
                out[order[j]] = ident
                j += 1
            pos += 1
            if j == order.size:
                return out
        base = pos
    if j != order.size:
        raise ValidationError("report positions exceed the input size")
    return out


def write_report(report, qtable=None, out_path=None, ids=None, *, dependence="prds") -> Path:
    """Write ``id<TAB>p<TAB>q`` rows sorted by p then id, plus a JSON summary.

    ``ids`` maps positions to ids (a sequence aligned with
    ``report.rejected_indices`` or a callable); PLAIN-style 1-based line
    numbers are used when omitted. Without a q-value table the q column holds
    ``NA``. The summary goes to ``<out_path>.json``.
    """
    out_path = Path(out_path)
    positions = report.rejected_indices
    if ids is None:
        id_list = [str(int(i) + 1) for i in positions]
    elif callable(ids):
        id_list = [str(ids(int(i))) for i in positions]
    else:
        id_list = [str(x) for x in ids]
    if len(id_list) != positions.size:
        raise ValidationError("ids do not match the rejected positions")
    qmap = qtable.as_dict() if qtable is not None else {}

    rows = sorted(
        zip(report.rejected_values.tolist(), id_list, positions.tolist()),
        key=lambda row: (row[0], row[1]),
    )
    lines = [REPORT_HEADER]
    for p, ident, pos in rows:
        q = qmap.get(pos)
        lines.append(f"{ident}\t{p!r}\t{'NA' if q is None else repr(q)}")
    summary = report.summary()
    summary["dependence"] = str(dependence)
    try:
        out_path.write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")
        summary_path(out_path).write_text(
            json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8", newline="\n"
        )
    except OSError as exc:
        raise SourceError(f"cannot write report {out_path}: {exc.strerror}") from None
    return out_path


def summary_path(out_path) -> Path:
    out_path = Path(out_path)
    return out_path.with_name(out_path.name + ".json")


def read_report(path) -> list:
    """Parse a report back into ``(id, p, q)`` rows; ``q`` is ``None`` for NA."""
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n")
        if header != REPORT_HEADER:
            raise ValidationError(f"{path}: not a report file")
        for line in fh:
            ident, p, q = line.rstrip("\n").split("\t")
            rows.append((ident, float(p), None if q == "NA" else float(q)))
    return rows
