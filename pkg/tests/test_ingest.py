import json

import numpy as np
import pytest

from fastlsu.adjust import compute_qvalues
from fastlsu.chunked import fast_lsu_chunked_parallel, fast_lsu_chunked_sequential
from fastlsu.core import PValueBatch, bh_oracle, fast_lsu_binned, fast_lsu_iterative
from fastlsu.errors import ConsistencyError, SourceError, ValidationError
from fastlsu.ingest import (
    Manifest,
    ManifestChunk,
    PValueSource,
    lookup_ids,
    open_source,
    read_manifest,
    read_report,
    spill_to_temp,
    split_fixed,
    summary_path,
    write_report,
)

from conftest import BH15, BH15_REJECTED


def write_plain(path, values):
    path.write_text("".join(f"{v}\n" for v in values), encoding="utf-8")
    return path


def write_tsv(path, values, prefix="t"):
    path.write_text("id\tp\n" + "".join(f"{prefix}{i}\t{v}\n" for i, v in enumerate(values)), encoding="utf-8")
    return path


def test_plain_and_tsv_parse(tmp_path):
    plain = open_source(write_plain(tmp_path / "a.txt", BH15))
    tsv = open_source(write_tsv(tmp_path / "a.tsv", BH15))
    assert tsv.format == "tsv" and plain.format == "plain"
    assert list(plain) == list(tsv) == BH15
    ids, vals = tsv.read_all()
    assert ids[0] == "t0" and vals.tolist() == BH15
    assert plain.count() == 15


def test_scientific_notation_and_whitespace(tmp_path):
    src = open_source(write_plain(tmp_path / "s.txt", ["1e-300", " 0.5 ", "0", "1"]))
    assert list(src) == [1e-300, 0.5, 0.0, 1.0]


@pytest.mark.parametrize("bad", ["1.5", "-0.1", "nan", "inf", "abc", ""])
def test_bad_value_reports_line(tmp_path, bad):
    path = tmp_path / "bad.txt"
    path.write_text(f"0.1\n0.2\n{bad}\n", encoding="utf-8")
    with pytest.raises(ValidationError) as exc:
        list(open_source(path))
    assert exc.value.line == 3


def test_tsv_header_and_row_errors(tmp_path):
    path = tmp_path / "h.tsv"
    path.write_text("name\tp\na\t0.1\n", encoding="utf-8")
    with pytest.raises(ValidationError):
        list(open_source(path))
    path.write_text("id\tp\na\t0.1\nb0.2\n", encoding="utf-8")
    with pytest.raises(ValidationError) as exc:
        list(open_source(path))
    assert exc.value.line == 3


def test_missing_file(tmp_path):
    with pytest.raises(SourceError):
        open_source(tmp_path / "nope.txt")


def test_declared_count_mismatch(tmp_path):
    src = PValueSource(write_plain(tmp_path / "a.txt", [0.1, 0.2]), "plain", 3)
    with pytest.raises(ConsistencyError):
        list(src)


def test_algorithms_run_on_file_sources(tmp_path):
    rng = np.random.default_rng(5)
    values = rng.random(100_000) ** 4
    src = open_source(write_plain(tmp_path / "big.txt", [repr(float(v)) for v in values]))
    ref = fast_lsu_iterative(PValueBatch.of(values), 0.1).rejected_indices
    np.testing.assert_array_equal(fast_lsu_binned(src, values.size, 0.1).rejected_indices, ref)


def test_spill_to_temp_roundtrip(tmp_path):
    src = spill_to_temp(iter(BH15), directory=tmp_path)
    assert list(src) == BH15
    assert src.declared_count == 15


def test_split_8_7(tmp_path):
    src = open_source(write_plain(tmp_path / "ex.txt", BH15))
    manifest = split_fixed(src, 8, tmp_path / "out")
    assert [c.m_c for c in manifest.chunks] == [8, 7]
    assert [c.path for c in manifest.chunks] == ["chunk_0001.txt", "chunk_0002.txt"]
    loaded = read_manifest(tmp_path / "out" / "manifest.json")
    assert loaded == manifest
    chunks = loaded.to_chunks()
    for fn in (fast_lsu_chunked_sequential, fast_lsu_chunked_parallel):
        rep = fn(chunks, loaded.m_global, 0.05)
        assert set(rep.rejected_values.tolist()) == BH15_REJECTED


@pytest.mark.parametrize("fmt", ["plain", "tsv"])
def test_split_roundtrip_is_byte_identical(tmp_path, fmt):
    rng = np.random.default_rng(11)
    texts = [repr(float(v)) for v in rng.random(100_000)]
    if fmt == "plain":
        path = write_plain(tmp_path / "in.txt", texts)
    else:
        path = write_tsv(tmp_path / "in.tsv", texts)
    original = path.read_bytes()
    manifest = split_fixed(open_source(path), 1000, tmp_path / "out")
    assert len(manifest.chunks) == 100
    pieces = []
    for i, c in enumerate(manifest.chunks):
        data = manifest.resolve(c).read_bytes()
        if fmt == "tsv" and i > 0:
            data = data.split(b"\n", 1)[1]
        pieces.append(data)
    assert b"".join(pieces) == original


def test_split_rejects_bad_input(tmp_path):
    path = tmp_path / "bad.txt"
    path.write_text("0.1\n1.5\n", encoding="utf-8")
    with pytest.raises(ValidationError):
        split_fixed(open_source(path), 1, tmp_path / "out")
    assert not (tmp_path / "out" / "chunk_0001.txt").exists()
    with pytest.raises(ValidationError):
        split_fixed(open_source(write_plain(tmp_path / "ok.txt", [0.1])), 0, tmp_path / "o2")


def test_manifest_validation(tmp_path):
    with pytest.raises(ConsistencyError):
        Manifest(10, [ManifestChunk("a", "a.txt", 4), ManifestChunk("b", "b.txt", 5)])
    with pytest.raises(ValidationError):
        Manifest(8, [ManifestChunk("a", "a.txt", 4), ManifestChunk("b", "a.txt", 4)])
    with pytest.raises(ValidationError):
        Manifest(8, [ManifestChunk("a", "a.txt", 4), ManifestChunk("a", "b.txt", 4)])
    bad = tmp_path / "m.json"
    bad.write_text("{not json", encoding="utf-8")
    with pytest.raises(ValidationError):
        read_manifest(bad)
    bad.write_text(json.dumps({"chunks": []}), encoding="utf-8")
    with pytest.raises(ValidationError):
        read_manifest(bad)
    with pytest.raises(SourceError):
        read_manifest(tmp_path / "absent.json")


def test_manifest_chunk_count_mismatch_detected(tmp_path):
    write_plain(tmp_path / "a.txt", BH15[:8])
    write_plain(tmp_path / "b.txt", BH15[8:])
    doc = {"m_global": 16, "chunks": [
        {"chunk_id": "a", "path": "a.txt", "m_c": 8},
        {"chunk_id": "b", "path": "b.txt", "m_c": 8},
    ]}
    (tmp_path / "m.json").write_text(json.dumps(doc), encoding="utf-8")
    manifest = read_manifest(tmp_path / "m.json")
    with pytest.raises(ConsistencyError):
        fast_lsu_chunked_sequential(manifest.to_chunks(), 16, 0.05)


def test_lookup_ids_across_sources(tmp_path):
    a = open_source(write_tsv(tmp_path / "a.tsv", [0.1, 0.2, 0.3], prefix="a"))
    b = open_source(write_plain(tmp_path / "b.txt", [0.4, 0.5]))
    c = open_source(write_tsv(tmp_path / "c.tsv", [0.6], prefix="c"))
    assert lookup_ids([a, b, c], [5, 0, 3, 2]) == ["c0", "a0", "4", "a2"]
    with pytest.raises(ValidationError):
        lookup_ids([a], [3])


def report_and_q(values, alpha=0.05):
    rep = bh_oracle(PValueBatch.of(values), alpha)
    return rep, compute_qvalues(rep)


def test_report_bh15(tmp_path):
    rep, q = report_and_q(BH15)
    out = write_report(rep, q, tmp_path / "r.tsv")
    lines = out.read_text(encoding="utf-8").splitlines()
    assert lines == [
        "id\tp\tq",
        "7\t0.0001\t0.0015",
        "9\t0.0004\t0.003",
        "8\t0.0019\t0.0095",
        "14\t0.0095\t0.035625",
    ]
    summary = json.loads(summary_path(out).read_text(encoding="utf-8"))
    assert summary["r"] == 4 and summary["m"] == 15
    assert summary["dependence"] == "prds"


def test_report_is_deterministic_and_lossless(tmp_path):
    rng = np.random.default_rng(2)
    values = rng.random(5000) ** 6
    rep, q = report_and_q(values, 0.1)
    a = write_report(rep, q, tmp_path / "a.tsv").read_bytes()
    b = write_report(rep, q, tmp_path / "b.tsv").read_bytes()
    assert a == b
    assert summary_path(tmp_path / "a.tsv").read_bytes() == summary_path(tmp_path / "b.tsv").read_bytes()
    rows = read_report(tmp_path / "a.tsv")
    assert sorted(p for _, p, _ in rows) == sorted(rep.rejected_values.tolist())
    qs = [qq for _, _, qq in rows]
    assert qs == sorted(qs)
    assert set(qs) <= set(q.q.tolist())


def test_report_ties_sorted_by_id(tmp_path):
    rep, q = report_and_q([0.001, 0.5, 0.001, 0.001])
    write_report(rep, q, tmp_path / "r.tsv", ids=lambda i: "zyxb"[i])
    ids = [row[0] for row in read_report(tmp_path / "r.tsv")]
    assert ids == ["b", "x", "z"]


def test_empty_report_is_header_only(tmp_path):
    rep, q = report_and_q([0.9, 0.8, 1.0])
    out = write_report(rep, q, tmp_path / "r.tsv")
    assert out.read_text(encoding="utf-8") == "id\tp\tq\n"
    assert json.loads(summary_path(out).read_text(encoding="utf-8"))["r"] == 0


def test_report_without_q(tmp_path):
    rep, _ = report_and_q(BH15)
    write_report(rep, None, tmp_path / "r.tsv")
    assert all(q is None for _, _, q in read_report(tmp_path / "r.tsv"))
