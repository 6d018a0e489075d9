"""Record model: serialization round trips, validation, manifests."""

from __future__ import annotations

import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dialect_forge.records import (DatasetRecord, Dialect, FormatError, NLQuestion, PreferenceRecord, Provenance,
                                   RecordStatus, RunManifest, SchemaInfo, atomic_write_text, parse_dialect,
                                   parse_preference, parse_record, read_records, serialize_preference,
                                   serialize_record, write_records)

texts = st.text(min_size=1, max_size=40)

records = st.builds(
    DatasetRecord,
    id=texts,
    question_id=texts,
    db_id=texts,
    dialect=st.sampled_from(list(Dialect)),
    sql=st.text(max_size=200),
    round=st.integers(min_value=0, max_value=10_000),
    status=st.sampled_from(list(RecordStatus)),
    provenance=st.sampled_from(list(Provenance)),
)


@st.composite
def preferences(draw):
    chosen = draw(st.text(max_size=120))
    rejected = draw(st.text(max_size=120).filter(lambda s: s != chosen))
    return PreferenceRecord(draw(texts), draw(texts), draw(texts), draw(st.sampled_from(list(Dialect))),
                            chosen, rejected, rejected_error_class=draw(st.sampled_from(["syntax", "type"])))


@settings(max_examples=1000, deadline=None)
@given(records)
def test_record_round_trip(rec):
    line = serialize_record(rec)
    assert "\n" not in line
    assert parse_record(line) == rec
    assert serialize_record(parse_record(line)) == line


@settings(max_examples=1000, deadline=None)
@given(preferences())
def test_preference_round_trip(p):
    assert parse_preference(serialize_preference(p)) == p


def test_serialization_is_canonical():
    rec = DatasetRecord("r1", "q1", "db", Dialect.MYSQL, "SELECT 1", 2, RecordStatus.VALID, Provenance.TRANSLATED)
    line = serialize_record(rec)
    keys = list(json.loads(line))
    assert keys == sorted(keys)
    assert " " not in line.replace("SELECT 1", "")


@pytest.mark.parametrize("patch, message", [
    ({"round": -1}, "round"),
    ({"round": 1.5}, "round"),
    ({"round": True}, "round"),
    ({"dialect": "mssql"}, "dialect"),
    ({"status": "maybe"}, "status"),
    ({"provenance": "stolen"}, "provenance"),
])
def test_invalid_records_are_rejected(patch, message):
    d = DatasetRecord("r", "q", "db", Dialect.SQLITE, "SELECT 1").to_dict()
    d.update(patch)
    with pytest.raises(FormatError, match=message):
        parse_record(json.dumps(d))


def test_missing_field_and_non_object():
    d = DatasetRecord("r", "q", "db", Dialect.SQLITE, "SELECT 1").to_dict()
    del d["sql"]
    with pytest.raises(FormatError, match="missing field sql"):
        parse_record(json.dumps(d))
    with pytest.raises(FormatError):
        parse_record("[1, 2]")
    with pytest.raises(FormatError):
        parse_record("{not json")


def test_preference_invariants():
    with pytest.raises(FormatError, match="identical"):
        PreferenceRecord("p", "q", "db", Dialect.POSTGRES, "SELECT 1", "SELECT 1")
    with pytest.raises(FormatError, match="chosen side"):
        PreferenceRecord("p", "q", "db", Dialect.POSTGRES, "a", "b", chosen_status=RecordStatus.INVALID)


def test_dialect_tags():
    assert parse_dialect("PostgreSQL") is Dialect.POSTGRES
    assert parse_dialect(" MySQL ") is Dialect.MYSQL
    with pytest.raises(ValueError, match="expected one of"):
        parse_dialect("tsql")


def test_question_and_schema_validation():
    with pytest.raises(FormatError):
        NLQuestion("q", "   ", "db")
    with pytest.raises(ValueError, match="duplicate table"):
        SchemaInfo((("t", (("a", "integer"),)), ("t", ())))
    with pytest.raises(ValueError, match="duplicate column"):
        SchemaInfo((("t", (("a", "integer"), ("a", "text"))),))
    s = SchemaInfo((("t", (("a", "integer"), ("b", "text"))),))
    assert s.describe() == "t: a, b"


def test_write_rejects_duplicate_ids(tmp_path):
    r = DatasetRecord("same", "q", "db", Dialect.SQLITE, "SELECT 1")
    with pytest.raises(FormatError, match="duplicate record id"):
        write_records(tmp_path / "x.jsonl", [r, r])
    assert not (tmp_path / "x.jsonl").exists()


def test_read_reports_line_numbers(tmp_path):
    good = serialize_record(DatasetRecord("a", "q", "db", Dialect.SQLITE, "SELECT 1"))
    p = tmp_path / "d.jsonl"
    p.write_text(good + "\n\n" + good.replace('"round":0', '"round":-3') + "\n")
    with pytest.raises(FormatError, match=r"d\.jsonl:3"):
        read_records(p)


def test_atomic_write_leaves_no_temp_files(tmp_path):
    atomic_write_text(tmp_path / "out" / "f.txt", "hello\n")
    assert (tmp_path / "out" / "f.txt").read_text() == "hello\n"
    assert [p.name for p in (tmp_path / "out").iterdir()] == ["f.txt"]


def test_manifest_counters_only_grow(tmp_path):
    m = RunManifest("run", "digest")
    m.set_counter("translate", "items", 5)
    m.bump("translate", "items", 2)
    assert m.state("translate").counters["items"] == 7
    with pytest.raises(ValueError):
        m.set_counter("translate", "items", 3)
    with pytest.raises(ValueError):
        m.bump("translate", "items", -1)
    with pytest.raises(ValueError, match="unknown stage"):
        m.state("deploy")
    m.mark("translate", "done", "abc")
    m.save(tmp_path / "manifest.json")
    again = RunManifest.load(tmp_path / "manifest.json")
    assert again.to_dict() == m.to_dict()
