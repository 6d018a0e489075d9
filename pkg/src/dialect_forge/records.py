"""Shared data model and the line-delimited record format used by every stage."""

from __future__ import annotations

import enum
import hashlib
import json
import os
import tempfile
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Iterable, Iterator, Mapping


class FormatError(ValueError):
    """A serialized record is malformed or violates an invariant."""


class Dialect(str, enum.Enum):
    SQLITE = "sqlite"
    POSTGRES = "postgres"
    MYSQL = "mysql"
    ORACLE = "oracle"

    def __str__(self) -> str:
        return self.value

    @property
    def display_name(self) -> str:
        return _DISPLAY[self]


_DISPLAY = {
    Dialect.SQLITE: "SQLite",
    Dialect.POSTGRES: "PostgreSQL",
    Dialect.MYSQL: "MySQL",
    Dialect.ORACLE: "Oracle",
}

_ALIASES = {
    "sqlite": Dialect.SQLITE,
    "postgres": Dialect.POSTGRES,
    "postgresql": Dialect.POSTGRES,
    "mysql": Dialect.MYSQL,
    "oracle": Dialect.ORACLE,
}


def parse_dialect(tag: str | Dialect) -> Dialect:
    """Case-insensitive dialect lookup; "PostgreSQL" is accepted as postgres."""
    if isinstance(tag, Dialect):
        return tag
    key = str(tag).strip().lower()
    if key in _ALIASES:
        return _ALIASES[key]
    valid = ", ".join(d.value for d in Dialect)
    raise ValueError(f"unsupported dialect {tag!r}; expected one of: {valid}")


class QuestionSource(str, enum.Enum):
    SEED = "seed"
    EXISTING = "existing-dataset"
    AUGMENTED = "augmented"


class RecordStatus(str, enum.Enum):
    UNTESTED = "untested"
    VALID = "valid"
    INVALID = "invalid"


class Provenance(str, enum.Enum):
    TRANSLATED = "translated"
    SAMPLED = "sampled"
    AUGMENTED = "augmented"
    MANUAL = "manual"


@dataclass(frozen=True)
class NLQuestion:
    id: str
    text: str
    db_ref: str
    source: QuestionSource = QuestionSource.SEED
    value_grounded: bool = False

    def __post_init__(self) -> None:
        if not self.text.strip():
            raise FormatError(f"question {self.id!r}: text is empty")

    def to_dict(self) -> dict[str, Any]:
        return {
            "db_id": self.db_ref,
            "id": self.id,
            "source": self.source.value,
            "text": self.text,
            "value_grounded": self.value_grounded,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> NLQuestion:
        for name in ("id", "text", "db_id"):
            if name not in d:
                raise FormatError(f"missing field {name}")
        try:
            source = QuestionSource(d.get("source", "seed"))
        except ValueError:
            raise FormatError(f"invalid field source: {d.get('source')!r}") from None
        return cls(
            id=str(d["id"]),
            text=str(d["text"]),
            db_ref=str(d["db_id"]),
            source=source,
            value_grounded=bool(d.get("value_grounded", False)),
        )


@dataclass(frozen=True)
class SchemaInfo:
    """Table names with their (column, declared type) lists, in declaration order."""

    tables: tuple[tuple[str, tuple[tuple[str, str], ...]], ...]

    def __post_init__(self) -> None:
        seen = set()
        for name, cols in self.tables:
            if name in seen:
                raise ValueError(f"duplicate table {name!r} in schema")
            seen.add(name)
            col_names = [c for c, _ in cols]
            if len(set(col_names)) != len(col_names):
                raise ValueError(f"duplicate column in table {name!r}")

    def describe(self) -> str:
        """One line per table: ``name: col1, col2, ...``."""
        return "\n".join(f"{name}: {', '.join(c for c, _ in cols)}" for name, cols in self.tables)


def _require(d: Mapping[str, Any], name: str) -> Any:
    if name not in d:
        raise FormatError(f"missing field {name}")
    return d[name]


def _enum_field(enum_cls, d: Mapping[str, Any], name: str):
    raw = _require(d, name)
    try:
        return enum_cls(raw)
    except ValueError:
        raise FormatError(f"invalid field {name}: {raw!r}") from None


@dataclass(frozen=True)
class DatasetRecord:
    id: str
    question_id: str
    db_id: str
    dialect: Dialect
    sql: str
    round: int = 0
    status: RecordStatus = RecordStatus.UNTESTED
    provenance: Provenance = Provenance.MANUAL

    def __post_init__(self) -> None:
        if not isinstance(self.round, int) or isinstance(self.round, bool) or self.round < 0:
            raise FormatError(f"record {self.id!r}: round must be an integer >= 0, got {self.round!r}")
        if not self.id:
            raise FormatError("record id must be non-empty")

    def to_dict(self) -> dict[str, Any]:
        return {
            "db_id": self.db_id,
            "dialect": self.dialect.value,
            "id": self.id,
            "provenance": self.provenance.value,
            "question_id": self.question_id,
            "round": self.round,
            "sql": self.sql,
            "status": self.status.value,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> DatasetRecord:
        dialect_raw = _require(d, "dialect")
        try:
            dialect = parse_dialect(dialect_raw)
        except ValueError:
            raise FormatError(f"invalid field dialect: {dialect_raw!r}") from None
        round_ = _require(d, "round")
        if not isinstance(round_, int) or isinstance(round_, bool):
            raise FormatError(f"invalid field round: {round_!r}")
        sql = _require(d, "sql")
        if not isinstance(sql, str):
            raise FormatError("invalid field sql: expected a string")
        return cls(
            id=str(_require(d, "id")),
            question_id=str(_require(d, "question_id")),
            db_id=str(_require(d, "db_id")),
            dialect=dialect,
            sql=sql,
            round=round_,
            status=_enum_field(RecordStatus, d, "status"),
            provenance=_enum_field(Provenance, d, "provenance"),
        )


@dataclass(frozen=True)
class PreferenceRecord:
    id: str
    question_id: str
    db_id: str
    dialect: Dialect
    chosen: str
    rejected: str
    chosen_status: RecordStatus = RecordStatus.VALID
    rejected_status: RecordStatus = RecordStatus.INVALID
    rejected_error_class: str = "runtime"

    def __post_init__(self) -> None:
        if self.chosen == self.rejected:
            raise FormatError(f"preference {self.id!r}: chosen and rejected are identical")
        if self.chosen_status is not RecordStatus.VALID:
            raise FormatError(f"preference {self.id!r}: chosen side must be valid (reward 1)")
        if self.rejected_status is not RecordStatus.INVALID:
            raise FormatError(f"preference {self.id!r}: rejected side must be invalid (reward 0)")

    def to_dict(self) -> dict[str, Any]:
        return {
            "chosen": self.chosen,
            "chosen_status": self.chosen_status.value,
            "db_id": self.db_id,
            "dialect": self.dialect.value,
            "id": self.id,
            "question_id": self.question_id,
            "rejected": self.rejected,
            "rejected_error_class": self.rejected_error_class,
            "rejected_status": self.rejected_status.value,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> PreferenceRecord:
        return cls(
            id=str(_require(d, "id")),
            question_id=str(_require(d, "question_id")),
            db_id=str(_require(d, "db_id")),
            dialect=parse_dialect(_require(d, "dialect")),
            chosen=str(_require(d, "chosen")),
            rejected=str(_require(d, "rejected")),
            chosen_status=_enum_field(RecordStatus, d, "chosen_status"),
            rejected_status=_enum_field(RecordStatus, d, "rejected_status"),
            rejected_error_class=str(_require(d, "rejected_error_class")),
        )


def dumps_line(obj: Mapping[str, Any]) -> str:
    """Canonical single-line JSON: sorted keys, ASCII-escaped, compact."""
    return json.dumps(obj, sort_keys=True, ensure_ascii=True, separators=(",", ":"))


def _loads_object(line: str) -> dict[str, Any]:
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as exc:
        raise FormatError(f"not a JSON object: {exc.msg} at column {exc.colno}") from None
    if not isinstance(obj, dict):
        raise FormatError("not a JSON object")
    return obj


def parse_record(line: str) -> DatasetRecord:
    return DatasetRecord.from_dict(_loads_object(line))


def serialize_record(r: DatasetRecord) -> str:
    return dumps_line(r.to_dict())


def parse_preference(line: str) -> PreferenceRecord:
    return PreferenceRecord.from_dict(_loads_object(line))


def serialize_preference(p: PreferenceRecord) -> str:
    return dumps_line(p.to_dict())


def iter_lines(path: str | os.PathLike) -> Iterator[tuple[int, str]]:
    """Yield (1-based line number, stripped line) for non-blank lines."""
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if line:
                yield lineno, line


def read_jsonl(path: str | os.PathLike) -> list[dict[str, Any]]:
    out = []
    for lineno, line in iter_lines(path):
        try:
            out.append(_loads_object(line))
        except FormatError as exc:
            raise FormatError(f"{path}:{lineno}: {exc}") from None
    return out


def read_records(path: str | os.PathLike) -> list[DatasetRecord]:
    records = []
    seen: set[str] = set()
    for lineno, line in iter_lines(path):
        try:
            rec = parse_record(line)
        except FormatError as exc:
            raise FormatError(f"{path}:{lineno}: {exc}") from None
        if rec.id in seen:
            raise FormatError(f"{path}:{lineno}: duplicate record id {rec.id!r}")
        seen.add(rec.id)
        records.append(rec)
    return records


def read_questions(path: str | os.PathLike) -> list[NLQuestion]:
    out = []
    seen: set[str] = set()
    for lineno, line in iter_lines(path):
        try:
            q = NLQuestion.from_dict(_loads_object(line))
        except FormatError as exc:
            raise FormatError(f"{path}:{lineno}: {exc}") from None
        if q.id in seen:
            raise FormatError(f"{path}:{lineno}: duplicate question id {q.id!r}")
        seen.add(q.id)
        out.append(q)
    return out


def write_jsonl(path: str | os.PathLike, objs: Iterable[Mapping[str, Any]]) -> int:
    """Write objects atomically, one canonical line each. Returns the line count."""
    lines = [dumps_line(o) for o in objs]
    atomic_write_text(path, "".join(line + "\n" for line in lines))
    return len(lines)


def write_records(path: str | os.PathLike, records: Iterable[DatasetRecord | PreferenceRecord]) -> int:
    records = list(records)
    ids = [r.id for r in records]
    if len(set(ids)) != len(ids):
        dup = next(i for i in ids if ids.count(i) > 1)
        raise FormatError(f"duplicate record id {dup!r} in output {path}")
    return write_jsonl(path, (r.to_dict() for r in records))


def atomic_write_text(path: str | os.PathLike, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# -- run manifest -----------------------------------------------------------

STAGES = ("translate", "sample", "build-prefs", "evaluate", "report")


def config_digest(config: Mapping[str, Any]) -> str:
    canonical = json.dumps(config, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def _now() -> str:
    return datetime.now(timezone.utc).replace(microsecond=0).isoformat()


@dataclass
class StageState:
    status: str = "pending"  # pending | running | done | failed
    digest: str = ""
    counters: dict[str, int] = field(default_factory=dict)
    updated: str = ""


@dataclass
class RunManifest:
    """Persisted, resumable description of a pipeline run.

    Counters only ever grow within a run; ``bump`` enforces that.
    """

    run_id: str
    config_digest: str
    stage: str = "translate"
    stages: dict[str, StageState] = field(default_factory=dict)
    created: str = field(default_factory=_now)
    updated: str = field(default_factory=_now)

    def state(self, stage: str) -> StageState:
        if stage not in STAGES:
            raise ValueError(f"unknown stage {stage!r}")
        return self.stages.setdefault(stage, StageState())

    def set_counter(self, stage: str, name: str, value: int) -> None:
        counters = self.state(stage).counters
        if value < counters.get(name, 0):
            raise ValueError(f"counter {stage}.{name} would decrease ({counters[name]} -> {value})")
        counters[name] = value

    def bump(self, stage: str, name: str, by: int = 1) -> None:
        if by < 0:
            raise ValueError("counters are non-decreasing")
        counters = self.state(stage).counters
        counters[name] = counters.get(name, 0) + by

    def mark(self, stage: str, status: str, digest: str) -> None:
        st = self.state(stage)
        st.status = status
        st.digest = digest
        st.updated = _now()
        self.stage = stage
        self.updated = st.updated

    def to_dict(self) -> dict[str, Any]:
        return {
            "config_digest": self.config_digest,
            "created": self.created,
            "run_id": self.run_id,
            "stage": self.stage,
            "stages": {
                name: {"counters": dict(sorted(s.counters.items())), "digest": s.digest,
                       "status": s.status, "updated": s.updated}
                for name, s in self.stages.items()
            },
            "updated": self.updated,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> RunManifest:
        m = cls(run_id=d["run_id"], config_digest=d["config_digest"], stage=d.get("stage", "translate"),
                created=d.get("created", ""), updated=d.get("updated", ""))
        for name, s in d.get("stages", {}).items():
            m.stages[name] = StageState(status=s.get("status", "pending"), digest=s.get("digest", ""),
                                        counters=dict(s.get("counters", {})), updated=s.get("updated", ""))
        return m

    def save(self, path: str | os.PathLike) -> None:
        atomic_write_text(path, json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path: str | os.PathLike) -> RunManifest:
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))
