"""In-memory tables and the JSON fixture format they load from."""

from __future__ import annotations

import json
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path
from types import MappingProxyType
from typing import Any, Mapping

from ..records import SchemaInfo

log = logging.getLogger(__name__)

COLUMN_TYPES = ("integer", "float", "text", "date")


class FixtureError(ValueError):
    pass


@dataclass(frozen=True)
class TableData:
    name: str
    columns: tuple[str, ...]
    types: tuple[str, ...]
    rows: tuple[tuple[Any, ...], ...]


@dataclass(frozen=True)
class InMemoryDb:
    db_id: str
    tables: Mapping[str, TableData]
    skipped_rows: int = 0
    _folded: Mapping[str, TableData] = field(default=MappingProxyType({}), repr=False, compare=False)

    @classmethod
    def build(cls, db_id: str, tables: list[TableData], skipped_rows: int = 0) -> InMemoryDb:
        by_name: dict[str, TableData] = {}
        for t in tables:
            if t.name in by_name:
                raise FixtureError(f"{db_id}: duplicate table name {t.name!r}")
            by_name[t.name] = t
        folded = {}
        for t in tables:
            folded.setdefault(t.name.lower(), t)
        return cls(db_id, MappingProxyType(by_name), skipped_rows, MappingProxyType(folded))

    def lookup(self, name: str, case_sensitive: bool) -> TableData | None:
        if case_sensitive:
            return self.tables.get(name)
        return self._folded.get(name.lower())

    def counts(self) -> tuple[int, int, int]:
        """(tables, columns, rows) summed over the database."""
        return (len(self.tables),
                sum(len(t.columns) for t in self.tables.values()),
                sum(len(t.rows) for t in self.tables.values()))

    def schema(self) -> SchemaInfo:
        return SchemaInfo(tuple((t.name, tuple(zip(t.columns, t.types))) for t in self.tables.values()))


def _coerce_cell(value: Any, type_: str) -> tuple[bool, Any]:
    """Return (ok, value). Empty-string numerics are reported as malformed."""
    if value is None:
        return True, None
    if type_ == "integer":
        if isinstance(value, bool):
            return False, value
        if isinstance(value, int):
            return True, value
        if isinstance(value, float) and value.is_integer():
            return True, int(value)
        return False, value
    if type_ == "float":
        if isinstance(value, bool):
            return False, value
        if isinstance(value, (int, float)):
            return True, float(value)
        return False, value
    if isinstance(value, str):
        return True, value
    return False, value


def load_database(spec: Mapping[str, Any] | str | os.PathLike, db_id: str | None = None,
                  *, skip_malformed: bool = True) -> InMemoryDb:
    """Build a database from a fixture mapping or a path to a fixture file.

    Rows whose cells do not match the declared column type (for example an
    empty string in a numeric column) are skipped and counted when
    ``skip_malformed`` is set; otherwise they raise FixtureError. Arity errors
    always raise.
    """
    if not isinstance(spec, Mapping):
        path = Path(spec)
        with open(path, encoding="utf-8") as fh:
            spec = json.load(fh)
        db_id = db_id or spec.get("db_id") or path.stem
    db_id = db_id or spec.get("db_id") or "db"
    tables_spec = spec.get("tables")
    if not isinstance(tables_spec, list):
        raise FixtureError(f"{db_id}: fixture needs a 'tables' list")
    tables = []
    skipped = 0
    for t in tables_spec:
        name = t.get("name")
        if not name:
            raise FixtureError(f"{db_id}: table without a name")
        cols = t.get("columns", [])
        col_names = tuple(c["name"] for c in cols)
        if len({c.lower() for c in col_names}) != len(col_names):
            raise FixtureError(f"{db_id}.{name}: duplicate column name")
        types = []
        for c in cols:
            ty = str(c.get("type", "")).lower()
            if ty not in COLUMN_TYPES:
                raise FixtureError(f"{db_id}.{name}: unknown declared type {c.get('type')!r} for column {c['name']!r}")
            types.append(ty)
        rows = []
        for idx, row in enumerate(t.get("rows", [])):
            if len(row) != len(col_names):
                raise FixtureError(f"{db_id}.{name}: row {idx} has {len(row)} cells, expected {len(col_names)}")
            cells = []
            bad = False
            for value, ty in zip(row, types):
                ok, v = _coerce_cell(value, ty)
                if not ok:
                    bad = True
                    break
                cells.append(v)
            if bad:
                if not skip_malformed:
                    raise FixtureError(f"{db_id}.{name}: row {idx} has a cell that does not match its column type")
                skipped += 1
                continue
            rows.append(tuple(cells))
        tables.append(TableData(name, col_names, tuple(types), tuple(rows)))
    if skipped:
        log.info("skipping %d rows with problematic data in %s", skipped, db_id)
    return InMemoryDb.build(db_id, tables, skipped)


def load_database_dir(path: str | os.PathLike) -> dict[str, InMemoryDb]:
    """Every ``*.json`` fixture in a directory, keyed by db_id."""
    out = {}
    for p in sorted(Path(path).glob("*.json")):
        db = load_database(p)
        out[db.db_id] = db
    return out
