"""Golden conformance corpus: (sql, dialect, expected) triples checked against the engine.

``expected`` is ``accept`` (the query parses and executes) or the engine
error class the query must fail with.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

from ..records import Dialect, parse_dialect
from .database import InMemoryDb
from .executor import run_sql
from .modes import EngineError, ErrorClass

ACCEPT = "accept"


@dataclass(frozen=True)
class CorpusCase:
    sql: str
    dialect: Dialect
    db_id: str
    expected: str
    note: str = ""
    source: str = ""

    def __post_init__(self):
        if self.expected != ACCEPT and self.expected not in {c.value for c in ErrorClass}:
            raise ValueError(f"{self.source}: unknown expectation {self.expected!r}")


def load_corpus(path: str | os.PathLike) -> list[CorpusCase]:
    """Every ``*.jsonl`` file below ``path`` (or the single file), one triple per line."""
    p = Path(path)
    files = sorted(p.glob("*.jsonl")) if p.is_dir() else [p]
    out = []
    for f in files:
        with open(f, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                if not line.strip():
                    continue
                d = json.loads(line)
                out.append(CorpusCase(d["sql"], parse_dialect(d["dialect"]), d["db_id"], d["expected"],
                                      d.get("note", ""), f"{f.name}:{lineno}"))
    return out


def outcome(case: CorpusCase, dbs: Mapping[str, InMemoryDb]) -> str:
    """``accept`` or the engine error class the case produces."""
    try:
        run_sql(case.sql, dbs[case.db_id], case.dialect)
    except EngineError as exc:
        return exc.cls.value
    return ACCEPT


def check_corpus(cases: Sequence[CorpusCase], dbs: Mapping[str, InMemoryDb]) -> list[tuple[CorpusCase, str]]:
    """The cases whose outcome differs from their expectation, with the actual outcome."""
    return [(c, got) for c in cases if (got := outcome(c, dbs)) != c.expected]
