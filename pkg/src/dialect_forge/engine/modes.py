"""Per-dialect grammar switches and the engine's error type."""

from __future__ import annotations

import enum
from dataclasses import dataclass, replace
from typing import Any

from ..records import Dialect, parse_dialect


class ErrorClass(str, enum.Enum):
    PARSE = "parse"
    UNKNOWN_RELATION = "unknown-relation"
    UNKNOWN_COLUMN = "unknown-column"
    TYPE_MISMATCH = "type-mismatch"
    STRICT_GROUP_BY = "strict-group-by"
    DIALECT_VIOLATION = "dialect-violation"
    UNSUPPORTED_FEATURE = "unsupported-feature"
    RUNTIME = "runtime"  # data-dependent failures: division by zero, subquery cardinality


class EngineError(Exception):
    """Raised by the parser and executor.

    ``message`` is styled after the real server's diagnostics for the active
    dialect so it can be fed back to a model verbatim.
    """

    def __init__(self, cls: ErrorClass, message: str, position: int | None = None,
                 construct: str | None = None):
        super().__init__(message)
        self.cls = ErrorClass(cls)
        self.message = message
        self.position = position
        self.construct = construct


class QueryTimeout(Exception):
    """Cooperative deadline expired inside the executor."""


@dataclass(frozen=True)
class DialectMode:
    dialect: Dialect
    strict_group_by: bool
    allow_double_colon_cast: bool
    allow_ilike: bool
    identifier_quote: str  # '`' or '"'
    limit_style: str  # "limit" or "fetch-first"

    @classmethod
    def for_dialect(cls, dialect: Dialect | str, **overrides: Any) -> DialectMode:
        d = parse_dialect(dialect)
        mode = cls(
            dialect=d,
            strict_group_by=d is not Dialect.SQLITE,
            allow_double_colon_cast=d is Dialect.POSTGRES,
            allow_ilike=d is Dialect.POSTGRES,
            identifier_quote="`" if d is Dialect.MYSQL else '"',
            limit_style="fetch-first" if d is Dialect.ORACLE else "limit",
        )
        return replace(mode, **overrides) if overrides else mode

    @property
    def case_sensitive_tables(self) -> bool:
        return self.dialect is Dialect.MYSQL

    @property
    def nulls_first_on_asc(self) -> bool:
        # sqlite/mysql sort NULL lowest; postgres/oracle sort it highest
        return self.dialect in (Dialect.SQLITE, Dialect.MYSQL)

    @property
    def strict_types(self) -> bool:
        return self.dialect is Dialect.POSTGRES


def mode_of(mode: DialectMode | Dialect | str) -> DialectMode:
    if isinstance(mode, DialectMode):
        return mode
    return DialectMode.for_dialect(mode)
