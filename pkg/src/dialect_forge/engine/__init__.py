"""Embedded dialect-aware SQL engine: parser, printer and executor."""

from .ast import SqlAst
from .database import FixtureError, InMemoryDb, TableData, load_database, load_database_dir
from .executor import ResultTable, execute, run_sql
from .modes import DialectMode, EngineError, ErrorClass, QueryTimeout, mode_of
from .parser import Violation, check_conformance, parse_sql
from .printer import to_sql

__all__ = [
    "DialectMode", "EngineError", "ErrorClass", "FixtureError", "InMemoryDb", "QueryTimeout",
    "ResultTable", "SqlAst", "TableData", "Violation", "check_conformance", "execute",
    "load_database", "load_database_dir", "mode_of", "parse_sql", "run_sql", "to_sql",
]
