"""Uniform execution over dialect backends, error classification, reward and
result comparison.

Three backend kinds share one interface: the embedded engine (fixture files),
a DB-API driver speaking the server's wire protocol, and a command-line
client invoked as a subprocess. All of them produce an ExecReport whose
error_class comes from the same ordered pattern tables, so feedback and
severity ranking behave identically whichever backend ran the query.
"""

from __future__ import annotations

import concurrent.futures as cf
import csv
import enum
import importlib
import io
import logging
import math
import os
import re
import subprocess
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Mapping, Optional, Sequence

from .engine import (
    DialectMode, EngineError, ErrorClass, InMemoryDb, QueryTimeout, ResultTable, execute, load_database,
    parse_sql,
)
from .engine.ast import Compound, Select
from .records import Dialect, parse_dialect

log = logging.getLogger(__name__)

EMBEDDED_TIMEOUT = 1.0
LIVE_TIMEOUT = 30.0

ERROR_CLASSES = ("syntax", "dialect-violation", "unknown-object", "type", "strict-group-by", "runtime", "timeout")


class GatewayError(RuntimeError):
    """Unknown backend or database reference; the only errors run() raises."""


class Status(str, enum.Enum):
    OK = "ok"
    ERROR = "error"
    TIMEOUT = "timeout"


@dataclass(frozen=True)
class ExecReport:
    status: Status
    error_class: Optional[str] = None
    result: Optional[ResultTable] = None
    elapsed: float = 0.0
    backend: str = ""
    raw_error: str = ""

    def __post_init__(self):
        object.__setattr__(self, "status", Status(self.status))
        ok = self.status is Status.OK
        if ok != (self.result is not None) or ok == (self.error_class is not None):
            raise ValueError("status=ok iff result present iff error_class absent")
        if self.error_class is not None and self.error_class not in ERROR_CLASSES:
            raise ValueError(f"unknown error class {self.error_class!r}")

    @property
    def ok(self) -> bool:
        return self.status is Status.OK

    @classmethod
    def success(cls, result: ResultTable, elapsed: float, backend: str) -> ExecReport:
        return cls(Status.OK, None, result, elapsed, backend)

    @classmethod
    def failure(cls, error_class: str, raw: str, elapsed: float, backend: str) -> ExecReport:
        status = Status.TIMEOUT if error_class == "timeout" else Status.ERROR
        return cls(status, error_class, None, elapsed, backend, raw)

    def summary(self) -> dict[str, Any]:
        """Persistable view without timing, so output files stay byte-stable."""
        out: dict[str, Any] = {"status": self.status.value, "error_class": self.error_class}
        if self.raw_error:
            out["error"] = self.raw_error
        return out


# -- error classification ----------------------------------------------------------

_ENGINE_CLASS = {
    ErrorClass.PARSE: "syntax",
    ErrorClass.DIALECT_VIOLATION: "dialect-violation",
    ErrorClass.UNKNOWN_RELATION: "unknown-object",
    ErrorClass.UNKNOWN_COLUMN: "unknown-object",
    ErrorClass.TYPE_MISMATCH: "type",
    ErrorClass.STRICT_GROUP_BY: "strict-group-by",
    ErrorClass.UNSUPPORTED_FEATURE: "runtime",
    ErrorClass.RUNTIME: "runtime",
}


def engine_error_class(exc: EngineError) -> str:
    return _ENGINE_CLASS[exc.cls]


def _table(*rows: tuple[str, str]) -> list[tuple[re.Pattern, str]]:
    return [(re.compile(p, re.IGNORECASE), c) for p, c in rows]


_COMMON = _table(
    (r"\[dialect violation:", "dialect-violation"),
    (r"doesn't yet support", "dialect-violation"),
    (r"statement timeout|query execution was interrupted|ORA-01013", "timeout"),
)

_PATTERNS: dict[Dialect, list[tuple[re.Pattern, str]]] = {
    Dialect.MYSQL: _table(
        (r"\b1140\b|\b1055\b|only_full_group_by", "strict-group-by"),
        (r"\b1248\b", "dialect-violation"),
        (r"\b1064\b|error in your SQL syntax", "syntax"),
        (r"\b1146\b|\b1054\b|\b1052\b|\b1305\b|doesn't exist|unknown column|is ambiguous", "unknown-object"),
        (r"\b1292\b|\b1366\b|truncated incorrect|incorrect \w+ value", "type"),
    ),
    Dialect.POSTGRES: _table(
        (r"must appear in the GROUP BY clause", "strict-group-by"),
        (r"for SELECT DISTINCT, ORDER BY expressions", "dialect-violation"),
        (r"syntax error", "syntax"),
        (r"operator does not exist|invalid input syntax for|cannot cast|is of type"
         r"|function \w+\((?:text|character varying|unknown)[^)]*\) does not exist", "type"),
        (r'relation ".*" does not exist|column ".*" does not exist|missing FROM-clause'
         r"|function .* does not exist|is ambiguous", "unknown-object"),
    ),
    Dialect.ORACLE: _table(
        (r"ORA-00979|ORA-00937", "strict-group-by"),
        (r"ORA-00933|ORA-00923|ORA-00936|ORA-00907|ORA-00905|ORA-00911", "syntax"),
        (r"ORA-00942|ORA-00904|ORA-00918", "unknown-object"),
        (r"ORA-01722|ORA-00932|ORA-01858|ORA-01861", "type"),
    ),
    Dialect.SQLITE: _table(
        (r"strict GROUP BY", "strict-group-by"),
        (r"syntax error|incomplete input|unrecognized token", "syntax"),
        (r"no such table|no such column|no such function|ambiguous column", "unknown-object"),
        (r"datatype mismatch", "type"),
    ),
}


def classify_error(raw: str, dialect: Dialect | str) -> str:
    """Map backend error text to one of the seven classes; first match wins."""
    d = parse_dialect(dialect)
    for pattern, cls in _COMMON + _PATTERNS[d]:
        if pattern.search(raw):
            return cls
    return "runtime"


# -- backends ------------------------------------------------------------------------


class Backend:
    """Executes SQL for one dialect. Subclasses implement ``_execute``."""

    kind = "abstract"
    cooperative_timeout = False  # True if the backend enforces deadlines itself

    def __init__(self, dialect: Dialect | str, name: str | None = None, timeout: float = LIVE_TIMEOUT,
                 max_workers: int = 4):
        self.dialect = parse_dialect(dialect)
        self.name = name or f"{self.kind}:{self.dialect.value}"
        self.timeout = timeout
        self.max_workers = max_workers

    def has_db(self, db_ref: str) -> bool:
        return True

    def prepare(self, db_ref: str) -> float:
        """Make ``db_ref`` ready; return seconds spent loading/connecting."""
        return 0.0

    def _execute(self, sql: str, db_ref: str, timeout: float) -> ExecReport:
        raise NotImplementedError

    def execute(self, sql: str, db_ref: str, timeout: float) -> ExecReport:
        start = time.perf_counter()
        try:
            return self._execute(sql, db_ref, timeout)
        except GatewayError:
            raise
        except Exception as exc:  # driver-specific failures become classified reports
            raw = str(exc) or type(exc).__name__
            return ExecReport.failure(classify_error(raw, self.dialect), raw,
                                      time.perf_counter() - start, self.name)

    def probe(self) -> Optional[str]:
        """None if reachable, else a diagnostic message."""
        return None

    def close(self) -> None:
        pass


class EmbeddedBackend(Backend):
    kind = "embedded"
    cooperative_timeout = True

    def __init__(self, dialect: Dialect | str, fixtures: str | os.PathLike | Mapping[str, InMemoryDb],
                 *, name: str | None = None, timeout: float = EMBEDDED_TIMEOUT, max_workers: int = 4,
                 mode_overrides: Mapping[str, Any] | None = None):
        super().__init__(dialect, name, timeout, max_workers)
        self.mode = DialectMode.for_dialect(self.dialect, **dict(mode_overrides or {}))
        self._lock = threading.Lock()
        if isinstance(fixtures, Mapping):
            self._dir: Path | None = None
            self._dbs: dict[str, InMemoryDb] = dict(fixtures)
        else:
            self._dir = Path(fixtures)
            self._dbs = {}
        self.import_times: dict[str, float] = {}

    def _path(self, db_ref: str) -> Path | None:
        if self._dir is None:
            return None
        p = self._dir / f"{db_ref}.json"
        return p if p.is_file() else None

    def has_db(self, db_ref: str) -> bool:
        return db_ref in self._dbs or self._path(db_ref) is not None

    def load(self, db_ref: str) -> InMemoryDb:
        with self._lock:
            db = self._dbs.get(db_ref)
            if db is not None:
                return db
            p = self._path(db_ref)
            if p is None:
                raise GatewayError(f"unknown database {db_ref!r} for {self.name}")
            start = time.perf_counter()
            db = load_database(p, db_ref)
            self.import_times[db_ref] = time.perf_counter() - start
            self._dbs[db_ref] = db
            return db

    def prepare(self, db_ref: str) -> float:
        p = self._path(db_ref)
        start = time.perf_counter()
        if p is not None:
            db = load_database(p, db_ref)
            with self._lock:
                self._dbs.setdefault(db_ref, db)
        else:
            self.load(db_ref)
        return time.perf_counter() - start

    def _execute(self, sql: str, db_ref: str, timeout: float) -> ExecReport:
        db = self.load(db_ref)
        start = time.perf_counter()
        try:
            ast = parse_sql(sql, self.mode)
            result = execute(ast, db, self.mode, timeout=timeout)
        except EngineError as exc:
            return ExecReport.failure(engine_error_class(exc), exc.message, time.perf_counter() - start, self.name)
        except QueryTimeout:
            return ExecReport.failure("timeout", f"query exceeded {timeout}s", time.perf_counter() - start, self.name)
        except RecursionError:
            return ExecReport.failure("runtime", "query nesting too deep", time.perf_counter() - start, self.name)
        return ExecReport.success(result, time.perf_counter() - start, self.name)


def _cell(text: str) -> Any:
    if text in ("NULL", "\\N"):
        return None
    try:
        return int(text)
    except ValueError:
        pass
    try:
        v = float(text)
    except ValueError:
        return text
    return v if math.isfinite(v) else text


def parse_tsv(out: str) -> ResultTable:
    """Tab-separated client output with a header line."""
    lines = [ln for ln in out.splitlines() if ln.strip() != ""]
    if not lines:
        return ResultTable((), ())
    reader = csv.reader(io.StringIO("\n".join(lines)), delimiter="\t", quoting=csv.QUOTE_NONE)
    rows = list(reader)
    return ResultTable(tuple(rows[0]), tuple(tuple(_cell(c) for c in r) for r in rows[1:]))


class SubprocessBackend(Backend):
    """Runs each query through a command-line client.

    ``command`` is an argument list with ``{sql}`` and ``{db}`` placeholders,
    e.g. ``["mysql", "--batch", "-e", "{sql}", "{db}"]``; the client must
    print a tab-separated table with a header line.
    """

    kind = "subprocess"

    def __init__(self, dialect: Dialect | str, command: Sequence[str], *, name: str | None = None,
                 timeout: float = LIVE_TIMEOUT, max_workers: int = 4, env: Mapping[str, str] | None = None):
        super().__init__(dialect, name, timeout, max_workers)
        if not command:
            raise ValueError("subprocess backend needs a command")
        self.command = list(command)
        self.env = dict(env or {})

    def _execute(self, sql: str, db_ref: str, timeout: float) -> ExecReport:
        argv = [a.replace("{sql}", sql).replace("{db}", db_ref) for a in self.command]
        start = time.perf_counter()
        try:
            proc = subprocess.run(argv, capture_output=True, text=True, timeout=timeout,
                                  env={**os.environ, **self.env} if self.env else None)
        except subprocess.TimeoutExpired:
            return ExecReport.failure("timeout", f"query exceeded {timeout}s", time.perf_counter() - start, self.name)
        elapsed = time.perf_counter() - start
        if proc.returncode != 0:
            raw = proc.stderr.strip() or proc.stdout.strip() or f"exit status {proc.returncode}"
            return ExecReport.failure(classify_error(raw, self.dialect), raw, elapsed, self.name)
        return ExecReport.success(parse_tsv(proc.stdout), elapsed, self.name)

    def probe(self) -> Optional[str]:
        exe = self.command[0]
        from shutil import which
        return None if which(exe) else f"client executable {exe!r} not found"


class WireBackend(Backend):
    """Talks to a live server through a DB-API 2.0 driver module.

    ``dsn`` is passed to ``driver.connect``; a ``{db}`` placeholder in it is
    replaced by the database reference. One connection per (thread, db).
    """

    kind = "wire"

    def __init__(self, dialect: Dialect | str, driver: str, dsn: str | Mapping[str, Any], *,
                 name: str | None = None, timeout: float = LIVE_TIMEOUT, max_workers: int = 4):
        super().__init__(dialect, name, timeout, max_workers)
        self.driver_name = driver
        self.dsn = dsn
        self._local = threading.local()

    def _driver(self):
        return importlib.import_module(self.driver_name)

    def _connect_args(self, db_ref: str):
        if isinstance(self.dsn, str):
            return (self.dsn.replace("{db}", db_ref),), {}
        return (), {k: (v.replace("{db}", db_ref) if isinstance(v, str) else v) for k, v in self.dsn.items()}

    def _conn(self, db_ref: str):
        conns = getattr(self._local, "conns", None)
        if conns is None:
            conns = self._local.conns = {}
        if db_ref not in conns:
            args, kwargs = self._connect_args(db_ref)
            conns[db_ref] = self._driver().connect(*args, **kwargs)
        return conns[db_ref]

    def prepare(self, db_ref: str) -> float:
        start = time.perf_counter()
        self._conn(db_ref)
        return time.perf_counter() - start

    def _execute(self, sql: str, db_ref: str, timeout: float) -> ExecReport:
        conn = self._conn(db_ref)
        start = time.perf_counter()
        cur = conn.cursor()
        try:
            cur.execute(sql)
            rows = cur.fetchall()
            cols = tuple(d[0] for d in (cur.description or ()))
        except Exception as exc:
            try:
                conn.rollback()
            except Exception:
                pass
            raw = str(exc) or type(exc).__name__
            return ExecReport.failure(classify_error(raw, self.dialect), raw, time.perf_counter() - start, self.name)
        finally:
            cur.close()
        return ExecReport.success(ResultTable(cols, tuple(tuple(r) for r in rows)),
                                  time.perf_counter() - start, self.name)

    def probe(self) -> Optional[str]:
        try:
            self._driver()
        except ImportError as exc:
            return f"driver {self.driver_name!r} not importable: {exc}"
        return None


# -- gateway -----------------------------------------------------------------------------


@dataclass(frozen=True)
class BackendConfig:
    dialect: str
    kind: str = "embedded"
    path: Optional[str] = None  # fixture dir for embedded
    dsn: Any = None
    driver: Optional[str] = None
    command: Optional[tuple[str, ...]] = None
    max_workers: int = 4
    timeout_s: Optional[float] = None
    mode: Mapping[str, Any] = field(default_factory=dict)


def make_backend(cfg: BackendConfig, default_fixtures: str | os.PathLike | None = None) -> Backend:
    kind = cfg.kind
    if kind == "embedded":
        path = cfg.path or default_fixtures
        if path is None:
            raise ValueError(f"embedded backend for {cfg.dialect} needs a fixture path")
        return EmbeddedBackend(cfg.dialect, path, timeout=cfg.timeout_s or EMBEDDED_TIMEOUT,
                               max_workers=cfg.max_workers, mode_overrides=cfg.mode)
    if kind == "subprocess":
        return SubprocessBackend(cfg.dialect, cfg.command or (), timeout=cfg.timeout_s or LIVE_TIMEOUT,
                                 max_workers=cfg.max_workers)
    if kind == "wire":
        if not cfg.driver:
            raise ValueError(f"wire backend for {cfg.dialect} needs a driver module")
        return WireBackend(cfg.dialect, cfg.driver, cfg.dsn or "", timeout=cfg.timeout_s or LIVE_TIMEOUT,
                           max_workers=cfg.max_workers)
    raise ValueError(f"unknown backend kind {kind!r}; expected embedded, wire or subprocess")


class Gateway:
    """Routes queries to the backend registered for their dialect."""

    def __init__(self, backends: Iterable[Backend] = ()):
        self._backends: dict[Dialect, Backend] = {}
        self._watchdog = cf.ThreadPoolExecutor(max_workers=32, thread_name_prefix="gateway-watchdog")
        for b in backends:
            self.register(b)

    def register(self, backend: Backend) -> None:
        self._backends[backend.dialect] = backend

    def backend(self, dialect: Dialect | str) -> Backend:
        d = parse_dialect(dialect)
        b = self._backends.get(d)
        if b is None:
            raise GatewayError(f"no backend registered for {d.value}")
        return b

    @property
    def dialects(self) -> tuple[Dialect, ...]:
        return tuple(self._backends)

    def run(self, sql: str, dialect: Dialect | str, db_ref: str, timeout: float | None = None) -> ExecReport:
        b = self.backend(dialect)
        if not b.has_db(db_ref):
            raise GatewayError(f"unknown database {db_ref!r} for {b.name}")
        limit = b.timeout if timeout is None else timeout
        if b.cooperative_timeout:
            return b.execute(sql, db_ref, limit)
        start = time.perf_counter()
        fut = self._watchdog.submit(b.execute, sql, db_ref, limit)
        try:
            return fut.result(timeout=limit)
        except cf.TimeoutError:
            return ExecReport.failure("timeout", f"query exceeded {limit}s", time.perf_counter() - start, b.name)

    def run_many(self, items: Sequence[tuple[str, str]], dialect: Dialect | str, *,
                 workers: int | None = None, timeout: float | None = None) -> list[ExecReport]:
        """Run (sql, db_ref) pairs concurrently; reports come back in input order."""
        b = self.backend(dialect)
        n = max(1, workers or b.max_workers)
        if n == 1 or len(items) <= 1:
            return [self.run(sql, dialect, db, timeout) for sql, db in items]
        with cf.ThreadPoolExecutor(max_workers=n) as pool:
            return list(pool.map(lambda it: self.run(it[0], dialect, it[1], timeout), items))

    def close(self) -> None:
        for b in self._backends.values():
            b.close()
        self._watchdog.shutdown(wait=False)


def embedded_gateway(fixtures: str | os.PathLike | Mapping[str, InMemoryDb],
                     dialects: Iterable[Dialect | str] = tuple(Dialect), **kwargs: Any) -> Gateway:
    return Gateway(EmbeddedBackend(d, fixtures, **kwargs) for d in dialects)


# -- comparison and reward ------------------------------------------------------------------


@dataclass(frozen=True)
class ComparePolicy:
    order_sensitive: Optional[bool] = None  # None: decide from the query's top-level ORDER BY
    float_tolerance: float = 1e-6
    null_equals_null: bool = True

    def __post_init__(self):
        if self.float_tolerance < 0:
            raise ValueError("tolerance must be >= 0")

    def for_query(self, sql: str | None, dialect: Dialect | str = Dialect.SQLITE) -> ComparePolicy:
        if self.order_sensitive is not None:
            return self
        return ComparePolicy(has_order_by(sql, dialect) if sql else False,
                             self.float_tolerance, self.null_equals_null)


def has_order_by(sql: str, dialect: Dialect | str = Dialect.SQLITE) -> bool:
    """True iff the outermost query has ORDER BY (parse failures fall back to a text check)."""
    try:
        ast = parse_sql(sql, dialect)
    except EngineError:
        return bool(re.search(r"\border\s+by\b", re.sub(r"\([^()]*\)", "", sql), re.IGNORECASE))
    return isinstance(ast, (Select, Compound)) and bool(ast.order_by)


def _num(v: Any) -> bool:
    return isinstance(v, (int, float))


def values_equal(a: Any, b: Any, policy: ComparePolicy) -> bool:
    if a is None or b is None:
        return a is None and b is None and policy.null_equals_null
    if isinstance(a, bool):
        a = int(a)
    if isinstance(b, bool):
        b = int(b)
    if _num(a) and _num(b):
        if a == b:
            return True
        tol = policy.float_tolerance
        if tol == 0 or not (math.isfinite(a) and math.isfinite(b)):
            return False
        return abs(a - b) <= tol * max(abs(a), abs(b))
    if _num(a) != _num(b):
        return False
    return a == b


def rows_equal(r1: Sequence[Any], r2: Sequence[Any], policy: ComparePolicy) -> bool:
    return len(r1) == len(r2) and all(values_equal(x, y, policy) for x, y in zip(r1, r2))


def _sort_key(row: Sequence[Any]):
    key = []
    for v in row:
        if v is None:
            key.append((0, 0, ""))
        elif isinstance(v, (bool, int, float)):
            key.append((1, float(v), ""))
        else:
            key.append((2, 0, str(v)))
    return key


def compare_results(actual: ResultTable, expected: ResultTable, policy: ComparePolicy = ComparePolicy()) -> bool:
    """Positional comparison of two results; column labels are ignored."""
    a, e = list(actual.rows), list(expected.rows)
    if len(a) != len(e):
        return False
    if not a:
        return True
    if policy.order_sensitive:
        return all(rows_equal(x, y, policy) for x, y in zip(a, e))
    sa, se = sorted(a, key=_sort_key), sorted(e, key=_sort_key)
    if all(rows_equal(x, y, policy) for x, y in zip(sa, se)):
        return True
    if policy.float_tolerance == 0:
        return False
    # tolerance can reorder near-equal floats; fall back to greedy matching
    remaining = list(se)
    for row in sa:
        for i, cand in enumerate(remaining):
            if rows_equal(row, cand, policy):
                del remaining[i]
                break
        else:
            return False
    return True


class RewardMode(str, enum.Enum):
    EXEC_ONLY = "exec-only"
    EXEC_AND_MATCH = "exec-and-match"


@dataclass(frozen=True)
class RewardPolicy:
    mode: RewardMode = RewardMode.EXEC_ONLY
    compare: ComparePolicy = ComparePolicy()

    def __post_init__(self):
        object.__setattr__(self, "mode", RewardMode(self.mode))


def reward(report: ExecReport, gold: ResultTable | None = None, policy: RewardPolicy = RewardPolicy(),
           *, order_sensitive: bool | None = None) -> int:
    if policy.mode is RewardMode.EXEC_AND_MATCH and gold is None:
        raise ValueError("exec-and-match reward needs a gold result")
    if not report.ok:
        return 0
    if policy.mode is RewardMode.EXEC_ONLY:
        return 1
    cmp = policy.compare
    if order_sensitive is not None:
        cmp = ComparePolicy(order_sensitive, cmp.float_tolerance, cmp.null_equals_null)
    return int(compare_results(report.result, gold, cmp))


# -- timing ---------------------------------------------------------------------------------


@dataclass(frozen=True)
class TimingStats:
    avg_import: float
    avg_exec: float
    total: float
    count: int
    errors: int


def profile_execution(gateway: Gateway, batch: Sequence[tuple[str, str]], dialect: Dialect | str,
                      timeout: float | None = None) -> TimingStats:
    """Average load time per distinct database and average/total execution time."""
    if not batch:
        raise ValueError("profile_execution needs a non-empty batch")
    b = gateway.backend(dialect)
    imports = [b.prepare(db) for db in dict.fromkeys(db for _, db in batch)]
    elapsed = []
    errors = 0
    for sql, db in batch:
        rep = gateway.run(sql, dialect, db, timeout)
        if rep.status is Status.TIMEOUT:
            continue
        errors += not rep.ok
        elapsed.append(rep.elapsed)
    total = sum(elapsed)
    return TimingStats(sum(imports) / len(imports), total / len(elapsed) if elapsed else 0.0, total,
                       len(elapsed), errors)
