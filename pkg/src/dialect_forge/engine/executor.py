"""Tree-walking executor for parsed SELECT queries over an InMemoryDb.

Semantics follow the active dialect where the engines visibly differ:
PostgreSQL refuses to compare text with numbers (hence the ``::INTEGER``
casts in translated queries), LIKE is case-insensitive only in SQLite and
MySQL, NULLs sort first ascending in SQLite/MySQL and last in
PostgreSQL/Oracle, and integer division truncates in SQLite/PostgreSQL.
"""

from __future__ import annotations

import functools
import math
import re
import time
from dataclasses import dataclass
from decimal import ROUND_HALF_UP, Decimal
from typing import Any, Optional

from ..records import Dialect
from . import ast as A
from . import messages as M
from .database import InMemoryDb
from .modes import DialectMode, EngineError, ErrorClass, QueryTimeout, mode_of
from .printer import to_sql


@dataclass(frozen=True)
class ResultTable:
    columns: tuple[str, ...]
    rows: tuple[tuple[Any, ...], ...]

    def __len__(self) -> int:
        return len(self.rows)

    def to_dict(self) -> dict[str, Any]:
        return {"columns": list(self.columns), "rows": [list(r) for r in self.rows]}

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> ResultTable:
        return cls(tuple(d.get("columns", ())), tuple(tuple(r) for r in d.get("rows", ())))


class Cols:
    """Column descriptors of a relation: (binding, name) pairs.

    Identity-hashed so resolution caches keyed on it stay valid.
    """

    __slots__ = ("items", "types")

    def __init__(self, items: tuple[tuple[Optional[str], str], ...], types: tuple[str, ...] | None = None):
        self.items = items
        self.types = types or ("",) * len(items)

    def __len__(self) -> int:
        return len(self.items)


@dataclass
class Relation:
    cols: Cols
    rows: list[tuple]


class Frame:
    __slots__ = ("cols", "row", "parent", "group", "win", "idx", "aliases")

    def __init__(self, cols: Cols, row: tuple, parent: "Frame | None" = None, group: list | None = None,
                 win: dict | None = None, idx: int = -1, aliases: dict | None = None):
        self.cols = cols
        self.row = row
        self.parent = parent
        self.group = group
        self.win = win
        self.idx = idx
        self.aliases = aliases


_INT_TYPES = {"INTEGER", "INT", "INT4", "INT8", "BIGINT", "SMALLINT", "SIGNED", "SIGNED INTEGER",
              "UNSIGNED", "UNSIGNED INTEGER", "NUMBER"}
_FLOAT_TYPES = {"FLOAT", "FLOAT4", "FLOAT8", "REAL", "DOUBLE", "DOUBLE PRECISION", "NUMERIC", "DECIMAL",
                "BINARY_DOUBLE", "BINARY_FLOAT"}

_NUMERIC_PREFIX = re.compile(r"^\s*[+-]?(\d+(\.\d*)?|\.\d+)([eE][+-]?\d+)?")
_NUMERIC_FULL = re.compile(r"^\s*[+-]?(\d+(\.\d*)?|\.\d+)([eE][+-]?\d+)?\s*$")


def _parse_number(s: str) -> int | float | None:
    if not _NUMERIC_FULL.match(s):
        return None
    s = s.strip()
    try:
        return int(s)
    except ValueError:
        return float(s)


def _loose_number(s: str) -> int | float:
    """MySQL/SQLite string-to-number: longest numeric prefix, else 0."""
    m = _NUMERIC_PREFIX.match(s)
    if not m:
        return 0
    text = m.group(0).strip()
    try:
        return int(text)
    except ValueError:
        return float(text)


def _type_label(v: Any) -> str:
    if isinstance(v, bool):
        return "boolean"
    if isinstance(v, int):
        return "integer"
    if isinstance(v, float):
        return "double precision"
    return "text"


def _round_half_away(x: float, ndigits: int = 0) -> float:
    q = Decimal(1).scaleb(-ndigits)
    return float(Decimal(repr(x)).quantize(q, rounding=ROUND_HALF_UP))


def _hashable(v: Any) -> Any:
    if isinstance(v, float) and v.is_integer():
        return int(v)
    return v


def _like_regex(pattern: str, ci: bool) -> re.Pattern:
    out = []
    for ch in pattern:
        if ch == "%":
            out.append(".*")
        elif ch == "_":
            out.append(".")
        else:
            out.append(re.escape(ch))
    return re.compile("".join(out), re.DOTALL | (re.IGNORECASE if ci else 0))


_like_cache = functools.lru_cache(maxsize=512)(_like_regex)


class Executor:
    CHECK_EVERY = 512

    def __init__(self, db: InMemoryDb, mode: DialectMode, deadline: float | None = None):
        self.db = db
        self.mode = mode
        self.d = mode.dialect
        self.deadline = deadline
        self._ticks = 0
        self._resolve_cache: dict = {}
        self._subquery_cache: dict = {}
        self._correlated: set = set()

    # -- housekeeping -------------------------------------------------------

    def tick(self) -> None:
        self._ticks += 1
        if self.deadline is not None and self._ticks % self.CHECK_EVERY == 0:
            if time.monotonic() > self.deadline:
                raise QueryTimeout()

    # -- queries --------------------------------------------------------------

    def run(self, q: A.Query, outer: Frame | None = None) -> ResultTable:
        labels, rows = self.query(q, outer)
        if self.d in (Dialect.SQLITE, Dialect.MYSQL):
            rows = [tuple(int(v) if isinstance(v, bool) else v for v in r) for r in rows]
        return ResultTable(tuple(labels), tuple(rows))

    def query(self, q: A.Query, outer: Frame | None) -> tuple[list[str], list[tuple]]:
        if isinstance(q, A.Compound):
            return self.compound(q, outer)
        return self.select(q, outer)

    def compound(self, q: A.Compound, outer: Frame | None):
        llabels, lrows = self.query(q.left, outer)
        _, rrows = self.query(q.right, outer)
        if lrows and rrows and len(lrows[0]) != len(rrows[0]):
            raise M.set_op_arity(self.d, q.op)
        if q.op == "UNION":
            rows = lrows + rrows if q.all else _distinct(lrows + rrows)
        elif q.op == "INTERSECT":
            if q.all:
                pool = _multiset(rrows)
                rows = []
                for r in lrows:
                    k = tuple(map(_hashable, r))
                    if pool.get(k, 0) > 0:
                        pool[k] -= 1
                        rows.append(r)
            else:
                right = {tuple(map(_hashable, r)) for r in rrows}
                rows = [r for r in _distinct(lrows) if tuple(map(_hashable, r)) in right]
        else:
            if q.all:
                pool = _multiset(rrows)
                rows = []
                for r in lrows:
                    k = tuple(map(_hashable, r))
                    if pool.get(k, 0) > 0:
                        pool[k] -= 1
                    else:
                        rows.append(r)
            else:
                right = {tuple(map(_hashable, r)) for r in rrows}
                rows = [r for r in _distinct(lrows) if tuple(map(_hashable, r)) not in right]
        if q.order_by:
            lower = [c.lower() for c in llabels]
            keys = []
            for o in q.order_by:
                e = o.expr
                if isinstance(e, A.Lit) and isinstance(e.value, int) and not isinstance(e.value, bool):
                    if not 1 <= e.value <= len(llabels):
                        raise M.unknown_column(self.d, str(e.value), clause="order clause")
                    keys.append((e.value - 1, o.desc))
                elif isinstance(e, A.Col) and e.name.lower() in lower:
                    keys.append((lower.index(e.name.lower()), o.desc))
                else:
                    raise M.unknown_column(self.d, to_sql(e, self.mode), clause="order clause")
            rows = self.sort([(tuple(r[i] for i, _ in keys), r) for r in rows], [d for _, d in keys])
        rows = _slice(rows, q.limit, q.offset)
        return llabels, rows

    def select(self, s: A.Select, outer: Frame | None):
        rel = self.from_clause(s.from_, outer)
        cols = rel.cols
        if s.where is not None:
            if A.contains_aggregate(s.where):
                raise M.misplaced_aggregate(self.d, "WHERE")
            if A.contains_window(s.where):
                raise M.unsupported(self.d, "window function in WHERE")
            kept = []
            for row in rel.rows:
                self.tick()
                if _truthy(self.eval(s.where, Frame(cols, row, outer)), self) is True:
                    kept.append(row)
            rows = kept
        else:
            rows = rel.rows

        aliases = {it.alias.lower(): it.expr for it in s.items if it.alias}
        group_by = tuple(self._alias_subst(g, cols, aliases) for g in s.group_by)
        agg_exprs = [it.expr for it in s.items] + ([s.having] if s.having is not None else []) \
            + [o.expr for o in s.order_by]
        grouped = bool(group_by) or any(A.contains_aggregate(e) for e in agg_exprs)
        if s.having is not None and not grouped:
            grouped = True

        if grouped:
            if self.mode.strict_group_by:
                self.check_group_by(s, cols, group_by, aliases)
            groups: dict = {}
            order: list = []
            for row in rows:
                self.tick()
                f = Frame(cols, row, outer)
                key = tuple(_hashable(self.eval(g, f)) for g in group_by)
                if key not in groups:
                    groups[key] = []
                    order.append(key)
                groups[key].append(row)
            if not group_by and not order:
                order.append(())
                groups[()] = []
            null_row = (None,) * len(cols)
            ctxs = [Frame(cols, groups[k][0] if groups[k] else null_row, outer, group=groups[k], aliases=aliases)
                    for k in order]
            if s.having is not None:
                ctxs = [f for f in ctxs if _truthy(self.eval(s.having, f), self) is True]
        else:
            ctxs = [Frame(cols, row, outer, aliases=aliases) for row in rows]

        windows = [n for e in [it.expr for it in s.items] + [o.expr for o in s.order_by]
                   for n in A.walk(e) if isinstance(n, A.Func) and n.over is not None]
        if windows:
            win: dict = {}
            for i, f in enumerate(ctxs):
                f.win = win
                f.idx = i
            for node in windows:
                if id(node) not in win:
                    win[id(node)] = self.window_values(node, ctxs)

        labels: list[str] = []
        for it in s.items:
            if isinstance(it.expr, A.Star):
                labels.extend(n for _, n in self._star_cols(cols, it.expr))
            elif it.alias:
                labels.append(it.alias)
            elif isinstance(it.expr, A.Col):
                labels.append(it.expr.name)
            else:
                labels.append(to_sql(it.expr, self.mode))

        projected = []
        for f in ctxs:
            self.tick()
            out = []
            for it in s.items:
                if isinstance(it.expr, A.Star):
                    for i, _ in self._star_index(cols, it.expr):
                        out.append(f.row[i])
                else:
                    out.append(self.eval(it.expr, f))
            projected.append((tuple(out), f))

        if s.distinct:
            seen = set()
            uniq = []
            for row, f in projected:
                k = tuple(map(_hashable, row))
                if k not in seen:
                    seen.add(k)
                    uniq.append((row, f))
            projected = uniq

        if s.order_by:
            alias_pos = {}
            for pos, it in enumerate(s.items):
                if it.alias and it.alias.lower() not in alias_pos:
                    alias_pos[it.alias.lower()] = pos
            keyed = []
            for row, f in projected:
                key = []
                for o in s.order_by:
                    e = o.expr
                    if isinstance(e, A.Lit) and isinstance(e.value, int) and not isinstance(e.value, bool):
                        if not 1 <= e.value <= len(row):
                            raise M.unknown_column(self.d, str(e.value), clause="order clause")
                        key.append(row[e.value - 1])
                    elif isinstance(e, A.Col) and e.table is None and e.name.lower() in alias_pos \
                            and not self._resolves_locally(cols, e):
                        key.append(row[alias_pos[e.name.lower()]])
                    else:
                        key.append(self.eval(e, f))
                keyed.append((tuple(key), row))
            rows_out = self.sort(keyed, [o.desc for o in s.order_by])
        else:
            rows_out = [row for row, _ in projected]
        return labels, _slice(rows_out, s.limit, s.offset)

    def sort(self, keyed: list, descs: list[bool]) -> list:
        nulls_first_asc = self.mode.nulls_first_on_asc

        def cmp(a, b):
            for x, y, desc in zip(a[0], b[0], descs):
                if x is None and y is None:
                    continue
                if x is None or y is None:
                    # NULL is the lowest value in sqlite/mysql and the highest in postgres/oracle
                    x_low = (x is None) == nulls_first_asc
                    c = -1 if x_low else 1
                else:
                    c = _order_cmp(x, y)
                if c:
                    return -c if desc else c
            return 0

        return [row for _, row in sorted(keyed, key=functools.cmp_to_key(cmp))]

    # -- FROM -----------------------------------------------------------------

    def from_clause(self, sources: tuple, outer: Frame | None) -> Relation:
        if not sources:
            return Relation(Cols(()), [()])
        rel = self.source(sources[0], outer)
        for src in sources[1:]:
            right = self.source(src, outer)
            rows = []
            for lr in rel.rows:
                for rr in right.rows:
                    self.tick()
                    rows.append(lr + rr)
            rel = Relation(Cols(rel.cols.items + right.cols.items, rel.cols.types + right.cols.types), rows)
        return rel

    def source(self, src: A.Source, outer: Frame | None) -> Relation:
        if isinstance(src, A.TableRef):
            t = self.db.lookup(src.name, self.mode.case_sensitive_tables)
            if t is None:
                if self.d is Dialect.ORACLE and src.name.lower() == "dual":
                    return Relation(Cols(((src.binding, "DUMMY"),), ("text",)), [("X",)])
                raise M.unknown_table(self.d, src.name, self.db.db_id)
            binding = src.binding
            return Relation(Cols(tuple((binding, c) for c in t.columns), t.types), list(t.rows))
        if isinstance(src, A.Derived):
            labels, rows = self.query(src.query, None)
            return Relation(Cols(tuple((src.alias, c) for c in labels)), rows)
        if isinstance(src, A.Join):
            left = self.source(src.left, outer)
            right = self.source(src.right, outer)
            cols = Cols(left.cols.items + right.cols.items, left.cols.types + right.cols.types)
            if src.kind in ("RIGHT", "FULL") and self.d is Dialect.SQLITE:
                raise M.unsupported(self.d, f"{src.kind} JOIN")
            rows = []
            matched_right = set()
            rnull = (None,) * len(right.cols)
            lnull = (None,) * len(left.cols)
            for lr in left.rows:
                hit = False
                for j, rr in enumerate(right.rows):
                    self.tick()
                    row = lr + rr
                    if src.on is None or _truthy(self.eval(src.on, Frame(cols, row, outer)), self) is True:
                        rows.append(row)
                        hit = True
                        matched_right.add(j)
                if not hit and src.kind in ("LEFT", "FULL"):
                    rows.append(lr + rnull)
            if src.kind in ("RIGHT", "FULL"):
                for j, rr in enumerate(right.rows):
                    if j not in matched_right:
                        rows.append(lnull + rr)
            return Relation(cols, rows)
        raise TypeError(f"unknown source {type(src).__name__}")

    # -- column resolution ------------------------------------------------------

    def _binding_eq(self, binding: Optional[str], table: str) -> bool:
        if binding is None:
            return False
        if self.mode.case_sensitive_tables:
            return binding == table
        return binding.lower() == table.lower()

    def _resolve(self, cols: Cols, col: A.Col) -> list[int]:
        key = (cols, col)
        hit = self._resolve_cache.get(key)
        if hit is not None:
            return hit
        name = col.name.lower()
        if col.table is None:
            idx = [i for i, (_, n) in enumerate(cols.items) if n.lower() == name]
        else:
            idx = [i for i, (b, n) in enumerate(cols.items) if n.lower() == name and self._binding_eq(b, col.table)]
        self._resolve_cache[key] = idx
        return idx

    def _resolves_locally(self, cols: Cols, col: A.Col) -> bool:
        return bool(self._resolve(cols, col))

    def _star_index(self, cols: Cols, star: A.Star):
        if star.table is None:
            return list(enumerate(n for _, n in cols.items))
        out = [(i, n) for i, (b, n) in enumerate(cols.items) if self._binding_eq(b, star.table)]
        if not out:
            raise M.unknown_column(self.d, "*", star.table)
        return out

    def _star_cols(self, cols: Cols, star: A.Star):
        return [(cols.items[i][0], n) for i, n in self._star_index(cols, star)]

    def _alias_subst(self, e: A.Expr, cols: Cols, aliases: dict) -> A.Expr:
        if isinstance(e, A.Col) and e.table is None and e.name.lower() in aliases \
                and not self._resolves_locally(cols, e):
            return aliases[e.name.lower()]
        if isinstance(e, A.Lit) and isinstance(e.value, int) and not isinstance(e.value, bool):
            return e  # positional GROUP BY handled by caller if needed
        return e

    def lookup_col(self, col: A.Col, frame: Frame) -> Any:
        f: Frame | None = frame
        table_seen = False
        while f is not None:
            idx = self._resolve(f.cols, col)
            if len(idx) == 1:
                return f.row[idx[0]]
            if len(idx) > 1:
                raise M.ambiguous_column(self.d, col.name)
            if col.table is not None and any(self._binding_eq(b, col.table) for b, _ in f.cols.items):
                table_seen = True
            if f.aliases and col.table is None and col.name.lower() in f.aliases:
                plain = Frame(f.cols, f.row, f.parent, f.group, f.win, f.idx, None)
                return self.eval(f.aliases[col.name.lower()], plain)
            f = f.parent
        if col.quoted and col.table is None and self.d is Dialect.SQLITE:
            # SQLite falls back to a string literal for an unresolvable "quoted" name
            return col.name
        if col.table is not None and not table_seen:
            raise M.unknown_column(self.d, col.name, col.table)
        raise M.unknown_column(self.d, col.name, col.table)

    # -- strict GROUP BY ----------------------------------------------------------

    def check_group_by(self, s: A.Select, cols: Cols, group_by: tuple, aliases: dict) -> None:
        grouped_exprs = set(group_by)
        grouped_idx = set()
        for g in group_by:
            if isinstance(g, A.Col):
                idx = self._resolve(cols, g)
                if len(idx) == 1:
                    grouped_idx.add(idx[0])

        def offending(e) -> A.Col | None:
            if e is None or e in grouped_exprs:
                return None
            if isinstance(e, A.Func) and e.is_aggregate:
                return None
            if isinstance(e, A.Col):
                idx = self._resolve(cols, e)
                if len(idx) == 1 and idx[0] not in grouped_idx:
                    return e
                if not idx and e.table is None and e.name.lower() in aliases:
                    return offending(aliases[e.name.lower()])
                return None
            if isinstance(e, (A.ScalarQuery, A.Exists)):
                return None
            if isinstance(e, A.InQuery):
                return offending(e.expr)
            for child in A._children(e):
                if isinstance(child, (A.Select, A.Compound)):
                    continue
                bad = offending(child)
                if bad is not None:
                    return bad
            return None

        def fail(col_text: str, position: int):
            raise M.group_by_error(self.d, col_text, position, bool(s.group_by), self.db.db_id)

        for pos, it in enumerate(s.items, 1):
            if isinstance(it.expr, A.Star):
                for i, n in self._star_index(cols, it.expr):
                    if i not in grouped_idx:
                        b = cols.items[i][0]
                        fail(f"{b}.{n}" if b else n, pos)
                continue
            bad = offending(it.expr)
            if bad is not None:
                fail(_col_text(bad), pos)
        for e in ([s.having] if s.having is not None else []) + [o.expr for o in s.order_by]:
            if isinstance(e, A.Lit):
                continue
            if isinstance(e, A.Col) and e.table is None and e.name.lower() in aliases \
                    and not self._resolves_locally(cols, e):
                continue
            bad = offending(e)
            if bad is not None:
                fail(_col_text(bad), 1)

    # -- windows --------------------------------------------------------------------

    def window_values(self, node: A.Func, ctxs: list[Frame]) -> list:
        if node.name not in A.WINDOW_FUNCS:
            raise M.unsupported(self.d, f"window function {node.name}() OVER")
        if node.filter is not None:
            raise M.unsupported(self.d, "FILTER clause")
        parts: dict = {}
        order = []
        for i, f in enumerate(ctxs):
            key = tuple(_hashable(self.eval(p, f)) for p in node.over.partition_by)
            if key not in parts:
                parts[key] = []
                order.append(key)
            parts[key].append(i)
        out: list = [None] * len(ctxs)
        descs = [o.desc for o in node.over.order_by]
        for key in order:
            members = parts[key]
            keyed = [(tuple(self.eval(o.expr, ctxs[i]) for o in node.over.order_by), i) for i in members]
            ranked = self.sort(keyed, descs) if descs else members
            sort_keys = {i: k for k, i in keyed}
            prev = None
            rank = 0
            for pos, i in enumerate(ranked, 1):
                if node.name == "row_number":
                    out[i] = pos
                else:
                    k = tuple(map(_hashable, sort_keys[i]))
                    if k != prev:
                        rank = pos
                        prev = k
                    out[i] = rank
        return out

    # -- expressions -------------------------------------------------------------------

    def eval(self, e: A.Expr, f: Frame) -> Any:
        if isinstance(e, A.Lit):
            return e.value
        if isinstance(e, A.Col):
            return self.lookup_col(e, f)
        if isinstance(e, A.Binary):
            return self.binary(e, f)
        if isinstance(e, A.Unary):
            v = self.eval(e.operand, f)
            if e.op == "NOT":
                t = _truthy(v, self)
                return None if t is None else (not t)
            if v is None:
                return None
            v = self.to_number(v, e.operand, "-")
            return -v if e.op == "-" else v
        if isinstance(e, A.Func):
            return self.func(e, f)
        if isinstance(e, A.Like):
            return self.like(e, f)
        if isinstance(e, A.InList):
            v = self.eval(e.expr, f)
            return self.in_values(v, e.expr, [(self.eval(i, f), i) for i in e.items], e.negated)
        if isinstance(e, A.InQuery):
            v = self.eval(e.expr, f)
            res = self.subquery(e.query, f)
            if res.rows and len(res.rows[0]) != 1:
                raise M.subquery_columns(self.d)
            return self.in_values(v, e.expr, [(r[0], None) for r in res.rows], e.negated)
        if isinstance(e, A.Between):
            v = self.eval(e.expr, f)
            lo = self.compare(">=", v, self.eval(e.low, f), e.expr, e.low)
            hi = self.compare("<=", v, self.eval(e.high, f), e.expr, e.high)
            r = _and3(lo, hi)
            return None if r is None else (r != e.negated)
        if isinstance(e, A.IsNull):
            return (self.eval(e.expr, f) is None) != e.negated
        if isinstance(e, A.Exists):
            res = self.subquery(e.query, f)
            return bool(res.rows) != e.negated
        if isinstance(e, A.ScalarQuery):
            res = self.subquery(e.query, f)
            if res.rows and len(res.rows[0]) != 1:
                raise M.subquery_columns(self.d)
            if not res.rows:
                return None
            if len(res.rows) > 1 and self.d is not Dialect.SQLITE:
                raise M.subquery_rows(self.d)
            return res.rows[0][0]
        if isinstance(e, A.Cast):
            return self.cast(self.eval(e.expr, f), e.type_name)
        if isinstance(e, A.Case):
            if e.operand is not None:
                base = self.eval(e.operand, f)
                for cond, res in e.whens:
                    if self.compare("=", base, self.eval(cond, f), e.operand, cond) is True:
                        return self.eval(res, f)
            else:
                for cond, res in e.whens:
                    if _truthy(self.eval(cond, f), self) is True:
                        return self.eval(res, f)
            return self.eval(e.else_, f) if e.else_ is not None else None
        if isinstance(e, A.Star):
            raise M.syntax_error(self.d, "*", 0, "'*' is only valid in a select list or count(*)")
        raise TypeError(f"cannot evaluate {type(e).__name__}")

    def subquery(self, q: A.Query, f: Frame) -> ResultTable:
        key = id(q)
        if key not in self._correlated:
            hit = self._subquery_cache.get(key)
            if hit is not None:
                return hit
            try:
                res = self.run(q, None)
            except EngineError as exc:
                if exc.cls is not ErrorClass.UNKNOWN_COLUMN:
                    raise
                self._correlated.add(key)
            else:
                self._subquery_cache[key] = res
                return res
        return self.run(q, f)

    # numbers and comparisons

    def to_number(self, v: Any, node: A.Expr | None, op: str) -> int | float:
        if isinstance(v, bool):
            return int(v)
        if isinstance(v, (int, float)):
            return v
        s = str(v)
        if self.d is Dialect.POSTGRES:
            if isinstance(node, A.Lit):
                n = _parse_number(s)
                if n is None:
                    raise M.invalid_input(self.d, "integer", s)
                return n
            raise M.operator_mismatch(self.d, op, "text", "integer")
        if self.d is Dialect.ORACLE:
            n = _parse_number(s)
            if n is None:
                raise M.invalid_input(self.d, "NUMBER", s)
            return n
        return _loose_number(s)

    def compare(self, op: str, a: Any, b: Any, an: A.Expr | None, bn: A.Expr | None):
        if a is None or b is None:
            return None
        if isinstance(a, bool):
            a = int(a)
        if isinstance(b, bool):
            b = int(b)
        a_num = isinstance(a, (int, float))
        b_num = isinstance(b, (int, float))
        if a_num != b_num:
            if self.d is Dialect.POSTGRES:
                if a_num and isinstance(bn, A.Lit):
                    b = self.to_number(b, bn, op)
                elif b_num and isinstance(an, A.Lit):
                    a = self.to_number(a, an, op)
                else:
                    lt = _type_label(a)
                    rt = _type_label(b)
                    raise M.operator_mismatch(self.d, op, lt, rt)
            elif self.d is Dialect.ORACLE:
                a = self.to_number(a, an, op)
                b = self.to_number(b, bn, op)
            elif self.d is Dialect.MYSQL:
                a = a if a_num else _loose_number(a)
                b = b if b_num else _loose_number(b)
            else:
                na = a if a_num else _parse_number(a)
                nb = b if b_num else _parse_number(b)
                if na is None or nb is None:
                    # sqlite storage-class order: numbers sort before text
                    c = -1 if a_num else 1
                    return _cmp_result(op, c)
                a, b = na, nb
        c = (a > b) - (a < b)
        return _cmp_result(op, c)

    def binary(self, e: A.Binary, f: Frame) -> Any:
        op = e.op
        if op == "AND":
            left = _truthy(self.eval(e.left, f), self)
            if left is False:
                return False
            return _and3(left, _truthy(self.eval(e.right, f), self))
        if op == "OR" or (op == "||" and self.d is Dialect.MYSQL):
            left = _truthy(self.eval(e.left, f), self)
            if left is True:
                return True
            right = _truthy(self.eval(e.right, f), self)
            if right is True:
                return True
            return None if (left is None or right is None) else False
        a = self.eval(e.left, f)
        b = self.eval(e.right, f)
        if op in ("=", "<>", "<", ">", "<=", ">="):
            return self.compare(op, a, b, e.left, e.right)
        if op == "||":
            if self.d is Dialect.ORACLE:
                return _text(a if a is not None else "") + _text(b if b is not None else "")
            if a is None or b is None:
                return None
            return _text(a) + _text(b)
        if a is None or b is None:
            return None
        x = self.to_number(a, e.left, op)
        y = self.to_number(b, e.right, op)
        if op == "+":
            return x + y
        if op == "-":
            return x - y
        if op == "*":
            return x * y
        if y == 0:
            if self.d in (Dialect.POSTGRES, Dialect.ORACLE):
                raise M.division_by_zero(self.d)
            return None
        if op == "/":
            if isinstance(x, int) and isinstance(y, int) and self.d in (Dialect.SQLITE, Dialect.POSTGRES):
                q = abs(x) // abs(y)
                return q if (x >= 0) == (y >= 0) else -q
            return x / y
        if op == "%":
            if isinstance(x, int) and isinstance(y, int):
                r = abs(x) % abs(y)
                return r if x >= 0 else -r
            return math.fmod(x, y)
        raise TypeError(f"unknown operator {op}")

    def in_values(self, v: Any, node: A.Expr, candidates: list, negated: bool):
        if v is None:
            return None
        saw_null = False
        for c, cnode in candidates:
            r = self.compare("=", v, c, node, cnode)
            if r is True:
                return not negated
            if r is None:
                saw_null = True
        if saw_null:
            return None
        return negated

    def like(self, e: A.Like, f: Frame):
        v = self.eval(e.expr, f)
        p = self.eval(e.pattern, f)
        if v is None or p is None:
            return None
        if not isinstance(v, str):
            if self.d is Dialect.POSTGRES:
                raise M.operator_mismatch(self.d, "~~", _type_label(v), "unknown")
            v = _text(v)
        ci = e.ilike or self.d in (Dialect.SQLITE, Dialect.MYSQL)
        matched = _like_cache(_text(p), ci).fullmatch(v) is not None
        return matched != e.negated

    def cast(self, v: Any, type_name: str) -> Any:
        if v is None:
            return None
        base = type_name.split("(")[0].strip()
        if isinstance(v, bool):
            v = int(v)
        if base in _INT_TYPES or base in _FLOAT_TYPES:
            want_int = base in _INT_TYPES and not (base == "NUMBER" and "," in type_name)
            if isinstance(v, str):
                n = _parse_number(v)
                if n is None or (want_int and isinstance(n, float) and self.d is Dialect.POSTGRES):
                    if self.d in (Dialect.POSTGRES, Dialect.ORACLE):
                        raise M.invalid_input(self.d, "integer" if want_int else "double precision", v)
                    n = _loose_number(v)
                v = n
            if want_int:
                if isinstance(v, float):
                    if self.d is Dialect.SQLITE:
                        return int(v)
                    return int(_round_half_away(v))
                return int(v)
            return float(v)
        return _text(v)

    # functions

    def func(self, e: A.Func, f: Frame) -> Any:
        if e.over is not None:
            if f.win is None or id(e) not in f.win:
                raise M.unsupported(self.d, "window function outside the select list")
            return f.win[id(e)][f.idx]
        if e.is_aggregate:
            return self.aggregate(e, f)
        name = e.name
        args = [self.eval(a, f) for a in e.args]
        if name in ("lower", "upper"):
            if args[0] is None:
                return None
            s = _text(args[0])
            return s.lower() if name == "lower" else s.upper()
        if name in ("length", "char_length", "len") and (name != "len" or self.d is Dialect.SQLITE):
            return None if args[0] is None else len(_text(args[0]))
        if name == "abs":
            return None if args[0] is None else abs(self.to_number(args[0], e.args[0], "abs"))
        if name == "round":
            if args[0] is None:
                return None
            x = self.to_number(args[0], e.args[0], "round")
            nd = int(args[1]) if len(args) > 1 and args[1] is not None else 0
            r = _round_half_away(float(x), nd)
            return int(r) if nd == 0 and isinstance(x, int) else r
        if name == "coalesce" or (name == "ifnull" and self.d in (Dialect.SQLITE, Dialect.MYSQL)) \
                or (name == "nvl" and self.d is Dialect.ORACLE):
            return next((a for a in args if a is not None), None)
        if name in ("substr", "substring"):
            if args[0] is None:
                return None
            s = _text(args[0])
            start = int(args[1])
            if start > 0:
                start -= 1
            elif start < 0:
                start = max(len(s) + start, 0)
            if len(args) > 2 and args[2] is not None:
                return s[start:start + int(args[2])]
            return s[start:]
        if name == "trim":
            return None if args[0] is None else _text(args[0]).strip()
        if name == "replace":
            if any(a is None for a in args[:3]):
                return None
            return _text(args[0]).replace(_text(args[1]), _text(args[2]))
        if name == "concat" and self.d is not Dialect.SQLITE:
            if self.d is Dialect.MYSQL and any(a is None for a in args):
                return None
            return "".join(_text(a) for a in args if a is not None)
        raise M.unknown_function(self.d, name)

    def aggregate(self, e: A.Func, f: Frame) -> Any:
        if f.group is None:
            raise M.misplaced_aggregate(self.d, "this context")
        if e.filter is not None:
            raise M.unsupported(self.d, "aggregate FILTER clause")
        rows = f.group
        if e.star:
            if e.name != "count":
                raise M.syntax_error(self.d, "*", 0, f"{e.name}(*) is not valid")
            return len(rows)
        if len(e.args) != 1:
            raise M.unknown_function(self.d, e.name)
        values = []
        for row in rows:
            self.tick()
            v = self.eval(e.args[0], Frame(f.cols, row, f.parent))
            if v is not None:
                values.append(v)
        if e.distinct:
            seen = set()
            uniq = []
            for v in values:
                k = _hashable(v)
                if k not in seen:
                    seen.add(k)
                    uniq.append(v)
            values = uniq
        if e.name == "count":
            return len(values)
        if not values:
            return None
        if e.name in ("min", "max"):
            best = values[0]
            for v in values[1:]:
                c = _order_cmp(v, best)
                if (c < 0) if e.name == "min" else (c > 0):
                    best = v
            return best
        if self.d is Dialect.POSTGRES and any(isinstance(v, str) for v in values):
            raise M.function_type_error(self.d, e.name, "text")
        nums = [self.to_number(v, None, e.name) for v in values]
        total = sum(nums)
        if e.name == "sum":
            return total
        return total / len(nums)


# -- helpers -------------------------------------------------------------------


def _col_text(c: A.Col) -> str:
    return f"{c.table}.{c.name}" if c.table else c.name


def _text(v: Any) -> str:
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, float) and v.is_integer():
        return repr(v)
    return str(v)


def _cmp_result(op: str, c: int) -> bool:
    if op == "=":
        return c == 0
    if op == "<>":
        return c != 0
    if op == "<":
        return c < 0
    if op == ">":
        return c > 0
    if op == "<=":
        return c <= 0
    return c >= 0


def _order_cmp(x: Any, y: Any) -> int:
    """Total order for sorting mixed values: numbers before text."""
    if isinstance(x, bool):
        x = int(x)
    if isinstance(y, bool):
        y = int(y)
    xn = isinstance(x, (int, float))
    yn = isinstance(y, (int, float))
    if xn != yn:
        return -1 if xn else 1
    return (x > y) - (x < y)


def _truthy(v: Any, ex: Executor) -> bool | None:
    if v is None:
        return None
    if isinstance(v, bool):
        return v
    if isinstance(v, (int, float)):
        return v != 0
    if ex.d is Dialect.POSTGRES:
        low = str(v).strip().lower()
        if low in ("t", "true", "yes", "on", "1"):
            return True
        if low in ("f", "false", "no", "off", "0"):
            return False
        raise M.invalid_input(ex.d, "boolean", v)
    return _loose_number(str(v)) != 0


def _and3(a: bool | None, b: bool | None) -> bool | None:
    if a is False or b is False:
        return False
    if a is None or b is None:
        return None
    return True


def _distinct(rows: list[tuple]) -> list[tuple]:
    seen = set()
    out = []
    for r in rows:
        k = tuple(map(_hashable, r))
        if k not in seen:
            seen.add(k)
            out.append(r)
    return out


def _multiset(rows: list[tuple]) -> dict:
    pool: dict = {}
    for r in rows:
        k = tuple(map(_hashable, r))
        pool[k] = pool.get(k, 0) + 1
    return pool


def _slice(rows: list, limit: int | None, offset: int | None) -> list:
    start = offset or 0
    if limit is None:
        return rows[start:]
    return rows[start:start + limit]


def execute(ast: A.Query, db: InMemoryDb, mode: DialectMode | Dialect | str,
            *, timeout: float | None = None) -> ResultTable:
    """Run a parsed query. Pure in (ast, db, mode); raises EngineError or QueryTimeout."""
    mode = mode_of(mode)
    deadline = time.monotonic() + timeout if timeout is not None else None
    return Executor(db, mode, deadline).run(ast)


def run_sql(sql: str, db: InMemoryDb, mode: DialectMode | Dialect | str,
            *, timeout: float | None = None) -> ResultTable:
    from .parser import parse_sql
    mode = mode_of(mode)
    return execute(parse_sql(sql, mode), db, mode, timeout=timeout)


def has_top_level_order_by(ast: A.Query) -> bool:
    return bool(ast.order_by)
