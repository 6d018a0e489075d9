"""Render a syntax tree back to SQL text in a given dialect."""

from __future__ import annotations

import re

from ..records import Dialect
from . import ast as A
from .modes import DialectMode, mode_of
from .parser import RESERVED

_SIMPLE_IDENT = re.compile(r"^[A-Za-z_][A-Za-z0-9_$]*$")

_ATOMIC = (A.Lit, A.Col, A.Star, A.Func, A.Cast, A.ScalarQuery, A.Case, A.Exists)


class _Printer:
    def __init__(self, mode: DialectMode):
        self.mode = mode
        self.d = mode.dialect
        self.q = mode.identifier_quote

    def ident(self, name: str, quoted: bool = False) -> str:
        if quoted or not _SIMPLE_IDENT.match(name) or name.upper() in RESERVED:
            return f"{self.q}{name.replace(self.q, self.q * 2)}{self.q}"
        return name

    def lit(self, v: object) -> str:
        if v is None:
            return "NULL"
        if isinstance(v, bool):
            return "TRUE" if v else "FALSE"
        if isinstance(v, int):
            return str(v)
        if isinstance(v, float):
            return repr(v)
        return "'" + str(v).replace("'", "''") + "'"

    def operand(self, e: A.Expr) -> str:
        text = self.expr(e)
        if isinstance(e, _ATOMIC):
            return text
        return f"({text})"

    def expr(self, e: A.Expr) -> str:
        if isinstance(e, A.Lit):
            return self.lit(e.value)
        if isinstance(e, A.Col):
            col = self.ident(e.name, e.quoted)
            return f"{self.ident(e.table)}.{col}" if e.table else col
        if isinstance(e, A.Star):
            return f"{self.ident(e.table)}.*" if e.table else "*"
        if isinstance(e, A.Unary):
            if e.op == "NOT":
                return f"NOT {self.operand(e.operand)}"
            inner = self.operand(e.operand)
            if inner.startswith(("-", "+")):
                inner = f"({inner})"
            return f"{e.op}{inner}"
        if isinstance(e, A.Binary):
            return f"{self.operand(e.left)} {e.op} {self.operand(e.right)}"
        if isinstance(e, A.Like):
            kw = "ILIKE" if e.ilike else "LIKE"
            neg = "NOT " if e.negated else ""
            return f"{self.operand(e.expr)} {neg}{kw} {self.operand(e.pattern)}"
        if isinstance(e, A.InList):
            neg = "NOT " if e.negated else ""
            items = ", ".join(self.expr(i) for i in e.items)
            return f"{self.operand(e.expr)} {neg}IN ({items})"
        if isinstance(e, A.InQuery):
            neg = "NOT " if e.negated else ""
            return f"{self.operand(e.expr)} {neg}IN ({self.query(e.query)})"
        if isinstance(e, A.Between):
            neg = "NOT " if e.negated else ""
            return f"{self.operand(e.expr)} {neg}BETWEEN {self.operand(e.low)} AND {self.operand(e.high)}"
        if isinstance(e, A.IsNull):
            return f"{self.operand(e.expr)} IS {'NOT ' if e.negated else ''}NULL"
        if isinstance(e, A.Exists):
            return f"{'NOT ' if e.negated else ''}EXISTS ({self.query(e.query)})"
        if isinstance(e, A.ScalarQuery):
            return f"({self.query(e.query)})"
        if isinstance(e, A.Cast):
            if e.colon and self.mode.allow_double_colon_cast:
                return f"{self.operand(e.expr)}::{e.type_name}"
            return f"CAST({self.expr(e.expr)} AS {e.type_name})"
        if isinstance(e, A.Func):
            if e.star:
                inner = "*"
            else:
                inner = ("DISTINCT " if e.distinct else "") + ", ".join(self.expr(a) for a in e.args)
            text = f"{e.name}({inner})"
            if e.filter is not None:
                text += f" FILTER (WHERE {self.expr(e.filter)})"
            if e.over is not None:
                parts = []
                if e.over.partition_by:
                    parts.append("PARTITION BY " + ", ".join(self.expr(p) for p in e.over.partition_by))
                if e.over.order_by:
                    parts.append("ORDER BY " + self.order(e.over.order_by))
                text += f" OVER ({' '.join(parts)})"
            return text
        if isinstance(e, A.Case):
            parts = ["CASE"]
            if e.operand is not None:
                parts.append(self.expr(e.operand))
            for cond, res in e.whens:
                parts.append(f"WHEN {self.expr(cond)} THEN {self.expr(res)}")
            if e.else_ is not None:
                parts.append(f"ELSE {self.expr(e.else_)}")
            parts.append("END")
            return " ".join(parts)
        raise TypeError(f"cannot print {type(e).__name__}")

    def order(self, items) -> str:
        return ", ".join(self.expr(o.expr) + (" DESC" if o.desc else "") for o in items)

    def source(self, s: A.Source) -> str:
        as_kw = " " if self.d is Dialect.ORACLE else " AS "
        if isinstance(s, A.TableRef):
            text = self.ident(s.name, s.quoted)
            return text + (f"{as_kw}{self.ident(s.alias)}" if s.alias else "")
        if isinstance(s, A.Derived):
            text = f"({self.query(s.query)})"
            return text + (f"{as_kw}{self.ident(s.alias)}" if s.alias else "")
        if isinstance(s, A.Join):
            right = self.source(s.right)
            if isinstance(s.right, A.Join):
                right = f"({right})"
            kw = "JOIN" if s.kind == "INNER" else f"{s.kind} JOIN"
            text = f"{self.source(s.left)} {kw} {right}"
            if s.on is not None:
                text += f" ON {self.expr(s.on)}"
            return text
        raise TypeError(f"cannot print {type(s).__name__}")

    def tail(self, q) -> list[str]:
        parts = []
        if q.order_by:
            parts.append("ORDER BY " + self.order(q.order_by))
        if self.mode.limit_style == "fetch-first":
            if q.offset is not None:
                parts.append(f"OFFSET {q.offset} ROWS")
            if q.limit is not None:
                parts.append(f"FETCH FIRST {q.limit} ROWS ONLY")
        else:
            if q.limit is not None:
                parts.append(f"LIMIT {q.limit}")
                if q.offset is not None:
                    parts.append(f"OFFSET {q.offset}")
            elif q.offset is not None:
                if self.d is Dialect.POSTGRES:
                    parts.append(f"OFFSET {q.offset}")
                else:
                    # LIMIT -1 / huge limit idiom for engines without bare OFFSET
                    parts.append(f"LIMIT {2**63 - 1} OFFSET {q.offset}")
        return parts

    def query(self, q: A.Query) -> str:
        if isinstance(q, A.Compound):
            left = self.query(q.left) if isinstance(q.left, A.Compound) else self.select_body(q.left, paren=True)
            right = self.select_body(q.right, paren=True)
            op = q.op + (" ALL" if q.all else "")
            if q.op == "EXCEPT" and self.d is Dialect.ORACLE:
                op = "MINUS" + (" ALL" if q.all else "")
            return " ".join([f"{left} {op} {right}", *self.tail(q)]).strip()
        return self.select_body(q)

    def select_body(self, s: A.Select, paren: bool = False) -> str:
        parts = ["SELECT"]
        if s.distinct:
            parts.append("DISTINCT")
        items = []
        for it in s.items:
            text = self.expr(it.expr)
            if it.alias:
                text += f" AS {self.ident(it.alias)}"
            items.append(text)
        parts.append(", ".join(items))
        if s.from_:
            parts.append("FROM " + ", ".join(self.source(f) for f in s.from_))
        elif self.d is Dialect.ORACLE:
            parts.append("FROM dual")
        if s.where is not None:
            parts.append("WHERE " + self.expr(s.where))
        if s.group_by:
            parts.append("GROUP BY " + ", ".join(self.expr(g) for g in s.group_by))
        if s.having is not None:
            parts.append("HAVING " + self.expr(s.having))
        tail = self.tail(s)
        text = " ".join(parts + tail)
        if paren and tail:
            return f"({text})"
        return text


def to_sql(node: A.Query | A.Expr, mode: DialectMode | Dialect | str = Dialect.SQLITE) -> str:
    p = _Printer(mode_of(mode))
    if isinstance(node, (A.Select, A.Compound)):
        return p.query(node)
    return p.expr(node)
