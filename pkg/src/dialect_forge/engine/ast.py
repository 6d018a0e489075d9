"""Immutable syntax tree for the supported SELECT subset.

Nodes are frozen dataclasses so trees compare structurally; quoting style is
kept for printing but excluded from equality.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Union

AGGREGATES = frozenset({"count", "sum", "avg", "min", "max"})
WINDOW_FUNCS = frozenset({"row_number", "rank"})


class Expr:
    __slots__ = ()


@dataclass(frozen=True)
class Lit(Expr):
    value: object  # int | float | str | bool | None


@dataclass(frozen=True)
class Col(Expr):
    name: str
    table: Optional[str] = None
    quoted: bool = field(default=False, compare=False)
    pos: int = field(default=-1, compare=False)


@dataclass(frozen=True)
class Star(Expr):
    table: Optional[str] = None


@dataclass(frozen=True)
class Unary(Expr):
    op: str  # "-", "+", "NOT"
    operand: Expr


@dataclass(frozen=True)
class Binary(Expr):
    op: str  # arithmetic, comparison, "AND", "OR", "||"
    left: Expr
    right: Expr


@dataclass(frozen=True)
class Like(Expr):
    expr: Expr
    pattern: Expr
    negated: bool = False
    ilike: bool = False


@dataclass(frozen=True)
class InList(Expr):
    expr: Expr
    items: tuple[Expr, ...]
    negated: bool = False


@dataclass(frozen=True)
class InQuery(Expr):
    expr: Expr
    query: "Query"
    negated: bool = False


@dataclass(frozen=True)
class Between(Expr):
    expr: Expr
    low: Expr
    high: Expr
    negated: bool = False


@dataclass(frozen=True)
class IsNull(Expr):
    expr: Expr
    negated: bool = False


@dataclass(frozen=True)
class Exists(Expr):
    query: "Query"
    negated: bool = False


@dataclass(frozen=True)
class ScalarQuery(Expr):
    query: "Query"


@dataclass(frozen=True)
class Cast(Expr):
    expr: Expr
    type_name: str  # upper-cased, e.g. "INTEGER", "DOUBLE PRECISION", "VARCHAR(20)"
    colon: bool = False  # written as expr::TYPE


@dataclass(frozen=True)
class OrderItem:
    expr: Expr
    desc: bool = False


@dataclass(frozen=True)
class Over:
    partition_by: tuple[Expr, ...] = ()
    order_by: tuple[OrderItem, ...] = ()


@dataclass(frozen=True)
class Func(Expr):
    name: str  # lower-cased
    args: tuple[Expr, ...] = ()
    distinct: bool = False
    star: bool = False  # count(*)
    filter: Optional[Expr] = None
    over: Optional[Over] = None

    @property
    def is_aggregate(self) -> bool:
        return self.name in AGGREGATES and self.over is None


@dataclass(frozen=True)
class Case(Expr):
    operand: Optional[Expr]
    whens: tuple[tuple[Expr, Expr], ...]
    else_: Optional[Expr] = None


@dataclass(frozen=True)
class SelectItem:
    expr: Expr
    alias: Optional[str] = None


@dataclass(frozen=True)
class TableRef:
    name: str
    alias: Optional[str] = None
    quoted: bool = field(default=False, compare=False)
    pos: int = field(default=-1, compare=False)

    @property
    def binding(self) -> str:
        return self.alias or self.name


@dataclass(frozen=True)
class Derived:
    query: "Query"
    alias: Optional[str] = None


@dataclass(frozen=True)
class Join:
    left: "Source"
    kind: str  # "INNER", "LEFT", "RIGHT", "FULL", "CROSS"
    right: "Source"
    on: Optional[Expr] = None


Source = Union[TableRef, Derived, Join]


@dataclass(frozen=True)
class Select:
    items: tuple[SelectItem, ...]
    from_: tuple[Source, ...] = ()
    where: Optional[Expr] = None
    group_by: tuple[Expr, ...] = ()
    having: Optional[Expr] = None
    order_by: tuple[OrderItem, ...] = ()
    limit: Optional[int] = None
    offset: Optional[int] = None
    distinct: bool = False


@dataclass(frozen=True)
class Compound:
    op: str  # "UNION", "INTERSECT", "EXCEPT"
    all: bool
    left: "Query"
    right: "Query"
    order_by: tuple[OrderItem, ...] = ()
    limit: Optional[int] = None
    offset: Optional[int] = None


Query = Union[Select, Compound]
SqlAst = Query


def walk(node, *, into_queries: bool = False):
    """Yield ``node`` and its descendants (expressions, items, sources).

    Subqueries are opaque unless ``into_queries`` is set.
    """
    stack = [node]
    while stack:
        n = stack.pop()
        if n is None:
            continue
        yield n
        if isinstance(n, (Select, Compound)) and n is not node and not into_queries:
            continue
        if isinstance(n, (InQuery, Exists, ScalarQuery, Derived)) and not into_queries:
            if isinstance(n, InQuery):
                stack.append(n.expr)
            continue
        stack.extend(reversed(list(_children(n))))


def _children(n):
    if isinstance(n, Unary):
        yield n.operand
    elif isinstance(n, Binary):
        yield n.left
        yield n.right
    elif isinstance(n, Like):
        yield n.expr
        yield n.pattern
    elif isinstance(n, InList):
        yield n.expr
        yield from n.items
    elif isinstance(n, InQuery):
        yield n.expr
        yield n.query
    elif isinstance(n, Between):
        yield n.expr
        yield n.low
        yield n.high
    elif isinstance(n, IsNull):
        yield n.expr
    elif isinstance(n, (Exists, ScalarQuery, Derived)):
        yield n.query
    elif isinstance(n, Cast):
        yield n.expr
    elif isinstance(n, Func):
        yield from n.args
        if n.filter is not None:
            yield n.filter
        if n.over is not None:
            yield from n.over.partition_by
            for o in n.over.order_by:
                yield o.expr
    elif isinstance(n, Case):
        if n.operand is not None:
            yield n.operand
        for cond, res in n.whens:
            yield cond
            yield res
        if n.else_ is not None:
            yield n.else_
    elif isinstance(n, OrderItem):
        yield n.expr
    elif isinstance(n, SelectItem):
        yield n.expr
    elif isinstance(n, Join):
        yield n.left
        yield n.right
        if n.on is not None:
            yield n.on
    elif isinstance(n, Select):
        yield from n.items
        yield from n.from_
        yield n.where
        yield from n.group_by
        yield n.having
        yield from n.order_by
    elif isinstance(n, Compound):
        yield n.left
        yield n.right
        yield from n.order_by


def contains_aggregate(expr) -> bool:
    """True if ``expr`` holds a non-window aggregate outside any subquery."""
    return any(isinstance(n, Func) and n.is_aggregate for n in walk(expr))


def contains_window(expr) -> bool:
    return any(isinstance(n, Func) and n.over is not None for n in walk(expr))
