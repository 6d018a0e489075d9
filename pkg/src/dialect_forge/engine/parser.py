"""Recursive-descent parser for the SELECT subset, parameterised by dialect mode.

Dialect-forbidden constructs are recorded as violations while parsing
continues, so one pass yields every violation for ``check_conformance``;
``parse_sql`` raises on the first one.
"""

from __future__ import annotations

from dataclasses import dataclass

from ..records import Dialect
from . import ast as A
from . import messages
from .modes import DialectMode, EngineError, ErrorClass, mode_of
from .tokens import T, Token, TokenizeError, tokenize

RESERVED = frozenset("""
SELECT FROM WHERE GROUP BY HAVING ORDER LIMIT OFFSET FETCH JOIN INNER LEFT RIGHT FULL OUTER
CROSS ON AND OR NOT IN IS NULL LIKE ILIKE BETWEEN AS DISTINCT ALL UNION INTERSECT EXCEPT MINUS
CASE WHEN THEN ELSE END EXISTS ASC DESC CAST OVER PARTITION FILTER WINDOW TRUE FALSE USING
NATURAL
""".split())

# Target types each dialect accepts in CAST(... AS type) / ::type.
_CAST_TYPES = {
    Dialect.POSTGRES: {"INTEGER", "INT", "INT4", "INT8", "BIGINT", "SMALLINT", "FLOAT", "FLOAT4", "FLOAT8",
                       "REAL", "DOUBLE PRECISION", "NUMERIC", "DECIMAL", "TEXT", "VARCHAR", "CHAR", "DATE"},
    Dialect.MYSQL: {"SIGNED", "SIGNED INTEGER", "UNSIGNED", "UNSIGNED INTEGER", "DECIMAL", "FLOAT", "DOUBLE",
                    "REAL", "CHAR", "DATE"},
    Dialect.ORACLE: {"NUMBER", "INTEGER", "INT", "FLOAT", "DECIMAL", "NUMERIC", "REAL", "VARCHAR2", "VARCHAR",
                     "CHAR", "DATE", "BINARY_DOUBLE", "BINARY_FLOAT"},
}


@dataclass(frozen=True)
class Violation:
    construct: str
    dialect: Dialect
    start: int
    end: int
    message: str

    @property
    def span(self) -> tuple[int, int]:
        return (self.start, self.end)


class _Parser:
    def __init__(self, sql: str, mode: DialectMode):
        self.sql = sql
        self.mode = mode
        self.d = mode.dialect
        try:
            self.toks = tokenize(sql)
        except TokenizeError as exc:
            raise messages.syntax_error(self.d, sql, exc.pos, str(exc)) from None
        self.i = 0
        self.violations: list[Violation] = []

    # -- token helpers ----------------------------------------------------

    @property
    def tok(self) -> Token:
        return self.toks[self.i]

    def peek(self, k: int = 1) -> Token:
        return self.toks[min(self.i + k, len(self.toks) - 1)]

    def advance(self) -> Token:
        t = self.toks[self.i]
        if t.type is not T.EOF:
            self.i += 1
        return t

    def accept_kw(self, *words: str) -> Token | None:
        if self.tok.is_kw(*words):
            return self.advance()
        return None

    def expect_kw(self, word: str) -> Token:
        if not self.tok.is_kw(word):
            self.error(f"expected {word}")
        return self.advance()

    def accept_op(self, *ops: str) -> Token | None:
        if self.tok.is_op(*ops):
            return self.advance()
        return None

    def expect_op(self, op: str) -> Token:
        if not self.tok.is_op(op):
            self.error(f"expected '{op}'")
        return self.advance()

    def error(self, detail: str):
        raise messages.syntax_error(self.d, self.sql, self.tok.pos, detail)

    def violate(self, construct: str, start: int, end: int, detail: str) -> None:
        err = messages.violation_error(self.d, self.sql, start, construct, detail)
        self.violations.append(Violation(construct, self.d, start, end, err.message))

    # -- identifiers --------------------------------------------------------

    def is_identifier(self, t: Token) -> bool:
        if t.type is T.IDENT:
            return t.value.upper() not in RESERVED
        if t.type is T.QIDENT:
            return self.d is not Dialect.MYSQL
        return t.type is T.BQIDENT

    def identifier(self) -> tuple[str, bool, Token]:
        t = self.tok
        if not self.is_identifier(t):
            self.error("expected identifier")
        self.advance()
        if t.type is T.BQIDENT and self.mode.identifier_quote != "`":
            self.violate("backquote-identifier", t.pos, t.end,
                         f"backquoted identifier `{t.value}` is MySQL syntax, not {self.d.display_name}")
        return t.value, t.type is not T.IDENT, t

    # -- statements ---------------------------------------------------------

    def parse(self) -> A.Query:
        if self.tok.type is T.EOF:
            self.error("empty statement")
        q = self.query()
        self.accept_op(";")
        if self.tok.type is not T.EOF:
            self.error("unexpected token after end of statement")
        return q

    def query(self) -> A.Query:
        left = self.select_core()
        ops = []
        while self.tok.is_kw("UNION", "INTERSECT", "EXCEPT", "MINUS"):
            t = self.advance()
            op = t.value.upper()
            if op == "MINUS":
                if self.d is not Dialect.ORACLE:
                    self.violate("minus", t.pos, t.end, f"MINUS is Oracle syntax, not {self.d.display_name}")
                op = "EXCEPT"
            is_all = bool(self.accept_kw("ALL"))
            ops.append((op, is_all, self.select_core()))
        order_by, limit, offset = self.tail_clauses()
        if not ops:
            if not (order_by or limit is not None or offset is not None):
                return left
            if left.order_by or left.limit is not None or left.offset is not None:
                self.error("duplicate ORDER BY/LIMIT clause")
            return A.Select(left.items, left.from_, left.where, left.group_by, left.having,
                            order_by, limit, offset, left.distinct)
        node: A.Query = left
        for op, is_all, right in ops:
            node = A.Compound(op, is_all, node, right)
        return A.Compound(node.op, node.all, node.left, node.right, order_by, limit, offset)

    def select_core(self) -> A.Select:
        if self.accept_op("("):
            inner = self.query()
            self.expect_op(")")
            if isinstance(inner, A.Select):
                return inner
            self.error("parenthesised compound query not supported here")
        start = self.expect_kw("SELECT")
        distinct = False
        if self.accept_kw("DISTINCT"):
            distinct = True
        else:
            self.accept_kw("ALL")
        items = [self.select_item()]
        while self.accept_op(","):
            items.append(self.select_item())
        from_: list[A.Source] = []
        if self.accept_kw("FROM"):
            from_.append(self.source())
            while self.accept_op(","):
                from_.append(self.source())
        elif self.d is Dialect.ORACLE:
            self.violate("missing-from", start.pos, self.tok.pos,
                         "Oracle requires a FROM clause (use FROM dual)")
        where = self.expr() if self.accept_kw("WHERE") else None
        group_by: list[A.Expr] = []
        if self.accept_kw("GROUP"):
            self.expect_kw("BY")
            group_by.append(self.expr())
            while self.accept_op(","):
                group_by.append(self.expr())
        having = self.expr() if self.accept_kw("HAVING") else None
        return A.Select(tuple(items), tuple(from_), where, tuple(group_by), having, distinct=distinct)

    def tail_clauses(self):
        order_by: list[A.OrderItem] = []
        if self.accept_kw("ORDER"):
            self.expect_kw("BY")
            order_by = self.order_items()
        limit = offset = None
        t = self.tok
        if self.accept_kw("LIMIT"):
            if self.mode.limit_style != "limit":
                self.violate("limit", t.pos, t.end,
                             f"LIMIT is not {self.d.display_name} syntax; use FETCH FIRST n ROWS ONLY")
            first = self.int_literal()
            if self.accept_op(","):
                if self.d not in (Dialect.MYSQL, Dialect.SQLITE):
                    self.violate("limit-comma", t.pos, self.tok.end,
                                 f"LIMIT offset, count is not {self.d.display_name} syntax")
                offset, limit = first, self.int_literal()
            else:
                limit = first
                if self.accept_kw("OFFSET"):
                    offset = self.int_literal()
            return tuple(order_by), limit, offset
        if self.accept_kw("OFFSET"):
            offset = self.int_literal()
            rows = self.accept_kw("ROWS", "ROW")
            if self.d is Dialect.ORACLE and rows is None:
                self.violate("offset-rows", t.pos, self.tok.pos, "Oracle requires OFFSET n ROWS")
            if self.d in (Dialect.MYSQL, Dialect.SQLITE):
                self.violate("offset-without-limit", t.pos, self.tok.pos,
                             f"{self.d.display_name} only accepts OFFSET after LIMIT")
        ft = self.tok
        if self.accept_kw("FETCH"):
            if self.d not in (Dialect.ORACLE, Dialect.POSTGRES):
                self.violate("fetch-first", ft.pos, ft.end,
                             f"FETCH FIRST is not {self.d.display_name} syntax; use LIMIT")
            if not self.accept_kw("FIRST"):
                self.expect_kw("NEXT")
            limit = self.int_literal()
            if not self.accept_kw("ROWS"):
                self.expect_kw("ROW")
            self.expect_kw("ONLY")
        return tuple(order_by), limit, offset

    def int_literal(self) -> int:
        t = self.tok
        if t.type is not T.NUMBER or not t.value.isdigit():
            self.error("expected integer literal")
        self.advance()
        return int(t.value)

    def order_items(self) -> list[A.OrderItem]:
        items = []
        while True:
            e = self.expr()
            desc = False
            if self.accept_kw("DESC"):
                desc = True
            else:
                self.accept_kw("ASC")
            items.append(A.OrderItem(e, desc))
            if not self.accept_op(","):
                return items

    def select_item(self) -> A.SelectItem:
        t = self.tok
        if t.is_op("*"):
            self.advance()
            return A.SelectItem(A.Star())
        if self.is_identifier(t) and self.peek().is_op(".") and self.peek(2).is_op("*"):
            name, _, _ = self.identifier()
            self.advance()
            self.advance()
            return A.SelectItem(A.Star(name))
        e = self.expr()
        alias = self.alias_opt()
        return A.SelectItem(e, alias)

    def alias_opt(self, *, table: bool = False) -> str | None:
        t = self.tok
        if self.accept_kw("AS"):
            if table and self.d is Dialect.ORACLE:
                self.violate("table-alias-as", t.pos, t.end, "Oracle does not allow AS before a table alias")
            if self.tok.type is T.STRING and not table:
                return self.advance().value
            name, _, _ = self.identifier()
            return name
        if self.is_identifier(self.tok):
            name, _, _ = self.identifier()
            return name
        return None

    # -- FROM clause --------------------------------------------------------

    def source(self) -> A.Source:
        left = self.source_primary()
        while True:
            t = self.tok
            kind = None
            if self.accept_kw("JOIN"):
                kind = "INNER"
            elif self.accept_kw("INNER"):
                self.expect_kw("JOIN")
                kind = "INNER"
            elif self.tok.is_kw("LEFT", "RIGHT", "FULL"):
                kind = self.advance().value.upper()
                self.accept_kw("OUTER")
                self.expect_kw("JOIN")
            elif self.accept_kw("CROSS"):
                self.expect_kw("JOIN")
                kind = "CROSS"
            elif self.tok.is_kw("NATURAL"):
                self.error("NATURAL JOIN is not supported; spell out the ON condition")
            if kind is None:
                return left
            right = self.source_primary()
            on = None
            if kind != "CROSS":
                if self.tok.is_kw("USING"):
                    self.error("JOIN ... USING is not supported; use an explicit ON condition")
                if not self.accept_kw("ON"):
                    raise messages.syntax_error(self.d, self.sql, self.tok.pos,
                                                f"{kind} JOIN at offset {t.pos} requires an explicit ON condition")
                on = self.expr()
            left = A.Join(left, kind, right, on)

    def source_primary(self) -> A.Source:
        if self.tok.is_op("("):
            start = self.tok
            self.advance()
            if self.tok.is_kw("SELECT") or self.tok.is_op("("):
                q = self.query()
                self.expect_op(")")
                alias = self.alias_opt(table=True)
                if alias is None and self.d in (Dialect.MYSQL, Dialect.POSTGRES):
                    self.violate("derived-table-alias", start.pos, self.tok.pos,
                                 f"{self.d.display_name} requires an alias for a subquery in FROM")
                return A.Derived(q, alias)
            inner = self.source()
            self.expect_op(")")
            return inner
        name, quoted, t = self.identifier()
        if self.accept_op("."):
            # schema-qualified name; keep only the table part
            name, quoted, t = self.identifier()
        alias = self.alias_opt(table=True)
        return A.TableRef(name, alias, quoted, t.pos)

    # -- expressions --------------------------------------------------------

    def expr(self) -> A.Expr:
        return self.or_expr()

    def or_expr(self) -> A.Expr:
        e = self.and_expr()
        while self.accept_kw("OR"):
            e = A.Binary("OR", e, self.and_expr())
        return e

    def and_expr(self) -> A.Expr:
        e = self.not_expr()
        while self.accept_kw("AND"):
            e = A.Binary("AND", e, self.not_expr())
        return e

    def not_expr(self) -> A.Expr:
        if self.accept_kw("NOT"):
            return A.Unary("NOT", self.not_expr())
        return self.predicate()

    def predicate(self) -> A.Expr:
        if self.tok.is_kw("EXISTS"):
            self.advance()
            return A.Exists(self.paren_query())
        e = self.concat_expr()
        while True:
            t = self.tok
            if t.is_op("=", "<>", "!=", "<", ">", "<=", ">=", "=="):
                self.advance()
                op = t.value
                if op == "==":
                    if self.d is not Dialect.SQLITE:
                        self.violate("double-equals", t.pos, t.end,
                                     f"'==' is SQLite syntax, not {self.d.display_name}")
                    op = "="
                elif op == "!=":
                    op = "<>"
                e = A.Binary(op, e, self.concat_expr())
                continue
            if t.is_kw("IS"):
                self.advance()
                neg = bool(self.accept_kw("NOT"))
                self.expect_kw("NULL")
                e = A.IsNull(e, neg)
                continue
            negated = False
            if t.is_kw("NOT") and self.peek().is_kw("LIKE", "ILIKE", "IN", "BETWEEN"):
                self.advance()
                negated = True
                t = self.tok
            if t.is_kw("LIKE", "ILIKE"):
                self.advance()
                ilike = t.value.upper() == "ILIKE"
                if ilike and not self.mode.allow_ilike:
                    self.violate("ilike", t.pos, t.end,
                                 f"ILIKE is PostgreSQL syntax, not {self.d.display_name}")
                e = A.Like(e, self.concat_expr(), negated, ilike)
                continue
            if t.is_kw("IN"):
                self.advance()
                self.expect_op("(")
                if self.tok.is_kw("SELECT"):
                    q = self.query()
                    self.expect_op(")")
                    if self.d is Dialect.MYSQL and _has_limit(q):
                        self.violate("limit-in-subquery", t.pos, self.toks[self.i - 1].end,
                                     "MySQL does not support LIMIT inside an IN subquery")
                    e = A.InQuery(e, q, negated)
                else:
                    items = [self.expr()]
                    while self.accept_op(","):
                        items.append(self.expr())
                    self.expect_op(")")
                    e = A.InList(e, tuple(items), negated)
                continue
            if t.is_kw("BETWEEN"):
                self.advance()
                low = self.concat_expr()
                self.expect_kw("AND")
                high = self.concat_expr()
                e = A.Between(e, low, high, negated)
                continue
            if negated:
                self.error("expected LIKE, IN or BETWEEN after NOT")
            return e

    def concat_expr(self) -> A.Expr:
        e = self.additive()
        while self.tok.is_op("||"):
            self.advance()
            e = A.Binary("||", e, self.additive())
        return e

    def additive(self) -> A.Expr:
        e = self.multiplicative()
        while self.tok.is_op("+", "-"):
            op = self.advance().value
            e = A.Binary(op, e, self.multiplicative())
        return e

    def multiplicative(self) -> A.Expr:
        e = self.unary()
        while self.tok.is_op("*", "/", "%"):
            op = self.advance().value
            e = A.Binary(op, e, self.unary())
        return e

    def unary(self) -> A.Expr:
        if self.tok.is_op("-", "+"):
            op = self.advance().value
            operand = self.unary()
            if op == "-" and isinstance(operand, A.Lit) and type(operand.value) in (int, float):
                return A.Lit(-operand.value)
            if op == "+" and isinstance(operand, A.Lit) and type(operand.value) in (int, float):
                return operand
            return A.Unary(op, operand)
        return self.postfix()

    def postfix(self) -> A.Expr:
        e = self.primary()
        while self.tok.is_op("::"):
            t = self.advance()
            if not self.mode.allow_double_colon_cast:
                self.violate("double-colon-cast", t.pos, t.end,
                             f"'::' cast is PostgreSQL syntax, not {self.d.display_name}")
            type_name = self.type_name(colon=True)
            e = A.Cast(e, type_name, colon=True)
        return e

    def type_name(self, *, colon: bool = False) -> str:
        t = self.tok
        if t.type is not T.IDENT:
            self.error("expected type name")
        words = [self.advance().value.upper()]
        if self.tok.type is T.IDENT and (words[0], self.tok.value.upper()) in (
                ("DOUBLE", "PRECISION"), ("SIGNED", "INTEGER"), ("UNSIGNED", "INTEGER")):
            words.append(self.advance().value.upper())
        base = " ".join(words)
        name = base
        if self.accept_op("("):
            args = [str(self.int_literal())]
            while self.accept_op(","):
                args.append(str(self.int_literal()))
            self.expect_op(")")
            name = f"{base}({','.join(args)})"
        allowed = _CAST_TYPES.get(self.d)
        if allowed is not None and base not in allowed and not (colon and self.d is not Dialect.POSTGRES):
            self.violate("cast-type", t.pos, self.toks[self.i - 1].end,
                         f"{base} is not a valid {self.d.display_name} cast target")
        return name

    def paren_query(self) -> A.Query:
        self.expect_op("(")
        q = self.query()
        self.expect_op(")")
        return q

    def primary(self) -> A.Expr:
        t = self.tok
        if t.type is T.NUMBER:
            self.advance()
            v = t.value
            if v.isdigit():
                return A.Lit(int(v))
            return A.Lit(float(v))
        if t.type is T.STRING:
            self.advance()
            return A.Lit(t.value)
        if t.type is T.QIDENT and self.d is Dialect.MYSQL:
            # MySQL reads "x" as a string literal unless ANSI_QUOTES is set
            self.advance()
            return A.Lit(t.value)
        if t.is_kw("NULL"):
            self.advance()
            return A.Lit(None)
        if t.is_kw("TRUE", "FALSE"):
            self.advance()
            return A.Lit(t.value.upper() == "TRUE")
        if t.is_op("("):
            self.advance()
            if self.tok.is_kw("SELECT"):
                q = self.query()
                self.expect_op(")")
                return A.ScalarQuery(q)
            e = self.expr()
            self.expect_op(")")
            return e
        if t.is_kw("CASE"):
            return self.case_expr()
        if t.is_kw("CAST") and self.peek().is_op("("):
            self.advance()
            self.advance()
            e = self.expr()
            self.expect_kw("AS")
            type_name = self.type_name()
            self.expect_op(")")
            return A.Cast(e, type_name)
        if t.is_op("*"):
            self.error("unexpected '*'")
        if t.type is T.IDENT and self.peek().is_op("(") and t.value.upper() not in RESERVED:
            return self.function_call()
        if self.is_identifier(t):
            name, quoted, tok = self.identifier()
            if self.accept_op("."):
                col, cquoted, ctok = self.identifier()
                return A.Col(col, name, cquoted, tok.pos)
            return A.Col(name, None, quoted, tok.pos)
        self.error("expected expression")

    def case_expr(self) -> A.Expr:
        self.expect_kw("CASE")
        operand = None
        if not self.tok.is_kw("WHEN"):
            operand = self.expr()
        whens = []
        while self.accept_kw("WHEN"):
            cond = self.expr()
            self.expect_kw("THEN")
            whens.append((cond, self.expr()))
        if not whens:
            self.error("CASE requires at least one WHEN")
        else_ = self.expr() if self.accept_kw("ELSE") else None
        self.expect_kw("END")
        return A.Case(operand, tuple(whens), else_)

    def function_call(self) -> A.Expr:
        name = self.advance().value.lower()
        self.expect_op("(")
        distinct = star = False
        args: list[A.Expr] = []
        if self.accept_op("*"):
            star = True
        elif not self.tok.is_op(")"):
            if self.accept_kw("DISTINCT"):
                distinct = True
            args.append(self.expr())
            while self.accept_op(","):
                args.append(self.expr())
        self.expect_op(")")
        filt = None
        ft = self.tok
        if self.accept_kw("FILTER"):
            if self.d not in (Dialect.POSTGRES, Dialect.SQLITE):
                self.violate("filter-clause", ft.pos, ft.end,
                             f"aggregate FILTER clause is not {self.d.display_name} syntax")
            self.expect_op("(")
            self.expect_kw("WHERE")
            filt = self.expr()
            self.expect_op(")")
        over = None
        if self.accept_kw("OVER"):
            self.expect_op("(")
            partition: list[A.Expr] = []
            order: list[A.OrderItem] = []
            if self.accept_kw("PARTITION"):
                self.expect_kw("BY")
                partition.append(self.expr())
                while self.accept_op(","):
                    partition.append(self.expr())
            if self.accept_kw("ORDER"):
                self.expect_kw("BY")
                order = self.order_items()
            self.expect_op(")")
            over = A.Over(tuple(partition), tuple(order))
        return A.Func(name, tuple(args), distinct, star, filt, over)


def _has_limit(q: A.Query) -> bool:
    return q.limit is not None or q.offset is not None


def _check_distinct_order_by(p: _Parser, q: A.Query) -> None:
    """PostgreSQL: with SELECT DISTINCT every ORDER BY expression must be selected."""
    for node in A.walk(q, into_queries=True):
        if not isinstance(node, A.Select) or not node.distinct or not node.order_by:
            continue
        exprs = {item.expr for item in node.items}
        aliases = {item.alias.lower() for item in node.items if item.alias}
        for o in node.order_by:
            e = o.expr
            if e in exprs or isinstance(e, A.Lit):
                continue
            if isinstance(e, A.Col) and e.table is None and e.name.lower() in aliases:
                continue
            if isinstance(e, A.Col) and any(isinstance(x, A.Col) and x.name.lower() == e.name.lower()
                                            and (e.table is None or x.table is None
                                                 or x.table.lower() == e.table.lower()) for x in exprs):
                continue
            pos = e.pos if isinstance(e, A.Col) else -1
            p.violate("distinct-order-by", pos, pos, "for SELECT DISTINCT, ORDER BY expressions must appear in select list")


def _parse(sql: str, mode: DialectMode) -> tuple[A.Query, list[Violation]]:
    p = _Parser(sql, mode)
    q = p.parse()
    if mode.dialect is Dialect.POSTGRES:
        _check_distinct_order_by(p, q)
    p.violations.sort(key=lambda v: v.start)
    return q, p.violations


def parse_sql(text: str, mode: DialectMode | Dialect | str) -> A.Query:
    """Parse ``text`` under ``mode``; raise EngineError on syntax or dialect violations."""
    mode = mode_of(mode)
    q, violations = _parse(text, mode)
    if violations:
        v = violations[0]
        raise EngineError(ErrorClass.DIALECT_VIOLATION, v.message, v.start, v.construct)
    return q


def check_conformance(sql: str, mode: DialectMode | Dialect | str) -> list[Violation]:
    """All dialect violations in ``sql``; a syntax error is reported as a single
    ``syntax`` violation. Never executes anything."""
    mode = mode_of(mode)
    try:
        _, violations = _parse(sql, mode)
    except EngineError as exc:
        pos = exc.position if exc.position is not None else 0
        return [Violation("syntax", mode.dialect, pos, pos, exc.message)]
    return violations
