"""Server-style diagnostic text for each dialect.

The wording follows what the real engines print so that feedback prompts look
the same whether the embedded engine or a live server produced them, and so
that ``classify_error`` handles both with one pattern table.
"""

from __future__ import annotations

from ..records import Dialect
from .modes import EngineError, ErrorClass


def _snippet(sql: str, pos: int | None, width: int = 40) -> str:
    if pos is None or pos < 0:
        return ""
    return sql[pos:pos + width]


def syntax_error(dialect: Dialect, sql: str, pos: int | None, detail: str) -> EngineError:
    near = _snippet(sql, pos)
    if dialect is Dialect.MYSQL:
        msg = ("Error 1064 (42000): You have an error in your SQL syntax; check the manual that "
               f"corresponds to your MySQL server version for the right syntax to use near '{near}' at line 1")
    elif dialect is Dialect.POSTGRES:
        tok = near.split()[0] if near.split() else "end of input"
        msg = f'ERROR:  syntax error at or near "{tok}"'
    elif dialect is Dialect.ORACLE:
        msg = "ORA-00933: SQL command not properly ended"
    else:
        tok = near.split()[0] if near.split() else "end of input"
        msg = f'near "{tok}": syntax error'
    return EngineError(ErrorClass.PARSE, f"{msg} ({detail})", pos)


def violation_error(dialect: Dialect, sql: str, pos: int | None, construct: str, detail: str) -> EngineError:
    if construct == "limit-in-subquery" and dialect is Dialect.MYSQL:
        msg = "Error 1235 (42000): This version of MySQL doesn't yet support 'LIMIT & IN/ALL/ANY/SOME subquery'"
    elif construct == "derived-table-alias" and dialect is Dialect.MYSQL:
        msg = "Error 1248 (42000): Every derived table must have its own alias"
    elif construct == "distinct-order-by" and dialect is Dialect.POSTGRES:
        msg = "ERROR:  for SELECT DISTINCT, ORDER BY expressions must appear in select list"
    elif construct == "missing-from" and dialect is Dialect.ORACLE:
        msg = "ORA-00923: FROM keyword not found where expected"
    else:
        msg = syntax_error(dialect, sql, pos, detail).message.rsplit(" (", 1)[0]
    err = EngineError(ErrorClass.DIALECT_VIOLATION,
                      f"{msg} [dialect violation: {detail}]", pos, construct)
    return err


def unknown_table(dialect: Dialect, name: str, db_id: str = "db") -> EngineError:
    if dialect is Dialect.MYSQL:
        msg = f"Error 1146 (42S02): Table '{db_id}.{name}' doesn't exist"
    elif dialect is Dialect.POSTGRES:
        msg = f'ERROR:  relation "{name}" does not exist'
    elif dialect is Dialect.ORACLE:
        msg = "ORA-00942: table or view does not exist"
    else:
        msg = f"no such table: {name}"
    return EngineError(ErrorClass.UNKNOWN_RELATION, msg)


def unknown_column(dialect: Dialect, name: str, table: str | None = None, clause: str = "field list") -> EngineError:
    full = f"{table}.{name}" if table else name
    if table is not None and dialect is Dialect.POSTGRES:
        return EngineError(ErrorClass.UNKNOWN_COLUMN, f'ERROR:  missing FROM-clause entry for table "{table}"')
    if dialect is Dialect.MYSQL:
        msg = f"Error 1054 (42S22): Unknown column '{full}' in '{clause}'"
    elif dialect is Dialect.POSTGRES:
        msg = f'ERROR:  column "{name}" does not exist'
    elif dialect is Dialect.ORACLE:
        msg = f'ORA-00904: "{full.upper()}": invalid identifier'
    else:
        msg = f"no such column: {full}"
    return EngineError(ErrorClass.UNKNOWN_COLUMN, msg)


def ambiguous_column(dialect: Dialect, name: str) -> EngineError:
    if dialect is Dialect.MYSQL:
        msg = f"Error 1052 (23000): Column '{name}' in field list is ambiguous"
    elif dialect is Dialect.POSTGRES:
        msg = f'ERROR:  column reference "{name}" is ambiguous'
    elif dialect is Dialect.ORACLE:
        msg = "ORA-00918: column ambiguously defined"
    else:
        msg = f"ambiguous column name: {name}"
    return EngineError(ErrorClass.UNKNOWN_COLUMN, msg)


def unknown_function(dialect: Dialect, name: str) -> EngineError:
    if dialect is Dialect.MYSQL:
        msg = f"Error 1305 (42000): FUNCTION db.{name} does not exist"
    elif dialect is Dialect.POSTGRES:
        msg = f"ERROR:  function {name} does not exist"
    elif dialect is Dialect.ORACLE:
        msg = f'ORA-00904: "{name.upper()}": invalid identifier'
    else:
        msg = f"no such function: {name}"
    return EngineError(ErrorClass.UNKNOWN_COLUMN, msg)


def group_by_error(dialect: Dialect, column: str, position: int, has_group_by: bool, db_id: str = "db") -> EngineError:
    if dialect is Dialect.MYSQL:
        if has_group_by:
            msg = (f"Error 1055 (42000): Expression #{position} of SELECT list is not in GROUP BY clause and "
                   f"contains nonaggregated column '{db_id}.{column}' which is not functionally dependent on "
                   "columns in GROUP BY clause; this is incompatible with sql_mode=only_full_group_by")
        else:
            msg = (f"Error 1140 (42000): In aggregated query without GROUP BY, expression #{position} of SELECT "
                   f"list contains nonaggregated column '{db_id}.{column}'; this is incompatible with "
                   "sql_mode=only_full_group_by")
    elif dialect is Dialect.POSTGRES:
        msg = f'ERROR:  column "{column}" must appear in the GROUP BY clause or be used in an aggregate function'
    elif dialect is Dialect.ORACLE:
        msg = "ORA-00979: not a GROUP BY expression" if has_group_by else \
            "ORA-00937: not a single-group group function"
    else:
        msg = f"strict GROUP BY: nonaggregated column {column} not in GROUP BY"
    return EngineError(ErrorClass.STRICT_GROUP_BY, msg)


def operator_mismatch(dialect: Dialect, op: str, left_type: str, right_type: str) -> EngineError:
    if dialect is Dialect.POSTGRES:
        msg = f"ERROR:  operator does not exist: {left_type} {op} {right_type}"
    elif dialect is Dialect.ORACLE:
        msg = "ORA-01722: invalid number"
    elif dialect is Dialect.MYSQL:
        msg = f"Error 1292 (22007): Truncated incorrect DOUBLE value for operator {op}"
    else:
        msg = "datatype mismatch"
    return EngineError(ErrorClass.TYPE_MISMATCH, msg)


def invalid_input(dialect: Dialect, type_name: str, value: object) -> EngineError:
    if dialect is Dialect.POSTGRES:
        msg = f'ERROR:  invalid input syntax for type {type_name.lower()}: "{value}"'
    elif dialect is Dialect.ORACLE:
        msg = "ORA-01722: invalid number"
    elif dialect is Dialect.MYSQL:
        msg = f"Error 1292 (22007): Truncated incorrect {type_name} value: '{value}'"
    else:
        msg = "datatype mismatch"
    return EngineError(ErrorClass.TYPE_MISMATCH, msg)


def function_type_error(dialect: Dialect, name: str, arg_type: str) -> EngineError:
    if dialect is Dialect.POSTGRES:
        msg = f"ERROR:  function {name}({arg_type}) does not exist"
    elif dialect is Dialect.ORACLE:
        msg = "ORA-01722: invalid number"
    else:
        msg = "datatype mismatch"
    return EngineError(ErrorClass.TYPE_MISMATCH, msg)


def unsupported(dialect: Dialect, what: str) -> EngineError:
    return EngineError(ErrorClass.UNSUPPORTED_FEATURE, f"unsupported feature: {what} ({dialect.display_name})")


def division_by_zero(dialect: Dialect) -> EngineError:
    if dialect is Dialect.POSTGRES:
        msg = "ERROR:  division by zero"
    else:
        msg = "ORA-01476: divisor is equal to zero"
    return EngineError(ErrorClass.RUNTIME, msg)


def subquery_rows(dialect: Dialect) -> EngineError:
    if dialect is Dialect.MYSQL:
        msg = "Error 1242 (21000): Subquery returns more than 1 row"
    elif dialect is Dialect.POSTGRES:
        msg = "ERROR:  more than one row returned by a subquery used as an expression"
    else:
        msg = "ORA-01427: single-row subquery returns more than one row"
    return EngineError(ErrorClass.RUNTIME, msg)


def subquery_columns(dialect: Dialect) -> EngineError:
    if dialect is Dialect.MYSQL:
        msg = "Error 1241 (21000): Operand should contain 1 column(s)"
    elif dialect is Dialect.POSTGRES:
        msg = "ERROR:  subquery has too many columns"
    elif dialect is Dialect.ORACLE:
        msg = "ORA-00913: too many values"
    else:
        msg = "sub-select returns 2 columns - expected 1"
    return EngineError(ErrorClass.RUNTIME, msg)


def set_op_arity(dialect: Dialect, op: str) -> EngineError:
    if dialect is Dialect.MYSQL:
        msg = "Error 1222 (21000): The used SELECT statements have a different number of columns"
    elif dialect is Dialect.POSTGRES:
        msg = f"ERROR:  each {op} query must have the same number of columns"
    elif dialect is Dialect.ORACLE:
        msg = "ORA-01789: query block has incorrect number of result columns"
    else:
        msg = f"SELECTs to the left and right of {op} do not have the same number of result columns"
    return EngineError(ErrorClass.RUNTIME, msg)


def misplaced_aggregate(dialect: Dialect, clause: str) -> EngineError:
    if dialect is Dialect.MYSQL:
        msg = "Error 1111 (HY000): Invalid use of group function"
    elif dialect is Dialect.POSTGRES:
        msg = f"ERROR:  aggregate functions are not allowed in {clause}"
    elif dialect is Dialect.ORACLE:
        msg = "ORA-00934: group function is not allowed here"
    else:
        msg = "misuse of aggregate function"
    return EngineError(ErrorClass.RUNTIME, msg)
