"""Execution gateway: backends, error classes, result comparison and rewards."""

from __future__ import annotations

import sqlite3
import sys
import textwrap

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dialect_forge.engine import ResultTable
from dialect_forge.gateway import (ERROR_CLASSES, BackendConfig, ComparePolicy, EmbeddedBackend, ExecReport,
                                   Gateway, GatewayError, RewardMode, RewardPolicy, Status, SubprocessBackend,
                                   WireBackend, classify_error, compare_results, has_order_by, make_backend,
                                   parse_tsv, profile_execution, reward)
from dialect_forge.records import Dialect

from .conftest import FIXTURES


@pytest.mark.parametrize("dialect, raw, expected", [
    ("mysql", "Error 1140 (42000): In aggregated query without GROUP BY, ... sql_mode=only_full_group_by",
     "strict-group-by"),
    ("mysql", "(1064, \"You have an error in your SQL syntax; check the manual\")", "syntax"),
    ("mysql", "(1146, \"Table 'db.headz' doesn't exist\")", "unknown-object"),
    ("mysql", "(1054, \"Unknown column 'agee' in 'field list'\")", "unknown-object"),
    ("mysql", "This version of MySQL doesn't yet support 'LIMIT & IN/ALL/ANY/SOME subquery'",
     "dialect-violation"),
    ("mysql", "(1292, 'Truncated incorrect DOUBLE value: abc')", "type"),
    ("mysql", "Query execution was interrupted, maximum statement execution time exceeded", "timeout"),
    ("postgres", 'ERROR:  column "t.x" must appear in the GROUP BY clause or be used in an aggregate function',
     "strict-group-by"),
    ("postgres", 'ERROR:  syntax error at or near "LIMIT"', "syntax"),
    ("postgres", "ERROR:  operator does not exist: text > integer", "type"),
    ("postgres", "ERROR:  function avg(text) does not exist", "type"),
    ("postgres", 'ERROR:  relation "headz" does not exist', "unknown-object"),
    ("postgres", "ERROR:  canceling statement due to statement timeout", "timeout"),
    ("postgres", "ERROR:  division by zero", "runtime"),
    ("oracle", "ORA-00979: not a GROUP BY expression", "strict-group-by"),
    ("oracle", "ORA-00933: SQL command not properly ended", "syntax"),
    ("oracle", "ORA-00942: table or view does not exist", "unknown-object"),
    ("oracle", "ORA-01722: invalid number", "type"),
    ("sqlite", "near \"FROM\": syntax error", "syntax"),
    ("sqlite", "no such column: agee", "unknown-object"),
    ("sqlite", "something unexpected", "runtime"),
])
def test_classify_error(dialect, raw, expected):
    assert classify_error(raw, dialect) == expected


def test_exec_report_invariant():
    ok = ExecReport.success(ResultTable(("a",), ((1,),)), 0.1, "x")
    assert ok.ok and ok.error_class is None
    bad = ExecReport.failure("timeout", "slow", 1.0, "x")
    assert bad.status is Status.TIMEOUT
    with pytest.raises(ValueError):
        ExecReport(Status.OK, "syntax", None)
    with pytest.raises(ValueError):
        ExecReport(Status.ERROR, None, None)
    with pytest.raises(ValueError, match="unknown error class"):
        ExecReport(Status.ERROR, "oops", None)
    assert "elapsed" not in bad.summary() and bad.summary()["error"] == "slow"


def test_embedded_reports_every_class(gateway):
    cases = {
        "SELECT count(*) FROM head WHERE head.age::INTEGER > 56": ("mysql", "dialect-violation"),
        "SELECT count(*) FROM head WHERE age > 56": ("postgres", "type"),
        "SELECT name FROM heads": ("sqlite", "unknown-object"),
        "SELECT name FROM head WHERE": ("sqlite", "syntax"),
        "SELECT name, count(*) FROM head": ("postgres", "strict-group-by"),
        "SELECT 1 / 0 FROM head": ("postgres", "runtime"),
    }
    for sql, (d, cls) in cases.items():
        rep = gateway.run(sql, d, "department_management")
        assert rep.error_class == cls, (sql, rep)
        assert rep.raw_error


def test_error_texts_look_like_the_real_servers(gateway):
    rep = gateway.run("SELECT name FROM heads", "postgres", "department_management")
    assert rep.raw_error.startswith('ERROR:  relation "heads" does not exist')
    rep = gateway.run("SELECT name FROM heads", "mysql", "department_management")
    assert rep.raw_error.startswith("Error 1146 (42S02)")
    rep = gateway.run("SELECT name FROM heads", "oracle", "department_management")
    assert rep.raw_error.startswith("ORA-00942")


def test_unknown_database_and_backend(gateway):
    with pytest.raises(GatewayError, match="unknown database"):
        gateway.run("SELECT 1", "sqlite", "nope")
    with pytest.raises(GatewayError, match="no backend"):
        Gateway().run("SELECT 1", "sqlite", "x")


def test_embedded_timeout(dbs):
    gw = Gateway([EmbeddedBackend("sqlite", dbs, timeout=0.0)])
    rep = gw.run("SELECT count(*) FROM head AS a, head AS b, head AS c, head AS d, head AS e", "sqlite",
                 "department_management")
    assert rep.status is Status.TIMEOUT and rep.error_class == "timeout"


def test_run_many_keeps_input_order(gateway):
    items = [(f"SELECT {i} FROM t", "toy") for i in range(40)]
    reps = gateway.run_many(items, "sqlite", workers=8)
    assert [r.result.rows[0][0] for r in reps] == list(range(40))


def test_embedded_loads_from_directory():
    b = EmbeddedBackend("postgres", FIXTURES)
    assert b.has_db("toy") and not b.has_db("missing")
    assert b.prepare("toy") >= 0
    rep = b.execute("SELECT max(a) FROM t", "toy", 1.0)
    assert rep.result.rows == ((5,),)


def test_profile_execution(gateway):
    stats = profile_execution(gateway, [("SELECT a FROM t", "toy"), ("SELECT zz FROM t", "toy"),
                                        ("SELECT name FROM head", "department_management")], "sqlite")
    assert stats.count == 3 and stats.errors == 1
    assert stats.total >= 0 and stats.avg_import >= 0


def test_wire_backend_with_dbapi_driver(tmp_path):
    path = tmp_path / "shop.db"
    conn = sqlite3.connect(path)
    conn.execute("CREATE TABLE item (name TEXT, price REAL)")
    conn.executemany("INSERT INTO item VALUES (?, ?)", [("pen", 1.5), ("ink", 4.0)])
    conn.commit()
    conn.close()
    gw = Gateway([WireBackend("sqlite", "sqlite3", str(tmp_path / "{db}.db"))])
    rep = gw.run("SELECT name FROM item WHERE price > 2", "sqlite", "shop")
    assert rep.ok and rep.result.rows == (("ink",),) and rep.result.columns == ("name",)
    rep = gw.run("SELECT nam FROM item", "sqlite", "shop")
    assert rep.error_class == "unknown-object"
    assert "no such column" in rep.raw_error
    gw.close()


def test_wire_probe_reports_missing_driver():
    assert "not importable" in WireBackend("postgres", "no_such_driver_mod", "x").probe()


def _client(tmp_path, body):
    script = tmp_path / "client.py"
    script.write_text(textwrap.dedent(body))
    return [sys.executable, str(script), "{sql}", "{db}"]


def test_subprocess_backend_parses_tsv(tmp_path):
    cmd = _client(tmp_path, """
        import sys
        sql, db = sys.argv[1], sys.argv[2]
        if "bad" in sql:
            sys.stderr.write("ERROR 1064 (42000): You have an error in your SQL syntax")
            sys.exit(1)
        print("name\\tn")
        print(db + "\\t3")
        print("NULL\\t2.5")
    """)
    gw = Gateway([SubprocessBackend("mysql", cmd)])
    rep = gw.run("SELECT 1", "mysql", "shop")
    assert rep.result.rows == (("shop", 3), (None, 2.5))
    rep = gw.run("bad sql", "mysql", "shop")
    assert rep.error_class == "syntax"


def test_subprocess_backend_timeout(tmp_path):
    cmd = _client(tmp_path, """
        import time
        time.sleep(5)
    """)
    gw = Gateway([SubprocessBackend("postgres", cmd, timeout=0.3)])
    rep = gw.run("SELECT 1", "postgres", "x")
    assert rep.status is Status.TIMEOUT


def test_parse_tsv_edge_cases():
    assert parse_tsv("") == ResultTable((), ())
    assert parse_tsv("a\n") == ResultTable(("a",), ())
    assert parse_tsv("a\tb\n\\N\tinf\n").rows == ((None, "inf"),)


def test_make_backend_kinds(tmp_path):
    assert make_backend(BackendConfig("sqlite"), FIXTURES).kind == "embedded"
    assert make_backend(BackendConfig("mysql", "subprocess", command=("mysql", "-e", "{sql}"))).kind == "subprocess"
    assert make_backend(BackendConfig("postgres", "wire", driver="psycopg", dsn="dbname={db}")).kind == "wire"
    with pytest.raises(ValueError):
        make_backend(BackendConfig("sqlite", "carrier-pigeon"), FIXTURES)
    with pytest.raises(ValueError):
        make_backend(BackendConfig("sqlite"))


def test_has_order_by_top_level_only():
    assert has_order_by("SELECT a FROM t ORDER BY a")
    assert not has_order_by("SELECT a FROM (SELECT a FROM t ORDER BY a) AS x")
    assert not has_order_by("SELECT a FROM t WHERE a IN (SELECT a FROM s ORDER BY a LIMIT 1)")


def test_compare_results_basics():
    r = lambda *rows: ResultTable(("c",), tuple(rows))  # noqa: E731
    unordered = ComparePolicy(order_sensitive=False)
    ordered = ComparePolicy(order_sensitive=True)
    assert compare_results(r((1,), (2,)), r((2,), (1,)), unordered)
    assert not compare_results(r((1,), (2,)), r((2,), (1,)), ordered)
    assert compare_results(r((1,),), r((1.0,),), ordered)
    assert compare_results(r((True,),), r((1,),), ordered)
    assert not compare_results(r(("1",),), r((1,),), ordered)
    assert compare_results(r((0.1 + 0.2,),), r((0.3,),), ordered)
    assert not compare_results(r((0.1 + 0.2,),), r((0.3,),), ComparePolicy(True, 0.0))
    assert compare_results(r((None,),), r((None,),), ordered)
    assert not compare_results(r((None,),), r((None,),), ComparePolicy(True, null_equals_null=False))
    assert not compare_results(r((1,), (1,)), r((1,),), unordered)


# -- properties ------------------------------------------------------------------------------------

values = st.one_of(st.none(), st.integers(-2, 2), st.sampled_from([0.5, 1.0, 2.0, -1.0]),
                   st.sampled_from(["x", "y", "1"]), st.booleans())


@st.composite
def result_triples(draw):
    """Three results of one shape, often equal up to reordering or int/float spelling."""
    width = draw(st.integers(1, 3))
    base = draw(st.lists(st.tuples(*[values] * width), max_size=5))

    def variant():
        rows = list(base)
        if draw(st.booleans()):
            rows = draw(st.permutations(rows))
        rows = [tuple(float(v) if isinstance(v, int) and not isinstance(v, bool) and draw(st.booleans()) else v
                      for v in row) for row in rows]
        if draw(st.integers(0, 4)) == 0 and rows:
            i = draw(st.integers(0, len(rows) - 1))
            rows[i] = draw(st.tuples(*[values] * width))
        return ResultTable(("c",) * width, tuple(rows))

    return variant(), variant(), variant()


policies = st.builds(ComparePolicy, order_sensitive=st.booleans(), float_tolerance=st.just(0.0),
                     null_equals_null=st.just(True))


@settings(max_examples=1000, deadline=None)
@given(result_triples(), policies)
def test_compare_is_an_equivalence_relation(triple, policy):
    a, b, c = triple
    assert compare_results(a, a, policy)
    assert compare_results(a, b, policy) == compare_results(b, a, policy)
    if compare_results(a, b, policy) and compare_results(b, c, policy):
        assert compare_results(a, c, policy)


@settings(max_examples=1000, deadline=None)
@given(result_triples(), st.booleans(), st.sampled_from([1e-9, 1e-6, 1e-3]))
def test_compare_with_tolerance_is_reflexive_and_symmetric(triple, ordered, tol):
    a, b, _ = triple
    p = ComparePolicy(ordered, tol)
    assert compare_results(a, a, p)
    assert compare_results(a, b, p) == compare_results(b, a, p)


reports = st.one_of(
    st.builds(lambda rows: ExecReport.success(ResultTable(("c",), tuple(rows)), 0.0, "t"),
              st.lists(st.tuples(values), max_size=4)),
    st.builds(lambda cls: ExecReport.failure(cls, "boom", 0.0, "t"), st.sampled_from(ERROR_CLASSES)),
)


@settings(max_examples=1000, deadline=None)
@given(reports, st.lists(st.tuples(values), max_size=4), st.sampled_from([None, True, False]))
def test_exec_and_match_never_exceeds_exec_only(report, gold_rows, order):
    gold = ResultTable(("c",), tuple(gold_rows))
    strict = reward(report, gold, RewardPolicy(RewardMode.EXEC_AND_MATCH), order_sensitive=order)
    loose = reward(report, gold, RewardPolicy(RewardMode.EXEC_ONLY), order_sensitive=order)
    assert strict in (0, 1) and loose in (0, 1)
    assert strict <= loose
    assert loose == int(report.ok)


def test_exec_and_match_needs_gold():
    rep = ExecReport.success(ResultTable((), ()), 0.0, "t")
    with pytest.raises(ValueError, match="gold"):
        reward(rep, None, RewardPolicy(RewardMode.EXEC_AND_MATCH))


def test_dialect_enum_covers_backends(gateway):
    assert set(gateway.dialects) == set(Dialect)
