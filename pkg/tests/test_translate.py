"""Translation bootstrapping with execution feedback."""

from __future__ import annotations

import json
import sys

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dialect_forge.engine import run_sql
from dialect_forge.gateway import GatewayError, RewardMode, RewardPolicy
from dialect_forge.llm import ScriptedModel
from dialect_forge.records import Dialect, RecordStatus, read_records
from dialect_forge.translate import (CommandPrefilter, IterationStats, Journal, TranslateConfig, TranslationPair,
                                     identity_prefilter, make_prefilter, read_pairs, run_bootstrap,
                                     translate_with_feedback)

from .conftest import DATA

HEAD_SQL = "SELECT count(*) FROM head WHERE age > 56"
PAIR = TranslationPair("dm-56", "How many heads of the departments are older than 56?", "department_management",
                       HEAD_SQL)


def _prompts():
    seen = []
    return seen, lambda rnd, prompt: seen.append((rnd, prompt))


def test_two_round_contract(gateway, dbs):
    model = ScriptedModel([(f"Input: {HEAD_SQL}\t", [[HEAD_SQL], ["SELECT count(*) FROM head WHERE "
                                                                  "head.age::INTEGER > 56"]])])
    seen, hook = _prompts()
    out = translate_with_feedback(PAIR, "postgres", model, gateway, dbs["department_management"].schema(),
                                  on_prompt=hook)
    assert out.success and out.rounds_used == 2
    assert out.record.round == 1 and out.record.status is RecordStatus.VALID
    first_error = out.attempts[0].report.raw_error
    assert out.attempts[0].report.error_class == "type"
    assert first_error.startswith("ERROR:  operator does not exist")
    assert first_error not in seen[0][1]
    assert first_error in seen[1][1]
    assert f"Attempt 1: {HEAD_SQL}\nError: {first_error}" in seen[1][1]


def test_always_failing_model_stops_at_cap(gateway, dbs):
    model = ScriptedModel([("*", [[HEAD_SQL]] * 10)])
    out = translate_with_feedback(PAIR, "postgres", model, gateway, dbs["department_management"].schema(),
                                  config=TranslateConfig(max_rounds=3))
    assert not out.success and out.rounds_used == 3 and len(model.calls) == 3
    assert out.record.status is RecordStatus.INVALID
    # every earlier attempt is replayed in the last prompt
    assert model.calls[-1].prompt.count("Error: ERROR:  operator does not exist") == 2


def test_unextractable_output_counts_as_syntax_failure(gateway, dbs):
    model = ScriptedModel([("*", [["I am not sure."], ["SELECT count(*) FROM head"]])])
    out = translate_with_feedback(PAIR, "mysql", model, gateway, dbs["department_management"].schema())
    assert out.success and out.attempts[0].report.error_class == "syntax"
    assert "could not extract" in model.calls[1].prompt


def test_copied_db_id_is_stripped(gateway, dbs):
    model = ScriptedModel([("*", [["SELECT count(*) FROM head\tdepartment_management"]])])
    out = translate_with_feedback(PAIR, "mysql", model, gateway, dbs["department_management"].schema())
    assert out.success and out.record.sql == "SELECT count(*) FROM head"


def test_model_failure_aborts_item(gateway, dbs):
    out = translate_with_feedback(PAIR, "mysql", ScriptedModel(), gateway, dbs["department_management"].schema())
    assert not out.success and out.aborted and out.rounds_used == 0


def test_exec_and_match_rejects_wrong_results(gateway, dbs):
    gold = run_sql(HEAD_SQL, dbs["department_management"], "sqlite")
    model = ScriptedModel([("*", [["SELECT count(*) FROM head"], [HEAD_SQL]])])
    cfg = TranslateConfig(reward=RewardPolicy(RewardMode.EXEC_AND_MATCH))
    out = translate_with_feedback(PAIR, "mysql", model, gateway, dbs["department_management"].schema(),
                                  config=cfg, gold=gold)
    assert out.success and out.rounds_used == 2
    assert "different result" in model.calls[1].prompt
    with pytest.raises(ValueError, match="needs the source"):
        translate_with_feedback(PAIR, "mysql", model, gateway, dbs["department_management"].schema(), config=cfg)


def test_identity_prefilter_solves_portable_queries(gateway, dbs):
    model = ScriptedModel([("*", [["SELECT count(*) FROM head WHERE head.age::INTEGER > 56"]])])
    portable = TranslationPair("p", "q", "department_management", "SELECT count(*) FROM head")
    schema = dbs["department_management"].schema()
    out = translate_with_feedback(portable, "postgres", model, gateway, schema, prefilter=identity_prefilter)
    assert out.success and out.attempts[0].origin == "prefilter" and not model.calls
    out = translate_with_feedback(PAIR, "postgres", model, gateway, schema, prefilter=identity_prefilter)
    assert out.success and out.prefilter is not None and out.rounds_used == 1
    assert "Attempt 1: " + HEAD_SQL in model.calls[0].prompt


def test_command_prefilter(tmp_path):
    script = tmp_path / "pf.py"
    script.write_text("import sys\nsql = sys.stdin.read()\n"
                      "if 'fail' in sql: sys.exit(3)\nprint(sql.upper() + ' -- ' + sys.argv[1])\n")
    pf = make_prefilter(f"command:{sys.executable} {script} {{target}}")
    assert isinstance(pf, CommandPrefilter)
    assert pf("select 1", Dialect.SQLITE, Dialect.MYSQL) == "SELECT 1 -- mysql"
    assert pf("fail", Dialect.SQLITE, Dialect.MYSQL) is None
    assert make_prefilter("none") is None and make_prefilter("identity") is identity_prefilter
    with pytest.raises(ValueError):
        make_prefilter("sqlglot-ish")


def test_bundled_pairs_parse():
    pairs = read_pairs(DATA / "pairs.jsonl")
    assert len({p.id for p in pairs}) == len(pairs) >= 4


def test_read_pairs_rejects_duplicates(tmp_path):
    p = tmp_path / "pairs.jsonl"
    row = json.dumps({"id": "a", "question": "q", "db_id": "toy", "sql": "SELECT 1"})
    p.write_text(row + "\n" + row + "\n")
    with pytest.raises(ValueError, match=":2: duplicate"):
        read_pairs(p)


def _toy_pairs(k):
    return [TranslationPair(f"p{i}", f"q{i}", "toy", f"SELECT a FROM t WHERE a > {i}") for i in range(k)]


GOOD, BAD = "SELECT a FROM t", "SELECT zz FROM t"


def _script(plans):
    """plans[i] lists per-round outcomes (True = good SQL) for pair i."""
    return ScriptedModel([(f"Input: SELECT a FROM t WHERE a > {i}\t", [[GOOD if ok else BAD] for ok in plan])
                          for i, plan in enumerate(plans)])


def test_bootstrap_outputs_and_resume(tmp_path, gateway, dbs):
    pairs = _toy_pairs(3)
    plans = [[True], [False, True], [False, False, False]]
    res = run_bootstrap(pairs, ["mysql"], _script(plans), gateway, lambda d: dbs[d].schema(), tmp_path)
    assert [r.id for r in res.records] == ["p0:mysql", "p1:mysql"]
    assert len(res.unresolved) == 1
    assert res.stats["mysql"].to_dict() == {"failed": [2, 1, 1], "proposed": [3, 2, 1], "prefilter_solved": 0,
                                            "total": 3, "unresolved": 1}
    assert [r.id for r in read_records(tmp_path / "d_trans.jsonl")] == ["p0:mysql", "p1:mysql"]
    assert json.loads((tmp_path / "stats.json").read_text())["mysql"]["unresolved"] == 1
    # a torn trailing line from a crash is ignored, finished items are not re-asked
    with open(tmp_path / "attempts.jsonl", "a") as fh:
        fh.write('{"key": "p9:mysql", "attem')
    again = run_bootstrap(pairs, ["mysql"], ScriptedModel(), gateway, lambda d: dbs[d].schema(), tmp_path)
    assert [r.id for r in again.records] == ["p0:mysql", "p1:mysql"]
    assert again.stats["mysql"].to_dict() == res.stats["mysql"].to_dict()


def test_bootstrap_checks_databases_before_calling_the_model(tmp_path, gateway, dbs):
    model = ScriptedModel([("*", [[GOOD]])])
    with pytest.raises(GatewayError, match="unavailable"):
        run_bootstrap([TranslationPair("x", "q", "nowhere", "SELECT 1")], ["mysql"], model, gateway,
                      lambda d: dbs[d].schema(), tmp_path)
    assert not model.calls


def test_journal_reset(tmp_path):
    j = Journal(tmp_path / "j.jsonl")
    j.append("a", {"v": 1})
    j.append("a", {"v": 2})
    assert j.load() == {"a": {"key": "a", "v": 2}}
    j.reset()
    assert j.load() == {}


@settings(max_examples=300, deadline=None)
@given(st.lists(st.lists(st.booleans(), min_size=1, max_size=4), min_size=1, max_size=6),
       st.integers(1, 4))
def test_failures_per_round_never_increase(gateway, dbs, plans, max_rounds):
    pairs = _toy_pairs(len(plans))
    model = _script(plans)
    outs = [translate_with_feedback(p, "postgres", model, gateway, dbs["toy"].schema(),
                                    config=TranslateConfig(max_rounds=max_rounds)) for p in pairs]
    s = IterationStats.from_outcomes(outs, max_rounds)
    for r in range(1, max_rounds):
        assert s.failed[r] <= s.failed[r - 1]
        # an item is only re-proposed after failing the previous round, unless its script ran out
        assert s.proposed[r] <= s.failed[r - 1]
    for plan, o in zip(plans, outs):
        prefix = plan[:max_rounds]
        if True in prefix:
            assert o.success and o.rounds_used == prefix.index(True) + 1
        else:
            assert not o.success
    assert s.unresolved == sum(not o.success for o in outs)
