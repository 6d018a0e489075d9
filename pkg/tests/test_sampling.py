"""Rejection sampling, retention, preference pairs and question augmentation."""

from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dialect_forge.engine import run_sql
from dialect_forge.gateway import ERROR_CLASSES, ExecReport, RewardMode, RewardPolicy
from dialect_forge.engine import ResultTable
from dialect_forge.llm import ScriptedModel, model_from_config
from dialect_forge.records import Dialect, NLQuestion, PreferenceRecord, QuestionSource
from dialect_forge.sampling import (Candidate, Severity, augment_questions, best_of_n_select,
                                    build_preference_pairs, candidate_from_dict, candidate_to_dict,
                                    candidates_from_completions, dataset_records, dpo_preference_check,
                                    empirical_retention, is_value_grounded, pairwise_accuracy, partition,
                                    retention_rate, sample_candidates, severity, worst_of_n_select)

from .conftest import DATA

JAN16 = NLQuestion("wiki-jan16", "Who is the Opponent on January 16?", "table_2_16946097_6")
HURRICANES = NLQuestion("wiki-hurricanes",
                        "What was the record after the game in which the Hurricanes scored 24 points?",
                        "table_1_20928682_1")


def bundled_model():
    return model_from_config({"kind": "scripted", "script": "script.yaml"}, DATA)


def _sample_and_split(q, gold_sql, dbs, gateway, mode):
    db = dbs[q.db_ref]
    cands = sample_candidates(q, bundled_model(), 8, "postgres", db.schema())
    gold = run_sql(gold_sql, db, "postgres") if gold_sql else None
    return partition(cands, gateway, RewardPolicy(mode), gold, dialect="postgres", db_ref=q.db_ref)


def test_opponent_example_splits_one_to_seven(dbs, gateway):
    valid, neg = _sample_and_split(JAN16, "SELECT Opponent FROM table_2_16946097_6 WHERE Date = 'January 16'",
                                   dbs, gateway, RewardMode.EXEC_AND_MATCH)
    assert (len(valid), len(neg)) == (1, 7)
    assert "'January 16'" in best_of_n_select(valid).sql
    # every candidate executes, so execution alone keeps them all
    loose, none = _sample_and_split(JAN16, None, dbs, gateway, RewardMode.EXEC_ONLY)
    assert (len(loose), len(none)) == (8, 0)


def test_hurricanes_pair(dbs, gateway):
    gold = "SELECT Record FROM table_1_20928682_1 WHERE Hurricanes_points::FLOAT = 24"
    valid, neg = _sample_and_split(HURRICANES, gold, dbs, gateway, RewardMode.EXEC_AND_MATCH)
    [pair] = build_preference_pairs(HURRICANES, "postgres", valid, neg)
    assert pair.chosen.endswith("Hurricanes_points::FLOAT = 24")
    assert pair.rejected.endswith("Hurricanes_points::FLOAT > 24")
    assert pair.rejected_error_class == "wrong-result"


def test_dpo_check_with_scripted_scores():
    pair = PreferenceRecord("p", JAN16.id, JAN16.db_ref, Dialect.POSTGRES,
                            "SELECT Opponent FROM table_2_16946097_6 WHERE Date = 'January 16'",
                            "SELECT Opponent FROM table_2_16946097_6 WHERE Date = 'Jan 16'")
    model = bundled_model()
    assert dpo_preference_check(model, JAN16.text, pair)
    flipped = PreferenceRecord("p", JAN16.id, JAN16.db_ref, Dialect.POSTGRES, pair.rejected, pair.chosen)
    assert pairwise_accuracy(model, [(JAN16.text, pair), (JAN16.text, flipped)]) == 0.5
    with pytest.raises(ValueError):
        pairwise_accuracy(model, [])


def _fail(cls, i):
    return Candidate(f"SELECT {i}", ExecReport.failure(cls, cls, 0.0, "t"), i, reward=0)


def test_worst_of_n_prefers_severe_failures():
    wrong = Candidate("SELECT w", ExecReport.success(ResultTable((), ()), 0.0, "t"), 0, reward=0)
    unextractable = Candidate("prose", ExecReport.failure("syntax", "x", 0.0, "t"), 5, extraction_ok=False, reward=0)
    pool = [wrong, _fail("runtime", 1), _fail("type", 2), _fail("dialect-violation", 3), unextractable]
    assert worst_of_n_select(pool).sample_index == 5
    assert worst_of_n_select(pool[:4]).sample_index == 3
    assert worst_of_n_select(pool[:3]).sample_index == 2
    # only the first n_cap draws are considered
    assert worst_of_n_select(pool, n_cap=2).sample_index == 1
    assert [severity(c) for c in pool] == [Severity.WRONG_RESULT, Severity.RUNTIME, Severity.SEMANTIC,
                                           Severity.SYNTAX, Severity.EXTRACTION]
    with pytest.raises(ValueError):
        worst_of_n_select([])


def test_preference_pairs_skip_identical_sql_and_cross_product():
    ok = ExecReport.success(ResultTable((), ()), 0.0, "t")
    valid = [Candidate("SELECT 1", ok, 0, reward=1), Candidate("SELECT 2", ok, 2, reward=1)]
    # the identical-text negative is the most severe but cannot be paired with the chosen query
    neg = [Candidate("SELECT 9", ok, 1, reward=0), Candidate("SELECT 1", ExecReport.failure(
        "syntax", "x", 0.0, "t"), 3, reward=0)]
    q = NLQuestion("q", "text", "toy")
    [p] = build_preference_pairs(q, "mysql", valid, neg)
    assert (p.chosen, p.rejected) == ("SELECT 1", "SELECT 9")
    cross = build_preference_pairs(q, "mysql", valid, neg, cross_product=True)
    assert len(cross) == 3 and len({c.id for c in cross}) == 3
    assert build_preference_pairs(q, "mysql", [], neg) == []
    assert build_preference_pairs(q, "mysql", valid, []) == []


def test_unextractable_completions_are_negatives(gateway):
    cands = candidates_from_completions(["no idea", "```sql\nSELECT a FROM t\n```"])
    assert not cands[0].extraction_ok and cands[0].report.error_class == "syntax"
    valid, neg = partition(cands, gateway, dialect="sqlite", db_ref="toy")
    assert [c.sample_index for c in valid] == [1] and neg[0].failure_kind == "extraction"
    with pytest.raises(ValueError):
        partition(candidates_from_completions(["SELECT 1"]))


def test_candidate_log_round_trip(gateway):
    cands = candidates_from_completions(["SELECT a FROM t", "SELECT zz FROM t", "hmm"])
    valid, neg = partition(cands, gateway, dialect="sqlite", db_ref="toy")
    for c in valid + neg:
        back = candidate_from_dict(candidate_to_dict(c))
        assert (back.sql, back.reward, back.failure_kind, back.sample_index) == \
               (c.sql, c.reward, c.failure_kind, c.sample_index)


def test_dataset_records_deduplicate_sql():
    ok = ExecReport.success(ResultTable((), ()), 0.0, "t")
    cands = [Candidate("SELECT 1", ok, 0, reward=1), Candidate("SELECT 1", ok, 1, reward=1), _fail("type", 2),
             _fail("type", 2)]
    q = NLQuestion("q", "t", "toy", QuestionSource.AUGMENTED)
    valid, neg = dataset_records(q, Dialect.MYSQL, cands, iteration=2)
    assert [r.id for r in valid] == ["q:mysql:s0"] and len(neg) == 1
    assert valid[0].round == 2 and valid[0].provenance.value == "augmented"


def test_augmentation_dedupes_and_flags_grounding(dbs):
    db = dbs["department_management"]
    model = ScriptedModel([("Generate 3 new", [["1. How many heads are there?\n- how many  HEADS are there?\n\n"
                                                "Which heads were born in California?\n"
                                                "What is the budget of department 2?\nExtra question?"]])])
    qs = augment_questions(db, model, 3)
    assert [q.text for q in qs] == ["How many heads are there?", "Which heads were born in California?",
                                    "What is the budget of department 2?"]
    assert [q.value_grounded for q in qs] == [False, True, True]
    assert all(q.source is QuestionSource.AUGMENTED and q.id.startswith("aug:department_management:") for q in qs)
    assert augment_questions(db, model, 0) == []
    assert not is_value_grounded("Who is oldest?", db)


def test_retention_closed_form():
    assert retention_rate(0.3, 1) == pytest.approx(0.3)
    assert retention_rate(0.3, 8) == pytest.approx(1 - 0.7 ** 8)
    assert retention_rate(0.0, 5) == 0 and retention_rate(1.0, 1) == 1
    with pytest.raises(ValueError):
        retention_rate(1.2, 1)
    with pytest.raises(ValueError):
        retention_rate(0.5, 0)


def test_empirical_retention_follows_the_law():
    rng = np.random.default_rng(2024)
    draws = rng.random((1000, 8)) < 0.3
    for n, rate in empirical_retention(draws.tolist(), [1, 2, 4, 8]):
        assert abs(rate - retention_rate(0.3, n)) <= 0.03
    with pytest.raises(ValueError, match="fewer than"):
        empirical_retention([[True]], [2])


# -- properties ------------------------------------------------------------------------------------

@st.composite
def scored_candidates(draw):
    out = []
    for i in range(draw(st.integers(0, 12))):
        kind = draw(st.sampled_from(["ok"] + list(ERROR_CLASSES)))
        rep = (ExecReport.success(ResultTable((), ()), 0.0, "t") if kind == "ok"
               else ExecReport.failure(kind, kind, 0.0, "t"))
        r = draw(st.sampled_from([0, 1])) if kind == "ok" else 0
        out.append(Candidate(draw(st.sampled_from(["SELECT 1", "SELECT 2", "SELECT 3"])), rep, i, reward=r))
    return out


@settings(max_examples=1000, deadline=None)
@given(scored_candidates())
def test_partition_is_complete_and_disjoint(cands):
    valid, neg = partition(cands)
    assert len(valid) + len(neg) == len(cands)
    assert sorted(c.sample_index for c in valid + neg) == [c.sample_index for c in cands]
    assert all(c.reward == 1 for c in valid) and all(c.reward == 0 for c in neg)
    pairs = build_preference_pairs(NLQuestion("q", "t", "db"), "oracle", valid, neg)
    for p in pairs:
        assert p.chosen in {c.sql for c in valid} and p.rejected in {c.sql for c in neg}


@settings(max_examples=1000, deadline=None)
@given(st.lists(st.lists(st.booleans(), min_size=8, max_size=8), min_size=1, max_size=30),
       st.floats(0, 1), st.integers(1, 16))
def test_retention_is_monotone(rows, p, n):
    rates = [r for _, r in empirical_retention(rows, [1, 2, 3, 4, 5, 6, 7, 8])]
    assert rates == sorted(rates)
    assert retention_rate(p, n) <= retention_rate(p, n + 1) + 1e-15
    assert 0 <= retention_rate(p, n) <= 1
