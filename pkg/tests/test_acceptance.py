"""Acceptance suite: one test per criterion, summarized as pass/fail lines at the end of the run."""

from __future__ import annotations

import json
import math
import time

import numpy as np

from dialect_forge.cli import main
from dialect_forge.engine import EngineError, ErrorClass, run_sql
from dialect_forge.engine.corpus import check_corpus, load_corpus
from dialect_forge.evaluation import estimate_llm_calls, evaluate, flip_delta, load_benchmark, macro_average
from dialect_forge.gateway import RewardMode, RewardPolicy
from dialect_forge.llm import ScriptedModel
from dialect_forge.records import NLQuestion
from dialect_forge.sampling import (best_of_n_select, build_preference_pairs, empirical_retention, partition,
                                    retention_rate, sample_candidates)
from dialect_forge.translate import IterationStats, TranslateConfig, TranslationPair, translate_with_feedback

from . import test_gateway, test_records, test_sampling, test_translate
from .conftest import DATA
from .test_pipeline_cli import manifest_without_times, tree, write_config


def _timed(fn):
    start = time.perf_counter()
    out = fn()
    return out, time.perf_counter() - start


def test_criterion_01_cost_model_table():
    expected = {(1000, 0.0): 1634, (10000, 0.0): 16336, (100000, 0.0): 163360,
                (1000, 0.35): 1062, (10000, 0.35): 10618, (100000, 0.35): 106184}
    got, elapsed = _timed(lambda: {k: estimate_llm_calls(k[0], 0.56, 3, k[1]) for k in expected})
    assert got == expected
    assert elapsed < 1


def test_criterion_02_flip_delta():
    rows = [([54.59, 62.09], 71.17, -12.83), ([51.03, 64.90], 77.27, -19.31),
            ([24.76, 35.60], 77.90, -47.72), ([38.71, 44.20], 70.20, -28.75)]
    start = time.perf_counter()
    for scores, sqlite, delta in rows:
        assert flip_delta(scores, sqlite) == delta
    assert time.perf_counter() - start < 1


def test_criterion_03_macro_average():
    assert macro_average([69.86, 74.10, 72.09, 73.64, 41.13, 69.35]) == 66.70


def test_criterion_04_conformance_corpus(dbs):
    cases = load_corpus(DATA / "conformance")
    assert len(cases) >= 30
    assert check_corpus(cases, dbs) == []

    cast = "SELECT count(*) FROM head WHERE head.age::INTEGER > 56"
    assert run_sql(cast, dbs["department_management"], "postgres").rows == ((5,),)
    try:
        run_sql(cast, dbs["department_management"], "mysql")
        raise AssertionError("mysql accepted a :: cast")
    except EngineError as exc:
        assert exc.cls is ErrorClass.DIALECT_VIOLATION

    mp = dbs["movie_platform"]
    base = ("SELECT avg(T1.rating_score) AS average_rating, T2.director_name FROM ratings AS T1 JOIN movies AS T2 "
            "ON T1.movie_id = T2.movie_id WHERE T2.movie_title = 'When Will I Be Loved'")
    try:
        run_sql(base, mp, "mysql")
        raise AssertionError("strict GROUP BY not enforced")
    except EngineError as exc:
        assert exc.cls is ErrorClass.STRICT_GROUP_BY
        assert exc.message.startswith("Error 1140 (42000): In aggregated query without GROUP BY")
    assert run_sql(base + " GROUP BY T2.director_name", mp, "mysql").rows == ((3.0, "James Toback"),)

    ilike = "SELECT keyword_name FROM keyword WHERE keyword_name ILIKE '%magic%'"
    assert len(run_sql(ilike, dbs["movies_4"], "postgres").rows) == 2
    for d in ("mysql", "sqlite", "oracle"):
        try:
            run_sql(ilike, dbs["movies_4"], d)
            raise AssertionError(f"{d} accepted ILIKE")
        except EngineError as exc:
            assert exc.cls is ErrorClass.DIALECT_VIOLATION


def test_criterion_05_retention_law(gateway, dbs):
    start = time.perf_counter()
    rng = np.random.default_rng(7)
    n_q, p = 1000, 0.3
    valid_mask = rng.random((n_q, 8)) < p
    entries = [(f"Question: q{i}?  Table", [["SELECT a FROM t" if ok else "SELECT zz FROM t" for ok in row]])
               for i, row in enumerate(valid_mask)]
    model = ScriptedModel(entries)
    schema = dbs["toy"].schema()
    validity = []
    for i in range(n_q):
        cands = sample_candidates(NLQuestion(f"q{i}", f"q{i}?", "toy"), model, 8, "sqlite", schema)
        valid, _ = partition(cands, gateway, RewardPolicy(RewardMode.EXEC_ONLY), dialect="sqlite", db_ref="toy")
        ok = {c.sample_index for c in valid}
        validity.append([j in ok for j in range(8)])
    assert validity == valid_mask.tolist()
    for n, rate in empirical_retention(validity, [1, 2, 4, 8]):
        assert abs(rate - (1 - 0.7 ** n)) <= 0.03, (n, rate)

    trials = 10 ** 6
    hits = (np.random.default_rng(11).binomial(8, p, size=trials) > 0).mean()
    closed = retention_rate(p, 8)
    sigma = math.sqrt(closed * (1 - closed) / trials)
    assert abs(hits - closed) <= 3 * sigma
    assert time.perf_counter() - start < 30


def test_criterion_06_best_and_worst_of_n(dbs, gateway):
    model = ScriptedModel.from_file(DATA / "script.yaml")
    opponent = NLQuestion("wiki-jan16", "Who is the Opponent on January 16?", "table_2_16946097_6")
    db = dbs[opponent.db_ref]
    gold = run_sql("SELECT Opponent FROM table_2_16946097_6 WHERE Date = 'January 16'", db, "postgres")
    cands = sample_candidates(opponent, model, 8, "postgres", db.schema())
    valid, neg = partition(cands, gateway, RewardPolicy(RewardMode.EXEC_AND_MATCH), gold, dialect="postgres",
                           db_ref=opponent.db_ref)
    assert (len(valid), len(neg)) == (1, 7)
    assert "Date = 'January 16'" in best_of_n_select(valid).sql

    hurricanes = NLQuestion("wiki-hurricanes",
                            "What was the record after the game in which the Hurricanes scored 24 points?",
                            "table_1_20928682_1")
    db = dbs[hurricanes.db_ref]
    gold = run_sql("SELECT Record FROM table_1_20928682_1 WHERE Hurricanes_points::FLOAT = 24", db, "postgres")
    cands = sample_candidates(hurricanes, model, 8, "postgres", db.schema())
    valid, neg = partition(cands, gateway, RewardPolicy(RewardMode.EXEC_AND_MATCH), gold, dialect="postgres",
                           db_ref=hurricanes.db_ref)
    [pair] = build_preference_pairs(hurricanes, "postgres", valid, neg)
    prefix = "SELECT table_1_20928682_1.Record FROM table_1_20928682_1 WHERE table_1_20928682_1.Hurricanes_points"
    assert pair.chosen == prefix + "::FLOAT = 24"
    assert pair.rejected == prefix + "::FLOAT > 24"


def test_criterion_07_translator_loop(gateway, dbs):
    sql = "SELECT count(*) FROM head WHERE age > 56"
    pair = TranslationPair("dm", "How many heads are older than 56?", "department_management", sql)
    schema = dbs["department_management"].schema()
    prompts = []
    model = ScriptedModel([("*", [[sql], ["SELECT count(*) FROM head WHERE head.age::INTEGER > 56"]])])
    out = translate_with_feedback(pair, "postgres", model, gateway, schema,
                                  on_prompt=lambda r, p: prompts.append(p))
    assert out.success and out.rounds_used == 2 and len(prompts) == 2
    assert out.attempts[0].report.raw_error in prompts[1]

    stuck = ScriptedModel([("*", [[sql]] * 5)])
    out = translate_with_feedback(pair, "postgres", stuck, gateway, schema, config=TranslateConfig(max_rounds=3))
    assert not out.success and out.rounds_used == 3
    stats = IterationStats.from_outcomes([out], 3)
    assert stats.failed == [1, 1, 1]

    test_translate.test_failures_per_round_never_increase(gateway, dbs)


def test_criterion_08_gold_self_consistency(gateway):
    start = time.perf_counter()
    paths = sorted((DATA / "benchmark").glob("*.jsonl"))
    assert len(paths) == 4
    for path in paths:
        bench = load_benchmark(path)
        report = evaluate([(b.id, b.gold_sql) for b in bench], bench, gateway)
        assert report.overall.total == len(bench) and report.overall.accuracy == 100.0, path.name
    assert time.perf_counter() - start < 10


def test_criterion_09_deterministic_runs(tmp_path, capsys):
    cfg = write_config(tmp_path)
    a, b = tmp_path / "first", tmp_path / "second"
    assert main(["--config", str(cfg), "run", "--out", str(a)]) == 0
    assert main(["--config", str(cfg), "--workers", "3", "run", "--out", str(b)]) == 0
    capsys.readouterr()
    assert tree(a) and tree(a) == tree(b)
    assert manifest_without_times(a) == manifest_without_times(b)
    assert json.loads((a / "manifest.json").read_text())["stages"]["report"]["status"] == "done"


PROPERTY_SUITES = [
    test_sampling.test_partition_is_complete_and_disjoint,
    test_gateway.test_exec_and_match_never_exceeds_exec_only,
    test_gateway.test_compare_is_an_equivalence_relation,
    test_records.test_record_round_trip,
    test_sampling.test_retention_is_monotone,
]


def test_criterion_10_invariant_suites():
    start = time.perf_counter()
    for suite in PROPERTY_SUITES:
        assert suite.hypothesis.inner_test is not None
        assert suite._hypothesis_internal_use_settings.max_examples >= 1000, suite.__name__
        suite()
    assert time.perf_counter() - start < 120
