"""Model gateway: scripted model, HTTP client, rate limiting, extraction and templates."""

from __future__ import annotations

import json

import httpx
import pytest

from dialect_forge.llm import (ExtractionError, GenerationError, GenRequest, HttpChatModel, ScoreUnavailable,
                               ScriptedModel, ScriptUnderrun, TemplateStore, TokenBucket, TransportError,
                               default_templates, extract_sql, generate, model_from_config, prompt_hash,
                               render_question_gen_prompt, render_text2sql_prompt, render_translation_prompt)
from dialect_forge.records import SchemaInfo

from .conftest import DATA


def test_scripted_matchers_and_consumption():
    m = ScriptedModel([
        ("alpha", [["A1"], ["A2"]]),
        (["beta", "gamma"], [["BG"]]),
        (f"hash:{prompt_hash('exact prompt')[:10]}", [["H"]]),
        ("*", [["ANY", "ANY2"]]),
    ])
    assert generate(m, GenRequest("xx alpha")) == ["A1"]
    assert generate(m, GenRequest("alpha again")) == ["A2"]
    assert generate(m, GenRequest("gamma then beta")) == ["BG"]
    assert generate(m, GenRequest("exact prompt")) == ["H"]
    # alpha is exhausted, so the wildcard serves it
    assert generate(m, GenRequest("alpha", n=2)) == ["ANY", "ANY2"]
    assert m.remaining() == 0
    with pytest.raises(ScriptUnderrun, match="exhausted"):
        generate(m, GenRequest("alpha"))
    assert len(m.calls) == 6


def test_scripted_underrun_and_no_match():
    m = ScriptedModel([("q", [["one"]])])
    with pytest.raises(ScriptUnderrun, match="2 requested"):
        m.generate(GenRequest("q", n=2))
    with pytest.raises(ScriptUnderrun, match="no entry matches"):
        m.generate(GenRequest("zzz"))


def test_scripted_from_dict_and_scores():
    m = ScriptedModel.from_dict({"entries": [{"match": ["a", "b"], "responses": [["x"]]}],
                                 "scores": [{"question": "q", "sql": "s", "score": -1.5}]})
    assert m.generate(GenRequest("b a")) == ["x"]
    assert m.score("q", "s") == -1.5
    with pytest.raises(ScoreUnavailable):
        m.score("q", "other")
    with pytest.raises(ValueError, match="needs 'match'"):
        ScriptedModel.from_dict({"entries": [{"responses": []}]})


def test_bundled_script_loads():
    m = model_from_config({"kind": "scripted", "script": "script.yaml"}, DATA)
    assert m.remaining() > 0 and m.identity.startswith("scripted:")
    with pytest.raises(ValueError, match="unknown model kind"):
        model_from_config({"kind": "oracle-of-delphi"})


def test_request_validation():
    for bad in (GenRequest("p", n=0), GenRequest("p", top_p=1.5), GenRequest("p", temperature=-1),
                GenRequest("p", top_k=-1)):
        with pytest.raises(ValueError):
            bad.validate()


def test_generate_checks_count():
    class Short:
        identity = "short"

        def generate(self, req):
            return ["only one"]

    with pytest.raises(GenerationError, match="returned 1"):
        generate(Short(), GenRequest("p", n=3))


# -- http ----------------------------------------------------------------------------------------

def _chat(contents):
    return {"choices": [{"message": {"content": c}} for c in contents]}


def test_http_retries_then_succeeds(monkeypatch):
    monkeypatch.setenv("TEST_KEY", "sekrit")
    seen = []
    statuses = iter([429, 503])

    def handler(request):
        seen.append(request)
        code = next(statuses, 200)
        if code != 200:
            return httpx.Response(code)
        body = json.loads(request.content)
        return httpx.Response(200, json=_chat([f"SELECT {i}" for i in range(body["n"])]))

    sleeps = []
    m = HttpChatModel("http://llm.test/v1/chat", "m1", key_env_var="TEST_KEY", rpm=6000,
                      transport=httpx.MockTransport(handler), sleep=sleeps.append, backoff=0.5)
    out = m.generate(GenRequest("prompt", n=2, temperature=0.7, top_p=0.9, seed=3))
    assert out == ["SELECT 0", "SELECT 1"]
    assert len(seen) == 3
    assert seen[0].headers["authorization"] == "Bearer sekrit"
    body = json.loads(seen[-1].content)
    assert body["messages"] == [{"role": "user", "content": "prompt"}]
    assert body["temperature"] == 0.7 and body["top_p"] == 0.9 and body["seed"] == 3
    assert "top_k" not in body
    assert [s for s in sleeps if s in (0.5, 1.0)] == [0.5, 1.0]
    m.close()


def test_http_tops_up_short_responses():
    def handler(request):
        return httpx.Response(200, json=_chat(["SELECT 1"]))

    m = HttpChatModel("http://x", "m", transport=httpx.MockTransport(handler), sleep=lambda s: None, rpm=6000)
    assert m.generate(GenRequest("p", n=3)) == ["SELECT 1"] * 3


def test_http_gives_up_and_fails_fast():
    m = HttpChatModel("http://x", "m", transport=httpx.MockTransport(lambda r: httpx.Response(500)),
                      sleep=lambda s: None, max_attempts=3, rpm=6000)
    with pytest.raises(TransportError, match="after 3 attempts"):
        m.generate(GenRequest("p"))
    calls = []

    def unauthorized(request):
        calls.append(1)
        return httpx.Response(401, text="bad key")

    m = HttpChatModel("http://x", "m", transport=httpx.MockTransport(unauthorized), sleep=lambda s: None,
                      rpm=6000)
    with pytest.raises(TransportError, match="401"):
        m.generate(GenRequest("p"))
    assert len(calls) == 1
    with pytest.raises(ScoreUnavailable):
        m.score("q", "s")


def test_http_transport_errors_are_retried():
    attempts = []

    def handler(request):
        attempts.append(1)
        if len(attempts) == 1:
            raise httpx.ConnectError("refused")
        return httpx.Response(200, json=_chat(["SELECT 9"]))

    m = HttpChatModel("http://x", "m", transport=httpx.MockTransport(handler), sleep=lambda s: None, rpm=6000)
    assert m.generate(GenRequest("p")) == ["SELECT 9"]


def test_http_requires_key(monkeypatch):
    monkeypatch.delenv("MISSING_KEY_VAR", raising=False)
    with pytest.raises(GenerationError, match="MISSING_KEY_VAR"):
        HttpChatModel("http://x", "m", key_env_var="MISSING_KEY_VAR")


def test_token_bucket_with_fake_clock():
    now = [0.0]
    slept = []

    def sleep(s):
        slept.append(s)
        now[0] += s

    tb = TokenBucket(60, capacity=2, clock=lambda: now[0], sleep=sleep)
    tb.acquire()
    tb.acquire()
    assert slept == []
    tb.acquire()
    assert slept == [pytest.approx(1.0)]
    now[0] += 10
    tb.acquire()
    tb.acquire()
    assert len(slept) == 1
    with pytest.raises(ValueError):
        TokenBucket(0)


# -- extraction ----------------------------------------------------------------------------------

@pytest.mark.parametrize("raw, expected", [
    ("SELECT a FROM t;", "SELECT a FROM t"),
    ("Sure! Here it is:\n```sql\nSELECT a\nFROM t;\n```\nDone.", "SELECT a\nFROM t"),
    ("```sql\nSELECT 1\n```\nbetter:\n```\nSELECT 2;\n```", "SELECT 2"),
    ("The query is\nselect x from y where z = 'a;b';\ntrailing words", "select x from y where z = 'a;b'"),
    ("WITH c AS (SELECT 1) SELECT * FROM c\n\nExplanation follows.", "WITH c AS (SELECT 1) SELECT * FROM c"),
    ("   SELECT `a;` FROM t", "SELECT `a;` FROM t"),
])
def test_extract_sql(raw, expected):
    assert extract_sql(raw) == expected


def test_extract_sql_failure():
    with pytest.raises(ExtractionError):
        extract_sql("I cannot answer that.")


# -- templates -----------------------------------------------------------------------------------

def test_text2sql_prompt_is_exact():
    schema = SchemaInfo((("table_2_16946097_6", (("Date", "text"), ("H_A_N", "text"), ("Opponent", "text"),
                                                 ("Score", "text"), ("Record", "text"))),))
    got = render_text2sql_prompt("Who is the Opponent on January 16?", schema, "postgres")
    assert got == ("You need to generate a Postgres SQL based on the following question and table information. "
                   "Question: Who is the Opponent on January 16?  Table and columns information: "
                   "table_2_16946097_6: Date, H_A_N, Opponent, Score, Record.\n")


def test_translation_prompt_carries_prior_errors(dbs):
    schema = dbs["department_management"].schema()
    p = render_translation_prompt("SELECT count(*) FROM head WHERE age > 56", "How many heads?", schema,
                                  "postgres", [("SELECT x", "ERROR:  boom")], db_id="department_management")
    assert "Input: SELECT count(*) FROM head WHERE age > 56\tdepartment_management\nOutput:" in p
    assert "Attempt 1: SELECT x\nError: ERROR:  boom" in p
    clean = render_translation_prompt("SELECT 1", "q", schema, "mysql")
    assert "Previous attempts" not in clean and "MySQL" in clean
    with pytest.raises(ValueError, match="equals source"):
        render_translation_prompt("SELECT 1", "q", schema, "sqlite")


def test_every_target_has_a_versioned_template():
    store = default_templates()
    for name in ("translate_postgres", "translate_mysql", "translate_oracle", "text2sql", "question_gen"):
        assert store.exists(name) and store.version(name) == "1"


def test_question_gen_prompt_uses_rows(dbs):
    p = render_question_gen_prompt(dbs["department_management"], rows_per_table=2, k=3)
    assert "Generate 3 new, distinct questions about the database department_management" in p
    assert p.count("\n") > 3


def test_missing_template_and_strict_variables(tmp_path):
    store = TemplateStore(tmp_path)
    with pytest.raises(FileNotFoundError):
        store.render("text2sql", question="q")
    (tmp_path / "t.txt").write_text("Hello {{ who }}")
    assert store.version("t") == "unversioned"
    with pytest.raises(Exception, match="who"):
        store.render("t")
