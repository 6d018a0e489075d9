"""Execution-based rejection sampling, question augmentation and preference pairs."""

from __future__ import annotations

import enum
import hashlib
import logging
import re
from dataclasses import dataclass, replace
from typing import Any, Iterable, Mapping, Optional, Sequence

from .engine import InMemoryDb, ResultTable
from .gateway import ExecReport, Gateway, RewardMode, RewardPolicy, Status, reward
from .llm import (
    ExtractionError, GenerationModel, GenRequest, TemplateStore, extract_sql, generate,
    render_question_gen_prompt, render_text2sql_prompt,
)
from .records import (
    DatasetRecord, Dialect, NLQuestion, PreferenceRecord, Provenance, QuestionSource, RecordStatus, SchemaInfo,
    parse_dialect,
)

log = logging.getLogger(__name__)

EXTRACTION_ERROR = "could not extract a SQL statement from the model output"


@dataclass(frozen=True)
class Candidate:
    sql: str
    report: Optional[ExecReport]
    sample_index: int
    extraction_ok: bool = True
    reward: Optional[int] = None

    def __post_init__(self):
        if not self.extraction_ok and (self.report is None or self.report.error_class != "syntax"):
            raise ValueError("a candidate without extractable SQL must carry a syntax-error report")

    @property
    def failure_kind(self) -> Optional[str]:
        """None for valid candidates; otherwise extraction, an error class, or wrong-result."""
        if self.reward == 1:
            return None
        if not self.extraction_ok:
            return "extraction"
        if self.report is not None and not self.report.ok:
            return self.report.error_class
        return "wrong-result"


class Severity(enum.IntEnum):
    """Failure severity for worst-of-N selection; larger is worse."""

    WRONG_RESULT = 0
    RUNTIME = 1
    SEMANTIC = 2  # unknown object, type mismatch, strict GROUP BY
    SYNTAX = 3  # parse error or dialect violation
    EXTRACTION = 4


_SEVERITY = {
    "extraction": Severity.EXTRACTION,
    "syntax": Severity.SYNTAX,
    "dialect-violation": Severity.SYNTAX,
    "unknown-object": Severity.SEMANTIC,
    "type": Severity.SEMANTIC,
    "strict-group-by": Severity.SEMANTIC,
    "runtime": Severity.RUNTIME,
    "timeout": Severity.RUNTIME,
    "wrong-result": Severity.WRONG_RESULT,
}


def severity(c: Candidate) -> Severity:
    kind = c.failure_kind
    if kind is None:
        raise ValueError("valid candidates have no failure severity")
    return _SEVERITY[kind]


def _extraction_report() -> ExecReport:
    return ExecReport.failure("syntax", EXTRACTION_ERROR, 0.0, "extract")


def candidates_from_completions(completions: Sequence[str]) -> list[Candidate]:
    out = []
    for i, raw in enumerate(completions):
        try:
            out.append(Candidate(extract_sql(raw), None, i))
        except ExtractionError:
            out.append(Candidate(raw.strip(), _extraction_report(), i, extraction_ok=False))
    return out


def sample_candidates(question: NLQuestion, model: GenerationModel, n: int, dialect: Dialect | str,
                      schema: SchemaInfo, *, temperature: float = 0.7, top_p: float = 0.9, top_k: int = 50,
                      max_tokens: int = 512, seed: int | None = None,
                      templates: TemplateStore | None = None) -> list[Candidate]:
    """Draw ``n`` completions for the question and extract SQL from each."""
    if n < 1:
        raise ValueError("n must be >= 1")
    prompt = render_text2sql_prompt(question.text, schema, dialect, templates)
    completions = generate(model, GenRequest(prompt, n, temperature, top_p, top_k, max_tokens, seed=seed))
    return candidates_from_completions(completions)


def score_candidates(candidates: Sequence[Candidate], gateway: Gateway, dialect: Dialect | str, db_ref: str,
                     policy: RewardPolicy = RewardPolicy(), gold: ResultTable | None = None, *,
                     order_sensitive: bool | None = None, timeout: float | None = None,
                     workers: int = 1) -> list[Candidate]:
    """Execute candidates that lack a report and attach rewards."""
    todo = [c for c in candidates if c.report is None]
    reports = gateway.run_many([(c.sql, db_ref) for c in todo], dialect, workers=workers, timeout=timeout)
    by_index = {id(c): r for c, r in zip(todo, reports)}
    out = []
    for c in candidates:
        rep = c.report if c.report is not None else by_index[id(c)]
        r = reward(rep, gold, policy, order_sensitive=order_sensitive)
        out.append(replace(c, report=rep, reward=r))
    return out


def partition(candidates: Sequence[Candidate], gateway: Gateway | None = None, policy: RewardPolicy = RewardPolicy(),
              gold: ResultTable | None = None, *, dialect: Dialect | str | None = None, db_ref: str | None = None,
              order_sensitive: bool | None = None) -> tuple[list[Candidate], list[Candidate]]:
    """Split candidates into (valid, neg) by reward; every candidate lands in exactly one list."""
    if any(c.reward is None for c in candidates):
        if gateway is None or dialect is None or db_ref is None:
            raise ValueError("unscored candidates need a gateway, dialect and db_ref")
        candidates = score_candidates(candidates, gateway, dialect, db_ref, policy, gold,
                                      order_sensitive=order_sensitive)
    valid = [c for c in candidates if c.reward == 1]
    neg = [c for c in candidates if c.reward != 1]
    return valid, neg


def best_of_n_select(valid: Sequence[Candidate]) -> Candidate:
    if not valid:
        raise ValueError("best-of-N needs at least one valid candidate")
    return min(valid, key=lambda c: c.sample_index)


def worst_of_n_select(neg: Sequence[Candidate], n_cap: int = 8) -> Candidate:
    """Most severe failure among the first ``n_cap`` negatives; ties go to the earliest draw."""
    if not neg:
        raise ValueError("worst-of-N needs at least one negative candidate")
    pool = sorted(neg, key=lambda c: c.sample_index)[:n_cap]
    return min(pool, key=lambda c: (-severity(c), c.sample_index))


def build_preference_pairs(question: NLQuestion, dialect: Dialect | str, valid: Sequence[Candidate],
                           neg: Sequence[Candidate], *, n_cap: int = 8,
                           cross_product: bool = False) -> list[PreferenceRecord]:
    """One (best valid, worst negative) pair per question, or every valid x negative pair."""
    d = parse_dialect(dialect)
    if not valid or not neg:
        return []

    def pair(chosen: Candidate, rejected: Candidate, pid: str) -> PreferenceRecord:
        return PreferenceRecord(id=pid, question_id=question.id, db_id=question.db_ref, dialect=d,
                                chosen=chosen.sql, rejected=rejected.sql,
                                rejected_error_class=rejected.failure_kind or "wrong-result")

    if cross_product:
        out = []
        pool = sorted(neg, key=lambda c: c.sample_index)[:n_cap]
        for v in sorted(valid, key=lambda c: c.sample_index):
            for r in pool:
                if v.sql != r.sql:
                    out.append(pair(v, r, f"{question.id}:{d.value}:{v.sample_index}-{r.sample_index}"))
        return out
    chosen = best_of_n_select(valid)
    usable = [c for c in neg if c.sql != chosen.sql]
    if not usable:
        return []
    return [pair(chosen, worst_of_n_select(usable, n_cap), f"{question.id}:{d.value}")]


# -- retention --------------------------------------------------------------------------


def retention_rate(p: float, n: int) -> float:
    """Probability that at least one of ``n`` i.i.d. samples is valid."""
    if not 0 <= p <= 1:
        raise ValueError(f"p must be in [0, 1], got {p}")
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    return 1 - (1 - p) ** n


def empirical_retention(validity: Iterable[Sequence[bool]], ns: Sequence[int]) -> list[tuple[int, float]]:
    """Fraction of questions with a valid sample among their first n draws, for each n.

    ``validity`` holds one list per question, in draw order.
    """
    rows = [list(v) for v in validity]
    if not rows:
        raise ValueError("no questions in the sample log")
    need = max(ns)
    short = [i for i, r in enumerate(rows) if len(r) < need]
    if short:
        raise ValueError(f"{len(short)} questions have fewer than {need} samples")
    first = [next((i for i, ok in enumerate(r) if ok), None) for r in rows]
    return [(n, sum(1 for f in first if f is not None and f < n) / len(rows)) for n in ns]


# -- question augmentation ----------------------------------------------------------------

_LIST_MARKER = re.compile(r"^\s*(?:\d+[.)]|[-*•])\s*")


def normalize_question(text: str) -> str:
    return " ".join(text.casefold().split())


def _db_values(db: InMemoryDb) -> tuple[set[str], set[str]]:
    texts, numbers = set(), set()
    for t in db.tables.values():
        for row in t.rows:
            for v in row:
                if isinstance(v, str) and len(v.strip()) >= 3:
                    texts.add(v.strip().casefold())
                elif isinstance(v, (int, float)) and not isinstance(v, bool):
                    numbers.add(str(int(v)) if float(v).is_integer() else str(v))
    return texts, numbers


def is_value_grounded(text: str, db: InMemoryDb) -> bool:
    texts, numbers = _db_values(db)
    low = text.casefold()
    if any(v in low for v in texts):
        return True
    return any(tok in numbers for tok in re.findall(r"\d+(?:\.\d+)?", text))


def augment_questions(db: InMemoryDb, model: GenerationModel, k: int, *, rows_per_table: int = 5,
                      temperature: float = 0.7, top_p: float = 0.9, top_k: int = 50, seed: int | None = None,
                      templates: TemplateStore | None = None) -> list[NLQuestion]:
    """Ask the model for ``k`` questions about ``db``; drop duplicates and flag value-grounded ones."""
    if k <= 0:
        return []
    prompt = render_question_gen_prompt(db, rows_per_table=rows_per_table, k=k, templates=templates)
    raw = generate(model, GenRequest(prompt, 1, temperature, top_p, top_k, seed=seed))[0]
    seen = set()
    out = []
    for line in raw.splitlines():
        text = _LIST_MARKER.sub("", line).strip()
        if not text:
            continue
        key = normalize_question(text)
        if key in seen:
            continue
        seen.add(key)
        qid = f"aug:{db.db_id}:{hashlib.sha1(key.encode('utf-8')).hexdigest()[:10]}"
        out.append(NLQuestion(qid, text, db.db_id, QuestionSource.AUGMENTED, is_value_grounded(text, db)))
        if len(out) == k:
            break
    return out


# -- preference checking ------------------------------------------------------------------


def dpo_preference_check(scorer: GenerationModel, question: str, pair: PreferenceRecord) -> bool:
    """True iff the scorer strictly prefers the chosen query."""
    return scorer.score(question, pair.chosen) > scorer.score(question, pair.rejected)


def pairwise_accuracy(scorer: GenerationModel, items: Sequence[tuple[str, PreferenceRecord]]) -> float:
    if not items:
        raise ValueError("no preference pairs to check")
    return sum(dpo_preference_check(scorer, q, p) for q, p in items) / len(items)


# -- records ---------------------------------------------------------------------------


def candidate_to_dict(c: Candidate) -> dict[str, Any]:
    rep = c.report
    return {
        "error": rep.raw_error if rep is not None and rep.raw_error else None,
        "error_class": rep.error_class if rep is not None else None,
        "extraction_ok": c.extraction_ok,
        "index": c.sample_index,
        "reward": c.reward,
        "sql": c.sql,
        "status": rep.status.value if rep is not None else None,
    }


def candidate_from_dict(d: Mapping[str, Any]) -> Candidate:
    rep = None
    if d.get("status") == Status.OK.value:
        rep = ExecReport.success(ResultTable((), ()), 0.0, "log")
    elif d.get("status") is not None:
        rep = ExecReport.failure(d["error_class"], d.get("error") or "", 0.0, "log")
    return Candidate(d["sql"], rep, int(d["index"]), bool(d.get("extraction_ok", True)), d.get("reward"))


def dataset_records(question: NLQuestion, dialect: Dialect, candidates: Sequence[Candidate], *,
                    iteration: int = 0) -> tuple[list[DatasetRecord], list[DatasetRecord]]:
    """Valid and negative records for one question, one per distinct SQL text (first draw kept)."""
    prov = Provenance.AUGMENTED if question.source is QuestionSource.AUGMENTED else Provenance.SAMPLED
    valid, neg = [], []
    seen: set[tuple[bool, str]] = set()
    for c in sorted(candidates, key=lambda c: c.sample_index):
        ok = c.reward == 1
        if (ok, c.sql) in seen or not c.sql:
            continue
        seen.add((ok, c.sql))
        rec = DatasetRecord(f"{question.id}:{dialect.value}:s{c.sample_index}", question.id, question.db_ref,
                            dialect, c.sql, iteration, RecordStatus.VALID if ok else RecordStatus.INVALID, prov)
        (valid if ok else neg).append(rec)
    return valid, neg


def default_policy(gold: ResultTable | None) -> RewardPolicy:
    """exec-and-match when a gold result exists, exec-only otherwise."""
    return RewardPolicy(RewardMode.EXEC_AND_MATCH if gold is not None else RewardMode.EXEC_ONLY)
