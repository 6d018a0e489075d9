"""Translation bootstrapping: propose target-dialect SQL, execute it, feed the
error back, and repeat until the query runs or the round cap is hit."""

from __future__ import annotations

import concurrent.futures as cf
import json
import logging
import os
import re
import shlex
import subprocess
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Iterable, Mapping, Optional, Sequence

from .gateway import ExecReport, Gateway, GatewayError, RewardMode, RewardPolicy, reward
from .engine import ResultTable
from .llm import (
    ExtractionError, GenerationError, GenerationModel, GenRequest, TemplateStore, extract_sql, generate,
    render_translation_prompt,
)
from .records import (
    DatasetRecord, Dialect, FormatError, Provenance, RecordStatus, SchemaInfo, atomic_write_text, dumps_line,
    iter_lines, parse_dialect, write_jsonl, write_records,
)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TranslationPair:
    id: str
    question: str
    db_id: str
    source_sql: str
    question_id: str = ""
    source_dialect: Dialect = Dialect.SQLITE

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> TranslationPair:
        for name in ("id", "question", "db_id", "sql"):
            if name not in d:
                raise FormatError(f"missing field {name}")
        return cls(str(d["id"]), str(d["question"]), str(d["db_id"]), str(d["sql"]),
                   str(d.get("question_id") or d["id"]), parse_dialect(d.get("dialect", "sqlite")))


def read_pairs(path: str | os.PathLike) -> list[TranslationPair]:
    pairs = []
    seen = set()
    for lineno, line in iter_lines(path):
        try:
            p = TranslationPair.from_dict(json.loads(line))
        except (FormatError, json.JSONDecodeError) as exc:
            raise FormatError(f"{path}:{lineno}: {exc}") from None
        if p.id in seen:
            raise FormatError(f"{path}:{lineno}: duplicate pair id {p.id!r}")
        seen.add(p.id)
        pairs.append(p)
    return pairs


@dataclass(frozen=True)
class Attempt:
    sql: str
    report: ExecReport
    origin: str = "model"  # "model" or "prefilter"

    def to_dict(self) -> dict[str, Any]:
        return {"origin": self.origin, "sql": self.sql, **self.report.summary()}


@dataclass(frozen=True)
class TranslationOutcome:
    record: DatasetRecord
    attempts: tuple[Attempt, ...]
    rounds_used: int
    success: bool
    prefilter: Optional[Attempt] = None  # a failed pre-filter attempt, fed into round 1
    aborted: Optional[str] = None  # transport failure message

    def to_dict(self) -> dict[str, Any]:
        return {
            "aborted": self.aborted,
            "attempts": [a.to_dict() for a in self.attempts],
            "id": self.record.id,
            "prefilter": self.prefilter.to_dict() if self.prefilter else None,
            "record": self.record.to_dict(),
            "rounds_used": self.rounds_used,
            "success": self.success,
        }

    @property
    def model_attempts(self) -> tuple[Attempt, ...]:
        return tuple(a for a in self.attempts if a.origin == "model")


Prefilter = Callable[[str, Dialect, Dialect], Optional[str]]


def identity_prefilter(sql: str, source: Dialect, target: Dialect) -> Optional[str]:
    """Pass the source SQL through unchanged; solves queries already portable."""
    return sql


class CommandPrefilter:
    """Runs an external rule-based transpiler.

    The command gets the SQL on stdin and ``{source}``/``{target}``
    placeholders substituted in its arguments; stdout is the translation.
    A non-zero exit means "could not translate".
    """

    def __init__(self, command: str | Sequence[str], timeout: float = 30.0):
        self.argv = shlex.split(command) if isinstance(command, str) else list(command)
        self.timeout = timeout

    def __call__(self, sql: str, source: Dialect, target: Dialect) -> Optional[str]:
        argv = [a.replace("{source}", source.value).replace("{target}", target.value) for a in self.argv]
        try:
            proc = subprocess.run(argv, input=sql, capture_output=True, text=True, timeout=self.timeout)
        except (OSError, subprocess.TimeoutExpired) as exc:
            log.warning("prefilter failed: %s", exc)
            return None
        if proc.returncode != 0:
            return None
        out = proc.stdout.strip()
        return out or None


def make_prefilter(spec: str | None) -> Optional[Prefilter]:
    if spec in (None, "", "none"):
        return None
    if spec == "identity":
        return identity_prefilter
    if spec.startswith("command:"):
        return CommandPrefilter(spec[len("command:"):])
    raise ValueError(f"unknown prefilter {spec!r}; expected none, identity or command:<cmd>")


def _strip_db_id(sql: str, db_id: str) -> str:
    """Drop a trailing db_id the model copied from the tab-separated input format."""
    if db_id:
        return re.sub(r"[\t ]+" + re.escape(db_id) + r"\s*$", "", sql).rstrip().rstrip(";").rstrip()
    return sql


def _extraction_failure() -> ExecReport:
    return ExecReport.failure("syntax", "could not extract a SQL statement from the model output", 0.0, "extract")


@dataclass(frozen=True)
class TranslateConfig:
    max_rounds: int = 3
    reward: RewardPolicy = RewardPolicy(RewardMode.EXEC_ONLY)
    temperature: float = 0.7
    top_p: float = 0.9
    top_k: int = 50
    max_tokens: int = 512
    seed: Optional[int] = None
    timeout: Optional[float] = None

    def __post_init__(self):
        if self.max_rounds < 1:
            raise ValueError("max_rounds must be >= 1")


def translate_with_feedback(pair: TranslationPair, target: Dialect | str, model: GenerationModel,
                            gateway: Gateway, schema: SchemaInfo, *, config: TranslateConfig = TranslateConfig(),
                            prefilter: Optional[Prefilter] = None, gold: ResultTable | None = None,
                            templates: TemplateStore | None = None,
                            on_prompt: Callable[[int, str], None] | None = None) -> TranslationOutcome:
    """Translate one query, feeding every failed attempt's error into the next prompt."""
    target = parse_dialect(target)
    policy = config.reward
    if policy.mode is RewardMode.EXEC_AND_MATCH and gold is None:
        raise ValueError("exec-and-match translation needs the source query's result")

    def check(sql: str) -> tuple[ExecReport, int]:
        rep = gateway.run(sql, target, pair.db_id, config.timeout)
        return rep, reward(rep, gold, policy) if policy.mode is RewardMode.EXEC_AND_MATCH else reward(rep)

    def outcome(attempts: list[Attempt], ok: bool, pre: Optional[Attempt] = None,
                aborted: Optional[str] = None) -> TranslationOutcome:
        final = attempts[-1].sql if attempts else pair.source_sql
        rec = DatasetRecord(
            id=f"{pair.id}:{target.value}", question_id=pair.question_id or pair.id, db_id=pair.db_id,
            dialect=target, sql=final, round=max(len(attempts) - 1, 0),
            status=RecordStatus.VALID if ok else RecordStatus.INVALID, provenance=Provenance.TRANSLATED)
        return TranslationOutcome(rec, tuple(attempts), len(attempts), ok, pre, aborted)

    prior: list[tuple[str, str]] = []
    pre_attempt = None
    if prefilter is not None:
        proposal = prefilter(pair.source_sql, pair.source_dialect, target)
        if proposal:
            rep, r = check(proposal)
            pre_attempt = Attempt(proposal, rep, "prefilter")
            if r == 1:
                return outcome([pre_attempt], True)
            prior.append((proposal, _feedback_text(rep)))

    attempts: list[Attempt] = []
    for rnd in range(config.max_rounds):
        prompt = render_translation_prompt(pair.source_sql, pair.question, schema, target, prior,
                                           db_id=pair.db_id, source=pair.source_dialect, templates=templates)
        if on_prompt is not None:
            on_prompt(rnd, prompt)
        req = GenRequest(prompt, 1, config.temperature, config.top_p, config.top_k, config.max_tokens,
                         seed=config.seed)
        try:
            raw = generate(model, req)[0]
        except GenerationError as exc:
            log.warning("translation of %s to %s aborted: %s", pair.id, target.value, exc)
            return outcome(attempts, False, pre_attempt, str(exc))
        try:
            sql = _strip_db_id(extract_sql(raw), pair.db_id)
        except ExtractionError:
            rep = _extraction_failure()
            attempts.append(Attempt(raw.strip(), rep))
            prior.append((raw.strip(), rep.raw_error))
            continue
        rep, r = check(sql)
        attempts.append(Attempt(sql, rep))
        if r == 1:
            return outcome(attempts, True, pre_attempt)
        prior.append((sql, _feedback_text(rep)))
    return outcome(attempts, False, pre_attempt)


def _feedback_text(rep: ExecReport) -> str:
    if rep.ok:
        return "The query executed but returned a different result from the source query."
    return rep.raw_error or rep.error_class or "error"


@dataclass
class IterationStats:
    proposed: list[int] = field(default_factory=list)
    failed: list[int] = field(default_factory=list)
    unresolved: int = 0
    prefilter_solved: int = 0
    total: int = 0

    @classmethod
    def from_outcomes(cls, outcomes: Iterable[TranslationOutcome], max_rounds: int) -> IterationStats:
        s = cls([0] * max_rounds, [0] * max_rounds)
        for o in outcomes:
            s.total += 1
            if o.success and o.attempts and o.attempts[-1].origin == "prefilter":
                s.prefilter_solved += 1
                continue
            model = o.model_attempts
            for r, a in enumerate(model):
                s.proposed[r] += 1
                if not (o.success and r == len(model) - 1):
                    s.failed[r] += 1
            if not o.success:
                s.unresolved += 1
        return s

    def to_dict(self) -> dict[str, Any]:
        return {"failed": self.failed, "prefilter_solved": self.prefilter_solved, "proposed": self.proposed,
                "total": self.total, "unresolved": self.unresolved}


@dataclass
class BootstrapResult:
    records: list[DatasetRecord]
    unresolved: list[TranslationOutcome]
    stats: dict[str, IterationStats]


class Journal:
    """Append-only log of finished work items, for crash-safe resume."""

    def __init__(self, path: str | os.PathLike):
        self.path = Path(path)
        self._lock = threading.Lock()

    def load(self) -> dict[str, dict[str, Any]]:
        done: dict[str, dict[str, Any]] = {}
        if not self.path.exists():
            return done
        for _, line in iter_lines(self.path):
            try:
                obj = json.loads(line)
            except json.JSONDecodeError:
                log.warning("ignoring torn journal line in %s", self.path)
                continue
            done[obj["key"]] = obj
        return done

    def append(self, key: str, payload: Mapping[str, Any]) -> None:
        line = dumps_line({"key": key, **payload}) + "\n"
        with self._lock:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            with open(self.path, "a", encoding="utf-8") as fh:
                fh.write(line)
                fh.flush()
                os.fsync(fh.fileno())

    def reset(self) -> None:
        if self.path.exists():
            self.path.unlink()


def _outcome_from_dict(d: Mapping[str, Any]) -> TranslationOutcome:
    def att(a: Mapping[str, Any]) -> Attempt:
        status = a["status"]
        if status == "ok":
            rep = ExecReport.success(ResultTable((), ()), 0.0, "journal")
        else:
            rep = ExecReport.failure(a["error_class"], a.get("error", ""), 0.0, "journal")
        return Attempt(a["sql"], rep, a.get("origin", "model"))

    return TranslationOutcome(
        DatasetRecord.from_dict(d["record"]), tuple(att(a) for a in d["attempts"]), d["rounds_used"],
        d["success"], att(d["prefilter"]) if d.get("prefilter") else None, d.get("aborted"))


def run_bootstrap(pairs: Sequence[TranslationPair], targets: Sequence[Dialect | str], model: GenerationModel,
                  gateway: Gateway, schemas: Callable[[str], SchemaInfo], out_dir: str | os.PathLike, *,
                  config: TranslateConfig = TranslateConfig(), prefilter: Optional[Prefilter] = None,
                  gold: Callable[[TranslationPair], ResultTable] | None = None,
                  templates: TemplateStore | None = None, workers: int = 1,
                  resume: bool = True) -> BootstrapResult:
    """Translate every pair into every target dialect.

    Writes ``d_trans.jsonl`` (valid records), ``unresolved.jsonl`` (failed
    items with their attempt history), ``stats.json`` and the resume journal
    ``attempts.jsonl`` into ``out_dir``.
    """
    targets = [parse_dialect(t) for t in targets]
    out = Path(out_dir)
    # configuration problems abort before any model call
    for t in targets:
        b = gateway.backend(t)
        for p in pairs:
            if not b.has_db(p.db_id):
                raise GatewayError(f"pair {p.id}: database {p.db_id!r} unavailable for {t.value}")
    journal = Journal(out / "attempts.jsonl")
    if not resume:
        journal.reset()
    done = journal.load()

    work = [(p, t) for t in targets for p in pairs]

    def one(item: tuple[TranslationPair, Dialect]) -> TranslationOutcome:
        p, t = item
        key = f"{p.id}:{t.value}"
        if key in done:
            return _outcome_from_dict(done[key])
        o = translate_with_feedback(p, t, model, gateway, schemas(p.db_id), config=config, prefilter=prefilter,
                                    gold=gold(p) if gold is not None else None, templates=templates)
        journal.append(key, o.to_dict())
        log.info(json.dumps({"event": "translated", "item": key, "rounds": o.rounds_used, "success": o.success}))
        return o

    if workers > 1:
        with cf.ThreadPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(one, work))
    else:
        outcomes = [one(w) for w in work]

    records = [o.record for o in outcomes if o.success]
    unresolved = [o for o in outcomes if not o.success]
    stats = {t.value: IterationStats.from_outcomes([o for o in outcomes if o.record.dialect is t],
                                                   config.max_rounds) for t in targets}
    write_records(out / "d_trans.jsonl", records)
    write_jsonl(out / "unresolved.jsonl", (o.to_dict() for o in unresolved))
    atomic_write_text(out / "stats.json",
                      json.dumps({k: v.to_dict() for k, v in stats.items()}, indent=2, sort_keys=True) + "\n")
    return BootstrapResult(records, unresolved, stats)
