"""Execution-accuracy evaluation and the closed-form analytics around it."""

from __future__ import annotations

import json
import logging
import os
import re
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from decimal import ROUND_HALF_UP, Decimal
from fractions import Fraction
from typing import Any, Iterable, Mapping, Optional, Sequence

import numpy as np
from sklearn.feature_extraction.text import TfidfVectorizer

from .engine import ResultTable
from .gateway import ComparePolicy, Gateway, compare_results
from .llm import ExtractionError, extract_sql
from .records import Dialect, FormatError, iter_lines, parse_dialect

log = logging.getLogger(__name__)

UNCATEGORIZED = "uncategorized"


@dataclass(frozen=True)
class BenchmarkItem:
    id: str
    question: str
    db_ref: str
    dialect: Dialect
    gold_sql: Optional[str] = None
    gold_result: Optional[ResultTable] = None
    category: Optional[str] = None

    def __post_init__(self):
        if self.gold_sql is None and self.gold_result is None:
            raise FormatError(f"benchmark item {self.id!r} has neither gold SQL nor a gold result")

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> BenchmarkItem:
        for name in ("id", "question", "db_id", "dialect"):
            if name not in d:
                raise FormatError(f"missing field {name}")
        gold = d.get("gold_result")
        return cls(str(d["id"]), str(d["question"]), str(d["db_id"]), parse_dialect(d["dialect"]),
                   d.get("gold_sql"), ResultTable.from_dict(gold) if gold is not None else None, d.get("category"))

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {"category": self.category, "db_id": self.db_ref, "dialect": self.dialect.value,
                               "gold_sql": self.gold_sql, "id": self.id, "question": self.question}
        if self.gold_result is not None:
            out["gold_result"] = self.gold_result.to_dict()
        return out


def load_benchmark(path: str | os.PathLike) -> list[BenchmarkItem]:
    """Items from a ``.jsonl`` file, or from every ``*.jsonl`` in a directory."""
    paths = sorted(os.path.join(path, f) for f in os.listdir(path) if f.endswith(".jsonl")) \
        if os.path.isdir(path) else [os.fspath(path)]
    items = []
    seen = set()
    for p in paths:
        for lineno, line in iter_lines(p):
            try:
                item = BenchmarkItem.from_dict(json.loads(line))
            except (FormatError, json.JSONDecodeError, ValueError) as exc:
                raise FormatError(f"{p}:{lineno}: {exc}") from None
            if item.id in seen:
                raise FormatError(f"{p}:{lineno}: duplicate benchmark id {item.id!r}")
            seen.add(item.id)
            items.append(item)
    return items


@dataclass
class Bucket:
    total: int = 0
    correct: int = 0

    @property
    def accuracy(self) -> float:
        return 100.0 * self.correct / self.total if self.total else 0.0

    def add(self, ok: bool) -> None:
        self.total += 1
        self.correct += int(ok)


@dataclass(frozen=True)
class ItemResult:
    id: str
    dialect: str
    category: str
    correct: bool
    error_class: Optional[str]


@dataclass
class EvalReport:
    items: list[ItemResult] = field(default_factory=list)
    gold_invalid: list[str] = field(default_factory=list)

    def by_dialect(self) -> dict[str, Bucket]:
        out: dict[str, Bucket] = defaultdict(Bucket)
        for r in self.items:
            out[r.dialect].add(r.correct)
        return dict(sorted(out.items()))

    def by_category(self) -> dict[tuple[str, str], Bucket]:
        out: dict[tuple[str, str], Bucket] = defaultdict(Bucket)
        for r in self.items:
            out[(r.dialect, r.category)].add(r.correct)
        return dict(sorted(out.items()))

    @property
    def overall(self) -> Bucket:
        b = Bucket()
        for r in self.items:
            b.add(r.correct)
        return b

    @property
    def macro(self) -> float:
        accs = [b.accuracy for b in self.by_dialect().values()]
        return macro_average(accs) if accs else 0.0

    def to_records(self) -> list[dict[str, Any]]:
        rows = [{"accuracy": round(b.accuracy, 2), "category": "*", "correct": b.correct, "dialect": d,
                 "total": b.total} for d, b in self.by_dialect().items()]
        rows += [{"accuracy": round(b.accuracy, 2), "category": c, "correct": b.correct, "dialect": d,
                  "total": b.total} for (d, c), b in self.by_category().items()]
        return rows

    def render(self) -> str:
        lines = [f"{'dialect':<10} {'category':<28} {'total':>6} {'correct':>8} {'acc%':>7}"]
        for r in self.to_records():
            lines.append(f"{r['dialect']:<10} {r['category']:<28} {r['total']:>6} {r['correct']:>8} "
                         f"{r['accuracy']:>7.2f}")
        lines.append(f"macro average: {self.macro:.2f}")
        if self.gold_invalid:
            lines.append(f"gold-invalid items excluded: {len(self.gold_invalid)}")
        return "\n".join(lines)


class GoldCache:
    """Gold results, executed once per (dialect, db, sql)."""

    def __init__(self, gateway: Gateway):
        self.gateway = gateway
        self._cache: dict[tuple[str, str, str], Optional[ResultTable]] = {}

    def get(self, item: BenchmarkItem) -> Optional[ResultTable]:
        if item.gold_result is not None:
            return item.gold_result
        key = (item.dialect.value, item.db_ref, item.gold_sql or "")
        if key not in self._cache:
            rep = self.gateway.run(item.gold_sql, item.dialect, item.db_ref)
            if not rep.ok:
                log.warning("gold SQL for %s fails: %s", item.id, rep.raw_error)
            self._cache[key] = rep.result if rep.ok else None
        return self._cache[key]


def evaluate(outputs: Sequence[tuple[str, str]], benchmark: Sequence[BenchmarkItem], gateway: Gateway,
             policy: ComparePolicy = ComparePolicy(), *, gold_cache: GoldCache | None = None,
             workers: int = 1) -> EvalReport:
    """Execution accuracy of raw model outputs against gold results."""
    index = {b.id: b for b in benchmark}
    for item_id, _ in outputs:
        if item_id not in index:
            raise KeyError(f"output for unknown benchmark item {item_id!r}")
    golds = gold_cache or GoldCache(gateway)
    report = EvalReport()
    work = []
    for item_id, raw in outputs:
        item = index[item_id]
        gold = golds.get(item)
        if gold is None:
            report.gold_invalid.append(item_id)
            continue
        try:
            sql = extract_sql(raw)
        except ExtractionError:
            sql = None
        work.append((item, gold, sql))
    if report.gold_invalid:
        log.info("excluded %d gold-invalid items", len(report.gold_invalid))

    by_dialect: dict[Dialect, list[int]] = defaultdict(list)
    for i, (item, _, sql) in enumerate(work):
        if sql is not None:
            by_dialect[item.dialect].append(i)
    reports: dict[int, Any] = {}
    for d, idxs in by_dialect.items():
        reps = gateway.run_many([(work[i][2], work[i][0].db_ref) for i in idxs], d, workers=workers)
        reports.update(zip(idxs, reps))

    for i, (item, gold, sql) in enumerate(work):
        cat = item.category or UNCATEGORIZED
        if sql is None:
            report.items.append(ItemResult(item.id, item.dialect.value, cat, False, "extraction"))
            continue
        rep = reports[i]
        if not rep.ok:
            report.items.append(ItemResult(item.id, item.dialect.value, cat, False, rep.error_class))
            continue
        cmp = policy.for_query(item.gold_sql or sql, item.dialect)
        ok = compare_results(rep.result, gold, cmp)
        report.items.append(ItemResult(item.id, item.dialect.value, cat, ok, None if ok else "wrong-result"))
    return report


def perturbation_breakdown(report: EvalReport) -> list[tuple[str, int, float]]:
    """(category, count, accuracy%) rows across dialects; untagged items fall under ``uncategorized``."""
    buckets: dict[str, Bucket] = defaultdict(Bucket)
    for r in report.items:
        buckets[r.category].add(r.correct)
    return [(c, b.total, b.accuracy) for c, b in sorted(buckets.items())]


# -- closed-form analytics --------------------------------------------------------------------


def _dec(x: float | int | str | Decimal) -> Decimal:
    return x if isinstance(x, Decimal) else Decimal(str(x))


def _two_places(x: Decimal) -> float:
    return float(x.quantize(Decimal("0.01"), rounding=ROUND_HALF_UP))


def macro_average(scores: Sequence[float]) -> float:
    """Unweighted mean, rounded half-up to 2 decimals (exact decimal arithmetic)."""
    if not scores:
        raise ValueError("macro average of an empty list")
    total = sum((_dec(s) for s in scores), Decimal(0))
    return _two_places(total / len(scores))


def flip_delta(dialect_scores: Sequence[float], sqlite_score: float) -> float:
    """Mean dialect accuracy minus SQLite accuracy, 2 decimals, half away from zero."""
    if not dialect_scores:
        raise ValueError("flip delta needs at least one dialect score")
    mean = sum((_dec(s) for s in dialect_scores), Decimal(0)) / len(dialect_scores)
    return _two_places(mean - _dec(sqlite_score))


def _frac(x: float | int | str) -> Fraction:
    return Fraction(str(x)) if isinstance(x, float) else Fraction(x)


def _round_half_away(x: Fraction) -> int:
    n = int(abs(x) + Fraction(1, 2))
    return n if x >= 0 else -n


def estimate_llm_calls(q: int, p_llm: float, rounds: int, p_prefilter: float = 0.0) -> int:
    """LLM calls for q queries when a pre-filter solves a share first and every
    round solves a fixed share of what remains."""
    if q < 0:
        raise ValueError("q must be >= 0")
    if rounds < 1:
        raise ValueError("rounds must be >= 1")
    for name, p in (("p_llm", p_llm), ("p_prefilter", p_prefilter)):
        if not 0 <= p <= 1:
            raise ValueError(f"{name} must be in [0, 1], got {p}")
    remaining = 1 - _frac(p_llm)
    per_query = sum((remaining ** r for r in range(rounds)), Fraction(0))
    return _round_half_away(_frac(q) * (1 - _frac(p_prefilter)) * per_query)


# -- diversity ------------------------------------------------------------------------------------

TOKEN_PATTERN = r"(?u)\b\w+\b"


def diversity_score(corpus_a: Sequence[str], corpus_b: Sequence[str]) -> float:
    """Mean over A of the best TF-IDF cosine match in B (vocabulary fit on A + B)."""
    if not corpus_a or not corpus_b:
        raise ValueError("diversity score needs two non-empty corpora")
    vec = TfidfVectorizer(lowercase=True, token_pattern=TOKEN_PATTERN, smooth_idf=True, norm="l2")
    try:
        m = vec.fit_transform(list(corpus_a) + list(corpus_b))
    except ValueError:  # no tokens at all
        return 0.0
    a = m[:len(corpus_a)]
    b = m[len(corpus_a):]
    sims = (a @ b.T).toarray()
    return float(np.clip(sims.max(axis=1), 0.0, 1.0).mean())


# -- dataset statistics -----------------------------------------------------------------------------


@dataclass
class FileStats:
    path: str
    stage: str  # "SFT" or "DPO"
    counts: Counter = field(default_factory=Counter)
    errors: list[str] = field(default_factory=list)

    @property
    def total(self) -> int:
        return sum(self.counts.values())


def dataset_stats(files: Iterable[str | os.PathLike]) -> list[FileStats]:
    """Record counts per provenance for each file; preference files count as DPO data."""
    out = []
    for path in files:
        fs = FileStats(os.fspath(path), "SFT")
        if not os.path.exists(path):
            out.append(fs)
            continue
        for lineno, line in iter_lines(path):
            try:
                obj = json.loads(line)
                if not isinstance(obj, dict):
                    raise ValueError("not an object")
            except ValueError as exc:
                fs.errors.append(f"{path}:{lineno}: {exc}")
                continue
            if "chosen" in obj and "rejected" in obj:
                fs.stage = "DPO"
                fs.counts["preference"] += 1
            elif "provenance" in obj:
                fs.counts[str(obj["provenance"])] += 1
            else:
                fs.errors.append(f"{path}:{lineno}: neither a dataset nor a preference record")
        out.append(fs)
    return out


_ROW_LABELS = {
    "translated": "Translated (bootstrap)",
    "sampled": "New Generated Data",
    "augmented": "Augmented Questions",
    "manual": "Manual",
    "preference": "Preference Pairs",
}


def _k(n: int) -> str:
    return f"{n / 1000:.1f}k" if n >= 1000 else str(n)


def render_dataset_table(stats: Sequence[FileStats]) -> str:
    """Counts laid out by training stage (SFT, then DPO)."""
    lines = [f"{'Stage':<6} {'Source':<26} {'Count':>8}"]
    for stage in ("SFT", "DPO"):
        counts: Counter = Counter()
        for fs in stats:
            if fs.stage == stage:
                counts.update(fs.counts)
        for key in ("translated", "sampled", "augmented", "manual", "preference"):
            if counts.get(key):
                lines.append(f"{stage:<6} {_ROW_LABELS[key]:<26} {_k(counts[key]):>8}")
        lines.append(f"{stage:<6} {'Total':<26} {_k(sum(counts.values())):>8}")
    return "\n".join(lines)


def split_csv(text: str) -> list[str]:
    return [t for t in re.split(r"\s*,\s*", text.strip()) if t]
