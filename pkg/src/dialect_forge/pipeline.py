"""Stage orchestration: translate, sample, build-prefs, evaluate, report.

Each stage reads its inputs from the config (or from an upstream stage's
output directory), writes line-delimited records under ``<output>/<stage>/``
and records its counters in ``<output>/manifest.json``. A stage whose
digest (relevant config sections plus input file contents plus upstream
digests) matches a finished entry in the manifest is skipped.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Optional

from .config import PipelineConfig
from .engine import FixtureError, InMemoryDb, load_database_dir
from .evaluation import (GoldCache, dataset_stats, evaluate, load_benchmark, perturbation_breakdown,
                         render_dataset_table)
from .gateway import (BackendConfig, ComparePolicy, Gateway, GatewayError, RewardMode, RewardPolicy,
                      has_order_by, make_backend)
from .llm import (ExtractionError, GenerationError, GenerationModel, GenRequest, TemplateStore,
                  default_templates, extract_sql, generate, model_from_config, render_text2sql_prompt)
from .records import (STAGES, Dialect, FormatError, NLQuestion, RunManifest, StageState, atomic_write_text,
                      dumps_line, iter_lines, parse_dialect, read_jsonl, write_jsonl, write_records)
from .sampling import (augment_questions, build_preference_pairs, candidate_from_dict, candidate_to_dict,
                       dataset_records, empirical_retention, partition, sample_candidates,
                       score_candidates)
from .translate import Journal, TranslateConfig, make_prefilter, read_pairs, run_bootstrap

log = logging.getLogger("dialect_forge.pipeline")

MANIFEST = "manifest.json"


class StageFailure(RuntimeError):
    def __init__(self, stage: str, message: str):
        super().__init__(f"stage {stage} failed: {message}")
        self.stage = stage


def event(name: str, **fields: Any) -> None:
    log.info(dumps_line({"event": name, **fields}))


def content_digest(path: Optional[Path]) -> str:
    """sha256 over a file, or over every file below a directory (sorted, with relative names)."""
    if path is None:
        return ""
    h = hashlib.sha256()
    if path.is_dir():
        for p in sorted(q for q in path.rglob("*") if q.is_file()):
            h.update(p.relative_to(path).as_posix().encode("utf-8") + b"\0")
            h.update(p.read_bytes())
    elif path.exists():
        h.update(path.read_bytes())
    else:
        return "missing"
    return h.hexdigest()


def sort_journal(path: Path) -> None:
    """Rewrite a journal in key order so concurrent runs leave identical files."""
    if not path.exists():
        return
    lines = {}
    for _, line in iter_lines(path):
        try:
            lines[json.loads(line)["key"]] = line
        except (json.JSONDecodeError, KeyError):
            continue
    atomic_write_text(path, "".join(lines[k] + "\n" for k in sorted(lines)))


def reward_policy(name: str, gold_available: bool) -> RewardPolicy:
    if name == "auto":
        return RewardPolicy(RewardMode.EXEC_AND_MATCH if gold_available else RewardMode.EXEC_ONLY)
    return RewardPolicy(RewardMode(name))


@dataclass
class Context:
    cfg: PipelineConfig
    workers: int = 1
    force: bool = False
    model_factory: Optional[Callable[[], GenerationModel]] = None
    _model: Optional[GenerationModel] = None
    _gateway: Optional[Gateway] = None
    _dbs: Optional[dict[str, InMemoryDb]] = None
    digests: dict[str, str] = field(default_factory=dict)

    @property
    def out(self) -> Path:
        return self.cfg.output

    def stage_dir(self, stage: str) -> Path:
        return self.out / stage

    @property
    def model(self) -> GenerationModel:
        if self._model is None:
            if self.model_factory is not None:
                self._model = self.model_factory()
            else:
                self._model = model_from_config(self.cfg.data["model"], self.cfg.base_dir)
        return self._model

    @property
    def templates(self) -> TemplateStore:
        t = self.cfg.path("templates")
        return TemplateStore(t) if t is not None else default_templates()

    @property
    def dbs(self) -> dict[str, InMemoryDb]:
        if self._dbs is None:
            fx = self.cfg.path("fixtures")
            self._dbs = load_database_dir(fx) if fx is not None and fx.is_dir() else {}
        return self._dbs

    def schema(self, db_id: str):
        if db_id not in self.dbs:
            raise GatewayError(f"no fixture for database {db_id!r}; schemas are read from the fixture directory")
        return self.dbs[db_id].schema()

    @property
    def gateway(self) -> Gateway:
        if self._gateway is None:
            gw = Gateway()
            fixtures = self.cfg.path("fixtures")
            for d, block in self.cfg.backend_blocks().items():
                path = self.cfg.resolve(block.get("path"))
                cmd = block.get("command")
                bc = BackendConfig(dialect=d.value, kind=block.get("kind", "embedded"),
                                   path=os.fspath(path) if path else None, dsn=block.get("dsn"),
                                   driver=block.get("driver"),
                                   command=tuple(cmd.split() if isinstance(cmd, str) else cmd) if cmd else None,
                                   max_workers=int(block.get("max_workers", 4)),
                                   timeout_s=block.get("timeout_s"), mode=block.get("mode", {}))
                gw.register(make_backend(bc, fixtures))
            self._gateway = gw
        return self._gateway

    def close(self) -> None:
        if self._gateway is not None:
            self._gateway.close()


# -- digests -------------------------------------------------------------------------------------


def _model_digest(cfg: PipelineConfig) -> dict[str, Any]:
    m = dict(cfg.data["model"])
    if m.get("kind", "scripted") == "scripted" and m.get("script"):
        m["script"] = content_digest(cfg.resolve(m["script"]))
    return m


def stage_digest(ctx: Context, stage: str) -> str:
    cfg = ctx.cfg
    base = {"backends": cfg.data.get("backends"), "fixtures": content_digest(cfg.path("fixtures")),
            "templates": content_digest(cfg.path("templates")), "model": _model_digest(cfg)}
    sec = dict(cfg.stage(stage))
    if stage == "translate":
        extra = {**base, "input": content_digest(cfg.resolve(sec.get("input")))}
    elif stage == "sample":
        extra = {**base, "questions": content_digest(cfg.resolve(sec.get("questions")))}
    elif stage == "build-prefs":
        extra = {"sample": ctx.digests.get("sample") or stage_digest(ctx, "sample")}
    elif stage == "evaluate":
        extra = {**base, "benchmark": content_digest(cfg.resolve(sec.get("benchmark"))),
                 "outputs": content_digest(cfg.resolve(sec.get("outputs")))}
    elif stage == "report":
        extra = {s: ctx.digests.get(s) or stage_digest(ctx, s) for s in STAGES if s != "report"}
    else:
        raise ValueError(f"unknown stage {stage!r}")
    return cfg.section_digest(stage, extra=extra)


# -- stages --------------------------------------------------------------------------------------


def stage_translate(ctx: Context, resume: bool) -> dict[str, int]:
    sec = ctx.cfg.stage("translate")
    if not sec.get("input"):
        event("stage-empty", stage="translate", reason="no input pairs configured")
        out = ctx.stage_dir("translate")
        write_jsonl(out / "d_trans.jsonl", [])
        write_jsonl(out / "unresolved.jsonl", [])
        atomic_write_text(out / "stats.json", "{}\n")
        return {"pairs": 0}
    pairs = read_pairs(ctx.cfg.resolve(sec["input"]))
    targets = [parse_dialect(t) for t in sec["targets"]]
    mcfg = ctx.cfg.data["model"]
    mode = RewardMode(sec.get("reward_policy", "exec-only"))
    tcfg = TranslateConfig(max_rounds=int(sec["max_rounds"]), reward=RewardPolicy(mode),
                           temperature=float(mcfg["temperature"]), top_p=float(mcfg["top_p"]),
                           top_k=int(mcfg["top_k"]), max_tokens=int(mcfg["max_tokens"]), seed=ctx.cfg.seed,
                           timeout=sec.get("timeout_s"))

    def source_result(p):
        rep = ctx.gateway.run(p.source_sql, Dialect.SQLITE, p.db_id)
        if not rep.ok:
            raise GatewayError(f"pair {p.id}: source query fails on sqlite: {rep.raw_error}")
        return rep.result

    gold = source_result if mode is RewardMode.EXEC_AND_MATCH else None
    out = ctx.stage_dir("translate")
    res = run_bootstrap(pairs, targets, ctx.model, ctx.gateway, ctx.schema, out, config=tcfg,
                        prefilter=make_prefilter(sec.get("prefilter")), gold=gold, templates=ctx.templates,
                        workers=ctx.workers, resume=resume)
    sort_journal(out / "attempts.jsonl")
    counters = {"pairs": len(pairs), "items": len(pairs) * len(targets), "valid": len(res.records),
                "unresolved": len(res.unresolved)}
    for t, st in res.stats.items():
        counters[f"{t}_prefilter_solved"] = st.prefilter_solved
    return counters


def _load_questions(path: Path) -> list[tuple[NLQuestion, Optional[str]]]:
    out = []
    seen = set()
    for lineno, obj in enumerate(read_jsonl(path), 1):
        try:
            q = NLQuestion.from_dict(obj)
        except FormatError as exc:
            raise FormatError(f"{path}:{lineno}: {exc}") from None
        if q.id in seen:
            raise FormatError(f"{path}:{lineno}: duplicate question id {q.id!r}")
        seen.add(q.id)
        out.append((q, obj.get("gold_sql")))
    return out


def stage_sample(ctx: Context, resume: bool) -> dict[str, int]:
    sec = ctx.cfg.stage("sample")
    out = ctx.stage_dir("sample")
    dialect = parse_dialect(sec["dialect"])
    questions = _load_questions(ctx.cfg.resolve(sec["questions"])) if sec.get("questions") else []
    known = {q.id for q, _ in questions}
    mcfg = ctx.cfg.data["model"]
    aug = sec.get("augment") or {}
    n_aug = 0
    for db_id in aug.get("dbs") or []:
        if db_id not in ctx.dbs:
            raise GatewayError(f"augmentation database {db_id!r} has no fixture")
        for q in augment_questions(ctx.dbs[db_id], ctx.model, int(aug.get("k", 0)),
                                   rows_per_table=int(aug.get("rows_per_table", 5)),
                                   temperature=float(mcfg["temperature"]), top_p=float(mcfg["top_p"]),
                                   top_k=int(mcfg["top_k"]), seed=ctx.cfg.seed, templates=ctx.templates):
            if q.id not in known:
                known.add(q.id)
                questions.append((q, None))
                n_aug += 1
    write_jsonl(out / "questions.jsonl", ({**q.to_dict(), "gold_sql": g} for q, g in questions))

    journal = Journal(out / "samples.jsonl")
    if not resume:
        journal.reset()
    done = journal.load()
    n = int(sec["n"])
    valid_recs, neg_recs = [], []
    retained = 0
    for q, gold_sql in questions:
        if q.id in done and len(done[q.id]["candidates"]) >= n:
            cands = [candidate_from_dict(c) for c in done[q.id]["candidates"]]
        else:
            gold = None
            if gold_sql:
                rep = ctx.gateway.run(gold_sql, dialect, q.db_ref)
                if rep.ok:
                    gold = rep.result
                else:
                    event("gold-invalid", question=q.id, error=rep.error_class)
            policy = reward_policy(sec.get("reward_policy", "auto"), gold is not None)
            if policy.mode is RewardMode.EXEC_AND_MATCH and gold is None:
                event("question-skipped", question=q.id, reason="exec-and-match without a gold result")
                continue
            cands = sample_candidates(q, ctx.model, n, dialect, ctx.schema(q.db_ref),
                                      temperature=float(mcfg["temperature"]), top_p=float(mcfg["top_p"]),
                                      top_k=int(mcfg["top_k"]), max_tokens=int(mcfg["max_tokens"]),
                                      seed=ctx.cfg.seed, templates=ctx.templates)
            order = has_order_by(gold_sql, dialect) if gold_sql else None
            cands = score_candidates(cands, ctx.gateway, dialect, q.db_ref, policy, gold,
                                     order_sensitive=order, workers=ctx.workers)
            journal.append(q.id, {"candidates": [candidate_to_dict(c) for c in cands], "dialect": dialect.value,
                                  "policy": policy.mode.value})
        v, ng = dataset_records(q, dialect, cands, iteration=int(sec.get("iteration", 0)))
        valid_recs += v
        neg_recs += ng
        retained += bool(v)
        event("sampled", question=q.id, valid=len(v), neg=len(ng))
    sort_journal(out / "samples.jsonl")
    write_records(out / "d_valid.jsonl", valid_recs)
    write_records(out / "d_neg.jsonl", neg_recs)
    return {"questions": len(questions), "augmented": n_aug, "valid": len(valid_recs), "neg": len(neg_recs),
            "retained": retained}


def _sample_log(ctx: Context) -> tuple[dict[str, NLQuestion], dict[str, dict[str, Any]]]:
    out = ctx.stage_dir("sample")
    if not (out / "questions.jsonl").exists():
        raise FormatError(f"{out / 'questions.jsonl'} not found; run the sample stage first")
    qs = {q.id: q for q, _ in _load_questions(out / "questions.jsonl")}
    return qs, Journal(out / "samples.jsonl").load()


def stage_build_prefs(ctx: Context, resume: bool) -> dict[str, int]:
    sec = ctx.cfg.stage("build-prefs")
    qs, logged = _sample_log(ctx)
    prefs = []
    no_valid = no_neg = 0
    for qid in sorted(logged):
        entry = logged[qid]
        q = qs.get(qid)
        if q is None:
            continue
        cands = [candidate_from_dict(c) for c in entry["candidates"]]
        valid, neg = partition(cands)
        no_valid += not valid
        no_neg += not neg
        prefs += build_preference_pairs(q, entry["dialect"], valid, neg, n_cap=int(sec.get("worst_of", 8)),
                                        cross_product=bool(sec.get("cross_product", False)))
    write_records(ctx.stage_dir("build-prefs") / "preferences.jsonl", prefs)
    return {"pairs": len(prefs), "questions_without_valid": no_valid, "questions_without_neg": no_neg}


def _read_outputs(path: Path) -> list[tuple[str, str]]:
    out = []
    for obj in read_jsonl(path):
        if "id" not in obj:
            raise FormatError(f"{path}: output line without an id")
        text = obj.get("output", obj.get("sql"))
        if text is None:
            raise FormatError(f"{path}: output {obj['id']!r} has neither 'output' nor 'sql'")
        out.append((str(obj["id"]), str(text)))
    return out


def stage_evaluate(ctx: Context, resume: bool) -> dict[str, int]:
    sec = ctx.cfg.stage("evaluate")
    out = ctx.stage_dir("evaluate")
    if not sec.get("benchmark"):
        raise FormatError("evaluate.benchmark is not set")
    bench = load_benchmark(ctx.cfg.resolve(sec["benchmark"]))
    wanted = set(ctx.cfg.eval_dialects())
    if wanted:
        bench = [b for b in bench if b.dialect in wanted]
    if sec.get("outputs"):
        outputs = _read_outputs(ctx.cfg.resolve(sec["outputs"]))
        ids = {b.id for b in bench}
        outputs = [o for o in outputs if o[0] in ids]
    else:
        mcfg = ctx.cfg.data["model"]
        outputs = []
        for b in bench:
            prompt = render_text2sql_prompt(b.question, ctx.schema(b.db_ref), b.dialect, ctx.templates)
            raw = generate(ctx.model, GenRequest(prompt, 1, float(mcfg["temperature"]), float(mcfg["top_p"]),
                                                 int(mcfg["top_k"]), int(mcfg["max_tokens"]), seed=ctx.cfg.seed))[0]
            try:
                raw = extract_sql(raw)
            except ExtractionError:
                pass
            outputs.append((b.id, raw))
    write_jsonl(out / "outputs.jsonl", ({"id": i, "output": o} for i, o in outputs))
    report = evaluate(outputs, bench, ctx.gateway, ComparePolicy(), gold_cache=GoldCache(ctx.gateway),
                      workers=ctx.workers)
    atomic_write_text(out / "report.txt", report.render() + "\n")
    write_jsonl(out / "accuracy.jsonl", report.to_records())
    write_jsonl(out / "items.jsonl", ({"category": r.category, "correct": r.correct, "dialect": r.dialect,
                                       "failure": r.error_class, "id": r.id} for r in report.items))
    summary = {
        "by_dialect": {d: round(b.accuracy, 2) for d, b in report.by_dialect().items()},
        "gold_invalid": report.gold_invalid,
        "macro": report.macro,
        "perturbations": [{"category": c, "count": n, "accuracy": round(a, 2)}
                          for c, n, a in perturbation_breakdown(report)],
    }
    atomic_write_text(out / "summary.json", json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return {"items": len(report.items), "correct": report.overall.correct, "gold_invalid": len(report.gold_invalid)}


def stage_report(ctx: Context, resume: bool) -> dict[str, int]:
    out = ctx.stage_dir("report")
    out.mkdir(parents=True, exist_ok=True)
    counters = {}
    # retention against the sample log, truncated to the sampled n
    sample_log = ctx.stage_dir("sample") / "samples.jsonl"
    rows = []
    if sample_log.exists():
        validity = [[c["reward"] == 1 for c in sorted(e["candidates"], key=lambda c: c["index"])]
                    for _, e in sorted(Journal(sample_log).load().items())]
        if validity:
            most = min(len(v) for v in validity)
            ns = [n for n in ctx.cfg.stage("report").get("retention_n", [1, 2, 4, 8]) if n <= most]
            if ns:
                rows = empirical_retention(validity, ns)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["n", "rate"])
    for n, rate in rows:
        w.writerow([n, f"{rate:.4f}"])
    atomic_write_text(out / "retention.csv", buf.getvalue())
    counters["retention_rows"] = len(rows)

    stats_path = ctx.stage_dir("translate") / "stats.json"
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["dialect", "round", "proposed", "failed"])
    if stats_path.exists():
        stats = json.loads(stats_path.read_text(encoding="utf-8"))
        for d in sorted(stats):
            for r, (p, f) in enumerate(zip(stats[d]["proposed"], stats[d]["failed"]), 1):
                w.writerow([d, r, p, f])
    atomic_write_text(out / "iterations.csv", buf.getvalue())

    files = [ctx.stage_dir("translate") / "d_trans.jsonl", ctx.stage_dir("sample") / "d_valid.jsonl",
             ctx.stage_dir("build-prefs") / "preferences.jsonl"]
    stats = dataset_stats([f for f in files if f.exists()])
    atomic_write_text(out / "dataset_stats.txt", render_dataset_table(stats) + "\n")
    counters["records"] = sum(fs.total for fs in stats)
    return counters


STAGE_FUNCS: dict[str, Callable[[Context, bool], dict[str, int]]] = {
    "translate": stage_translate,
    "sample": stage_sample,
    "build-prefs": stage_build_prefs,
    "evaluate": stage_evaluate,
    "report": stage_report,
}

_STAGE_OUTPUTS = {
    "translate": ("d_trans.jsonl", "unresolved.jsonl", "stats.json"),
    "sample": ("questions.jsonl", "d_valid.jsonl", "d_neg.jsonl"),
    "build-prefs": ("preferences.jsonl",),
    "evaluate": ("outputs.jsonl", "report.txt", "accuracy.jsonl", "items.jsonl", "summary.json"),
    "report": ("retention.csv", "iterations.csv", "dataset_stats.txt"),
}

_STAGE_ERRORS = (GenerationError, GatewayError, FormatError, FixtureError, OSError, ValueError, KeyError)


def open_manifest(ctx: Context) -> RunManifest:
    path = ctx.out / MANIFEST
    digest = ctx.cfg.digest()
    if path.exists():
        try:
            m = RunManifest.load(path)
        except (OSError, ValueError, KeyError) as exc:
            log.warning("ignoring unreadable manifest %s: %s", path, exc)
        else:
            m.config_digest = digest
            m.run_id = digest[:12]
            return m
    return RunManifest(run_id=digest[:12], config_digest=digest)


def run_stages(ctx: Context, stages: tuple[str, ...]) -> RunManifest:
    """Run the named stages in order; raises StageFailure on the first failure."""
    manifest = open_manifest(ctx)
    mpath = ctx.out / MANIFEST
    for stage in stages:
        digest = stage_digest(ctx, stage)
        ctx.digests[stage] = digest
        st = manifest.state(stage)
        outputs_ok = all((ctx.stage_dir(stage) / f).exists() for f in _STAGE_OUTPUTS[stage])
        if not ctx.force and st.status == "done" and st.digest == digest and outputs_ok:
            event("stage-skipped", stage=stage, digest=digest[:12])
            continue
        # journals are only trusted when they were written for the same digest
        resume = not ctx.force and st.digest == digest
        manifest.stages[stage] = StageState()
        manifest.mark(stage, "running", digest)
        manifest.save(mpath)
        event("stage-start", stage=stage, digest=digest[:12], resume=resume)
        try:
            counters = STAGE_FUNCS[stage](ctx, resume)
        except Exception as exc:
            manifest.mark(stage, "failed", digest)
            manifest.save(mpath)
            if not isinstance(exc, _STAGE_ERRORS):
                log.exception("unexpected error in stage %s", stage)
            event("stage-failed", stage=stage, error=str(exc))
            raise StageFailure(stage, str(exc)) from exc
        for name, value in sorted(counters.items()):
            manifest.set_counter(stage, name, value)
        manifest.mark(stage, "done", digest)
        manifest.save(mpath)
        event("stage-done", stage=stage, **counters)
    return manifest
