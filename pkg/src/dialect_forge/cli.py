"""dialect-forge: build dialect-specific text-to-SQL training data.

Usage:
    dialect-forge --config cfg.yaml run [--out DIR]
    dialect-forge --config cfg.yaml translate --targets postgres,mysql --max-rounds 3
    dialect-forge --config cfg.yaml sample --n 8 --reward-policy exec-and-match
    dialect-forge --config cfg.yaml build-prefs --worst-of 8
    dialect-forge --config cfg.yaml evaluate --benchmark bench/ --outputs outputs.jsonl
    dialect-forge --config cfg.yaml report
    dialect-forge --config cfg.yaml validate
    dialect-forge estimate-cost --q 1000 --p-llm 0.5 --rounds 3 --p-prefilter 0.5

Exit codes: 0 success, 1 invalid configuration or input, 2 a stage failed.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path
from typing import Any, Optional, Sequence

from .config import ConfigError, PipelineConfig
from .engine import FixtureError, load_database_dir
from .engine.corpus import check_corpus, load_corpus
from .evaluation import estimate_llm_calls, split_csv
from .llm import TemplateStore, default_templates
from .pipeline import Context, StageFailure, content_digest, run_stages
from .records import STAGES, FormatError, parse_dialect

EXIT_OK, EXIT_INVALID, EXIT_STAGE = 0, 1, 2


class JsonLineFormatter(logging.Formatter):
    """One JSON object per log line. Messages that already are JSON objects are merged in."""

    def format(self, record: logging.LogRecord) -> str:
        msg = record.getMessage()
        out: dict[str, Any] = {"level": record.levelname.lower(), "logger": record.name}
        try:
            parsed = json.loads(msg)
        except ValueError:
            parsed = None
        if isinstance(parsed, dict):
            out.update(parsed)
        else:
            out["message"] = msg
        return json.dumps(out, sort_keys=True)


def setup_logging(verbose: int) -> None:
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(JsonLineFormatter())
    root = logging.getLogger()
    root.handlers[:] = [handler]
    root.setLevel(logging.DEBUG if verbose > 1 else logging.INFO if verbose else logging.WARNING)


def _dialect_list(text: str) -> list[str]:
    out = []
    for t in split_csv(text):
        try:
            out.append(parse_dialect(t).value)
        except ValueError as exc:
            raise argparse.ArgumentTypeError(str(exc)) from None
    return out


def _positive_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dialect-forge", description=__doc__.splitlines()[0])
    p.add_argument("--config", help="pipeline YAML config")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--force", action="store_true", help="re-run stages even when the manifest says done")
    p.add_argument("--workers", type=_positive_int, default=1, help="concurrent executions (default: 1)")
    p.add_argument("-v", "--verbose", action="count", default=0, help="log progress (-vv for debug)")
    sub = p.add_subparsers(dest="command", required=True)

    def with_out(sp):
        sp.add_argument("--out", help="output directory (overrides paths.output)")
        return sp

    with_out(sub.add_parser("run", help="run every stage in order"))
    with_out(sub.add_parser("report", help="retention, iteration and dataset tables"))

    t = with_out(sub.add_parser("translate", help="bootstrap dialect data by iterative translation"))
    t.add_argument("--input", help="SQLite pairs (jsonl with id, question, db_id, sql)")
    t.add_argument("--targets", type=_dialect_list, help="comma-separated target dialects")
    t.add_argument("--max-rounds", type=_positive_int)
    t.add_argument("--prefilter", help="none, identity or command:<cmd>")
    t.add_argument("--model", help="scripted model file (YAML)")

    s = with_out(sub.add_parser("sample", help="sample N candidates per question and split by reward"))
    s.add_argument("--questions", help="questions jsonl")
    s.add_argument("--dialect")
    s.add_argument("--n", type=_positive_int)
    s.add_argument("--reward-policy", choices=["auto", "exec-only", "exec-and-match"])
    s.add_argument("--model", help="scripted model file (YAML)")

    b = with_out(sub.add_parser("build-prefs", help="pair best valid with worst negative per question"))
    b.add_argument("--worst-of", type=_positive_int)
    b.add_argument("--cross-product", action="store_true", default=None)

    e = with_out(sub.add_parser("evaluate", help="execution accuracy on a benchmark"))
    e.add_argument("--benchmark", help="benchmark jsonl file or directory")
    e.add_argument("--outputs", help="model outputs jsonl (id, output); generated with the model if omitted")
    e.add_argument("--dialects", type=_dialect_list)
    e.add_argument("--model", help="scripted model file (YAML)")

    c = sub.add_parser("estimate-cost", help="LLM calls needed for q queries")
    c.add_argument("--q", type=int, required=True)
    c.add_argument("--p-llm", type=float, required=True)
    c.add_argument("--rounds", type=_positive_int, required=True)
    c.add_argument("--p-prefilter", type=float, default=0.0)

    sub.add_parser("validate", help="check config, templates, fixtures and backends without running")
    return p


def _cwd_path(value: Optional[str]) -> Optional[str]:
    return os.path.abspath(value) if value else None


def overrides_from(args: argparse.Namespace) -> dict[str, Any]:
    o: dict[str, Any] = {"seed": args.seed, "paths.output": _cwd_path(getattr(args, "out", None))}
    cmd = args.command
    if getattr(args, "model", None):
        o["model.kind"] = "scripted"
        o["model.script"] = _cwd_path(args.model)
    if cmd == "translate":
        o.update({"translate.input": _cwd_path(args.input), "translate.targets": args.targets,
                  "translate.max_rounds": args.max_rounds, "translate.prefilter": args.prefilter})
    elif cmd == "sample":
        o.update({"sample.questions": _cwd_path(args.questions), "sample.dialect": args.dialect,
                  "sample.n": args.n, "sample.reward_policy": args.reward_policy})
    elif cmd == "build-prefs":
        o.update({"build-prefs.worst_of": args.worst_of, "build-prefs.cross_product": args.cross_product})
    elif cmd == "evaluate":
        o.update({"evaluate.benchmark": _cwd_path(args.benchmark), "evaluate.outputs": _cwd_path(args.outputs),
                  "evaluate.dialects": args.dialects})
    return o


def _stages_for(cmd: str) -> tuple[str, ...]:
    return STAGES if cmd == "run" else (cmd,)


def cmd_estimate_cost(args: argparse.Namespace) -> int:
    try:
        calls = estimate_llm_calls(args.q, args.p_llm, args.rounds, args.p_prefilter)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    print(calls)
    return EXIT_OK


def diagnose(cfg: PipelineConfig) -> list[tuple[str, str]]:
    """(level, message) findings; level is ok, warn or error."""
    found: list[tuple[str, str]] = []
    for msg in cfg.validate(STAGES):
        found.append(("error", msg))
    fx = cfg.path("fixtures")
    if fx is None or not fx.is_dir():
        found.append(("error", f"fixture directory {fx} not found"))
    else:
        try:
            dbs = load_database_dir(fx)
            found.append(("ok", f"fixtures: {len(dbs)} databases in {fx}"))
        except (FixtureError, ValueError, OSError) as exc:
            found.append(("error", f"fixtures: {exc}"))
        else:
            corpus = cfg.path("conformance")
            if corpus is not None:
                try:
                    cases = load_corpus(corpus)
                    bad = check_corpus([c for c in cases if c.db_id in dbs], dbs)
                except (ValueError, KeyError, OSError) as exc:
                    found.append(("error", f"conformance corpus: {exc}"))
                else:
                    for case, got in bad:
                        found.append(("error", f"conformance {case.source}: expected {case.expected}, got {got}"))
                    if not bad:
                        found.append(("ok", f"conformance corpus: {len(cases)} cases pass"))
    for key in ("translate.input", "sample.questions", "evaluate.benchmark", "evaluate.outputs"):
        stage, name = key.split(".")
        value = cfg.stage(stage).get(name)
        if value and not cfg.resolve(value).exists():
            found.append(("error", f"{key}: {cfg.resolve(value)} does not exist"))
    store = TemplateStore(cfg.path("templates")) if cfg.path("templates") else default_templates()
    names = [f"translate_{parse_dialect(t).value}" for t in cfg.stage("translate").get("targets", [])]
    for name in names + ["text2sql", "question_gen"]:
        if not store.exists(name):
            found.append(("error", f"template {name} missing in {store.path(name).parent}"))
        else:
            found.append(("ok", f"template {name} version {store.version(name)}"))
    m = cfg.data["model"]
    if m.get("kind", "scripted") == "scripted":
        script = cfg.resolve(m.get("script"))
        if script is None or not script.exists():
            found.append(("error", f"model script {script} not found"))
        else:
            found.append(("ok", f"model script {script} sha256 {content_digest(script)[:12]}"))
    elif m.get("key_env_var") and m["key_env_var"] not in os.environ:
        found.append(("warn", f"model key variable {m['key_env_var']} is not set"))
    if not any(level == "error" for level, _ in found):
        ctx = Context(cfg)
        try:
            for d in ctx.gateway.dialects:
                problem = ctx.gateway.backend(d).probe()
                found.append(("error", f"backend {d.value}: {problem}") if problem else ("ok", f"backend {d.value}"))
        except (ValueError, OSError) as exc:
            found.append(("error", f"backends: {exc}"))
        finally:
            ctx.close()
    return found


def cmd_validate(cfg: PipelineConfig) -> int:
    found = diagnose(cfg)
    for level, msg in found:
        print(f"[{level}] {msg}")
    return EXIT_INVALID if any(level == "error" for level, _ in found) else EXIT_OK


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    setup_logging(args.verbose)
    if args.command == "estimate-cost":
        return cmd_estimate_cost(args)
    if not args.config:
        print("error: --config is required for this command", file=sys.stderr)
        return EXIT_INVALID
    try:
        cfg = PipelineConfig.load(args.config, overrides_from(args))
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    if args.command == "validate":
        return cmd_validate(cfg)
    stages = _stages_for(args.command)
    errors = cfg.validate(stages)
    if errors:
        for e in errors:
            print(f"error: {e}", file=sys.stderr)
        return EXIT_INVALID
    ctx = Context(cfg, workers=args.workers, force=args.force)
    try:
        manifest = run_stages(ctx, stages)
    except StageFailure as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_STAGE
    except (ConfigError, FormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    finally:
        ctx.close()
    for stage in stages:
        st = manifest.state(stage)
        counters = " ".join(f"{k}={v}" for k, v in sorted(st.counters.items()))
        print(f"{stage}: {st.status} {counters}".rstrip())
    print(f"run {manifest.run_id}: outputs in {Path(cfg.output)}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
