"""Generation models, prompt templates and SQL extraction."""

from __future__ import annotations

import hashlib
import logging
import os
import re
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Iterable, Mapping, Optional, Protocol, Sequence

import httpx
import jinja2
import yaml

from .engine import InMemoryDb
from .records import Dialect, SchemaInfo, parse_dialect

log = logging.getLogger(__name__)

TEMPLATE_DIR = Path(__file__).parent / "templates"
TEMPLATE_NAMES = ("translate_postgres", "translate_mysql", "translate_oracle", "question_gen", "text2sql")

# Dialect names as they appear in the direct text-to-SQL prompt.
PROMPT_NAMES = {
    Dialect.SQLITE: "SQLite",
    Dialect.POSTGRES: "Postgres",
    Dialect.MYSQL: "MySQL",
    Dialect.ORACLE: "Oracle",
}


class GenerationError(RuntimeError):
    pass


class ScriptUnderrun(GenerationError):
    """The scripted model has no canned completions left for a prompt."""


class TransportError(GenerationError):
    """A live model could not be reached after all retries."""


class ScoreUnavailable(GenerationError):
    pass


class ExtractionError(ValueError):
    """No SQL statement could be located in a model output."""


@dataclass(frozen=True)
class GenRequest:
    prompt: str
    n: int = 1
    temperature: float = 0.7
    top_p: float = 0.9
    top_k: int = 50
    max_tokens: int = 512
    stop: tuple[str, ...] = ()
    seed: Optional[int] = None

    def validate(self) -> None:
        if self.n < 1:
            raise ValueError(f"n must be >= 1, got {self.n}")
        if not 0 <= self.top_p <= 1:
            raise ValueError(f"top_p must be in [0, 1], got {self.top_p}")
        if self.temperature < 0:
            raise ValueError(f"temperature must be >= 0, got {self.temperature}")
        if self.top_k < 0:
            raise ValueError(f"top_k must be >= 0, got {self.top_k}")


class GenerationModel(Protocol):
    identity: str

    def generate(self, req: GenRequest) -> list[str]: ...

    def score(self, question: str, sql: str) -> float: ...


def prompt_hash(prompt: str) -> str:
    return hashlib.sha1(prompt.encode("utf-8")).hexdigest()


@dataclass
class _Entry:
    match: str | tuple[str, ...]
    responses: list[list[str]]
    used: int = 0

    def matches(self, prompt: str) -> bool:
        if isinstance(self.match, tuple):
            return all(m in prompt for m in self.match)
        if self.match == "*":
            return True
        if self.match.startswith("hash:"):
            return prompt_hash(prompt).startswith(self.match[5:])
        return self.match in prompt


class ScriptedModel:
    """Deterministic test double: canned completions keyed by prompt matchers.

    Entries are tried in order; the first matching entry with responses left
    serves the call and that response list is consumed. A matcher is a
    substring of the prompt, a list of substrings that must all occur,
    ``hash:<sha1 prefix>``, or ``*``.
    """

    def __init__(self, entries: Iterable[tuple[str | Sequence[str], Sequence[Sequence[str]]]] = (),
                 scores: Mapping[tuple[str, str], float] | None = None, identity: str = "scripted"):
        self._entries = [_Entry(m if isinstance(m, str) else tuple(m), [list(r) for r in resp])
                         for m, resp in entries]
        self._scores = dict(scores or {})
        self._lock = threading.Lock()
        self.identity = identity
        self.calls: list[GenRequest] = []

    @classmethod
    def from_file(cls, path: str | os.PathLike) -> ScriptedModel:
        with open(path, encoding="utf-8") as fh:
            data = yaml.safe_load(fh) or {}
        return cls.from_dict(data, identity=f"scripted:{Path(path).name}")

    @classmethod
    def from_dict(cls, data: Mapping[str, Any], identity: str = "scripted") -> ScriptedModel:
        entries = []
        for i, e in enumerate(data.get("entries", [])):
            if "match" not in e or "responses" not in e:
                raise ValueError(f"script entry {i} needs 'match' and 'responses'")
            m = e["match"]
            entries.append((tuple(str(x) for x in m) if isinstance(m, list) else str(m), e["responses"]))
        scores = {(s["question"], s["sql"]): float(s["score"]) for s in data.get("scores", [])}
        return cls(entries, scores, identity)

    def generate(self, req: GenRequest) -> list[str]:
        with self._lock:
            self.calls.append(req)
            matched = False
            for e in self._entries:
                if not e.matches(req.prompt):
                    continue
                matched = True
                if e.used < len(e.responses):
                    resp = e.responses[e.used]
                    e.used += 1
                    if len(resp) < req.n:
                        raise ScriptUnderrun(f"script entry {e.match!r} has {len(resp)} completions, {req.n} requested")
                    return list(resp[:req.n])
            what = "exhausted" if matched else "no entry matches"
            raise ScriptUnderrun(f"script {what} for prompt {prompt_hash(req.prompt)[:12]}")

    def score(self, question: str, sql: str) -> float:
        try:
            return self._scores[(question, sql)]
        except KeyError:
            raise ScoreUnavailable(f"no scripted score for {sql!r}") from None

    def remaining(self) -> int:
        return sum(len(e.responses) - e.used for e in self._entries)


class TokenBucket:
    """Blocking rate limiter: ``rate`` requests per minute, bursts up to ``capacity``."""

    def __init__(self, rpm: float, capacity: float | None = None,
                 clock: Callable[[], float] = time.monotonic, sleep: Callable[[float], None] = time.sleep):
        if rpm <= 0:
            raise ValueError("rpm must be positive")
        self.rate = rpm / 60.0
        self.capacity = capacity if capacity is not None else max(1.0, rpm / 60.0)
        self.tokens = self.capacity
        self._clock = clock
        self._sleep = sleep
        self._last = clock()
        self._lock = threading.Lock()

    def acquire(self) -> None:
        with self._lock:
            while True:
                now = self._clock()
                self.tokens = min(self.capacity, self.tokens + (now - self._last) * self.rate)
                self._last = now
                if self.tokens >= 1:
                    self.tokens -= 1
                    return
                self._sleep((1 - self.tokens) / self.rate)


class HttpChatModel:
    """Chat-completion style HTTP client (OpenAI-compatible request shape)."""

    RETRY_STATUS = {408, 409, 429, 500, 502, 503, 504}

    def __init__(self, endpoint: str, model: str, *, key_env_var: str | None = None, rpm: float = 60,
                 max_attempts: int = 4, backoff: float = 0.5, timeout: float = 60.0,
                 transport: httpx.BaseTransport | None = None, sleep: Callable[[float], None] = time.sleep,
                 send_top_k: bool = False):
        self.endpoint = endpoint
        self.model = model
        self.identity = f"http:{model}"
        headers = {"Content-Type": "application/json"}
        if key_env_var:
            key = os.environ.get(key_env_var)
            if not key:
                raise GenerationError(f"environment variable {key_env_var} is not set")
            headers["Authorization"] = f"Bearer {key}"
        self._client = httpx.Client(headers=headers, timeout=timeout, transport=transport)
        self._limiter = TokenBucket(rpm, sleep=sleep)
        self.max_attempts = max_attempts
        self.backoff = backoff
        self._sleep = sleep
        self.send_top_k = send_top_k

    def _payload(self, req: GenRequest, n: int) -> dict[str, Any]:
        body: dict[str, Any] = {
            "model": self.model,
            "messages": [{"role": "user", "content": req.prompt}],
            "n": n,
            "temperature": req.temperature,
            "top_p": req.top_p,
            "max_tokens": req.max_tokens,
        }
        if self.send_top_k:
            body["top_k"] = req.top_k
        if req.stop:
            body["stop"] = list(req.stop)
        if req.seed is not None:
            body["seed"] = req.seed
        return body

    def _post(self, body: dict[str, Any]) -> dict[str, Any]:
        last = ""
        for attempt in range(self.max_attempts):
            if attempt:
                self._sleep(self.backoff * 2 ** (attempt - 1))
            self._limiter.acquire()
            try:
                resp = self._client.post(self.endpoint, json=body)
            except httpx.TransportError as exc:
                last = f"{type(exc).__name__}: {exc}"
                log.warning("transport failure (attempt %d): %s", attempt + 1, last)
                continue
            if resp.status_code in self.RETRY_STATUS:
                last = f"HTTP {resp.status_code}"
                log.warning("retryable status (attempt %d): %s", attempt + 1, last)
                continue
            if resp.status_code >= 400:
                raise TransportError(f"HTTP {resp.status_code}: {resp.text[:200]}")
            return resp.json()
        raise TransportError(f"giving up after {self.max_attempts} attempts: {last}")

    def generate(self, req: GenRequest) -> list[str]:
        out: list[str] = []
        while len(out) < req.n:
            data = self._post(self._payload(req, req.n - len(out)))
            choices = data.get("choices") or []
            if not choices:
                raise TransportError("response carried no choices")
            for c in choices:
                msg = c.get("message") or {}
                out.append(msg.get("content") or c.get("text") or "")
        return out[:req.n]

    def score(self, question: str, sql: str) -> float:
        raise ScoreUnavailable("live chat models expose no scoring endpoint")

    def close(self) -> None:
        self._client.close()


def generate(model: GenerationModel, req: GenRequest) -> list[str]:
    """Validated generation returning exactly ``req.n`` completions."""
    req.validate()
    out = model.generate(req)
    if len(out) != req.n:
        raise GenerationError(f"{model.identity} returned {len(out)} completions, expected {req.n}")
    return out


# -- extraction -------------------------------------------------------------------------

_FENCE = re.compile(r"```[ \t]*[A-Za-z0-9_+-]*[ \t]*\n(.*?)```", re.DOTALL)
_SQL_START = re.compile(r"^(select|with)\b", re.IGNORECASE)


def _statement_from(lines: list[str]) -> Optional[str]:
    """Text from the first SELECT/WITH line to a top-level ';' or a blank line."""
    for i, line in enumerate(lines):
        if not _SQL_START.match(line.lstrip()):
            continue
        text = "\n".join([line.lstrip()] + lines[i + 1:])
        quote = None
        end = len(text)
        j = 0
        while j < len(text):
            ch = text[j]
            if quote:
                if ch == quote:
                    quote = None
            elif ch in "'\"`":
                quote = ch
            elif ch == ";":
                end = j
                break
            elif ch == "\n" and text[j + 1:].split("\n", 1)[0].strip() == "":
                end = j
                break
            j += 1
        stmt = text[:end].strip().rstrip(";").strip()
        return stmt or None
    return None


def extract_sql(raw: str) -> str:
    """Locate the SQL statement in a model output.

    Precedence: the last fenced code block, then the first line starting with
    SELECT or WITH (up to a ';' or a blank line). A trailing semicolon is
    dropped.
    """
    blocks = _FENCE.findall(raw)
    if blocks:
        stmt = _statement_from(blocks[-1].splitlines())
        if stmt:
            return stmt
    stmt = _statement_from(raw.splitlines())
    if stmt:
        return stmt
    text = raw.strip().rstrip(";").strip()
    if _SQL_START.match(text):
        return text
    raise ExtractionError("no SQL statement found in model output")


# -- templates ------------------------------------------------------------------------------

_VERSION = re.compile(r"\{#\s*version:\s*(\S+)\s*#\}")


class TemplateStore:
    def __init__(self, directory: str | os.PathLike | None = None):
        self.directory = Path(directory) if directory else TEMPLATE_DIR
        self.env = jinja2.Environment(
            loader=jinja2.FileSystemLoader(str(self.directory)),
            undefined=jinja2.StrictUndefined,
            trim_blocks=True,
            lstrip_blocks=True,
            keep_trailing_newline=False,
            autoescape=False,
        )

    def path(self, name: str) -> Path:
        return self.directory / f"{name}.txt"

    def exists(self, name: str) -> bool:
        return self.path(name).is_file()

    def version(self, name: str) -> str:
        m = _VERSION.search(self.path(name).read_text(encoding="utf-8"))
        return m.group(1) if m else "unversioned"

    def render(self, name: str, **context: Any) -> str:
        if not self.exists(name):
            raise FileNotFoundError(f"missing template {self.path(name)}")
        return self.env.get_template(f"{name}.txt").render(**context).strip() + "\n"


_default_store: TemplateStore | None = None


def default_templates() -> TemplateStore:
    global _default_store
    if _default_store is None:
        _default_store = TemplateStore()
    return _default_store


def schema_text(schema: SchemaInfo) -> str:
    """``table: col1, col2`` entries separated by ``; ``."""
    return "; ".join(f"{name}: {', '.join(c for c, _ in cols)}" for name, cols in schema.tables)


def render_translation_prompt(source_sql: str, question: str, schema: SchemaInfo, target: Dialect | str,
                              prior_errors: Sequence[tuple[str, str]] = (), *, db_id: str = "",
                              source: Dialect | str = Dialect.SQLITE,
                              templates: TemplateStore | None = None) -> str:
    target = parse_dialect(target)
    if target is parse_dialect(source):
        raise ValueError(f"target dialect equals source dialect ({target.value})")
    store = templates or default_templates()
    name = f"translate_{target.value}"
    if not store.exists(name):
        raise FileNotFoundError(f"no translation template for {target.value} ({store.path(name)})")
    return store.render(name, source_sql=source_sql, question=question, schema=schema_text(schema),
                        db_id=db_id, prior_errors=[{"sql": s, "error": e} for s, e in prior_errors])


def render_question_gen_prompt(db: InMemoryDb, *, rows_per_table: int = 5, k: int = 5,
                               templates: TemplateStore | None = None) -> str:
    """Schema plus the first ``rows_per_table`` rows of every non-empty table."""
    tables = []
    for t in db.tables.values():
        if not t.rows:
            continue
        rows = [["NULL" if v is None else str(v) for v in r] for r in t.rows[:rows_per_table]]
        tables.append({"name": t.name, "columns": list(t.columns), "rows": rows})
    if not tables:
        raise ValueError(f"database {db.db_id!r} has no rows to ground questions in")
    return (templates or default_templates()).render("question_gen", db_id=db.db_id, tables=tables, k=k)


def render_text2sql_prompt(question: str, schema: SchemaInfo, dialect: Dialect | str,
                           templates: TemplateStore | None = None) -> str:
    d = parse_dialect(dialect)
    return (templates or default_templates()).render(
        "text2sql", question=question, schema=schema_text(schema), dialect_name=PROMPT_NAMES[d])


def model_from_config(cfg: Mapping[str, Any], base_dir: str | os.PathLike = ".") -> GenerationModel:
    """Build a model from a config block: ``{kind: scripted, script: path}`` or
    ``{kind: http, endpoint, model, key_env_var, rpm}``."""
    kind = cfg.get("kind", "scripted")
    if kind == "scripted":
        path = Path(cfg["script"])
        if not path.is_absolute():
            path = Path(base_dir) / path
        return ScriptedModel.from_file(path)
    if kind == "http":
        return HttpChatModel(cfg["endpoint"], cfg["model"], key_env_var=cfg.get("key_env_var"),
                             rpm=float(cfg.get("rpm", 60)), max_attempts=int(cfg.get("max_attempts", 4)))
    raise ValueError(f"unknown model kind {kind!r}; expected scripted or http")

