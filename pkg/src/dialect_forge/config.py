"""Pipeline configuration: one YAML file, environment interpolation, defaults."""

from __future__ import annotations

import copy
import os
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Mapping

import yaml

from .records import Dialect, config_digest, parse_dialect

DEFAULTS: dict[str, Any] = {
    "seed": 0,
    "paths": {"fixtures": "databases", "templates": None, "output": "out", "conformance": None},
    "model": {"kind": "scripted", "script": "script.yaml", "temperature": 0.7, "top_p": 0.9, "top_k": 50,
              "max_tokens": 512},
    "backends": [],
    "translate": {"input": None, "targets": ["postgres", "mysql"], "max_rounds": 3, "prefilter": "none",
                  "reward_policy": "exec-only", "timeout_s": None},
    "sample": {"questions": None, "dialect": "postgres", "n": 8, "reward_policy": "auto", "iteration": 0,
               "augment": {"dbs": [], "k": 0, "rows_per_table": 5}},
    "build-prefs": {"worst_of": 8, "cross_product": False},
    "evaluate": {"benchmark": None, "outputs": None, "dialects": None},
    "report": {"retention_n": [1, 2, 4, 8]},
}

_ENV = re.compile(r"\$\{([A-Za-z_][A-Za-z0-9_]*)(?::-([^}]*))?\}")


class ConfigError(ValueError):
    pass


def interpolate(value: Any, env: Mapping[str, str] | None = None) -> Any:
    """Replace ``${VAR}`` / ``${VAR:-default}`` in every string of a nested structure."""
    env = os.environ if env is None else env
    if isinstance(value, str):
        def sub(m: re.Match) -> str:
            name, default = m.group(1), m.group(2)
            if name in env:
                return env[name]
            if default is not None:
                return default
            raise ConfigError(f"environment variable {name} is not set")
        return _ENV.sub(sub, value)
    if isinstance(value, list):
        return [interpolate(v, env) for v in value]
    if isinstance(value, dict):
        return {k: interpolate(v, env) for k, v in value.items()}
    return value


def _merge(base: dict[str, Any], over: Mapping[str, Any]) -> dict[str, Any]:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, Mapping) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def set_path(data: dict[str, Any], dotted: str, value: Any) -> None:
    keys = dotted.split(".")
    cur = data
    for k in keys[:-1]:
        cur = cur.setdefault(k, {})
    cur[keys[-1]] = value


@dataclass
class PipelineConfig:
    data: dict[str, Any]
    base_dir: Path

    @classmethod
    def load(cls, path: str | os.PathLike, overrides: Mapping[str, Any] | None = None,
             env: Mapping[str, str] | None = None) -> PipelineConfig:
        p = Path(path)
        try:
            with open(p, encoding="utf-8") as fh:
                raw = yaml.safe_load(fh) or {}
        except OSError as exc:
            raise ConfigError(f"cannot read config {p}: {exc}") from None
        except yaml.YAMLError as exc:
            raise ConfigError(f"invalid YAML in {p}: {exc}") from None
        if not isinstance(raw, dict):
            raise ConfigError(f"{p}: top level must be a mapping")
        return cls.from_dict(raw, p.resolve().parent, overrides, env)

    @classmethod
    def from_dict(cls, raw: Mapping[str, Any], base_dir: str | os.PathLike = ".",
                  overrides: Mapping[str, Any] | None = None, env: Mapping[str, str] | None = None) -> PipelineConfig:
        data = _merge(DEFAULTS, interpolate(dict(raw), env))
        for dotted, value in (overrides or {}).items():
            if value is not None:
                set_path(data, dotted, value)
        return cls(data, Path(base_dir))

    def resolve(self, value: str | None) -> Path | None:
        if value is None:
            return None
        p = Path(value)
        return p if p.is_absolute() else (self.base_dir / p)

    def path(self, key: str) -> Path | None:
        return self.resolve(self.data["paths"].get(key))

    @property
    def output(self) -> Path:
        return self.path("output") or self.base_dir / "out"

    @property
    def seed(self) -> int:
        return int(self.data.get("seed", 0))

    def stage(self, name: str) -> dict[str, Any]:
        return self.data.get(name, {})

    def backend_blocks(self) -> dict[Dialect, dict[str, Any]]:
        out = {}
        for b in self.data.get("backends", []):
            if "dialect" not in b:
                raise ConfigError("backend block without a dialect")
            out[parse_dialect(b["dialect"])] = b
        return out

    def eval_dialects(self) -> list[Dialect]:
        ds = self.stage("evaluate").get("dialects")
        return [parse_dialect(d) for d in ds] if ds else []

    def required_dialects(self, stages: tuple[str, ...]) -> dict[Dialect, str]:
        need: dict[Dialect, str] = {}
        if "translate" in stages and self.stage("translate").get("input"):
            for t in self.stage("translate")["targets"]:
                need.setdefault(parse_dialect(t), "translate")
            if self.stage("translate").get("reward_policy") == "exec-and-match":
                need.setdefault(Dialect.SQLITE, "translate (source results)")
        if "sample" in stages and self.stage("sample").get("questions"):
            need.setdefault(parse_dialect(self.stage("sample")["dialect"]), "sample")
        if "evaluate" in stages:
            for d in self.eval_dialects():
                need.setdefault(d, "evaluate")
        return need

    def validate(self, stages: tuple[str, ...]) -> list[str]:
        """Errors that must stop a run before any work starts."""
        errors = []
        try:
            blocks = self.backend_blocks()
        except (ConfigError, ValueError) as exc:
            return [str(exc)]
        for b in blocks.values():
            if b.get("kind", "embedded") not in ("embedded", "wire", "subprocess"):
                errors.append(f"backend for {b['dialect']}: unknown kind {b.get('kind')!r}")
        for d, why in self.required_dialects(stages).items():
            if d not in blocks:
                errors.append(f"no backend configured for {d.value} (needed by {why})")
        if self.stage("translate").get("max_rounds", 1) < 1:
            errors.append("translate.max_rounds must be >= 1")
        if self.stage("sample").get("n", 1) < 1:
            errors.append("sample.n must be >= 1")
        if self.stage("sample").get("reward_policy") not in ("auto", "exec-only", "exec-and-match"):
            errors.append("sample.reward_policy must be auto, exec-only or exec-and-match")
        return errors

    def section_digest(self, *keys: str, extra: Mapping[str, Any] | None = None) -> str:
        """Digest of the named config sections; file paths are hashed by content."""
        part = {k: self.data.get(k) for k in keys}
        part["seed"] = self.seed
        if extra:
            part.update(extra)
        return config_digest(part)

    def digest(self) -> str:
        """Digest of everything except the output location, which does not affect results."""
        paths = {k: v for k, v in self.data.get("paths", {}).items() if k != "output"}
        return config_digest({**self.data, "paths": paths})
