"""Run configuration files: TOML with ${VAR} interpolation, strict keys, module defaults."""

from __future__ import annotations

import dataclasses
import os
import re
import sys
from dataclasses import dataclass, replace
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .design import DesignConfig
from .game import GameConfig, load_test_set
from .llm import LlmEndpointConfig
from .model import ModelConfig
from .smc import SmcConfig

_VAR = re.compile(r"\$\{([A-Za-z_][A-Za-z0-9_]*)\}")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class BenchSettings:
    rules: tuple[str, ...] = ()  # empty: the nine fixture rules
    methods: tuple[str, ...] = ("online_fuzzy",)
    repeats: int = 20
    workers: int = 1
    traces: bool = False


@dataclass(frozen=True)
class RunConfig:
    game: GameConfig = GameConfig()
    output_dir: str = "runs"
    bench: BenchSettings = BenchSettings()


_SECTIONS = {"smc": SmcConfig, "model": ModelConfig, "design": DesignConfig, "llm": LlmEndpointConfig}
_GAME_KEYS = ("method", "num_rounds", "seed", "proposer", "batch_num_proposals", "fallback_to_grammar")
_TOP_KEYS = set(_GAME_KEYS) | set(_SECTIONS) | {"output_dir", "cassette", "bench", "test_set"}


def interpolate(value, env=None):
    """Replace ${VAR} in every string of a parsed document; unset variables are an error."""
    env = os.environ if env is None else env
    if isinstance(value, str):

        def sub(match):
            name = match.group(1)
            if name not in env:
                raise ConfigError(f"environment variable {name} is not set")
            return env[name]

        return _VAR.sub(sub, value)
    if isinstance(value, dict):
        return {k: interpolate(v, env) for k, v in value.items()}
    if isinstance(value, list):
        return [interpolate(v, env) for v in value]
    return value


def _check_keys(doc: dict, allowed, where: str) -> None:
    unknown = sorted(set(doc) - set(allowed))
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {', '.join(unknown)}")


def _build(cls, doc, where: str):
    if not isinstance(doc, dict):
        raise ConfigError(f"{where}: expected a table")
    _check_keys(doc, [f.name for f in dataclasses.fields(cls)], where)
    try:
        return cls(**doc)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from None


def run_config_from_dict(doc: dict, env=None) -> RunConfig:
    doc = interpolate(doc, env)
    _check_keys(doc, _TOP_KEYS, "config")
    sections = {name: _build(cls, doc[name], f"[{name}]") for name, cls in _SECTIONS.items() if name in doc}
    cassette = doc.get("cassette", {})
    if not isinstance(cassette, dict):
        raise ConfigError("[cassette]: expected a table")
    _check_keys(cassette, ("path", "mode"), "[cassette]")
    bench_doc = dict(doc.get("bench", {}))
    for key in ("rules", "methods"):
        if key in bench_doc:
            bench_doc[key] = tuple(bench_doc[key])
    bench = _build(BenchSettings, bench_doc, "[bench]")
    if "test_set" in doc:
        sections["test_set"] = _test_set(doc["test_set"])
    try:
        game = GameConfig(
            **{k: doc[k] for k in _GAME_KEYS if k in doc},
            **sections,
            cassette_path=cassette.get("path") or None,
            cassette_mode=cassette.get("mode", "off"),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"config: {exc}") from None
    return RunConfig(game=game, output_dir=str(doc.get("output_dir", "runs")), bench=bench)


def _test_set(path):
    try:
        return load_test_set(path)
    except (OSError, ValueError, KeyError) as exc:
        raise ConfigError(f"test_set: {exc}") from None


def load_run_config(path: str | os.PathLike | None, env=None) -> RunConfig:
    if path is None:
        return RunConfig()
    try:
        doc = tomllib.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return run_config_from_dict(doc, env)


def override(cfg: RunConfig, **flags) -> RunConfig:
    """Apply command-line values over file values; None means 'not given'."""
    game_changes = {}
    for key in ("method", "seed", "num_rounds", "proposer", "cassette_path", "cassette_mode"):
        if flags.get(key) is not None:
            game_changes[key] = flags[key]
    if flags.get("selection") is not None:
        game_changes["design"] = replace(cfg.game.design, selection=flags["selection"])
    if flags.get("test_set") is not None:
        game_changes["test_set"] = _test_set(flags["test_set"])
    if flags.get("num_particles") is not None:
        game_changes["smc"] = replace(cfg.game.smc, num_particles=flags["num_particles"])
    bench_changes = {k: flags[k] for k in ("methods", "rules", "repeats", "workers", "traces") if flags.get(k) is not None}
    try:
        game = replace(cfg.game, **game_changes)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return RunConfig(
        game=game,
        output_dir=flags["output_dir"] if flags.get("output_dir") is not None else cfg.output_dir,
        bench=replace(cfg.bench, **bench_changes),
    )
