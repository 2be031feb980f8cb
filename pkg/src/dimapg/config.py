"""Plain-text run configuration: `key = value` lines with `#` comments.

Training hyperparameters use their TrainConfig names; network and harness
settings have their own keys; environment constants are written as
`env.<field> = value` and checked against the chosen environment's config.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, fields, replace
from typing import Any

from .algorithm import Team, TrainConfig, make_team
from .envs import ENVIRONMENTS, CoopNavConfig, PredPreyConfig, SurvivalConfig

ENV_CONFIGS = {"coopnav": CoopNavConfig, "predprey": PredPreyConfig, "survival": SurvivalConfig}


class ConfigError(ValueError):
    """Malformed or inconsistent configuration; the message names the offending key."""


@dataclass(frozen=True)
class RunConfig:
    env: str
    train: TrainConfig = field(default_factory=TrainConfig)
    env_params: tuple[tuple[str, Any], ...] = ()
    hidden: tuple[int, ...] = (100, 100)
    activation: str = "relu"
    initial_log_std: float = 0.0
    checkpoint_every: int = 50
    eval_episodes: int = 100

    def env_config(self):
        return replace(ENV_CONFIGS[self.env](), **dict(self.env_params))


# keys owned by RunConfig itself (everything except `env`, `train`, `env_params`)
_RUN_KEYS = {"hidden": "ints", "activation": str, "initial_log_std": float, "checkpoint_every": int,
             "eval_episodes": int}
_TRAIN_TYPES = {f.name: type(f.default) for f in fields(TrainConfig)}


def _coerce(key: str, kind, raw: str):
    raw = raw.strip()
    try:
        if kind == "ints":
            return tuple(int(x) for x in raw.split(",") if x.strip())
        if kind is bool:
            low = raw.lower()
            if low in ("true", "1", "yes", "on"):
                return True
            if low in ("false", "0", "no", "off"):
                return False
            raise ValueError(raw)
        if kind is int:
            return int(raw)
        if kind is float:
            return float(raw)
        return raw
    except ValueError:
        name = "comma-separated integers" if kind == "ints" else kind.__name__
        raise ConfigError(f"{key}: expected {name}, got {raw!r}") from None


def _env_field_types(env: str) -> dict[str, type]:
    return {f.name: type(f.default) for f in fields(ENV_CONFIGS[env])}


def parse_config(text: str, overrides: dict[str, str] | None = None) -> RunConfig:
    """Build a RunConfig from file text; `overrides` are applied after the file."""
    pairs: list[tuple[int, str, str]] = []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected `key = value`, got {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        pairs.append((lineno, key, value))
    pairs.extend((0, k, str(v)) for k, v in (overrides or {}).items())

    values: dict[str, str] = {}
    for _, key, value in pairs:
        values[key] = value
    env = values.pop("env", None)
    if env is None:
        raise ConfigError("env: missing environment name")
    if env not in ENV_CONFIGS:
        raise ConfigError(f"env: unknown environment {env!r} (expected one of {sorted(ENV_CONFIGS)})")

    train_kw, run_kw, env_kw = {}, {}, {}
    env_types = _env_field_types(env)
    for key, raw in values.items():
        if key in _TRAIN_TYPES:
            train_kw[key] = _coerce(key, _TRAIN_TYPES[key], raw)
        elif key in _RUN_KEYS:
            run_kw[key] = _coerce(key, _RUN_KEYS[key], raw)
        elif key.startswith("env.") and key[4:] in env_types:
            env_kw[key[4:]] = _coerce(key, env_types[key[4:]], raw)
        else:
            raise ConfigError(f"{key}: unknown configuration key")
    try:
        train = TrainConfig(**train_kw)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    if run_kw.get("activation", "relu") not in ("relu", "tanh"):
        raise ConfigError(f"activation: unknown activation {run_kw['activation']!r}")
    try:
        env_cfg = replace(ENV_CONFIGS[env](), **env_kw)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    resolved = tuple((f.name, getattr(env_cfg, f.name)) for f in fields(env_cfg))
    return RunConfig(env=env, train=train, env_params=resolved, **run_kw)


def _render_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def render_config(cfg: RunConfig) -> str:
    """Fully resolved config text; parse_config(render_config(c)) == c."""
    lines = [f"env = {cfg.env}"]
    lines += [f"{f.name} = {_render_value(getattr(cfg.train, f.name))}" for f in fields(TrainConfig)]
    lines += [f"{key} = {_render_value(getattr(cfg, key))}" for key in _RUN_KEYS]
    env_cfg = cfg.env_config()
    lines += [f"env.{f.name} = {_render_value(getattr(env_cfg, f.name))}" for f in fields(env_cfg)]
    return "\n".join(lines) + "\n"


def load_config(path, overrides: dict[str, str] | None = None) -> RunConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read(), overrides)


def build_env(cfg: RunConfig):
    return ENVIRONMENTS[cfg.env](cfg.env_config())


def build_team(cfg: RunConfig) -> Team:
    return make_team(build_env(cfg), cfg.hidden, cfg.activation, cfg.initial_log_std)


def with_train(cfg: RunConfig, **changes) -> RunConfig:
    return dataclasses.replace(cfg, train=replace(cfg.train, **changes))
