"""Flat ``key = value`` configuration files.

Keys are the hyperparameter names in snake_case (case-insensitive, spaces
allowed in place of underscores). Unset keys keep their defaults.
"""
from __future__ import annotations

import dataclasses
from pathlib import Path

from .agent import TrainingConfig
from .environment import EnvConfig


class ConfigError(ValueError):
    pass


ENV_KEYS = {
    "variable_ratio_amplification_constant": "beta",
    "initial_amount": "initial_amount",
    "commission_rate": "commission_rate",
}
TRAINING_KEYS = {f.name: f for f in dataclasses.fields(TrainingConfig)}
VALID_KEYS = tuple(sorted([*TRAINING_KEYS, *ENV_KEYS]))

# the thirteen hyperparameters with their published defaults
TABLE_DEFAULTS = {
    "number_of_assets": 8,
    "window_size": 30,
    "memory_size": 100_000,
    "discount_factor": 0.99,
    "minibatch_size": 32,
    "update_frequency": 4,
    "initial_exploration": 1.0,
    "final_exploration": 0.1,
    "exploration_annealing_length": 1_000_000,
    "update_start_size": 20_000,
    "target_network_update_frequency": 20_000,
    "variable_ratio_amplification_constant": 5,
    "hyper_temperature": 0.25,
}


def _convert(key: str, raw: str, default):
    if key == "conv_layers":
        return tuple(part.strip() for part in raw.split(",") if part.strip())
    if isinstance(default, bool):
        return raw.lower() in ("1", "true", "yes")
    if isinstance(default, int):
        value = float(raw)
        if value != int(value):
            raise ValueError(f"expected an integer, got {raw}")
        return int(value)
    if isinstance(default, float):
        return float(raw)
    return raw


def parse_config_text(text: str, source: str = "<config>") -> tuple[TrainingConfig, EnvConfig]:
    train_kw: dict = {}
    env_kw: dict = {}
    train_defaults = TrainingConfig()
    env_defaults = EnvConfig()
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key, raw = (s.strip() for s in line.split("=", 1))
        key = "_".join(key.lower().split())
        try:
            if key in ENV_KEYS:
                attr = ENV_KEYS[key]
                env_kw[attr] = _convert(key, raw, getattr(env_defaults, attr))
            elif key in TRAINING_KEYS:
                train_kw[key] = _convert(key, raw, getattr(train_defaults, key))
            else:
                raise ConfigError(
                    f"{source}:{lineno}: unknown key {key!r}; valid keys: {', '.join(VALID_KEYS)}"
                )
        except ConfigError:
            raise
        except ValueError as exc:
            raise ConfigError(f"{source}:{lineno}: {key}: {exc}") from None
    try:
        return TrainingConfig(**train_kw), EnvConfig(**env_kw)
    except ValueError as exc:
        raise ConfigError(f"{source}: {exc}") from None


def load_config(path) -> tuple[TrainingConfig, EnvConfig]:
    path = Path(path)
    return parse_config_text(path.read_text(encoding="utf-8"), str(path))


def config_to_text(train: TrainingConfig, env: EnvConfig) -> str:
    lines = []
    for key, value in train.to_dict().items():
        if key == "conv_layers":
            value = ", ".join(value)
        lines.append(f"{key} = {value}")
    lines.append(f"variable_ratio_amplification_constant = {env.beta}")
    lines.append(f"initial_amount = {env.initial_amount!r}")
    lines.append(f"commission_rate = {env.commission_rate!r}")
    return "\n".join(lines) + "\n"


def config_echo(train: TrainingConfig, env: EnvConfig) -> dict:
    d = train.to_dict()
    d["variable_ratio_amplification_constant"] = env.beta
    d["initial_amount"] = env.initial_amount
    d["commission_rate"] = env.commission_rate
    return d
