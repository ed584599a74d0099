"""Flat dotted-key run configuration.

One registry covers every tunable across the package.  Values resolve with
precedence defaults < config file < command-line flags, unknown keys are
rejected, and the fully resolved table can be echoed back as a config file
so any run is reproducible byte-for-byte from its log.

Config files are plain text: one ``key = value`` per line, ``#`` comments
and blank lines ignored.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

from .data import SyntheticSpec
from .errors import ConfigError
from .model import ModelConfig
from .preprocess import AugmentConfig
from .training import TrainConfig


@dataclass(frozen=True)
class ConfigKey:
    name: str
    kind: str  # int | float | bool | str
    default: object


_KIND_OF = {int: "int", float: "float", bool: "bool", str: "str"}


def _keys_from(prefix: str, cls, skip: tuple = ()) -> list[ConfigKey]:
    keys = []
    for f in fields(cls):
        if f.name in skip:
            continue
        py_type = type(f.default)
        if py_type not in _KIND_OF:
            continue  # compound fields get dedicated keys below
        keys.append(ConfigKey(f"{prefix}.{f.name}", _KIND_OF[py_type], f.default))
    return keys


def _build_registry() -> dict[str, ConfigKey]:
    keys: list[ConfigKey] = []
    keys += _keys_from("model", ModelConfig, skip=("num_classes",))
    keys += _keys_from("train", TrainConfig)
    keys += _keys_from("augment", AugmentConfig)
    keys.append(ConfigKey("augment.speed_min", "float", 0.8))
    keys.append(ConfigKey("augment.speed_max", "float", 1.2))
    keys += _keys_from("synth", SyntheticSpec, skip=("ratios",))
    keys.append(ConfigKey("synth.train_ratio", "float", 0.7))
    keys.append(ConfigKey("synth.val_ratio", "float", 0.15))
    keys.append(ConfigKey("synth.test_ratio", "float", 0.15))
    return {k.name: k for k in keys}


REGISTRY = _build_registry()

_BOOL_WORDS = {"true": True, "1": True, "yes": True, "on": True,
               "false": False, "0": False, "no": False, "off": False}


def parse_value(key: str, text: str):
    """Parse one raw string per the key's registered type."""
    if key not in REGISTRY:
        raise ConfigError(f"unknown config key {key!r}")
    kind = REGISTRY[key].kind
    text = text.strip()
    try:
        if kind == "int":
            return int(text)
        if kind == "float":
            return float(text)
        if kind == "bool":
            if text.lower() not in _BOOL_WORDS:
                raise ValueError(f"not a boolean: {text!r}")
            return _BOOL_WORDS[text.lower()]
        return text
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {exc}") from exc


def load_config_file(path: str) -> dict:
    """Parse ``key = value`` lines; unknown keys are rejected."""
    values = {}
    try:
        with open(path, "r", encoding="utf-8") as fh:
            lines = fh.read().splitlines()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    for lineno, line in enumerate(lines, start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigError(f"{path} line {lineno}: expected 'key = value'")
        key, _, raw = stripped.partition("=")
        key = key.strip()
        values[key] = parse_value(key, raw)
    return values


def resolve_config(file_values: dict | None = None,
                   flag_values: dict | None = None) -> dict:
    """Merge defaults < file < flags into a complete typed table."""
    resolved = {name: key.default for name, key in REGISTRY.items()}
    for source in (file_values or {}, flag_values or {}):
        for key, value in source.items():
            if key not in REGISTRY:
                raise ConfigError(f"unknown config key {key!r}")
            resolved[key] = value
    return resolved


def format_config(resolved: dict) -> str:
    """Echo a resolved table as a loadable config file, keys sorted."""
    lines = [f"{key} = {resolved[key]}" for key in sorted(resolved)]
    return "\n".join(lines) + "\n"


def _section(resolved: dict, prefix: str) -> dict:
    plen = len(prefix) + 1
    return {k[plen:]: v for k, v in resolved.items() if k.startswith(prefix + ".")}


def model_config_from(resolved: dict, num_classes: int) -> ModelConfig:
    return ModelConfig(num_classes=num_classes, **_section(resolved, "model"))


def train_config_from(resolved: dict) -> TrainConfig:
    return TrainConfig(**_section(resolved, "train"))


def augment_config_from(resolved: dict) -> AugmentConfig:
    section = _section(resolved, "augment")
    speed = (section.pop("speed_min"), section.pop("speed_max"))
    return AugmentConfig(speed_range=speed, **section)


def synthetic_spec_from(resolved: dict) -> SyntheticSpec:
    section = _section(resolved, "synth")
    ratios = (section.pop("train_ratio"), section.pop("val_ratio"),
              section.pop("test_ratio"))
    return SyntheticSpec(ratios=ratios, **section)
