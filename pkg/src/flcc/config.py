"""
Experiment configuration: a line-oriented ``section.key = value`` format.

``#`` starts a comment. Every key has a default, so an empty file is a
valid configuration. Unknown keys, malformed values and invariant
violations are reported with the offending key and line number.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Any, Callable

from .errors import ConfigError


def _positive(v):
    return v > 0


def _nonneg(v):
    return v >= 0


def _fraction(v):
    return 0 <= v <= 1


@dataclass(frozen=True)
class Key:
    name: str
    kind: str  # float | int | bool | str | choice | floats
    default: Any
    check: Callable[[Any], bool] | None = None
    requirement: str = ""
    choices: tuple[str, ...] = ()


KEYS: tuple[Key, ...] = (
    Key("seed", "int", 0, _nonneg, ">= 0"),
    Key("network.intensity", "float", 0.001, _nonneg, ">= 0"),
    Key("network.num_nodes", "int", 0, _nonneg, ">= 0 (0 draws the count from the PPP)"),
    Key("network.region_width", "float", 173.20508075688772, _positive, "> 0"),
    Key("network.region_height", "float", 200.0, _positive, "> 0"),
    Key("network.cell_radius", "float", 50.0, _positive, "> 0"),
    Key("network.num_channels", "int", 7, lambda v: v >= 1, ">= 1"),
    Key("network.tx_power", "float", 0.1, _positive, "> 0"),
    Key("network.untrusted_fraction", "float", 0.2, _fraction, "in [0, 1]"),
    Key("channel.alpha", "float", 4.0, lambda v: v >= 2, ">= 2"),
    Key("channel.noise_power", "float", 1e-12, _nonneg, ">= 0"),
    Key("channel.sinr_threshold_db", "float", 10.0, math.isfinite, "finite"),
    Key("channel.active_probability", "float", 1.0, _fraction, "in [0, 1]"),
    Key("channel.d_min", "float", 1.0, _positive, "> 0"),
    Key("mac.contention_window", "int", 16, lambda v: v >= 1, ">= 1"),
    Key("mac.max_retries", "int", 4, _nonneg, ">= 0"),
    Key("mac.mode", "choice", "flcc", choices=("flcc", "baseline")),
    Key("learn.arch", "choice", "conv", choices=("conv", "dense")),
    Key("learn.learning_rate", "float", 0.05, _positive, "> 0"),
    Key("learn.batch_size", "int", 20, lambda v: v >= 1, ">= 1"),
    Key("fed.max_rounds", "int", 300, _nonneg, ">= 0"),
    Key("fed.epsilon", "float", 1e-4, _nonneg, ">= 0"),
    Key("fed.trust_learning_rate", "float", 0.2, lambda v: 0 < v <= 1, "in (0, 1]"),
    Key("fed.blacklist_threshold", "float", 0.05, _fraction, "in [0, 1]"),
    Key("fed.initial_trust", "float", 0.5, _fraction, "in [0, 1]"),
    Key("fed.validation_tolerance", "float", 0.1, _nonneg, ">= 0"),
    Key("fed.hierarchy", "choice", "single_server", choices=("single_server", "cell_plus_cloud")),
    Key("fed.cloud_blend", "float", 0.5, _fraction, "in [0, 1]"),
    Key("attack.kind", "choice", "label_flip", choices=("label_flip", "sign_flip_gradient", "scaled_noise")),
    Key("attack.magnitude", "float", 1.0, _nonneg, ">= 0"),
    Key("data.train_images", "str", ""),
    Key("data.train_labels", "str", ""),
    Key("data.test_images", "str", ""),
    Key("data.test_labels", "str", ""),
    Key("data.min_samples", "int", 100, lambda v: v >= 1, ">= 1"),
    Key("data.max_samples", "int", 200, lambda v: v >= 1, ">= 1"),
    Key("data.overlap_allowed", "bool", True),
    Key("data.validation_size", "int", 500, _nonneg, ">= 0"),
    Key("data.eval_size", "int", 0, _nonneg, ">= 0 (0 uses every remaining held-out item)"),
    Key("analysis.intensities", "floats", (0.001, 0.01), lambda v: len(v) > 0 and all(x >= 0 for x in v),
        "a non-empty list of values >= 0"),
    Key("analysis.t_db_min", "float", -10.0, math.isfinite, "finite"),
    Key("analysis.t_db_max", "float", 30.0, math.isfinite, "finite"),
    Key("analysis.t_db_step", "float", 2.5, _positive, "> 0"),
    Key("analysis.trials", "int", 100_000, lambda v: v >= 1, ">= 1"),
    Key("analysis.link_distance", "float", 1.0, _positive, "> 0"),
)
KEY_INDEX = {k.name: k for k in KEYS}


class ExperimentConfig:
    """Resolved configuration; values are read as ``cfg["section.key"]``."""

    def __init__(self, values: dict[str, Any] | None = None):
        self._values = {k.name: k.default for k in KEYS}
        if values:
            for name, value in values.items():
                if name not in KEY_INDEX:
                    raise ConfigError("unknown key", key=name)
                self._values[name] = value
        _validate(self._values, {})

    def __getitem__(self, name: str):
        return self._values[name]

    def with_overrides(self, **values) -> "ExperimentConfig":
        merged = dict(self._values)
        merged.update({k.replace("__", "."): v for k, v in values.items()})
        return ExperimentConfig(merged)

    def as_dict(self) -> dict[str, Any]:
        return dict(self._values)

    def __eq__(self, other) -> bool:
        return isinstance(other, ExperimentConfig) and self._values == other._values

    def __repr__(self) -> str:
        return f"ExperimentConfig({self._values!r})"


def _convert(key: Key, raw: str, line: int | None):
    text = raw.strip()
    try:
        if key.kind == "float":
            value = float(text)
            if math.isnan(value):
                raise ValueError
            return value
        if key.kind == "int":
            return int(text, 10)
        if key.kind == "bool":
            lowered = text.lower()
            if lowered in ("true", "yes", "1", "on"):
                return True
            if lowered in ("false", "no", "0", "off"):
                return False
            raise ValueError
        if key.kind == "choice":
            if text not in key.choices:
                raise ConfigError(f"expected one of {', '.join(key.choices)}, got {text!r}", key.name, line)
            return text
        if key.kind == "floats":
            parts = [p for p in (s.strip() for s in text.split(",")) if p]
            return tuple(float(p) for p in parts)
        return text
    except ValueError:
        raise ConfigError(f"expected {key.kind}, got {text!r}", key.name, line) from None


def _validate(values: dict[str, Any], lines: dict[str, int]) -> None:
    for key in KEYS:
        value = values[key.name]
        if key.check is not None and not key.check(value):
            raise ConfigError(f"value {value!r} violates requirement {key.requirement}",
                              key.name, lines.get(key.name))
    cross = [
        ("data.max_samples", values["data.min_samples"] <= values["data.max_samples"],
         "must be >= data.min_samples"),
        ("analysis.t_db_max", values["analysis.t_db_min"] <= values["analysis.t_db_max"],
         "must be >= analysis.t_db_min"),
    ]
    for name, ok, message in cross:
        if not ok:
            raise ConfigError(message, name, lines.get(name))


def parse_config_text(text: str) -> ExperimentConfig:
    values: dict[str, Any] = {}
    lines: dict[str, int] = {}
    for lineno, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', got {raw_line.strip()!r}", line=lineno)
        name, raw_value = (part.strip() for part in line.split("=", 1))
        key = KEY_INDEX.get(name)
        if key is None:
            raise ConfigError("unknown key", name, lineno)
        if name in lines:
            raise ConfigError(f"duplicate key (first set on line {lines[name]})", name, lineno)
        values[name] = _convert(key, raw_value, lineno)
        lines[name] = lineno
    merged = {k.name: k.default for k in KEYS}
    merged.update(values)
    _validate(merged, lines)
    return ExperimentConfig(merged)


def parse_config(path) -> ExperimentConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc.strerror}") from exc
    return parse_config_text(text)


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        return ", ".join(repr(float(v)) for v in value)
    return str(value)


def serialize_config(cfg: ExperimentConfig) -> str:
    """Every key in canonical order; parses back to an equal config."""
    out = []
    section = None
    for key in KEYS:
        head = key.name.split(".", 1)[0] if "." in key.name else None
        if head != section and head is not None:
            out.append(f"\n# {head}")
            section = head
        out.append(f"{key.name} = {_format(cfg[key.name])}")
    return "\n".join(out).lstrip("\n") + "\n"

