"""Shared key = value config file (INI sections) for train/segment/evaluate.

Sections: [data] (root, train_ids/test_ids inline or *_file), [model],
[train], [segment], [evaluate]. CLI flags override file values.
"""

from __future__ import annotations

import configparser
from pathlib import Path

from .evaluate import EvaluatorConfig
from .train import ConfigurationError, TrainConfig
from .unet import ModelConfig


def read_config_file(path) -> configparser.ConfigParser:
    parser = configparser.ConfigParser()
    text = Path(path).read_text()
    try:
        parser.read_string(text, source=str(path))
    except configparser.Error as exc:
        raise ConfigurationError(f"{path}: {exc}") from None
    return parser


def _section(parser: configparser.ConfigParser | None, name: str) -> dict[str, str]:
    if parser is None or not parser.has_section(name):
        return {}
    return dict(parser.items(name))


def _merged(parser, section: str, overrides: dict) -> dict[str, str]:
    values = _section(parser, section)
    for key, value in overrides.items():
        if value is not None:
            values[key] = str(value)
    return values


def _widths(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(part) for part in text.replace(",", " ").split())
    except ValueError:
        raise ConfigurationError(f"bad channel width list {text!r}") from None


def build_model_config(parser=None, **overrides) -> ModelConfig:
    values = _merged(parser, "model", overrides)
    kwargs = {}
    if "encoder_widths" in values:
        kwargs["encoder_widths"] = _widths(values["encoder_widths"])
    for key, cast in [
        ("bottleneck_width", int), ("seed", int),
        ("bn_eps", float), ("bn_momentum", float),
    ]:
        if key in values:
            kwargs[key] = cast(values[key])
    return ModelConfig(**kwargs)


def build_train_config(parser=None, **overrides) -> TrainConfig:
    values = _merged(parser, "train", overrides)
    kwargs = {}
    for key, cast in [
        ("iterations", int), ("batch_size", int), ("learning_rate", float),
        ("beta1", float), ("beta2", float), ("adam_eps", float), ("seed", int),
        ("crop_seconds", float), ("crop_start_min", float), ("crop_start_max", float),
        ("checkpoint_every", int),
    ]:
        if key in values:
            kwargs[key] = cast(values[key])
    if "checkpoint_dir" in values:
        kwargs["checkpoint_dir"] = values["checkpoint_dir"]
    try:
        return TrainConfig(**kwargs)
    except TypeError as exc:
        raise ConfigurationError(str(exc)) from None


def parse_tolerance(text: str) -> float:
    """Tolerance in ms; accepts a bare number (ms) or an ms/s suffix."""
    raw = text.strip().lower()
    if raw.endswith("ms"):
        value = float(raw[:-2])
    elif raw.endswith("s"):
        value = float(raw[:-1]) * 1000.0
    else:
        value = float(raw)
    return value


def build_evaluator_config(parser=None, **overrides) -> EvaluatorConfig:
    values = _merged(parser, "evaluate", overrides)
    kwargs = {}
    if "tolerance" in values:
        kwargs["tolerance_ms"] = parse_tolerance(values["tolerance"])
    if "tolerance_ms" in values:
        kwargs["tolerance_ms"] = parse_tolerance(values["tolerance_ms"])
    if "trim_edges" in values:
        kwargs["trim_edges"] = values["trim_edges"].strip().lower() in ("1", "true", "yes", "on")
    if "window_expansion_ms" in values:
        kwargs["window_expansion_ms"] = float(values["window_expansion_ms"])
    if "reference_leads" in values and values["reference_leads"] != "all":
        kwargs["reference_leads"] = tuple(
            part.strip() for part in values["reference_leads"].split(",") if part.strip()
        )
    return EvaluatorConfig(**kwargs)


def read_id_list(values: dict[str, str], key: str) -> list[str]:
    """Record ids from ``<key>`` (comma/space separated) or ``<key>_file``."""
    ids: list[str] = []
    if f"{key}_file" in values:
        path = Path(values[f"{key}_file"])
        if not path.exists():
            raise ConfigurationError(f"id list file not found: {path}")
        ids.extend(line.strip() for line in path.read_text().splitlines() if line.strip())
    if key in values:
        ids.extend(part for part in values[key].replace(",", " ").split() if part)
    return ids
