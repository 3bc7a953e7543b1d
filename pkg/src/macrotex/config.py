"""Run configuration: an INI-style ``key = value`` file with sections.

Every key has a type and either a default or is mandatory. Unknown
sections or keys are errors. :func:`emit_config` writes a fully resolved
configuration that :func:`parse_config` reads back to an equal object.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .features import (
    LAYER_PRESETS,
    ConvNet,
    FilterBank,
    FirstOrder,
    builtin_filter_bank,
    resolve_layers,
)
from .sampler import Rate, StepSchedule
from .soul import Ball
from .weights import load_weights, randomize_weights

__all__ = ["RunConfig", "parse_config", "emit_config", "build_spec", "build_schedule", "COMMANDS"]

COMMANDS = ("synth", "check", "oracle", "baseline")
MANDATORY = object()


def _bool(text):
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _opt(kind):
    def conv(text):
        return None if text.strip() == "" else kind(text)

    conv.__name__ = f"optional {kind.__name__}"
    return conv


def _ints(text):
    return tuple(int(v) for v in text.replace(",", " ").split())


def _floats(text):
    return tuple(float(v) for v in text.replace(",", " ").split())


def _choice(*options):
    def conv(text):
        text = text.strip()
        if text not in options:
            raise ValueError(f"expected one of {options}, got {text!r}")
        return text

    conv.__name__ = "one of " + "|".join(options)
    return conv


# section -> key -> (parser, default)
SCHEMA = {
    "run": {
        "command": (_choice(*COMMANDS), "synth"),
        "run_dir": (_opt(str), None),
    },
    "job": {
        "exemplar": (_opt(str), None),
        "output_height": (_opt(int), None),
        "output_width": (_opt(int), None),
        "seed": (int, 0),
        "epsilon": (float, 0.0),
        "init": (_choice("gaussian_field", "white_noise"), "gaussian_field"),
        "histogram_match": (_bool, True),
    },
    "features": {
        "kind": (_choice("first_order", "filter_bank", "convnet"), "filter_bank"),
        "transforms": (str, "identity"),
        "bank": (str, "grad8"),
        "nonlinearity": (str, "softplus"),
        "padding": (_choice("periodic", "zero"), "periodic"),
        "weights": (_opt(str), None),
        "weight_mode": (_choice("trained", "gaussian"), "trained"),
        "preset": (_choice("custom", *LAYER_PRESETS), "deep8"),
        "layers": (_ints, ()),
        "aggregation": (_choice("channel", "layer"), "channel"),
    },
    "schedule": {
        "delta0": (float, MANDATORY),
        "delta_exponent": (float, 1.0),
        "gamma0": (float, MANDATORY),
        "gamma_exponent": (float, 1.0),
        "m0": (float, 1.0),
        "m_exponent": (float, 0.0),
    },
    "soul": {
        "iterations": (int, 5000),
        "domain": (_choice("unbounded", "ball"), "unbounded"),
        "radius": (_opt(float), None),
        "theta0": (_floats, ()),
        "averaging": (_choice("last", "polyak"), "last"),
        "chains": (int, 1),
    },
    "baseline": {
        "steps": (int, 500),
        "eta": (float, 1.0),
        "backtracking": (_bool, True),
    },
}


@dataclass(frozen=True)
class RunConfig:
    command: str
    run_dir: object
    exemplar: object
    output_height: object
    output_width: object
    seed: int
    epsilon: float
    init: str
    histogram_match: bool
    kind: str
    transforms: str
    bank: str
    nonlinearity: str
    padding: str
    weights: object
    weight_mode: str
    preset: str
    layers: tuple
    aggregation: str
    delta0: float
    delta_exponent: float
    gamma0: float
    gamma_exponent: float
    m0: float
    m_exponent: float
    iterations: int
    domain: str
    radius: object
    theta0: tuple
    averaging: str
    chains: int
    steps: int
    eta: float
    backtracking: bool

    def path(self, value):
        return None if value is None else Path(value)


_SECTION_OF = {key: section for section, keys in SCHEMA.items() for key in keys}


def parse_config(path=None, overrides=(), text=None, require_schedule=True):
    """Resolve a configuration from a file and ``section.key=value`` overrides.

    Raises
    ------
    ConfigError
        Unknown section or key, unparsable value, or a missing mandatory
        key (``schedule.delta0``, ``schedule.gamma0``).
    """
    parser = configparser.ConfigParser(interpolation=None, delimiters=("=",), comment_prefixes=("#", ";"))
    parser.optionxform = str
    base_dir = "."
    if path is not None:
        try:
            with open(path, encoding="utf-8") as fh:
                parser.read_file(fh)
        except OSError as exc:
            raise ConfigError(str(path), f"cannot read config: {exc}") from exc
        except configparser.Error as exc:
            raise ConfigError(str(path), f"malformed config: {exc}") from exc
        base_dir = str(Path(path).resolve().parent)
    elif text is not None:
        try:
            parser.read_string(text)
        except configparser.Error as exc:
            raise ConfigError("<text>", f"malformed config: {exc}") from exc

    raw = {}
    for section in parser.sections():
        if section not in SCHEMA:
            raise ConfigError(section, "unknown section")
        for key, value in parser.items(section):
            if key not in SCHEMA[section]:
                raise ConfigError(key, f"unknown key in section [{section}]")
            raw[(section, key)] = value
    for item in overrides:
        name, sep, value = item.partition("=")
        name = name.strip()
        if not sep:
            raise ConfigError(name, "override must look like section.key=value")
        section, dot, key = name.rpartition(".")
        if not dot:
            section = _SECTION_OF.get(key)
            if section is None:
                raise ConfigError(key, "unknown key")
        if section not in SCHEMA:
            raise ConfigError(section, "unknown section")
        if key not in SCHEMA[section]:
            raise ConfigError(key, f"unknown key in section [{section}]")
        raw[(section, key)] = value

    values = {}
    for section, keys in SCHEMA.items():
        for key, (conv, default) in keys.items():
            if (section, key) in raw:
                try:
                    values[key] = conv(raw[(section, key)])
                except (TypeError, ValueError) as exc:
                    raise ConfigError(key, f"invalid value {raw[(section, key)]!r}: {exc}") from exc
            elif default is MANDATORY:
                if require_schedule:
                    raise ConfigError(key, f"mandatory key [{section}] {key} is missing")
                values[key] = None
            else:
                values[key] = default
    # relative paths in a config file are relative to the file's folder
    for key in ("exemplar", "weights", "bank"):
        value = values[key]
        if value and (key != "bank" or value.endswith(".npy")) and not Path(value).is_absolute():
            values[key] = str(Path(base_dir) / value) if path is not None else value
    cfg = RunConfig(**values)
    _validate(cfg)
    return cfg


def _validate(cfg):
    if cfg.domain == "ball" and (cfg.radius is None or not cfg.radius > 0):
        raise ConfigError("radius", "ball domain needs a positive radius")
    if cfg.epsilon < 0:
        raise ConfigError("epsilon", "must be nonnegative")
    if cfg.iterations < 0:
        raise ConfigError("iterations", "must be nonnegative")
    if cfg.chains < 1:
        raise ConfigError("chains", "must be at least 1")
    if cfg.preset == "custom" and cfg.kind == "convnet" and not cfg.layers:
        raise ConfigError("layers", "custom preset needs explicit layers")


def _fmt(value):
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        return ", ".join(_fmt(v) for v in value)
    return str(value)


def emit_config(cfg):
    """Fully resolved configuration text (every key, explicit values)."""
    out = []
    for section, keys in SCHEMA.items():
        out.append(f"[{section}]")
        for key in keys:
            value = getattr(cfg, key)
            out.append(f"{key} = {_fmt(value)}")
        out.append("")
    return "\n".join(out)


def build_schedule(cfg):
    try:
        return StepSchedule(
            Rate(cfg.delta0, cfg.delta_exponent),
            Rate(cfg.gamma0, cfg.gamma_exponent),
            Rate(cfg.m0, cfg.m_exponent),
        )
    except ValueError as exc:
        raise ConfigError("schedule", str(exc)) from exc


def build_domain(cfg):
    return Ball(cfg.radius) if cfg.domain == "ball" else None


def build_spec(cfg, weight_stream=None):
    """Feature specification described by ``cfg``."""
    try:
        if cfg.kind == "first_order":
            return FirstOrder(tuple(t.strip() for t in cfg.transforms.split(",") if t.strip()))
        if cfg.kind == "filter_bank":
            if cfg.bank.endswith(".npy"):
                kernels = np.load(cfg.path(cfg.bank))
                return FilterBank(tuple(kernels), nonlinearity=cfg.nonlinearity, padding=cfg.padding)
            return builtin_filter_bank(cfg.bank, nonlinearity=cfg.nonlinearity, padding=cfg.padding)
        if cfg.weights is None:
            raise ConfigError("weights", "convnet features need a weights manifest")
        net = load_weights(cfg.path(cfg.weights))
        if cfg.weight_mode == "gaussian":
            if weight_stream is None:
                raise ConfigError("weight_mode", "gaussian weights need a random stream")
            net = randomize_weights(net, weight_stream)
        layers = cfg.layers if cfg.preset == "custom" else resolve_layers(cfg.preset, net)
        return ConvNet(net, layers, aggregation=cfg.aggregation)
    except ConfigError:
        raise
    except (ValueError, OSError) as exc:
        raise ConfigError("features", str(exc)) from exc


def config_keys():
    return [f.name for f in fields(RunConfig)]
