"""Experiment configuration files.

A config is an INI file with one section per command (``bounds``,
``oracle``, ``train``, ``sweep``, ``probe``)::

    [sweep]
    source = circle
    lambdas = 64, 512, 4096
    seeds = 0, 1, 2
    iterations = 3000
    batch_size = 256

Every key is typed and range-checked before anything runs, and unknown
sections or keys are rejected so typos cannot silently fall back to
defaults. Values given on the command line with ``--set key=value`` are
applied on top of the file.
"""

from __future__ import annotations

import configparser
import dataclasses
import math

import numpy as np

from .bounds import BIUNIFORM_EPS_STEPS, BIUNIFORM_K_MAX, ZERO_RATE_DISTORTION, default_d_grid
from .neural.train import TrainConfig


class ConfigError(ValueError):
    pass


def _bool(text):
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _floats(text):
    return tuple(float(v) for v in text.replace(",", " ").split())


def _ints(text):
    return tuple(int(v) for v in text.replace(",", " ").split())


def _choice(*options):
    def parse(text):
        t = text.strip()
        if t not in options:
            raise ValueError(f"expected one of {', '.join(options)}, got {t!r}")
        return t

    return parse


_SOURCE = ("source", _choice("circle", "ramp"), "circle")
_OUTPUT = ("output", str, "")

# TrainConfig fields, parsed from text
_TRAIN_TYPES = {
    "source": _choice("circle", "ramp"),
    "data_regime": _choice("fresh", "fixed"),
    "phase_fractions": _floats,
    "hard_freeze_analysis": _bool,
}
_TRAIN_KEYS = [
    (f.name, _TRAIN_TYPES.get(f.name) or {"int": int, "float": float}[f.type], f.default)
    for f in dataclasses.fields(TrainConfig)
]

SCHEMA = {
    "bounds": [
        _SOURCE,
        ("d_min", float, 0.0),  # 0 means the default grid for the source
        ("d_max", float, 0.0),
        ("points", int, 200),
        ("spacing", _choice("log", "linear"), "log"),
        ("d_values", _floats, ()),
        ("k_max", int, BIUNIFORM_K_MAX),
        ("eps_steps", int, BIUNIFORM_EPS_STEPS),
        _OUTPUT,
    ],
    "oracle": [
        _SOURCE,
        ("scheme", _choice("uniform", "biuniform", "hemisphere"), "uniform"),
        ("k", _ints, (1, 2, 4, 8, 16, 32, 64)),
        ("eps", _floats, (0.5,)),
        ("mode", _choice("exact", "monte_carlo", "both"), "both"),
        ("n", int, 10**6),
        ("seed", int, 0),
        ("ramp_dim", int, 0),
        _OUTPUT,
    ],
    "train": _TRAIN_KEYS + [("eval_n", int, 10**6), _OUTPUT],
    "sweep": [k for k in _TRAIN_KEYS if k[0] not in ("lam", "seed")]
    + [
        ("lambdas", _floats, (1.0, 4.0, 16.0, 64.0, 256.0, 512.0, 1024.0, 4096.0)),
        ("seeds", _ints, (0,)),
        ("eval_n", int, 10**6),
        ("workers", int, 1),
        ("label", str, "neural"),
        _OUTPUT,
    ],
    "probe": _TRAIN_KEYS
    + [
        ("checkpoint", str, ""),
        ("grid", int, 1024),
        ("index", int, -1),  # -1 draws the coordinate from the probe stream
        ("probe", _choice("analysis", "synthesis", "both"), "both"),
        _OUTPUT,
    ],
}


def defaults(command: str) -> dict:
    if command not in SCHEMA:
        raise ConfigError(f"unknown command section [{command}]")
    return {name: default for name, _, default in SCHEMA[command]}


def _parse_items(command: str, items, origin: str) -> dict:
    types = {name: typ for name, typ, _ in SCHEMA[command]}
    out = {}
    for key, text in items:
        if key not in types:
            raise ConfigError(f"{origin}: unknown key {key!r} in [{command}]")
        try:
            out[key] = types[key](text)
        except ValueError as exc:
            raise ConfigError(f"{origin}: bad value for {key}: {exc}") from exc
    return out


def load(command: str, path=None, overrides=()) -> dict:
    """Parse and validate the ``[command]`` section of ``path`` plus
    ``key=value`` overrides. Returns a plain dict of typed values."""
    values = defaults(command)
    if path:
        cp = configparser.ConfigParser(interpolation=None)
        try:
            with open(path, encoding="utf-8") as fh:
                cp.read_file(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except configparser.Error as exc:
            raise ConfigError(f"{path}: {exc}") from exc
        for section in cp.sections():
            if section not in SCHEMA:
                raise ConfigError(f"{path}: unknown section [{section}]")
        if cp.has_section(command):
            values.update(_parse_items(command, cp.items(command), str(path)))
    pairs = []
    for item in overrides:
        key, sep, text = item.partition("=")
        if not sep:
            raise ConfigError(f"override {item!r} is not key=value")
        pairs.append((key.strip(), text.strip()))
    values.update(_parse_items(command, pairs, "--set"))
    validate(command, values)
    return values


def to_text(command: str, values: dict) -> str:
    """Serialize back to the INI form (used in run manifests)."""
    lines = [f"[{command}]"]
    for name, _, _ in SCHEMA[command]:
        v = values[name]
        if isinstance(v, tuple):
            v = ", ".join(repr(x) if isinstance(x, float) else str(x) for x in v)
        elif isinstance(v, float):
            v = repr(v)
        lines.append(f"{name} = {v}")
    return "\n".join(lines) + "\n"


def train_config(values: dict, **changes) -> TrainConfig:
    names = {f.name for f in dataclasses.fields(TrainConfig)}
    kw = {k: v for k, v in values.items() if k in names}
    kw.update(changes)
    return TrainConfig(**kw)


def d_grid(values: dict):
    """The distortion grid described by a ``[bounds]`` section."""
    if values["d_values"]:
        return np.array(values["d_values"], dtype=float)
    kind = values["source"]
    if values["d_min"] == 0.0 and values["d_max"] == 0.0:
        return default_d_grid(kind, values["points"])
    lo = values["d_min"] or default_d_grid(kind, 2)[0]
    hi = values["d_max"] or ZERO_RATE_DISTORTION[kind]
    if values["spacing"] == "log":
        return np.geomspace(lo, hi, values["points"])
    return np.linspace(lo, hi, values["points"])


def validate(command: str, v: dict) -> None:
    def need(cond, msg):
        if not cond:
            raise ConfigError(msg)

    if command == "bounds":
        d_max = ZERO_RATE_DISTORTION[v["source"]]
        need(v["points"] >= 1, "points must be >= 1")
        need(v["k_max"] >= 1 and v["eps_steps"] >= 1, "k_max and eps_steps must be >= 1")
        for d in v["d_values"] or (v["d_min"] or None, v["d_max"] or None):
            if d is None:
                continue
            need(math.isfinite(d) and 0.0 < d <= d_max, f"distortion {d} outside (0, {d_max:.6g}] for the {v['source']}")
        if v["d_min"] and v["d_max"]:
            need(v["d_min"] < v["d_max"] or v["points"] == 1, "d_min must be below d_max")
    elif command == "oracle":
        need(all(k >= 1 for k in v["k"]) and v["k"], "k values must be >= 1")
        need(all(0.0 <= e < 1.0 for e in v["eps"]) and v["eps"], "eps values must lie in [0, 1)")
        need(v["n"] >= 1000, "n must be >= 1000")
        need(v["ramp_dim"] >= 0, "ramp_dim must be >= 0")
        need(not (v["scheme"] == "hemisphere" and v["source"] != "circle"), "hemisphere scheme is circle-only")
    else:
        try:
            train_config(v)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        need(v.get("eval_n", 10**4) >= 10**4, "eval_n must be >= 10000")
        if command == "sweep":
            need(v["lambdas"] and all(math.isfinite(x) and x > 0.0 for x in v["lambdas"]), "lambdas must be positive")
            need(bool(v["seeds"]), "seeds must be nonempty")
            need(v["workers"] >= 1, "workers must be >= 1")
        if command == "probe":
            need(v["grid"] >= 1, "grid must be >= 1")
