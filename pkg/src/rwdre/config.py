"""Experiment configuration files.

A configuration is a flat INI-like text with ``[section]`` headers and
``key = value`` lines; ``#`` starts a comment. Unknown sections and keys
are rejected, and all errors are collected with their line and column.

Sections and keys::

    [experiment]   name (required), seed, replicas, strategy, k, epsilons,
                   perturb_jump, n_batches, exact, radius, avg_replicas
    [lattice]      d, L, strict_torus
    [engine]       kind = resampling | glauber | layered | frozen,
                   rate, beta, gamma, n_layers
    [rates]        jump.<z> = constant <c>
                   jump.<z> = affine <a> <b> <offset>[@layer]   (a + b * eta(offset))
                   table.<z>.window = <offset>[@layer] ...
                   table.<z>.values = <v0> <v1> ...             (2**len(window) values)
    [observable]   kind = site | constant, offset, layer, value
    [weight]       kind = one | exp | poly, beta, a, b, K_grid
    [time]         grid = <t1> <t2> ...  |  linspace <start> <stop> <n>
                   T, T_max, burn_in, avg_dt, slope_from, slope_to

Jumps and offsets in ``d > 1`` are written with colons, e.g. ``jump.1:0``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .environments import (
    LayerSpec,
    make_frozen_engine,
    make_glauber_engine,
    make_layered_engine,
    make_resampling_engine,
)
from .integrals import Weight
from .lattice import LocalFunction, RateFunction, TorusLattice

__all__ = [
    "EXPERIMENTS",
    "ConfigError",
    "ConfigIssue",
    "ExperimentConfig",
    "parse_config",
    "load_config",
]

EXPERIMENTS = (
    "env-decay",
    "site-decay-sum",
    "ep-decay",
    "transference",
    "speed",
    "diffusion",
    "decoupling",
    "continuity",
    "oracle-crosscheck",
    "torus-doubling",
)

_MASK64 = (1 << 64) - 1


def _int(s):
    return int(s, 10)


def _bool(s):
    v = s.strip().lower()
    if v in ("true", "yes", "1", "on"):
        return True
    if v in ("false", "no", "0", "off"):
        return False
    raise ValueError(f"expected a boolean, got {s!r}")


def _floats(s):
    return tuple(float(v) for v in s.split())


def _ints(s):
    return tuple(int(v) for v in s.split())


def _grid(s):
    parts = s.split()
    if parts and parts[0] == "linspace":
        if len(parts) != 4:
            raise ValueError("linspace needs <start> <stop> <n>")
        return ("linspace", float(parts[1]), float(parts[2]), int(parts[3]))
    vals = tuple(float(v) for v in parts)
    if not vals:
        raise ValueError("empty grid")
    return ("list",) + vals


# section -> key -> (parser, default); a default of ``...`` marks a required key
SCHEMA: dict[str, dict[str, tuple[Any, Any]]] = {
    "experiment": {
        "name": (str, ...),
        "seed": (_int, 20240601),
        "replicas": (_int, 1000),
        "strategy": (str, "extremal"),
        "k": (_int, 16),
        "epsilons": (_floats, (0.01, 0.05, 0.1)),
        "perturb_jump": (str, None),
        "n_batches": (_int, 50),
        "exact": (_bool, False),
        "radius": (_int, 4),
        "avg_replicas": (_int, 16),
    },
    "lattice": {
        "d": (_int, 1),
        "L": (_int, 8),
        "strict_torus": (_bool, True),
    },
    "engine": {
        "kind": (str, "resampling"),
        "rate": (float, 1.0),
        "beta": (float, 0.0),
        "gamma": (float, 3.0),
        "n_layers": (_int, 50),
    },
    "rates": {},
    "observable": {
        "kind": (str, "site"),
        "offset": (str, "0"),
        "layer": (_int, 0),
        "value": (float, 1.0),
    },
    "weight": {
        "kind": (str, "one"),
        "beta": (float, 1.0),
        "a": (float, 1.0),
        "b": (float, 2.0),
        "K_grid": (_ints, (1, 2, 4, 8, 16, 32, 64)),
    },
    "time": {
        "grid": (_grid, ("linspace", 0.5, 4.0, 8)),
        "T": (float, 1000.0),
        "T_max": (float, 100.0),
        "burn_in": (float, 50.0),
        "avg_dt": (float, 0.1),
        "slope_from": (float, None),
        "slope_to": (float, None),
    },
}


@dataclass(frozen=True)
class ConfigIssue:
    line: int
    column: int
    message: str

    def __str__(self):
        return f"line {self.line}, column {self.column}: {self.message}"


class ConfigError(ValueError):
    """Invalid configuration; ``issues`` lists every problem found."""

    def __init__(self, issues):
        self.issues = list(issues)
        super().__init__("\n".join(str(i) for i in self.issues))


@dataclass
class ExperimentConfig:
    """Validated experiment configuration.

    ``values`` maps section -> key -> parsed value (defaults filled in);
    ``rate_lines`` keeps the raw rate entries with their positions.
    """

    values: dict[str, dict[str, Any]]
    rate_lines: dict[str, tuple[str, int, int]] = field(default_factory=dict)

    # convenience accessors

    @property
    def name(self) -> str:
        return self.values["experiment"]["name"]

    @property
    def seed(self) -> int:
        return self.values["experiment"]["seed"]

    @property
    def replicas(self) -> int:
        return self.values["experiment"]["replicas"]

    def get(self, section: str, key: str):
        return self.values[section][key]

    def with_overrides(self, seed: int | None = None, replicas: int | None = None) -> "ExperimentConfig":
        vals = {s: dict(kv) for s, kv in self.values.items()}
        if seed is not None:
            if not 0 <= seed <= _MASK64:
                raise ConfigError([ConfigIssue(0, 0, f"seed {seed} is not a 64-bit value")])
            vals["experiment"]["seed"] = seed
        if replicas is not None:
            if replicas < 1:
                raise ConfigError([ConfigIssue(0, 0, "replicas must be >= 1")])
            vals["experiment"]["replicas"] = replicas
        return ExperimentConfig(vals, dict(self.rate_lines))

    # builders

    @property
    def lattice(self) -> TorusLattice:
        lat = self.values["lattice"]
        return TorusLattice(lat["d"], lat["L"])

    def lattice_with_side(self, L: int) -> TorusLattice:
        return TorusLattice(self.values["lattice"]["d"], L)

    def engine(self):
        e = self.values["engine"]
        kind = e["kind"]
        if kind == "resampling":
            return make_resampling_engine(e["rate"])
        if kind == "glauber":
            return make_glauber_engine(e["beta"], e["rate"])
        if kind == "layered":
            return make_layered_engine(LayerSpec.power_law(e["gamma"], e["n_layers"]))
        if kind == "frozen":
            return make_frozen_engine()
        raise ValueError(f"unknown engine kind {kind!r}")

    def rates(self, perturb: float = 0.0) -> RateFunction | None:
        """The configured rate function, optionally with ``perturb`` added to one jump."""
        if not self.rate_lines:
            return None
        d = self.values["lattice"]["d"]
        funcs = _build_rates(self.rate_lines, d)
        metric = self.engine()[0].metric
        if perturb:
            z = self._perturb_jump(funcs)
            f = funcs[z]
            funcs[z] = LocalFunction(f.window, f.table + perturb)
        return RateFunction(funcs, metric=metric, d=d)

    def _perturb_jump(self, funcs):
        spec = self.values["experiment"]["perturb_jump"]
        if spec is None:
            return sorted(funcs, key=lambda z: (-sum(z), z))[0]
        z = _parse_vector(spec)
        if z not in funcs:
            raise ValueError(f"perturb_jump {spec} is not a configured jump")
        return z

    def observable(self) -> LocalFunction:
        o = self.values["observable"]
        d = self.values["lattice"]["d"]
        if o["kind"] == "constant":
            return LocalFunction.constant(o["value"])
        return LocalFunction.site(_parse_vector(o["offset"], d), o["layer"], d)

    def weight(self) -> Weight:
        w = self.values["weight"]
        if w["kind"] == "one":
            return Weight()
        if w["kind"] == "exp":
            return Weight("exp", beta=w["beta"], a=w["a"])
        return Weight("poly", b=w["b"])

    def time_grid(self) -> np.ndarray:
        g = self.values["time"]["grid"]
        if g[0] == "linspace":
            return np.linspace(g[1], g[2], g[3])
        return np.asarray(g[1:], dtype=float)

    # serialisation

    def to_text(self) -> str:
        """Canonical text; parsing it gives back an equal configuration."""
        lines = []
        for section, keys in SCHEMA.items():
            lines.append(f"[{section}]")
            if section == "rates":
                for key, (raw, _, _) in sorted(self.rate_lines.items()):
                    lines.append(f"{key} = {raw}")
            else:
                for key in keys:
                    value = self.values[section][key]
                    if value is None:
                        continue
                    lines.append(f"{key} = {_format(key, value)}")
            lines.append("")
        return "\n".join(lines)

    def resolved(self) -> dict:
        out = {s: {k: _jsonable(v) for k, v in kv.items()} for s, kv in self.values.items()}
        out["rates"] = {k: raw for k, (raw, _, _) in sorted(self.rate_lines.items())}
        return out


def _jsonable(v):
    if isinstance(v, tuple):
        return [_jsonable(x) for x in v]
    return v


def _format(key, value) -> str:
    if key == "grid":
        if value[0] == "linspace":
            return f"linspace {value[1]!r} {value[2]!r} {value[3]}"
        return " ".join(repr(v) for v in value[1:])
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return " ".join(repr(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _parse_vector(s: str, d: int | None = None) -> tuple[int, ...]:
    parts = s.strip().split(":")
    v = tuple(int(p) for p in parts)
    if d is not None and len(v) != d:
        raise ValueError(f"{s!r} does not have dimension {d}")
    return v


def _parse_site(token: str, d: int):
    off, _, layer = token.partition("@")
    return _parse_vector(off, d), int(layer) if layer else 0


def _build_rates(rate_lines, d: int) -> dict[tuple[int, ...], LocalFunction]:
    funcs: dict[tuple[int, ...], LocalFunction] = {}
    tables: dict[tuple[int, ...], dict[str, str]] = {}
    for key, (raw, _, _) in rate_lines.items():
        parts = key.split(".")
        if parts[0] == "jump":
            z = _parse_vector(parts[1], d)
            words = raw.split()
            if words[0] == "constant":
                funcs[z] = LocalFunction.constant(float(words[1]))
            else:
                a, b = float(words[1]), float(words[2])
                bit = _parse_site(words[3], d)
                funcs[z] = LocalFunction((bit,), np.array([a, a + b]))
        else:
            z = _parse_vector(parts[1], d)
            tables.setdefault(z, {})[parts[2]] = raw
    for z, t in tables.items():
        window = tuple(_parse_site(tok, d) for tok in t["window"].split())
        funcs[z] = LocalFunction(window, np.array(_floats(t["values"])))
    return funcs


def _check_rate_entry(key: str, raw: str, d: int) -> str | None:
    parts = key.split(".")
    try:
        if parts[0] == "jump" and len(parts) == 2:
            z = _parse_vector(parts[1], d)
            if all(v == 0 for v in z):
                return "the zero jump is not allowed"
            words = raw.split()
            if not words:
                return "empty rate"
            if words[0] == "constant":
                if len(words) != 2:
                    return "constant rate needs one value"
                if float(words[1]) < 0:
                    return "rates must be non-negative"
            elif words[0] == "affine":
                if len(words) != 4:
                    return "affine rate needs <a> <b> <offset>[@layer]"
                a, b = float(words[1]), float(words[2])
                _parse_site(words[3], d)
                if a < 0 or a + b < 0:
                    return "rates must be non-negative"
            else:
                return f"unknown rate form {words[0]!r}; use 'constant' or 'affine'"
        elif parts[0] == "table" and len(parts) == 3 and parts[2] in ("window", "values"):
            _parse_vector(parts[1], d)
            if parts[2] == "window":
                [_parse_site(tok, d) for tok in raw.split()]
            else:
                if any(v < 0 for v in _floats(raw)):
                    return "rates must be non-negative"
        else:
            return f"unknown rate key {key!r}"
    except ValueError as exc:
        return str(exc)
    return None


def parse_config(text: str) -> ExperimentConfig:
    """Parse and validate configuration text; raises :class:`ConfigError` with all issues."""
    issues: list[ConfigIssue] = []
    raw: dict[str, dict[str, tuple[str, int, int]]] = {}
    section = None
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].rstrip()
        if not stripped.strip():
            continue
        col = len(stripped) - len(stripped.lstrip()) + 1
        body = stripped.strip()
        if body.startswith("["):
            if not body.endswith("]"):
                issues.append(ConfigIssue(lineno, col, "unterminated section header"))
                section = None
                continue
            name = body[1:-1].strip()
            if name not in SCHEMA:
                issues.append(ConfigIssue(lineno, col + 1, f"unknown section [{name}]"))
                section = None
                continue
            section = name
            raw.setdefault(section, {})
            continue
        if "=" not in body:
            issues.append(ConfigIssue(lineno, col, "expected 'key = value'"))
            continue
        key, _, value = body.partition("=")
        key = key.strip()
        vcol = stripped.index("=") + 2 + (len(value) - len(value.lstrip()))
        value = value.strip()
        if section is None:
            issues.append(ConfigIssue(lineno, col, f"key {key!r} outside a known section"))
            continue
        if section != "rates" and key not in SCHEMA[section]:
            issues.append(ConfigIssue(lineno, col, f"unknown key {key!r} in [{section}]"))
            continue
        if key in raw[section]:
            issues.append(ConfigIssue(lineno, col, f"duplicate key {key!r} in [{section}]"))
            continue
        raw[section][key] = (value, lineno, vcol)

    values: dict[str, dict[str, Any]] = {}
    for sec, keys in SCHEMA.items():
        values[sec] = {}
        for key, (parser, default) in keys.items():
            if key in raw.get(sec, {}):
                text_value, ln, c = raw[sec][key]
                try:
                    values[sec][key] = parser(text_value)
                except ValueError as exc:
                    issues.append(ConfigIssue(ln, c, f"[{sec}] {key}: malformed value {text_value!r} ({exc})"))
                    values[sec][key] = default if default is not ... else None
            elif default is ...:
                issues.append(ConfigIssue(0, 0, f"missing required key {key!r} in [{sec}]"))
                values[sec][key] = None
            else:
                values[sec][key] = default

    def pos(sec, key):
        entry = raw.get(sec, {}).get(key)
        return (entry[1], entry[2]) if entry else (0, 0)

    exp = values["experiment"]
    if exp["name"] is not None and exp["name"] not in EXPERIMENTS:
        issues.append(ConfigIssue(*pos("experiment", "name"),
                                  f"unknown experiment {exp['name']!r}; choose from {', '.join(EXPERIMENTS)}"))
    checks = [
        ("experiment", "replicas", lambda v: v >= 1, "replicas must be >= 1"),
        ("experiment", "seed", lambda v: 0 <= v <= _MASK64, "seed must be a 64-bit unsigned value"),
        ("experiment", "k", lambda v: v >= 1, "k must be >= 1"),
        ("experiment", "strategy", lambda v: v in ("extremal", "single-site", "random", "sup"),
         "strategy must be extremal, single-site, random or sup"),
        ("experiment", "n_batches", lambda v: v >= 2, "n_batches must be >= 2"),
        ("experiment", "avg_replicas", lambda v: v >= 2, "avg_replicas must be >= 2"),
        ("lattice", "d", lambda v: v >= 1, "d must be >= 1"),
        ("lattice", "L", lambda v: v >= 1, "L must be >= 1"),
        ("engine", "kind", lambda v: v in ("resampling", "glauber", "layered", "frozen"),
         "engine kind must be resampling, glauber, layered or frozen"),
        ("engine", "rate", lambda v: v > 0, "rate must be positive"),
        ("engine", "beta", lambda v: v >= 0, "beta must be non-negative"),
        ("engine", "gamma", lambda v: v > 0, "gamma must be positive"),
        ("engine", "n_layers", lambda v: v >= 1, "n_layers must be >= 1"),
        ("observable", "kind", lambda v: v in ("site", "constant"), "observable kind must be site or constant"),
        ("weight", "kind", lambda v: v in ("one", "exp", "poly"), "weight kind must be one, exp or poly"),
        ("time", "T", lambda v: v > 0, "T must be positive"),
        ("time", "T_max", lambda v: v > 0, "T_max must be positive"),
        ("time", "burn_in", lambda v: v >= 0, "burn_in must be non-negative"),
        ("time", "avg_dt", lambda v: v > 0, "avg_dt must be positive"),
    ]
    for sec, key, ok, msg in checks:
        v = values[sec][key]
        if v is not None and not ok(v):
            issues.append(ConfigIssue(*pos(sec, key), f"[{sec}] {key}: {msg}"))
    g = values["time"]["grid"]
    if g is not None:
        grid = np.linspace(g[1], g[2], g[3]) if g[0] == "linspace" else np.asarray(g[1:])
        if len(grid) == 0 or np.any(grid < 0) or np.any(np.diff(grid) <= 0):
            issues.append(ConfigIssue(*pos("time", "grid"), "[time] grid must be non-negative and increasing"))

    d = values["lattice"]["d"] or 1
    rate_lines = raw.get("rates", {})
    closed, tabled = {}, {}
    for key, (value, ln, c) in rate_lines.items():
        msg = _check_rate_entry(key, value, d)
        if msg:
            issues.append(ConfigIssue(ln, c, f"[rates] {key}: {msg}"))
            continue
        parts = key.split(".")
        z = _parse_vector(parts[1], d)
        (closed if parts[0] == "jump" else tabled).setdefault(z, []).append((key, ln))
    for z in set(closed) & set(tabled):
        key, ln = tabled[z][0]
        issues.append(ConfigIssue(ln, 1, f"[rates] jump {z} has both a closed-form and a table rate"))
    for z, entries in tabled.items():
        keys = {k.split(".")[2] for k, _ in entries}
        if keys != {"window", "values"}:
            issues.append(ConfigIssue(entries[0][1], 1, f"[rates] table for jump {z} needs both window and values"))
            continue
        if z in closed:
            continue
        win = rate_lines[f"table.{entries[0][0].split('.')[1]}.window"][0].split()
        vals_key = f"table.{entries[0][0].split('.')[1]}.values"
        vals, ln, c = rate_lines[vals_key]
        if len(vals.split()) != 2 ** len(win):
            issues.append(ConfigIssue(ln, c, f"[rates] {vals_key}: expected {2 ** len(win)} values, got {len(vals.split())}"))
    if issues:
        raise ConfigError(issues)
    cfg = ExperimentConfig(values, dict(rate_lines))
    needs_rates = cfg.name not in ("env-decay", "site-decay-sum", "torus-doubling")
    if needs_rates and not rate_lines:
        raise ConfigError([ConfigIssue(0, 0, f"experiment {cfg.name!r} needs a [rates] section")])
    try:
        cfg.engine()
        cfg.rates()
    except ValueError as exc:
        raise ConfigError([ConfigIssue(0, 0, str(exc))]) from None
    return cfg


def load_config(path) -> ExperimentConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())
