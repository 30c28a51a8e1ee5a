"""Run configuration: flat key=value files, defaults, validation.

One format serves config files, artifact sidecars, and manifests: one
`key=value` per line, `#` starts a comment, blank lines are ignored, no
nesting or sections. Parsing validates every field against the consuming
module's preconditions immediately, names the offending key in the error,
and rejects unknown keys. Serializing a config writes every field back out
(defaults included, so no value is ever applied silently), and re-parsing
the result reproduces the config exactly.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, fields, replace

from .errors import ConfigError

SUBCOMMANDS = (
    "sample",
    "density",
    "solve-discrete",
    "solve-continuum",
    "study-density",
    "study-minimizers",
)
_DENSITIES = ("rho1", "rho2", "rho3")
# subcommands whose pipeline runs the continuum solver, where p > d = 2 applies
_CONTINUUM = ("solve-continuum", "study-minimizers")


@dataclass(frozen=True)
class RunConfig:
    """Validated settings for one CLI run.

    Defaults follow the reference parameter set: p = 3, h = 0.01, T = 2^12
    spline knots, lambda = 1e-6, beta = 0.01, tol = 1e-5, and 100 collocation
    points per patch (10 per dimension). `epsilon` and `k` are the two
    mutually exclusive graph-scale choices; leaving both unset picks the
    sample-count-based scale at run time.
    """

    subcommand: str
    density: str = "rho1"
    n: int = 4096
    h: float = 0.01
    T: int = 4096
    lam: float = 1.0e-6
    p: float = 3.0
    epsilon: float | None = None
    k: int | None = None
    beta: float = 0.01
    tol: float = 1.0e-5
    seed: int = 1
    out: str = "."
    mesh: int = 512
    points_per_patch: int = 10
    svg: bool = False


# config-file key -> (dataclass field, parser, description of accepted values)
_KEYS = {
    "subcommand": ("subcommand", str, "one of " + ", ".join(SUBCOMMANDS)),
    "density": ("density", str, "one of " + ", ".join(_DENSITIES)),
    "n": ("n", int, "integer >= 1"),
    "h": ("h", float, "real > 0"),
    "T": ("T", int, "perfect square >= 16"),
    "lambda": ("lam", float, "real >= 0"),
    "p": ("p", float, "real >= 1 (> 2 for the continuum solver)"),
    "epsilon": ("epsilon", float, "real > 0"),
    "k": ("k", int, "integer >= 1"),
    "beta": ("beta", float, "real >= 0"),
    "tol": ("tol", float, "real > 0"),
    "seed": ("seed", int, "integer >= 0"),
    "out": ("out", str, "output directory"),
    "mesh": ("mesh", int, "integer >= 4"),
    "points_per_patch": ("points_per_patch", int, "integer >= 4"),
    "svg": ("svg", None, "true or false"),
}
_FIELD_TO_KEY = {field: key for key, (field, _, _) in _KEYS.items()}


def _parse_bool(key: str, raw: str) -> bool:
    low = raw.strip().lower()
    if low in ("true", "1", "yes"):
        return True
    if low in ("false", "0", "no"):
        return False
    raise ConfigError(f"config key '{key}' expects true or false, got {raw!r}")


def _convert(key: str, raw) -> object:
    field, caster, expected = _KEYS[key]
    if caster is None:
        return raw if isinstance(raw, bool) else _parse_bool(key, str(raw))
    if caster is not str and isinstance(raw, str) and raw.strip().lower() == "none":
        return None
    try:
        value = caster(raw)
    except (TypeError, ValueError):
        raise ConfigError(f"config key '{key}' expects {expected}, got {raw!r}") from None
    if caster is int and isinstance(raw, str) and not raw.strip().lstrip("+-").isdigit():
        raise ConfigError(f"config key '{key}' expects {expected}, got {raw!r}")
    return value


def _fail(key: str, value) -> ConfigError:
    return ConfigError(f"config key '{key}' = {value!r} out of range; expected {_KEYS[key][2]}")


def validate(config: RunConfig) -> RunConfig:
    """Check every field against the consuming modules' preconditions."""
    c = config
    if c.subcommand not in SUBCOMMANDS:
        raise _fail("subcommand", c.subcommand)
    if c.density not in _DENSITIES:
        raise _fail("density", c.density)
    if c.n < 1:
        raise _fail("n", c.n)
    if not (c.h > 0.0):
        raise _fail("h", c.h)
    g = int(round(math.sqrt(c.T)))
    if g * g != c.T or g < 4:
        raise _fail("T", c.T)
    if c.lam < 0.0:
        raise ConfigError(f"config key 'lambda' = {c.lam!r} rejected; the penalty weight is >= 0")
    if c.p < 1.0:
        raise _fail("p", c.p)
    if c.subcommand in _CONTINUUM and c.p < 2.0:
        raise ConfigError(
            f"config key 'p' = {c.p!r} rejected for {c.subcommand}: p > d = 2 required"
        )
    if c.epsilon is not None and not (c.epsilon > 0.0):
        raise _fail("epsilon", c.epsilon)
    if c.k is not None and c.k < 1:
        raise _fail("k", c.k)
    if c.epsilon is not None and c.k is not None:
        raise ConfigError("config keys 'epsilon' and 'k' are mutually exclusive; set one")
    if c.beta < 0.0:
        raise _fail("beta", c.beta)
    if not (c.tol > 0.0):
        raise _fail("tol", c.tol)
    if c.seed < 0:
        raise _fail("seed", c.seed)
    if c.mesh < 4:
        raise _fail("mesh", c.mesh)
    if c.points_per_patch < 4:
        raise _fail("points_per_patch", c.points_per_patch)
    return c


def parse_config_text(text: str, subcommand: str | None = None, overrides: dict | None = None) -> RunConfig:
    """Parse key=value text, apply overrides, validate.

    `subcommand` and `overrides` (a mapping of config keys to raw values,
    e.g. parsed command-line flags) take precedence over the text.
    """
    values: dict = {}
    for lineno, raw_line in enumerate(text.split("\n"), start=1):
        line = raw_line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got {raw_line.strip()!r}")
        key, raw = (part.strip() for part in line.split("=", 1))
        if key not in _KEYS:
            raise ConfigError(f"line {lineno}: unknown config key '{key}'")
        values[_KEYS[key][0]] = _convert(key, raw)
    for key, raw in (overrides or {}).items():
        if key not in _KEYS:
            raise ConfigError(f"unknown config key '{key}'")
        if raw is not None:
            values[_KEYS[key][0]] = _convert(key, raw)
    if subcommand is not None:
        values["subcommand"] = subcommand
    if "subcommand" not in values:
        raise ConfigError("no subcommand given")
    return validate(RunConfig(**values))


def parse_config(path=None, subcommand: str | None = None, overrides: dict | None = None) -> RunConfig:
    """Parse a config file (optional) plus overriding flag values."""
    text = ""
    if path is not None:
        with open(path) as fh:
            text = fh.read()
    return parse_config_text(text, subcommand=subcommand, overrides=overrides)


def config_text(config: RunConfig) -> str:
    """Serialize every field (defaults included) as key=value lines."""
    lines = []
    for f in fields(config):
        value = getattr(config, f.name)
        if value is None:
            continue
        if isinstance(value, bool):
            value = "true" if value else "false"
        elif isinstance(value, float):
            value = format(value, ".17g")
        lines.append(f"{_FIELD_TO_KEY[f.name]}={value}")
    return "\n".join(lines) + "\n"


def config_hash(config: RunConfig) -> str:
    """Hex digest identifying the full validated configuration."""
    return hashlib.sha256(config_text(config).encode()).hexdigest()


def with_updates(config: RunConfig, **changes) -> RunConfig:
    """Functional update that re-runs validation."""
    return validate(replace(config, **changes))
