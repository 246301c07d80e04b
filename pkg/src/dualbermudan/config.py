"""Run configuration: parsing, validation and canonical hashing.

Two file formats describe the same tree of settings:

* sectioned ``key = value`` text (``.ini``, ``.cfg`` or anything that is not JSON)::

    [model]
    payoff = basket_put
    dimension = 5
    rate = 0.05
    ...

* a JSON object with the same sections as nested objects.

Validation errors carry the file name and, where it can be located, the line of
the offending key (or section header for a missing key).
"""
from __future__ import annotations

import configparser
import hashlib
import json
import re
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

from .engine import EXERCISE_POLICIES
from .stochastic import PAYOFF_KINDS, GbmModel, TimeGrid

__all__ = [
    "ConfigError",
    "ModelConfig",
    "BasisConfig",
    "SamplingConfig",
    "OutputConfig",
    "RunConfig",
    "load_config",
    "parse_config",
    "OUTPUT_FORMATS",
]

OUTPUT_FORMATS = ("table", "csv", "records")


class ConfigError(ValueError):
    def __init__(self, message: str, source: str = "<config>", line: int | None = None):
        where = f"{source}:{line}" if line is not None else source
        super().__init__(f"{where}: {message}")
        self.source = source
        self.line = line


@dataclass(frozen=True)
class ModelConfig:
    payoff: str
    dimension: int
    rate: float
    dividend: float
    sigma: float
    strike: float
    spot: tuple
    maturity: float
    exercise_dates: int
    dt: float = 0.01

    def gbm(self) -> GbmModel:
        return GbmModel(self.dimension, self.rate, self.dividend, self.sigma, self.strike, self.spot, self.payoff)

    def grid(self) -> TimeGrid:
        return TimeGrid.from_step(self.maturity, self.exercise_dates, self.dt)


@dataclass(frozen=True)
class BasisConfig:
    degree: int = 3
    cross_terms: bool = False
    ridge: float = 0.0
    standardize: bool = True
    exercise_policy: str = "in_the_money"


@dataclass(frozen=True)
class SamplingConfig:
    n_train: int = 1000
    n_lower: int = 300_000
    n_upper: int = 100_000
    seed: int = 2024
    block_size: int = 2000


@dataclass(frozen=True)
class OutputConfig:
    format: str = "table"
    path: str = ""


@dataclass(frozen=True)
class RunConfig:
    model: ModelConfig
    basis: BasisConfig = field(default_factory=BasisConfig)
    sampling: SamplingConfig = field(default_factory=SamplingConfig)
    output: OutputConfig = field(default_factory=OutputConfig)

    def canonical(self) -> dict:
        """Settings that determine the numbers (output options excluded)."""
        data = {"model": asdict(self.model), "basis": asdict(self.basis), "sampling": asdict(self.sampling)}
        data["model"]["spot"] = list(self.model.spot)
        return data

    @property
    def config_hash(self) -> str:
        blob = json.dumps(self.canonical(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def with_seed(self, seed: int) -> "RunConfig":
        return replace(self, sampling=replace(self.sampling, seed=int(seed)))

    def to_dict(self) -> dict:
        data = self.canonical()
        data["output"] = asdict(self.output)
        return data


# --------------------------------------------------------------------------- parsing

_SCHEMA = {
    "model": {
        "payoff": ("str", True),
        "dimension": ("int", True),
        "rate": ("float", True),
        "dividend": ("float", False),
        "sigma": ("float", True),
        "strike": ("float", True),
        "spot": ("floats", True),
        "maturity": ("float", True),
        "exercise_dates": ("int", True),
        "dt": ("float", False),
    },
    "basis": {
        "degree": ("int", False),
        "cross_terms": ("bool", False),
        "ridge": ("float", False),
        "standardize": ("bool", False),
        "exercise_policy": ("str", False),
    },
    "sampling": {
        "n_train": ("int", False),
        "n_lower": ("int", False),
        "n_upper": ("int", False),
        "seed": ("int", False),
        "block_size": ("int", False),
    },
    "output": {
        "format": ("str", False),
        "path": ("str", False),
    },
}

_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


class _Locator:
    """Find line numbers of sections and keys in the raw text."""

    def __init__(self, text: str, is_json: bool):
        self.lines = text.splitlines()
        self.is_json = is_json

    def section(self, name):
        pattern = re.compile(rf'^\s*("{name}"\s*:|\[{name}\])', re.IGNORECASE)
        for k, line in enumerate(self.lines, 1):
            if pattern.search(line):
                return k
        return None

    def key(self, section, key):
        start = self.section(section) or 1
        if self.is_json:
            pattern = re.compile(rf'"{key}"\s*:')
        else:
            pattern = re.compile(rf"^\s*{key}\s*[=:]", re.IGNORECASE)
        for k in range(start, len(self.lines) + 1):
            if k > start and not self.is_json and self.lines[k - 1].lstrip().startswith("["):
                break
            if pattern.search(self.lines[k - 1]):
                return k
        return None


def _convert(kind, raw, err):
    try:
        if kind == "str":
            return str(raw).strip()
        if kind == "int":
            if isinstance(raw, bool):
                raise ValueError
            if isinstance(raw, float):
                if not raw.is_integer():
                    raise ValueError
                return int(raw)
            text = str(raw).strip().replace("_", "")
            value = float(text)
            if not value.is_integer():
                raise ValueError
            return int(value)
        if kind == "float":
            if isinstance(raw, bool):
                raise ValueError
            return float(raw)
        if kind == "bool":
            if isinstance(raw, bool):
                return raw
            text = str(raw).strip().lower()
            if text in _TRUE:
                return True
            if text in _FALSE:
                return False
            raise ValueError
        if kind == "floats":
            if isinstance(raw, (list, tuple)):
                return tuple(float(v) for v in raw)
            if isinstance(raw, (int, float)):
                return (float(raw),)
            return tuple(float(v) for v in re.split(r"[,\s]+", str(raw).strip()) if v)
    except (TypeError, ValueError):
        pass
    err(f"cannot read {raw!r} as {kind}")


def parse_config(text: str, source: str = "<config>", fmt: str | None = None) -> RunConfig:
    """Parse and validate configuration text."""
    is_json = fmt == "json" if fmt else text.lstrip().startswith("{")
    loc = _Locator(text, is_json)
    if is_json:
        try:
            tree = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON: {exc.msg}", source, exc.lineno) from None
        if not isinstance(tree, dict):
            raise ConfigError("top level must be an object", source, 1)
    else:
        parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
        try:
            parser.read_string(text, source=source)
        except configparser.Error as exc:
            line = getattr(exc, "lineno", None)
            raise ConfigError(f"cannot parse: {exc.message if hasattr(exc, 'message') else exc}", source, line) from None
        tree = {s: dict(parser.items(s)) for s in parser.sections()}

    values: dict = {}
    for section, raw_section in tree.items():
        if section not in _SCHEMA:
            raise ConfigError(f"unknown section [{section}]", source, loc.section(section))
        if not isinstance(raw_section, dict):
            raise ConfigError(f"section [{section}] must contain key/value pairs", source, loc.section(section))
        for key, raw in raw_section.items():
            if key not in _SCHEMA[section]:
                raise ConfigError(f"unknown key '{key}' in [{section}]", source, loc.key(section, key))

            def err(msg, section=section, key=key):
                raise ConfigError(f"[{section}] {key}: {msg}", source, loc.key(section, key))

            values[(section, key)] = _convert(_SCHEMA[section][key][0], raw, err)
    for section, keys in _SCHEMA.items():
        for key, (_, required) in keys.items():
            if required and (section, key) not in values:
                raise ConfigError(f"missing required key '{key}' in [{section}]", source, loc.section(section))

    def pick(section):
        return {k: v for (s, k), v in values.items() if s == section}

    def check(cond, section, key, msg):
        if not cond:
            raise ConfigError(f"[{section}] {key}: {msg}", source, loc.key(section, key))

    m = pick("model")
    m.setdefault("dividend", 0.0)
    check(m["payoff"] in PAYOFF_KINDS, "model", "payoff", f"must be one of {PAYOFF_KINDS}")
    check(m["dimension"] >= 1, "model", "dimension", "must be >= 1")
    check(m["sigma"] > 0, "model", "sigma", "must be positive")
    check(m["strike"] > 0, "model", "strike", "must be positive")
    check(m["maturity"] > 0, "model", "maturity", "must be positive")
    check(m["exercise_dates"] >= 1, "model", "exercise_dates", "must be >= 1")
    check(m.get("dt", 0.01) > 0, "model", "dt", "must be positive")
    spot = m["spot"]
    if len(spot) == 1:
        spot = spot * m["dimension"]
    check(len(spot) == m["dimension"], "model", "spot", f"needs 1 or {m['dimension']} values, got {len(spot)}")
    check(all(s > 0 for s in spot), "model", "spot", "all values must be positive")
    m["spot"] = tuple(spot)
    if m["payoff"] == "basket_put":
        check(m["dividend"] == 0.0, "model", "dividend", "the basket put basis supports a zero dividend yield only")
    model = ModelConfig(**m)

    b = pick("basis")
    basis = BasisConfig(**b)
    check(basis.degree >= 1, "basis", "degree", "must be >= 1")
    check(basis.ridge >= 0, "basis", "ridge", "must be non-negative")
    check(basis.exercise_policy in EXERCISE_POLICIES, "basis", "exercise_policy", f"must be one of {EXERCISE_POLICIES}")

    sampling = SamplingConfig(**pick("sampling"))
    for key in ("n_train", "n_lower", "n_upper"):
        check(getattr(sampling, key) >= 2, "sampling", key, "must be >= 2")
    check(sampling.block_size >= 1, "sampling", "block_size", "must be >= 1")
    check(0 <= sampling.seed < 2**64, "sampling", "seed", "must fit in 64 unsigned bits")

    output = OutputConfig(**pick("output"))
    check(output.format in OUTPUT_FORMATS, "output", "format", f"must be one of {OUTPUT_FORMATS}")
    return RunConfig(model, basis, sampling, output)


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read file: {exc.strerror}", str(path)) from None
    fmt = "json" if path.suffix.lower() == ".json" else None
    return parse_config(text, str(path), fmt)
