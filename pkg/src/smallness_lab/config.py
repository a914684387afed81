"""Experiment configuration files.

One experiment per INI file::

    [experiment]
    kind = spectrum
    seed = 0
    output = out/spectrum

    [domain]
    kind = interval
    bounds = 0, 3.141592653589793
    n = 400
    bc = dirichlet

    [coefficients]
    A = 1 + 0.2*sin(x)
    V = 0
    kappa = 1

    [set]
    kind = boxes
    boxes = 0, 1.5707963267948966

    [sweep]
    lambda = 1, 2, 4, 8

    [params]
    k_max = 10

Coefficients are numpy expressions in ``x`` (and ``y``) or a CSV file with
one row per cell (``x[,y],A11[,A12,A22],V,kappa``). Extra sets use
sections named ``[set.K]``, ``[set.E]``, ``[set.omega]``.
"""
from __future__ import annotations

import configparser
import math
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .geometry import ObservationSet
from .grid import CoefficientField, CoefficientInvariantError, Domain

__all__ = ["ConfigError", "ExperimentConfig", "KINDS", "load_config", "safe_expression"]

KINDS = (
    "spectrum",
    "spectral-constant",
    "propagation",
    "gradient-propagation",
    "control",
    "ghost-check",
    "double-check",
    "reduction-replay",
)
RANDOMIZED = {"spectral-constant", "propagation", "gradient-propagation", "control", "ghost-check", "reduction-replay"}

_FUNCS = {
    name: getattr(np, name)
    for name in (
        "sin", "cos", "tan", "exp", "log", "sqrt", "abs", "tanh", "sinh", "cosh",
        "arctan", "minimum", "maximum", "where", "floor", "mod", "sign",
    )
}
_CONSTS = {"pi": math.pi, "e": math.e}


class ConfigError(ValueError):
    """Config problem; the message carries ``file:line``."""


def safe_expression(expr: str, variables=("x", "y"), where: str = "<expr>"):
    """Compile a numpy expression restricted to known names.

    Returns a callable of the coordinate arrays, or a float for constants.
    """
    try:
        code = compile(expr, where, "eval")
    except SyntaxError as exc:
        raise ConfigError(f"{where}: cannot parse expression {expr!r}: {exc.msg}") from None
    allowed = set(_FUNCS) | set(_CONSTS) | set(variables)
    bad = [n for n in code.co_names if n not in allowed]
    if bad:
        raise ConfigError(f"{where}: unknown name {bad[0]!r} in expression {expr!r}")
    if not any(v in code.co_names for v in variables):
        return float(eval(code, {"__builtins__": {}}, {**_FUNCS, **_CONSTS}))

    def fn(*coords):
        env = {**_FUNCS, **_CONSTS, **dict(zip(variables, coords))}
        return eval(code, {"__builtins__": {}}, env)

    return fn


def _line_index(text: str) -> dict:
    """Map ``(section, key)`` and ``(section, None)`` to 1-based line numbers."""
    index, section = {}, None
    for i, line in enumerate(text.splitlines(), 1):
        m = re.match(r"\s*\[([^\]]+)\]", line)
        if m:
            section = m.group(1).strip()
            index[(section, None)] = i
            continue
        m = re.match(r"\s*([^#;=:\s][^=:]*?)\s*[=:]", line)
        if m and section is not None:
            index[(section, m.group(1).strip().lower())] = i
    return index


@dataclass
class ExperimentConfig:
    path: Path
    kind: str
    seed: int | None
    output: Path
    parser: configparser.ConfigParser = field(repr=False)
    lines: dict = field(repr=False, default_factory=dict)

    # -- error helpers ------------------------------------------------------

    def where(self, section: str, key: str | None = None) -> str:
        line = self.lines.get((section, key.lower() if key else None)) or self.lines.get((section, None))
        return f"{self.path}:{line}" if line else str(self.path)

    def error(self, section: str, key: str | None, msg: str) -> ConfigError:
        return ConfigError(f"{self.where(section, key)}: {msg}")

    # -- typed getters -----------------------------------------------------

    def has(self, section: str, key: str) -> bool:
        return self.parser.has_option(section, key)

    def get(self, section: str, key: str, default=None) -> str | None:
        if self.parser.has_option(section, key):
            return self.parser.get(section, key).strip()
        return default

    def number(self, section: str, key: str, default=None, integer: bool = False):
        raw = self.get(section, key)
        if raw is None:
            if default is None:
                raise self.error(section, key, f"missing required key {key!r}")
            return default
        try:
            val = safe_expression(raw, (), self.where(section, key))
            return int(val) if integer else float(val)
        except (ConfigError, TypeError, ValueError):
            raise self.error(section, key, f"expected a number, got {raw!r}") from None

    def numbers(self, section: str, key: str, default=None) -> list:
        raw = self.get(section, key)
        if raw is None:
            if default is None:
                raise self.error(section, key, f"missing required key {key!r}")
            return list(default)
        out = []
        for part in raw.split(","):
            part = part.strip()
            if not part:
                continue
            try:
                out.append(float(safe_expression(part, (), self.where(section, key))))
            except (ConfigError, TypeError, ValueError):
                raise self.error(section, key, f"expected a number list, got {raw!r}") from None
        if not out:
            raise self.error(section, key, "list must not be empty")
        return out

    def param(self, key: str, default=None, integer: bool = False):
        return self.number("params", key, default, integer)

    def sweep(self, key: str, default=None) -> list:
        return self.numbers("sweep", key, default)

    # -- builders ---------------------------------------------------------

    def domain(self) -> Domain:
        s = "domain"
        if not self.parser.has_section(s):
            raise self.error("experiment", None, "missing [domain] section")
        kind = self.get(s, "kind", "interval")
        n_raw = self.numbers(s, "n")
        n = tuple(int(v) for v in n_raw)
        try:
            if kind == "torus1d":
                length = self.number(s, "length")
                return Domain.torus1d(length, n[0])
            bounds = self.numbers(s, "bounds")
            if kind == "rectangle":
                return Domain.rectangle(*bounds, n if len(n) == 2 else n[0])
            return Domain(kind, tuple(bounds), n)
        except ValueError as exc:
            raise self.error(s, "kind", str(exc)) from None

    def bc(self) -> str:
        default = "periodic" if self.get("domain", "kind") == "torus1d" else "dirichlet"
        bc = self.get("domain", "bc", default)
        if bc not in ("dirichlet", "neumann", "periodic"):
            raise self.error("domain", "bc", f"unknown boundary condition {bc!r}")
        return bc

    def coefficients(self, domain: Domain) -> CoefficientField:
        s = "coefficients"
        kw = {}
        for key in ("lambda1", "lambda2"):
            if self.has(s, key):
                kw[key] = self.number(s, key)
        try:
            if self.has(s, "file"):
                from .io_csv import read_coefficient_csv

                path = (self.path.parent / self.get(s, "file")).resolve()
                if not path.exists():
                    raise self.error(s, "file", f"coefficient file {path} does not exist")
                return read_coefficient_csv(path, domain, **kw)
            variables = ("x", "y")[: domain.dim]
            fields = {}
            for key, default in (("A", "1"), ("V", "0"), ("kappa", "1"), ("A22", None), ("A12", "0")):
                raw = self.get(s, key, default) if self.parser.has_section(s) else default
                if raw is None:
                    continue
                fields[key] = safe_expression(raw, variables, self.where(s, key))
            if domain.dim == 1:
                fields.pop("A22", None)
                fields.pop("A12", None)
            return CoefficientField.from_functions(domain, **fields, **kw)
        except ConfigError:
            raise
        except CoefficientInvariantError as exc:
            raise CoefficientInvariantError(f"{self.where(s, None)}: {exc}") from None
        except ValueError as exc:
            raise self.error(s, None, f"invalid coefficients: {exc}") from None

    def observation_set(self, domain: Domain, name: str | None = None, required: bool = True):
        s = "set" if name is None else f"set.{name}"
        if not self.parser.has_section(s):
            if required:
                raise self.error("experiment", None, f"missing [{s}] section")
            return None
        kind = self.get(s, "kind", "boxes")
        span = tuple(self.numbers(s, "span")) if self.has(s, "span") else None
        cross = tuple(self.numbers(s, "cross")) if self.has(s, "cross") else None
        try:
            if kind == "whole":
                return ObservationSet.whole(domain)
            if kind == "boxes":
                raw = self.get(s, "boxes")
                if raw is None:
                    raise self.error(s, None, "boxes set needs a 'boxes' key")
                boxes = []
                for part in raw.split(";"):
                    vals = [float(safe_expression(v.strip(), (), self.where(s, "boxes"))) for v in part.split(",")]
                    boxes.append(vals)
                return ObservationSet.from_boxes(domain, boxes)
            if kind == "cantor":
                return ObservationSet.cantor(domain, self.number(s, "generation", integer=True),
                                             self.number(s, "ratio", 1 / 3), span, cross)
            if kind == "fat_cantor":
                return ObservationSet.fat_cantor(domain, self.number(s, "generation", integer=True),
                                                 self.number(s, "fraction", 0.5), span, cross)
            if kind == "periodic":
                return ObservationSet.periodic(domain, self.number(s, "period"), self.number(s, "duty", 0.5),
                                               self.number(s, "phase", 0.0))
            if kind == "random":
                seed = self.number(s, "seed", self.seed if self.seed is not None else None, integer=True)
                return ObservationSet.random(domain, self.number(s, "density"), seed)
            if kind == "disk":
                return ObservationSet.disk(domain, self.numbers(s, "center"), self.number(s, "radius"))
        except ConfigError:
            raise
        except ValueError as exc:
            raise self.error(s, "kind", str(exc)) from None
        raise self.error(s, "kind", f"unknown set kind {kind!r}")


def load_config(path) -> ExperimentConfig:
    """Parse and validate the experiment section of a config file."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"{path}: no such config file")
    text = path.read_text()
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    parser.optionxform = str.lower
    try:
        parser.read_string(text, source=str(path))
    except configparser.Error as exc:
        raise ConfigError(str(exc).replace("\n", " ")) from None
    lines = _line_index(text)
    parser_keys = {s: set(parser[s]) for s in parser.sections()}
    cfg = ExperimentConfig(path, "", None, Path("."), parser, lines)
    if not parser.has_section("experiment"):
        raise ConfigError(f"{path}:1: missing [experiment] section")
    kind = cfg.get("experiment", "kind")
    if kind is None:
        raise cfg.error("experiment", None, "missing 'kind'")
    if kind not in KINDS:
        raise cfg.error("experiment", "kind", f"unknown experiment kind {kind!r}; choose from {', '.join(KINDS)}")
    cfg.kind = kind
    if cfg.has("experiment", "seed"):
        cfg.seed = cfg.number("experiment", "seed", integer=True)
    elif kind in RANDOMIZED:
        raise cfg.error("experiment", None, f"experiment kind {kind!r} needs a 'seed'")
    out = cfg.get("experiment", "output", f"out/{path.stem}")
    cfg.output = (path.parent / out).resolve()
    if cfg.has("coefficients", "file"):
        ref = (path.parent / cfg.get("coefficients", "file")).resolve()
        if not ref.exists():
            raise cfg.error("coefficients", "file", f"coefficient file {ref} does not exist")
    if parser.has_section("sweep"):
        for key in parser_keys["sweep"]:
            cfg.numbers("sweep", key)
    return cfg
