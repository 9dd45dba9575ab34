"""
Scenario files (YAML) and their validation.

A scenario names a manifold (or a sequence over a limit manifold), solver
settings, the eigenproblem mode and the checks to run. Validation errors
carry the offending field and, when known, its line in the file.
"""
from __future__ import annotations

import copy
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import yaml

from .errors import ConfigError
from .metrics import FORMULAS, ManifoldSpec
from .sequences import SequenceSpec

KNOWN_CHECKS = (
    "identity",
    "bounds",
    "rayleigh",
    "harnack",
    "dense-oracle",
    "flatzoomer-sweep",
    "quasi-flatzoomer",
    "bounded-geometry",
    "extension-roundtrip",
    "sequence-diagnostics",
)


@dataclass
class SolverSettings:
    tol: float = 1e-10
    max_iter: int = 200


@dataclass
class Scenario:
    name: str
    description: str
    manifold: ManifoldSpec
    s: object
    checks: list
    solver: SolverSettings = field(default_factory=SolverSettings)
    seed: int = 0
    options: dict = field(default_factory=dict)
    sequence: SequenceSpec = None
    source: str = ""

    def check_options(self, check):
        return dict(self.options.get(check, {}) or {})


def _key_lines(text):
    """Line numbers (1-based) of mapping keys, keyed by dotted path."""
    lines = {}
    try:
        root = yaml.compose(text)
    except yaml.YAMLError:
        return lines

    def walk(node, prefix):
        if isinstance(node, yaml.MappingNode):
            for k, v in node.value:
                path = f"{prefix}.{k.value}" if prefix else str(k.value)
                lines[path] = k.start_mark.line + 1
                walk(v, path)

    if root is not None:
        walk(root, "")
    return lines


def _require(mapping, key, where, lines):
    if not isinstance(mapping, dict) or key not in mapping:
        path = f"{where}.{key}" if where else key
        raise ConfigError(f"missing required field '{path}'", field=path,
                          line=lines.get(where) if where else None)
    return mapping[key]


def _as_tuple(value, n, name, lines, cast):
    if not isinstance(value, (list, tuple)) or len(value) != n:
        raise ConfigError(f"field '{name}' must be a list of {n} values", field=name,
                          line=lines.get(name))
    try:
        return tuple(cast(v) for v in value)
    except (TypeError, ValueError):
        raise ConfigError(f"field '{name}' has a non-numeric entry", field=name,
                          line=lines.get(name)) from None


def parse_manifold(data, lines, where="manifold"):
    dim = _require(data, "dim", where, lines)
    if not isinstance(dim, int):
        raise ConfigError(f"field '{where}.dim' must be an integer", field=f"{where}.dim",
                          line=lines.get(f"{where}.dim"))
    lower = _as_tuple(_require(data, "lower", where, lines), dim, f"{where}.lower", lines, float)
    upper = _as_tuple(_require(data, "upper", where, lines), dim, f"{where}.upper", lines, float)
    shape = _as_tuple(_require(data, "shape", where, lines), dim, f"{where}.shape", lines, int)
    periodic = _as_tuple(data.get("periodic", [True] * dim), dim, f"{where}.periodic", lines, bool)
    formula = data.get("formula", "flat")
    if formula not in FORMULAS:
        raise ConfigError(f"unknown metric formula '{formula}'", field=f"{where}.formula",
                          line=lines.get(f"{where}.formula"))
    params = data.get("params", {}) or {}
    if not isinstance(params, dict):
        raise ConfigError(f"field '{where}.params' must be a mapping", field=f"{where}.params",
                          line=lines.get(f"{where}.params"))
    bp = data.get("basepoint")
    if bp is not None:
        bp = _as_tuple(bp, dim, f"{where}.basepoint", lines, int)
    return ManifoldSpec(lower, upper, shape, periodic, formula, copy.deepcopy(params), bp,
                        data.get("name", ""))


def parse_mode(value, lines):
    if value in ("closed", 0, 1, "0", "1"):
        return "closed" if value == "closed" else int(value)
    raise ConfigError(f"field 's' must be closed, 0 or 1 (got {value!r})", field="s",
                      line=lines.get("s"))


def parse_scenario(text, source="<string>") -> Scenario:
    """Parse and validate scenario YAML text."""
    try:
        data = yaml.safe_load(text)
    except yaml.MarkedYAMLError as exc:
        line = exc.problem_mark.line + 1 if exc.problem_mark else None
        raise ConfigError(f"YAML syntax error: {exc.problem}", field=None, line=line) from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"YAML error: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigError("scenario must be a mapping at top level")
    lines = _key_lines(text)
    name = str(_require(data, "name", "", lines))
    manifold = parse_manifold(_require(data, "manifold", "", lines), lines)
    manifold.name = manifold.name or name
    s = parse_mode(data.get("s", "closed"), lines)
    checks = data.get("checks", [])
    if not isinstance(checks, list):
        raise ConfigError("field 'checks' must be a list", field="checks", line=lines.get("checks"))
    for c in checks:
        if c not in KNOWN_CHECKS:
            raise ConfigError(f"unknown check '{c}'; known: {', '.join(KNOWN_CHECKS)}",
                              field="checks", line=lines.get("checks"))
    solver = SolverSettings(**(data.get("solver") or {}))
    options = data.get("options", {}) or {}
    seq = None
    if "sequence-diagnostics" in checks:
        sd = _require(data, "sequence", "", lines)
        seq = SequenceSpec(
            limit=manifold,
            amplitude=float(sd.get("amplitude", 0.2)),
            exponent=float(sd.get("exponent", 1.0)),
            count=int(_require(sd, "count", "sequence", lines)),
            s=s,
            seed=int(data.get("seed", 0)),
            wavenumbers=tuple(sd["wavenumbers"]) if "wavenumbers" in sd else None,
            phases=tuple(sd["phases"]) if "phases" in sd else None,
            ball_radius=float(sd.get("ball_radius", 1.0)),
            samples=int(sd.get("samples", 8)),
        )
    return Scenario(name, str(data.get("description", "")).strip(), manifold, s, checks, solver,
                    int(data.get("seed", 0)), options, seq, source)


def load_scenario(path) -> Scenario:
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read scenario file {p}: {exc.strerror}") from None
    return parse_scenario(text, str(p))


def _bundled_dir():
    return resources.files("confsat") / "scenarios"


def bundled_scenarios():
    """Sorted names of the bundled scenarios."""
    return sorted(p.name[:-5] for p in _bundled_dir().iterdir() if p.name.endswith(".yaml"))


def bundled_text(name):
    return (_bundled_dir() / f"{name}.yaml").read_text(encoding="utf-8")


def load_bundled(name) -> Scenario:
    if name not in bundled_scenarios():
        raise KeyError(name)
    return parse_scenario(bundled_text(name), f"bundled:{name}")
