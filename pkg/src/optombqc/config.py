"""Experiment configuration files.

A config is a TOML document with a top-level ``experiment`` name, optional
``description`` and ``output``, and up to three tables: ``[physics]``,
``[numerics]`` and ``[sweep]``. :data:`SCHEMA` lists the keys each
experiment accepts; anything else is rejected.
"""

from __future__ import annotations

import hashlib
import json
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Any

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover - depends on interpreter
    import tomli as tomllib

from .errors import ConfigError

EXPERIMENTS = (
    "cubic-steady",
    "cubic-noise-sweep",
    "two-node-cluster",
    "rwa-check",
    "cubic-gate",
    "stability-scan",
)
SECTIONS = ("physics", "numerics", "sweep")
TOP_LEVEL = ("experiment", "description", "output", *SECTIONS)

REQUIRED = object()


@dataclass(frozen=True)
class Field:
    kind: str  # float, int, bool, str, floats, ints, matrix, float_or_floats
    default: Any = REQUIRED
    doc: str = ""
    choices: tuple = ()

    @property
    def required(self) -> bool:
        return self.default is REQUIRED


F = Field
SCHEMA: dict[str, dict[str, dict[str, Field]]] = {
    "cubic-steady": {
        "physics": {
            "g1": F("float", 1.0, "red-sideband coupling, the unit of rate"),
            "kappa": F("float", doc="cavity decay rate"),
            "r": F("float", doc="blue/red ratio, 0 <= r < 1"),
            "gamma": F("float", doc="cubic parameter"),
            "gamma_m": F("float", 0.0, "mechanical damping rate"),
            "nbar": F("float", 0.0, "bath occupation"),
        },
        "numerics": {
            "cavity_cutoff": F("int", 4),
            "mech_cutoffs": F("ints", doc="mechanical cutoffs of the convergence study"),
            "method": F("str", "auto", choices=("auto", "direct", "sparse", "iterative", "integrate")),
            "frame": F("str", "lab", choices=("lab", "cubic")),
        },
    },
    "cubic-noise-sweep": {
        "physics": {
            "g1": F("float", 1.0),
            "kappa": F("float"),
            "r": F("float"),
            "gamma": F("float"),
        },
        "sweep": {
            "nbar": F("floats", doc="bath occupations"),
            "gamma_m": F("floats", doc="mechanical damping rates"),
        },
        "numerics": {
            "cavity_cutoff": F("int", 4),
            "mech_cutoff": F("int"),
            "method": F("str", "auto", choices=("auto", "direct", "sparse", "iterative", "integrate")),
            "frame": F("str", "cubic", choices=("lab", "cubic")),
        },
    },
    "two-node-cluster": {
        "physics": {
            "beta": F("float", 1.0),
            "kappa": F("float"),
            "s": F("floats", doc="squeezing per node"),
            "gamma": F("floats", doc="cubic parameter per node"),
            "adjacency": F("matrix", None, "adjacency matrix; default is the path graph"),
            "tau": F("float", doc="total switching time, split evenly over the steps"),
            "nbar": F("float_or_floats", 0.0),
            "gamma_m": F("float", 0.0),
            "initial": F("str", "vacuum", choices=("vacuum", "thermal")),
            "precool": F("bool", False),
            "cool_duration": F("float", 0.0, "cooling time per mode"),
        },
        "numerics": {
            "cutoffs": F("ints", doc="cavity cutoff followed by one cutoff per node"),
            "dt": F("float", None, "RK4 step; default from the Liouvillian norm"),
            "samples_per_step": F("int", 51),
        },
    },
    "rwa-check": {
        "physics": {
            "g1": F("float", doc="red-sideband coupling in units of Omega"),
            "kappa": F("float"),
            "r": F("float"),
            "gamma": F("float"),
            "R": F("float", doc="linear to quadratic coupling ratio"),
            "Omega": F("float", 1.0),
        },
        "numerics": {
            "cavity_cutoff": F("int", 3),
            "mech_cutoff": F("int"),
            "duration": F("float", doc="evolution time"),
            "samples": F("int", 201),
            "dt": F("float", None),
        },
    },
    "cubic-gate": {
        "physics": {
            "s": F("float_or_floats", doc="squeezing of both nodes or one per node"),
            "gamma": F("float"),
            "beta": F("float", 1.0),
            "kappa": F("float", 10.0),
            "tau": F("float", 20.0),
            "precool": F("bool", False),
            "cool_duration": F("float", 0.0),
        },
        "sweep": {
            "nbar": F("floats", None, "noisy runs over bath occupations"),
            "gamma_m": F("floats", None, "noisy runs over damping rates"),
        },
        "numerics": {
            "cutoffs": F("ints", doc="two node cutoffs, or cavity plus two for noisy runs"),
            "n_samples": F("int", 200),
            "seed": F("int", 0),
            "target_pad": F("int", 40),
        },
    },
    "stability-scan": {
        "physics": {
            "g1": F("float", 1.0),
            "kappa": F("float"),
            "Gamma": F("float", 0.0),
        },
        "sweep": {
            "ratio": F("floats", doc="|g2|/|g1| values"),
            "phase": F("floats", [0.0], "phase of g2 relative to g1"),
        },
    },
}


def _check_value(kind: str, value, name: str, problems: list[str]):
    def num(x):
        return isinstance(x, (int, float)) and not isinstance(x, bool)

    ok = True
    if kind == "float":
        ok = num(value)
        value = float(value) if ok else value
    elif kind == "int":
        ok = isinstance(value, int) and not isinstance(value, bool)
    elif kind == "bool":
        ok = isinstance(value, bool)
    elif kind == "str":
        ok = isinstance(value, str)
    elif kind == "floats":
        ok = isinstance(value, list) and len(value) > 0 and all(num(x) for x in value)
        value = [float(x) for x in value] if ok else value
    elif kind == "ints":
        ok = isinstance(value, list) and len(value) > 0 and all(isinstance(x, int) and not isinstance(x, bool) for x in value)
    elif kind == "float_or_floats":
        if num(value):
            value = float(value)
        elif isinstance(value, list) and value and all(num(x) for x in value):
            value = [float(x) for x in value]
        else:
            ok = False
    elif kind == "matrix":
        ok = isinstance(value, list) and all(isinstance(row, list) and all(num(x) for x in row) for row in value)
        value = [[float(x) for x in row] for row in value] if ok else value
    if not ok:
        problems.append(f"{name}: expected {kind}, got {value!r}")
    return value


@dataclass(frozen=True)
class ExperimentConfig:
    """Validated configuration with defaults filled in."""

    experiment: str
    physics: dict
    numerics: dict
    sweep: dict
    description: str = ""
    output: str | None = None
    source: str | None = None

    def as_dict(self) -> dict:
        return {
            "experiment": self.experiment,
            "description": self.description,
            "physics": self.physics,
            "numerics": self.numerics,
            "sweep": self.sweep,
        }

    def digest(self) -> str:
        """SHA-256 of the canonical JSON form (output path excluded)."""
        blob = json.dumps(self.as_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


def parse_config(raw: dict, source: str | None = None) -> ExperimentConfig:
    """Validate a parsed TOML document; raises :class:`ConfigError` listing every problem."""
    problems: list[str] = []
    exp = raw.get("experiment")
    if exp is None:
        problems.append("experiment: missing (one of " + ", ".join(EXPERIMENTS) + ")")
    elif exp not in SCHEMA:
        problems.append(f"experiment: unknown value {exp!r} (one of {', '.join(EXPERIMENTS)})")
    for key in raw:
        if key not in TOP_LEVEL:
            problems.append(f"{key}: unknown top-level key")
    for key in ("description", "output"):
        if key in raw and not isinstance(raw[key], str):
            problems.append(f"{key}: expected str")
    if exp not in SCHEMA:
        raise ConfigError("invalid configuration", problems)

    sections: dict[str, dict] = {}
    schema = SCHEMA[exp]
    for sec in SECTIONS:
        given = raw.get(sec, {})
        if not isinstance(given, dict):
            problems.append(f"{sec}: expected a table")
            given = {}
        fields = schema.get(sec, {})
        if given and not fields:
            problems.append(f"{sec}: not used by experiment {exp}")
        out = {}
        for key in given:
            if key not in fields:
                problems.append(f"{sec}.{key}: unknown key for experiment {exp}")
        for key, fld in fields.items():
            name = f"{sec}.{key}"
            if key in given:
                val = _check_value(fld.kind, given[key], name, problems)
                if fld.choices and val not in fld.choices:
                    problems.append(f"{name}: {val!r} not one of {fld.choices}")
                out[key] = val
            elif fld.required:
                problems.append(f"{name}: missing ({fld.doc or fld.kind})")
            else:
                out[key] = fld.default
        sections[sec] = out
    if problems:
        raise ConfigError("invalid configuration", problems)
    return ExperimentConfig(
        experiment=exp,
        physics=sections["physics"],
        numerics=sections["numerics"],
        sweep=sections["sweep"],
        description=raw.get("description", ""),
        output=raw.get("output"),
        source=source,
    )


def load_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}", [f"file: {exc}"]) from exc
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path} is not valid TOML: {exc}", [f"syntax: {exc}"]) from exc
    return parse_config(raw, source=str(path))


def schema_text() -> str:
    """Human-readable listing of every experiment's keys."""
    lines = []
    for exp, sections in SCHEMA.items():
        lines.append(f"experiment = \"{exp}\"")
        for sec, fields in sections.items():
            lines.append(f"  [{sec}]")
            for key, fld in fields.items():
                default = "required" if fld.required else f"default {fld.default!r}"
                extra = f"; one of {fld.choices}" if fld.choices else ""
                doc = f" - {fld.doc}" if fld.doc else ""
                lines.append(f"    {key}: {fld.kind} ({default}{extra}){doc}")
    return "\n".join(lines)
