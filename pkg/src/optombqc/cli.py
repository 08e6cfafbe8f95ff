"""Command line entry point: ``optombqc run|validate|presets``.

Exit codes: 0 success, 1 configuration error, 2 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import platform
import sys
import time
from importlib import resources
from pathlib import Path

import numpy as np

from . import __version__
from .config import ExperimentConfig, load_config, parse_config, schema_text, tomllib
from .errors import ConfigError, OptomechError
from .model import DriveSet, cubic_drive_couplings, drift_matrix, rwa_validity

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_NUMERICAL = 2

log = logging.getLogger("optombqc")


# --- presets ------------------------------------------------------------------


def _preset_dir():
    return resources.files("optombqc") / "presets"


def preset_names() -> list[str]:
    return sorted(p.name[:-5] for p in _preset_dir().iterdir() if p.name.endswith(".toml"))


def preset_text(name: str) -> str:
    return (_preset_dir() / f"{name}.toml").read_text()


def resolve_config(arg: str) -> ExperimentConfig:
    """Load ``arg`` as a file path, or as a preset name when no such file exists."""
    path = Path(arg)
    if path.exists() or arg.endswith(".toml") or "/" in arg:
        return load_config(path)
    if arg in preset_names():
        raw = tomllib.loads(preset_text(arg))
        return parse_config(raw, source=f"preset:{arg}")
    raise ConfigError(f"no config file or preset named {arg!r}", [f"file: {arg} not found"])


# --- validation ---------------------------------------------------------------


def physics_checks(cfg: ExperimentConfig) -> tuple[list[str], list[str]]:
    """Stability errors and RWA-margin warnings for a parsed config."""
    errors: list[str] = []
    warnings: list[str] = []
    p = cfg.physics
    if "r" in p:
        r = p["r"]
        g1 = p.get("g1", 1.0)
        rep = drift_matrix(DriveSet.single(g1, -r * g1), p.get("kappa", 1.0))
        if not (rep.stable_rh and 0 <= r < 1):
            errors.append(f"physics.r: r = {r} gives unstable dynamics (need 0 <= r < 1)")
        elif cfg.experiment == "rwa-check":
            report = rwa_validity(cubic_drive_couplings(g1, r, p["gamma"]), p["R"], p["Omega"])
            if not report.passed:
                warnings.append(
                    f"RWA margin: {report.worst_term} / Omega = {report.ratio:.3g} "
                    f"exceeds {report.margin}; counter-rotating terms are not small"
                )
    for key in ("kappa", "beta", "g1", "tau"):
        if key in p and p[key] is not None and not p[key] > 0:
            errors.append(f"physics.{key}: must be positive, got {p[key]}")
    if "s" in p:
        s = np.atleast_1d(p["s"])
        if np.any(s <= 0):
            errors.append("physics.s: squeezing must be positive")
        if "gamma" in p and isinstance(p["gamma"], list) and len(p["gamma"]) != len(s):
            errors.append("physics.gamma: need one value per node")
    nm = cfg.numerics
    if cfg.experiment == "two-node-cluster":
        n = len(np.atleast_1d(p["s"]))
        if len(nm["cutoffs"]) != n + 1:
            errors.append(f"numerics.cutoffs: need {n + 1} entries (cavity first)")
        if p["precool"] and not p["cool_duration"] > 0:
            errors.append("physics.cool_duration: must be positive when precool is set")
    return errors, warnings


def validate_config(cfg: ExperimentConfig) -> list[str]:
    errors, warnings = physics_checks(cfg)
    if errors:
        raise ConfigError("physics checks failed", errors)
    return warnings


# --- output -------------------------------------------------------------------


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return format(float(x), ".17g")
    return str(x)


def write_csv(path: Path, columns: list[str], rows: list[list]):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(columns)
        for row in rows:
            w.writerow([_fmt(x) for x in row])


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else str(x)
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    return obj


def output_path(cfg: ExperimentConfig, override: str | None) -> Path:
    if override:
        return Path(override)
    if cfg.output:
        return Path(cfg.output)
    stem = Path(cfg.source).stem if cfg.source and not cfg.source.startswith("preset:") else cfg.source.split(":", 1)[1]
    return Path(f"{stem}.csv")


def run_experiment(cfg: ExperimentConfig, out: Path) -> dict:
    from .experiments import RUNNERS, worker_count

    start = time.perf_counter()
    result = RUNNERS[cfg.experiment](cfg)
    wall = time.perf_counter() - start
    out.parent.mkdir(parents=True, exist_ok=True)
    write_csv(out, result.columns, result.rows)
    meta = {
        "experiment": cfg.experiment,
        "config_source": cfg.source,
        "config_sha256": cfg.digest(),
        "config": cfg.as_dict(),
        "columns": result.columns,
        "rows": len(result.rows),
        "cutoffs": result.cutoffs,
        "truncation": result.truncation,
        "results": result.extra,
        "wall_time_s": wall,
        "workers": worker_count(),
        "version": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
    }
    with open(out.with_suffix(".json"), "w") as fh:
        json.dump(_jsonable(meta), fh, indent=2, sort_keys=True)
    return meta


# --- commands -----------------------------------------------------------------


def _report_problems(exc: ConfigError):
    print(f"error: {exc}", file=sys.stderr)
    for p in exc.problems:
        print(f"  - {p}", file=sys.stderr)


def cmd_run(args) -> int:
    try:
        cfg = resolve_config(args.config)
        for w in validate_config(cfg):
            print(f"warning: {w}", file=sys.stderr)
    except ConfigError as exc:
        _report_problems(exc)
        return EXIT_CONFIG
    out = output_path(cfg, args.output)
    try:
        meta = run_experiment(cfg, out)
    except ConfigError as exc:
        _report_problems(exc)
        return EXIT_CONFIG
    except (OptomechError, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    print(f"wrote {out} ({meta['rows']} rows) and {out.with_suffix('.json')} in {meta['wall_time_s']:.1f} s")
    return EXIT_OK


def cmd_validate(args) -> int:
    try:
        cfg = resolve_config(args.config)
    except ConfigError as exc:
        _report_problems(exc)
        return EXIT_CONFIG
    errors, warnings = physics_checks(cfg)
    for w in warnings:
        print(f"warning: {w}")
    if errors:
        for e in errors:
            print(f"invalid: {e}")
        return EXIT_CONFIG
    print(f"valid: {cfg.experiment} ({cfg.source})")
    p = cfg.physics
    if "r" in p:
        print(f"  stable: r = {p['r']} < 1")
    return EXIT_OK


def cmd_presets(args) -> int:
    if args.action == "list":
        for name in preset_names():
            raw = tomllib.loads(preset_text(name))
            print(f"{name:24s} {raw.get('experiment', ''):18s} {raw.get('description', '')}")
        return EXIT_OK
    if args.action == "show":
        if args.name not in preset_names():
            print(f"error: unknown preset {args.name!r}", file=sys.stderr)
            return EXIT_CONFIG
        print(preset_text(args.name), end="")
        return EXIT_OK
    print(schema_text())
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="optombqc", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run an experiment config (file path or preset name)")
    run.add_argument("config")
    run.add_argument("-o", "--output", help="CSV path; the JSON sidecar goes next to it")
    run.set_defaults(func=cmd_run)

    val = sub.add_parser("validate", help="check a config without running it")
    val.add_argument("config")
    val.set_defaults(func=cmd_validate)

    pre = sub.add_parser("presets", help="list or show shipped configs, or print the schema")
    pre.add_argument("action", choices=("list", "show", "schema"))
    pre.add_argument("name", nargs="?")
    pre.set_defaults(func=cmd_presets)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.verbose:
        logging.basicConfig(level=logging.INFO, format="%(asctime)s %(name)s %(message)s")
    return args.func(args)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
