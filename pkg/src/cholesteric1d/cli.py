"""Batch experiment runner.

    cholesteric1d run CONFIG.json [--set key=value ...] [--jobs K] [--out DIR]
    cholesteric1d check DIR

Exit status: 0 all checks pass, 2 configuration error, 3 solver failure,
4 an acceptance check failed.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import json
import logging
import math
import os
import sys
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path

from . import __version__
from . import experiments as ex
from .core import ModelParams, write_field_csv
from .errors import Cholesteric1DError, ConfigError
from .minimize import SolverOptions
from .saddle import write_path

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SOLVER = 3
EXIT_CHECK = 4

SETTINGS_TYPES = {
    "minimize": ex.MinimizeSettings,
    "winding_scan": ex.WindingScanSettings,
    "phase_diagram": ex.PhaseDiagramSettings,
    "barrier": ex.BarrierSettings,
    "twistbend": ex.TwistBendSettings,
    "gamma_recovery": ex.GammaRecoverySettings,
}

DEFAULT_PARAMS = {"eps": 0.005, "L": 0.5, "N": 1, "alpha": 1.0, "beta": None}


@dataclass
class ExperimentConfig:
    kind: str = "minimize"
    params: dict = field(default_factory=lambda: dict(DEFAULT_PARAMS))
    n: int = 4001
    solver: dict = field(default_factory=dict)
    settings: dict = field(default_factory=dict)
    output_dir: str = "run"
    seed: int = 0

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        merged = dict(data)
        merged["params"] = {**DEFAULT_PARAMS, **data.get("params", {})}
        cfg = cls(**merged)
        cfg.validate()
        return cfg

    def validate(self) -> None:
        if self.kind not in SETTINGS_TYPES:
            raise ConfigError(f"unknown experiment kind {self.kind!r}; expected one of {sorted(SETTINGS_TYPES)}")
        if not isinstance(self.n, int) or isinstance(self.n, bool) or self.n < 3:
            raise ConfigError("n must be an integer >= 3")
        if not isinstance(self.seed, int) or isinstance(self.seed, bool):
            raise ConfigError("seed must be an integer")
        self.model_params()
        self.solver_options()
        settings = self.kind_settings()
        for name, value in dataclasses.asdict(settings).items():
            if isinstance(value, (list, tuple)) and len(value) == 0:
                raise ConfigError(f"settings.{name} must be nonempty")

    def model_params(self) -> ModelParams:
        try:
            return ModelParams(**self.params)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad params: {exc}") from exc

    def solver_options(self) -> SolverOptions:
        try:
            return SolverOptions(**self.solver)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad solver options: {exc}") from exc

    def kind_settings(self):
        settings_type = SETTINGS_TYPES[self.kind]
        try:
            settings = settings_type(**self.settings)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad settings for {self.kind}: {exc}") from exc
        # JSON delivers lists; settings use tuples
        for f in dataclasses.fields(settings):
            value = getattr(settings, f.name)
            if isinstance(value, list):
                setattr(settings, f.name, tuple(value))
        return settings

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def apply_override(data: dict, assignment: str) -> None:
    """Apply ``dotted.key=value``; the value is parsed as JSON when possible."""
    if "=" not in assignment:
        raise ConfigError(f"override {assignment!r} is not of the form key=value")
    key, raw = assignment.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    parts = key.split(".")
    node = data
    for part in parts[:-1]:
        node = node.setdefault(part, {})
        if not isinstance(node, dict):
            raise ConfigError(f"override {key!r} descends into a non-object")
    node[parts[-1]] = value


def load_config(path, overrides=()) -> ExperimentConfig:
    try:
        data = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    for item in overrides:
        apply_override(data, item)
    return ExperimentConfig.from_dict(data)


# ---------------------------------------------------------------- output


def _json_default(obj):
    if hasattr(obj, "item"):
        return obj.item()
    if hasattr(obj, "tolist"):
        return obj.tolist()
    if isinstance(obj, tuple):
        return list(obj)
    raise TypeError(f"not JSON serialisable: {type(obj).__name__}")


def dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2, default=_json_default) + "\n"


def atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    with os.fdopen(fd, "w", newline="") as fh:
        fh.write(text)
    os.replace(tmp, path)


def _cell(value):
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, (list, tuple, dict)):
        return json.dumps(value, default=_json_default)
    if hasattr(value, "item"):
        return _cell(value.item())
    return value


def table_columns(rows: list[dict]) -> list[str]:
    columns: list[str] = []
    for row in rows:
        for key in row:
            if key not in columns:
                columns.append(key)
    return columns


def table_csv(rows: list[dict]) -> str:
    columns = table_columns(rows)
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=columns, lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: _cell(row.get(k, "")) for k in columns})
    return buf.getvalue()


def _write_field(field_obj, path: Path) -> None:
    # write_field_csv writes directly; route through a temporary for atomicity
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    os.close(fd)
    write_field_csv(field_obj, tmp)
    os.replace(tmp, path)


# ---------------------------------------------------------------- run


def execute(cfg: ExperimentConfig, jobs: int = 1) -> ex.ExperimentResult:
    params = cfg.model_params()
    opts = cfg.solver_options()
    settings = cfg.kind_settings()
    if cfg.kind == "minimize":
        return ex.run_minimize(params, cfg.n, opts, settings, cfg.seed)
    if cfg.kind == "winding_scan":
        return ex.run_winding_scan(params, cfg.n, opts, settings)
    if cfg.kind == "phase_diagram":
        return ex.run_phase_diagram(params, cfg.n, opts, settings, jobs)
    if cfg.kind == "barrier":
        return ex.run_barrier(params, opts, settings, keep_paths=True)
    if cfg.kind == "twistbend":
        return ex.run_twistbend(opts, settings, jobs)
    return ex.run_gamma_recovery(params, settings)


def exit_status(checks: list[dict], solver_failures: int) -> int:
    if solver_failures:
        return EXIT_SOLVER
    if not all(c["passed"] for c in checks):
        return EXIT_CHECK
    return EXIT_OK


def write_outputs(cfg: ExperimentConfig, result: ex.ExperimentResult, out: Path, wall_time: float) -> dict:
    tables = {}
    for name, rows in result.tables.items():
        atomic_write(out / f"{name}.csv", table_csv(rows))
        tables[name] = {"file": f"{name}.csv", "rows": len(rows), "columns": table_columns(rows)}
    payload = result.payload
    if "report" in payload:
        atomic_write(out / "report.json", dumps(payload["report"]))
        _write_field(payload["field"], out / "field.csv")
    for eps, path in payload.get("paths", {}).items():
        directory = out / "paths" / f"eps_{eps:g}"
        write_path(path, cfg.model_params().replace(eps=eps), directory)
    extras = {k: v for k, v in payload.items() if k not in ("report", "field", "paths")}
    checks = [dataclasses.asdict(c) for c in result.checks]
    summary = {
        "kind": cfg.kind,
        "checks": checks,
        "passed": all(c["passed"] for c in checks),
        "solver_failures": result.solver_failures,
        "tables": tables,
        "extras": extras,
    }
    summary["exit_status"] = exit_status(checks, result.solver_failures)
    atomic_write(out / "summary.json", dumps(summary))
    manifest = {
        "config": cfg.to_dict(),
        "version": __version__,
        "wall_time_seconds": wall_time,
    }
    atomic_write(out / "manifest.json", dumps(manifest))
    return summary


def run(cfg: ExperimentConfig, jobs: int = 1, out: str | None = None) -> int:
    out_dir = Path(out or cfg.output_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"output directory not writable: {exc}") from exc
    if not os.access(out_dir, os.W_OK):
        raise ConfigError(f"output directory not writable: {out_dir}")
    start = time.perf_counter()
    try:
        result = execute(cfg, jobs)
    except Cholesteric1DError as exc:
        if isinstance(exc, ConfigError):
            raise
        print(f"solver failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    summary = write_outputs(cfg, result, out_dir, time.perf_counter() - start)
    for c in result.checks:
        print(c.line())
    return summary["exit_status"]


# ---------------------------------------------------------------- check


def check(directory) -> int:
    """Re-parse a finished run and re-evaluate every recorded check."""
    directory = Path(directory)
    try:
        summary = json.loads((directory / "summary.json").read_text())
        json.loads((directory / "manifest.json").read_text())
    except (OSError, json.JSONDecodeError) as exc:
        print(f"unreadable run directory: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    problems = []
    for name, meta in summary.get("tables", {}).items():
        try:
            with open(directory / meta["file"], newline="") as fh:
                reader = csv.DictReader(fh)
                rows = list(reader)
                columns = reader.fieldnames or []
        except OSError as exc:
            problems.append(f"table {name}: {exc}")
            continue
        if list(columns) != meta["columns"]:
            problems.append(f"table {name}: columns differ from summary")
        if len(rows) != meta["rows"]:
            problems.append(f"table {name}: {len(rows)} rows, summary says {meta['rows']}")
    for c in summary.get("checks", []):
        again = ex.evaluate_check(c["value"], c["op"], c["threshold"])
        if again != c["passed"]:
            problems.append(f"check {c['name']!r} re-evaluates to {again}")
        print(f"[{'PASS' if again else 'FAIL'}] {c['name']}")
    for p in problems:
        print(p, file=sys.stderr)
    if problems:
        return EXIT_CONFIG
    return exit_status(summary.get("checks", []), summary.get("solver_failures", 0))


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="cholesteric1d", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    run_p = sub.add_parser("run", help="run an experiment from a JSON config")
    run_p.add_argument("config")
    run_p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE")
    run_p.add_argument("--jobs", type=int, default=1)
    run_p.add_argument("--out", default=None)
    check_p = sub.add_parser("check", help="re-validate a finished run directory")
    check_p.add_argument("directory")
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")

    if args.command == "check":
        return check(args.directory)
    try:
        if args.jobs < 1:
            raise ConfigError("--jobs must be at least 1")
        cfg = load_config(args.config, args.overrides)
        return run(cfg, args.jobs, args.out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
