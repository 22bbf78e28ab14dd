"""Command-line front end.

Usage: ``fracbiot <command> [config.json | --config FILE] [--out DIR] [--jobs N] [--slow]``

Exit codes: 0 success, 1 invalid input (bad config, unknown command or
inadmissible exponents), 2 solver failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from .config import ConfigError, RunConfig, load_config
from .full_solver import dump_solution, energy_history, solve_transient
from .limit_solver import LimitBuildError, build_limit_problem, limit_energy, solve_limit
from .mesh import build_mesh, dump_mesh
from .scaling import ExponentError, compute_effective, export_effective_csv, validate_exponents
from .study import DEFAULT_EPS, SLOW_EPS, config_hash, run_sweep

COMMANDS = ("solve-full", "solve-limit", "sweep", "effective", "check", "mesh-dump")
EXIT_OK, EXIT_INVALID, EXIT_SOLVER = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _parser() -> argparse.ArgumentParser:
    p = _Parser(prog="fracbiot", description="Fractured poroelastic solves and vanishing-aperture studies.")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("config_path", nargs="?", help="run configuration (JSON)")
    p.add_argument("--config", dest="config_flag", help="run configuration (JSON)")
    p.add_argument("--out", default="fracbiot_out", help="output directory")
    p.add_argument("--jobs", type=int, default=1, help="parallel ε-runs in sweeps")
    p.add_argument("--slow", action="store_true", help="extend the sweep to ε = 1/32")
    return p


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([format(v, ".17g") if isinstance(v, (float, np.floating)) else v for v in row])


def _energy_csv(path: Path, times, energy) -> None:
    _write_csv(path, ["time", "energy"], zip(map(float, times), map(float, energy)))


def _mesh(cfg: RunConfig):
    d = cfg.data["discretization"]
    return build_mesh(cfg.geometry, d["h"], d["n_layers"])


def _effective_params(cfg: RunConfig, regime, mesh):
    try:
        return compute_effective(cfg.materials, cfg.exponents, regime, mesh)
    except ValueError as exc:  # coefficient data outside the admissible class
        raise ConfigError(str(exc)) from exc


def _check(cfg: RunConfig, out: Path, args) -> None:
    regime = validate_exponents(cfg.exponents, cfg.geometry)
    info = {
        "flow": regime.flow.value,
        "mech": regime.mech.value,
        "storage_present": regime.storage_present,
        "biot_coupled": regime.biot_coupled,
        "flow_source_present": regime.flow_source_present,
        "mech_source_present": regime.mech_source_present,
        "W_is_zero": regime.W_is_zero,
        "fracture_stress_has_pressure": regime.fracture_stress_has_pressure,
    }
    (out / "regime.json").write_text(json.dumps(info, indent=2) + "\n", encoding="utf-8")
    print(f"admissible: {regime.mech.value}/{regime.flow.value}")


def _mesh_dump(cfg: RunConfig, out: Path, args) -> None:
    dump_mesh(_mesh(cfg), out / "mesh.txt")


def _effective(cfg: RunConfig, out: Path, args) -> None:
    regime = validate_exponents(cfg.exponents, cfg.geometry)
    mesh = _mesh(cfg)
    eff = _effective_params(cfg, regime, mesh)
    export_effective_csv(eff, mesh, out / "effective.csv")


def _solve_full(cfg: RunConfig, out: Path, args) -> None:
    config = cfg.biot_config()
    validate_exponents(config.exponents, config.geometry)
    mesh = _mesh(cfg)
    dump_mesh(mesh, out / "mesh.txt")
    sol = solve_transient(config, mesh, validate=False)
    dump_solution(sol, out / "solution", config.digest())
    _energy_csv(out / "energy.csv", sol.times, energy_history(sol))


def _solve_limit(cfg: RunConfig, out: Path, args) -> None:
    config = cfg.biot_config()
    regime = validate_exponents(config.exponents, config.geometry)
    mesh = _mesh(cfg)
    dump_mesh(mesh, out / "mesh.txt")
    opts = cfg.data["limit"]
    eff = _effective_params(cfg, regime, mesh)
    problem = build_limit_problem(
        regime, eff, mesh, prefer_reduced=opts["prefer_reduced"], mech_form=opts["mech_form"], flow_form=opts["flow_form"]
    )
    sol = solve_limit(problem, config.materials, config.T, config.dt)
    dump_solution(sol, out / "solution", config.digest())
    _energy_csv(out / "energy.csv", sol.times, limit_energy(sol))
    print(f"limit forms: {problem.mech_form.value} / {problem.flow_form.value}")


def _sweep(cfg: RunConfig, out: Path, args) -> None:
    config = cfg.biot_config()
    opts = cfg.data["sweep"]
    eps = opts["eps"] or (SLOW_EPS if args.slow else DEFAULT_EPS)
    regime = validate_exponents(config.exponents, config.geometry)
    report = run_sweep(config, eps, regime=regime, jobs=args.jobs, prefer_reduced=opts["prefer_reduced"])
    (out / "report.csv").write_text(report.to_csv(), encoding="utf-8")
    (out / "verdicts.txt").write_text(report.verdict_text(), encoding="utf-8")
    print(f"sweep {report.metadata['regime']} ({config_hash(config, eps)}): {'PASS' if report.passed else 'FAIL'}")


_HANDLERS = {
    "solve-full": _solve_full,
    "solve-limit": _solve_limit,
    "sweep": _sweep,
    "effective": _effective,
    "check": _check,
    "mesh-dump": _mesh_dump,
}


def main(argv=None) -> int:
    try:
        args = _parser().parse_args(sys.argv[1:] if argv is None else argv)
        path = args.config_flag or args.config_path
        if path is None:
            raise UsageError("a configuration file is required")
        if args.config_flag and args.config_path and args.config_flag != args.config_path:
            raise UsageError("configuration given twice with different paths")
        if args.jobs < 1:
            raise UsageError("--jobs must be at least 1")
        cfg = load_config(path)
    except (UsageError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(cfg.to_json() + "\n", encoding="utf-8")
    try:
        _HANDLERS[args.command](cfg, out, args)
    except ExponentError as exc:
        for v in exc.violations:
            print(f"error: {v}", file=sys.stderr)
        return EXIT_INVALID
    except (ConfigError, LimitBuildError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except Exception as exc:  # numerical breakdown anywhere in the solve
        print(f"solver failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
