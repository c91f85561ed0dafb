"""Configuration-driven command line front end.

One ``run`` subcommand covers single solves, convergence series,
mesh-shift studies and the multipatch example; settings come from an
optional JSON config file with flag overrides (flags win).  Results land
in ``report.json`` (deterministic for a fixed config and seed),
``rates.csv`` and an optional structured field dump.

Exit codes: 0 success, 2 invalid configuration, 3 assembly/solve
failure, 4 acceptance-check failure in ``--check`` mode.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import re
import sys
import time

import numpy as np

from .analysis import convergence_study, fit_rates, mesh_shift_study, n_jobs_from_env
from .assembly import AssemblyError, NitscheParams
from .estimator import CutPoissonSolver
from .geometry import GeometryError, PolygonDomain
from .multipatch import (MultipatchError, interface_jump_norm, solve_multipatch,
                         three_patch_udomain)
from .problems import ProblemError, sector_problem
from .solve import SolveError

CONFIG_KEYS = ("problem", "omega", "p", "regularity", "gamma", "beta", "tau",
               "h", "shift", "fix", "solver", "out", "seed", "n_arc",
               "polygon_file", "check", "dump_field")

DEFAULTS = {
    "p": 2, "regularity": None, "gamma": "auto", "beta": 100.0, "tau": 0.1,
    "shift": "0,0", "fix": "auto", "solver": "direct", "out": ".",
    "seed": 0, "n_arc": 4096, "check": False, "dump_field": False,
}


class ConfigError(ValueError):
    pass


class CheckFailure(RuntimeError):
    def __init__(self, msg: str, report: dict | None = None):
        super().__init__(msg)
        self.report = report


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="gradedfem",
                                 description="graded cut finite element runs")
    sub = ap.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="execute a configured experiment")
    run.add_argument("--config", help="JSON config file; flags override it")
    run.add_argument("--problem", choices=["sector", "sector+smooth",
                                           "multipatch-fig8", "custom"])
    run.add_argument("--omega", type=float, help="opening angle in radians")
    run.add_argument("--p", type=int)
    run.add_argument("--regularity", type=int)
    run.add_argument("--gamma", help="grading exponent or 'auto' (= 2p)")
    run.add_argument("--beta", type=float)
    run.add_argument("--tau", type=float)
    run.add_argument("--h", help="comma-separated mesh sizes, e.g. 0.4,0.2,0.1")
    run.add_argument("--shift", help="'sx,sy', 'center', 'zero' or 'random(seed,n)'")
    run.add_argument("--fix", choices=["auto", "on", "off"])
    run.add_argument("--solver", choices=["direct", "cg"])
    run.add_argument("--out", help="output directory")
    run.add_argument("--seed", type=int)
    run.add_argument("--n-arc", type=int, dest="n_arc")
    run.add_argument("--polygon-file", dest="polygon_file")
    run.add_argument("--check", action="store_true", default=None,
                     help="assert convergence windows; exit 4 on failure")
    run.add_argument("--dump-field", action="store_true", default=None,
                     help="write a VTK structured dump of the finest solution")
    return ap


def resolve_config(args: argparse.Namespace) -> dict:
    cfg = dict(DEFAULTS)
    if args.config:
        if not os.path.exists(args.config):
            raise ConfigError(f"config file not found: {args.config}")
        with open(args.config) as fh:
            try:
                file_cfg = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"config file is not valid JSON: {exc}") from exc
        unknown = set(file_cfg) - set(CONFIG_KEYS)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        cfg.update(file_cfg)
    for key in CONFIG_KEYS:
        val = getattr(args, key, None)
        if val is not None:
            cfg[key] = val
    if "problem" not in cfg or cfg["problem"] is None:
        raise ConfigError("missing required field: problem")
    if cfg["problem"] in ("sector", "sector+smooth") and cfg.get("omega") is None:
        raise ConfigError("missing required field: omega")
    if cfg["problem"] == "custom" and not cfg.get("polygon_file"):
        raise ConfigError("missing required field: polygon_file")
    if cfg.get("h") is None:
        raise ConfigError("missing required field: h")
    cfg["h"] = _parse_h(cfg["h"])
    if cfg["gamma"] != "auto":
        cfg["gamma"] = float(cfg["gamma"])
    cfg["shift"] = _parse_shift(cfg["shift"])
    return cfg


def _parse_h(spec) -> list[float]:
    if isinstance(spec, (list, tuple)):
        hs = [float(v) for v in spec]
    else:
        hs = [float(tok) for tok in str(spec).split(",") if tok.strip()]
    if not hs or any(v <= 0 for v in hs):
        raise ConfigError(f"invalid mesh-size list: {spec!r}")
    return hs


def _parse_shift(spec):
    if isinstance(spec, (list, tuple)):
        return ("fixed", float(spec[0]), float(spec[1]))
    s = str(spec).strip()
    if s in ("center", "zero"):
        return (s,)
    m = re.fullmatch(r"random\((\d+)\s*,\s*(\d+)\)", s)
    if m:
        return ("random", int(m.group(1)), int(m.group(2)))
    try:
        sx, sy = (float(tok) for tok in s.split(","))
    except ValueError as exc:
        raise ConfigError(f"invalid shift spec: {spec!r}") from exc
    return ("fixed", sx, sy)


def _estimator(cfg: dict) -> CutPoissonSolver:
    shift = cfg["shift"]
    if shift[0] == "fixed":
        shift_param = (shift[1], shift[2])
    elif shift[0] in ("center", "zero"):
        shift_param = shift[0]
    else:
        shift_param = (0.0, 0.0)
    return CutPoissonSolver(
        h=cfg["h"][0], p=cfg["p"], regularity=cfg["regularity"],
        gamma=cfg["gamma"], beta=cfg["beta"], tau=cfg["tau"],
        shift=shift_param, fix=cfg["fix"], solver=cfg["solver"])


def _make_problem(cfg: dict):
    name = cfg["problem"]
    if name in ("sector", "sector+smooth"):
        return sector_problem(cfg["omega"], smooth=(name == "sector+smooth"),
                              n_arc=cfg["n_arc"])
    raise ConfigError(f"unsupported problem: {name}")


def _serializable_config(cfg: dict) -> dict:
    out = dict(cfg)
    out["shift"] = list(cfg["shift"])
    return out


def run_sector(cfg: dict, outdir: str) -> dict:
    problem = _make_problem(cfg)
    est = _estimator(cfg)
    report: dict = {"config": _serializable_config(cfg), "mode": "convergence"}
    if cfg["shift"][0] == "random":
        _, seed, n_trials = cfg["shift"]
        study = mesh_shift_study(est, problem, h=cfg["h"][0],
                                 n_trials=n_trials, seed=seed,
                                 n_jobs=n_jobs_from_env())
        report["mode"] = "shift-study"
        report["shift_study"] = {
            "h": study["h"], "seed": study["seed"], "n_trials": study["n_trials"],
            "shifts": study["shifts"],
            "l2": study["l2"], "h1_semi": study["h1_semi"],
            "rows": [r.to_dict() for r in study["reports"]],
        }
        return report

    table = convergence_study(est, problem, cfg["h"], n_jobs=n_jobs_from_env())
    report["rows"] = [r.to_dict() for r in table.reports]
    if len(cfg["h"]) >= 3:
        report["rates"] = table.fitted_rate
    _write_rates_csv(os.path.join(outdir, "rates.csv"), table)
    if cfg["dump_field"]:
        est_f = _estimator(cfg)
        est_f.set_params(h=cfg["h"][-1])
        est_f.fit(problem)
        _write_field_vtk(os.path.join(outdir, "field.vtk"), est_f)
    if cfg["check"]:
        _check_windows(cfg, report)
    return report


def _check_windows(cfg: dict, report: dict):
    if "rates" not in report:
        raise ConfigError("--check needs at least 3 refinement levels")
    p = cfg["p"]
    windows = {"l2": (p + 1 - 0.3, p + 1 + 0.3), "h1_semi": (p - 0.3, p + 0.3)}
    failures = []
    for norm, (lo, hi) in windows.items():
        rate = report["rates"][norm]
        if not (lo <= rate <= hi):
            failures.append(f"{norm} rate {rate:.3f} outside [{lo:.2f}, {hi:.2f}]")
    report["check"] = {"windows": {k: list(v) for k, v in windows.items()},
                       "failures": failures}
    if failures:
        raise CheckFailure("; ".join(failures), report)


def run_multipatch(cfg: dict, outdir: str) -> dict:
    pset, problem = three_patch_udomain(
        gamma=2.0 * cfg["p"] if cfg["gamma"] == "auto" else cfg["gamma"])
    params = NitscheParams(beta=cfg["beta"], tau=cfg["tau"])
    rows = []
    for h in cfg["h"]:
        msys, sol = solve_multipatch(pset, problem, h=h, p=cfg["p"],
                                     r=cfg["regularity"], params=params,
                                     split=(cfg["fix"] == "on"))
        rows.append({"h": h, "n_dofs": msys.n_dofs,
                     "interface_jump": interface_jump_norm(msys, sol)})
    report = {"config": _serializable_config(cfg), "mode": "multipatch",
              "rows": rows}
    if cfg["check"]:
        jumps = [r["interface_jump"] for r in rows]
        if not all(b < a for a, b in zip(jumps, jumps[1:])):
            report["check"] = {"failures": ["interface jump not decreasing"]}
            raise CheckFailure("interface jump not decreasing under refinement",
                               report)
        report["check"] = {"failures": []}
    return report


def run_custom(cfg: dict, outdir: str) -> dict:
    path = cfg["polygon_file"]
    if not os.path.exists(path):
        raise ConfigError(f"missing polygon file (polygon_file): {path}")
    with open(path) as fh:
        domain = PolygonDomain.from_json(fh.read())

    class _CustomProblem:
        has_exact = False
        omega = None

        def domain(self_inner):
            return domain

        def source(self_inner, pts):
            return np.ones(len(np.atleast_2d(pts)))

        def dirichlet(self_inner, pts):
            return np.zeros(len(np.atleast_2d(pts)))

    rows = []
    est = _estimator(cfg)
    for h in cfg["h"]:
        e = _estimator(cfg)
        e.set_params(h=h)
        e.fit(_CustomProblem())
        rows.append({"h": h, "n_dofs": e.n_dofs_,
                     "solution_max": float(np.abs(e.solution_).max())})
        est = e
    report = {"config": _serializable_config(cfg), "mode": "custom", "rows": rows}
    if cfg["dump_field"]:
        _write_field_vtk(os.path.join(outdir, "field.vtk"), est)
    return report


def _write_rates_csv(path: str, table) -> None:
    lines = ["h,n_dofs,l2,h1_semi,energy,rate_l2,rate_h1"]
    roll_l2 = table.rolling_rates("l2")
    roll_h1 = table.rolling_rates("h1_semi")
    for i, h in enumerate(table.hs):
        r2 = "" if roll_l2[i] is None else f"{roll_l2[i]:.6g}"
        r1 = "" if roll_h1[i] is None else f"{roll_h1[i]:.6g}"
        lines.append(f"{h:.10g},{table.n_dofs[i]},"
                     f"{table.errors['l2'][i]:.12g},"
                     f"{table.errors['h1_semi'][i]:.12g},"
                     f"{table.errors['energy'][i]:.12g},{r2},{r1}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def _write_field_vtk(path: str, est: CutPoissonSolver, n: int = 101) -> None:
    """Legacy VTK structured grid: points at physical positions, solution
    values, inside mask and reference coordinates."""
    g = np.linspace(-1.0, 1.0, n)
    X, Y = np.meshgrid(g, g, indexing="xy")
    ref = np.column_stack([X.ravel(), Y.ravel()])
    inside = est.domain_.contains_points(ref)
    vals = est.predict_reference(ref, mask_outside=True)
    vals = np.where(np.isfinite(vals), vals, 0.0)
    phys = est.gmap_.forward(ref)
    lines = ["# vtk DataFile Version 3.0", "gradedfem field dump", "ASCII",
             "DATASET STRUCTURED_GRID", f"DIMENSIONS {n} {n} 1",
             f"POINTS {n * n} double"]
    lines.extend(f"{p[0]:.12g} {p[1]:.12g} 0" for p in phys)
    lines.append(f"POINT_DATA {n * n}")
    lines.append("SCALARS u double 1")
    lines.append("LOOKUP_TABLE default")
    lines.extend(f"{v:.12g}" for v in vals)
    lines.append("SCALARS inside int 1")
    lines.append("LOOKUP_TABLE default")
    lines.extend(str(int(b)) for b in inside)
    lines.append("VECTORS ref_coords double")
    lines.extend(f"{p[0]:.12g} {p[1]:.12g} 0" for p in ref)
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    t0 = time.perf_counter()
    try:
        cfg = resolve_config(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    outdir = cfg["out"]
    os.makedirs(outdir, exist_ok=True)
    try:
        if cfg["problem"] in ("sector", "sector+smooth"):
            report = run_sector(cfg, outdir)
        elif cfg["problem"] == "multipatch-fig8":
            report = run_multipatch(cfg, outdir)
        else:
            report = run_custom(cfg, outdir)
    except CheckFailure as exc:
        if exc.report is not None:
            with open(os.path.join(outdir, "report.json"), "w") as fh:
                json.dump(exc.report, fh, sort_keys=True, indent=2)
                fh.write("\n")
        print(f"check failed: {exc}", file=sys.stderr)
        return 4
    except (SolveError, AssemblyError, MultipatchError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except (ConfigError, ProblemError, GeometryError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    with open(os.path.join(outdir, "report.json"), "w") as fh:
        json.dump(report, fh, sort_keys=True, indent=2)
        fh.write("\n")
    print(f"wall time: {time.perf_counter() - t0:.2f} s", file=sys.stderr)
    return 0


if __name__ == "__main__":
    sys.exit(main())
