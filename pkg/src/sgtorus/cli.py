"""Batch command-line driver.

Eight subcommands map the library onto files: solve a potential, run the
time loop, solve Dirichlet problems on sections, emit Green's-function /
section-geometry / regularity reports, factor map series, and run the
verification suite.  Configs are plain key=value text overridden by
flags; with a fixed seed every report file is byte-identical across runs
(wall-clock timestamps live in a separate metadata file).

Exit codes: 0 success, 1 bad configuration, 2 solver failure,
3 invariant violation (certificate name on stderr).
"""

import argparse
import csv
import datetime
import json
import os
import sys
import time

import numpy as np

from . import acceptance, dynamics, polar, presets, regularity
from . import grid as gridmod
from .errors import ConfigError, InvariantViolation, SGTorusError
from .fitting import dyadic_ladder
from .grid import TorusField, TorusGrid
from .lma import green_integrability_report, solve_dirichlet_lma
from .ma import cofactor, solve_ma_periodic
from .sections import extract_section, john_normalize

POTENTIAL_PRESETS = ("quadratic", "cosine")


class _Parser(argparse.ArgumentParser):
    # argparse exits with status 2 on bad flags; remap to the config code
    def error(self, message):
        raise ConfigError(message)


def load_config(path):
    cfg = {}
    try:
        with open(path) as fh:
            for line_no, line in enumerate(fh, 1):
                line = line.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise ConfigError(f"{path}:{line_no}: expected key=value")
                key, value = line.split("=", 1)
                cfg[key.strip()] = value.strip()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}")
    return cfg


def _merge(args, cfg, key, cast, default):
    """Flag > config file > default."""
    flag_val = getattr(args, key.replace("-", "_"), None)
    if flag_val is not None:
        return flag_val
    if key in cfg:
        try:
            return cast(cfg[key])
        except ValueError:
            raise ConfigError(f"config key {key}={cfg[key]!r} is not {cast.__name__}")
    return default


def _positive(value, name):
    if value is None or value > 0:
        return value
    raise ConfigError(f"{name} must be positive, got {value}")


def _parse_center(text):
    try:
        a, b = text.split(",")
        return float(a), float(b)
    except ValueError:
        raise ConfigError(f"center must be 'x1,x2', got {text!r}")


def _out_dir(args):
    out = args.out or "sgtorus_out"
    os.makedirs(out, exist_ok=True)
    return out


def _write_json(path, payload):
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=1, sort_keys=True, default=str)
        fh.write("\n")


def _write_metadata(out, args, started, elapsed):
    # the one file allowed to differ between identical runs
    _write_json(os.path.join(out, "metadata.json"), {
        "command": args.command,
        "argv": sys.argv[1:],
        "started": datetime.datetime.fromtimestamp(started).isoformat(),
        "elapsed_s": elapsed,
    })


def _resolve_density(name, grid):
    if name in presets.DENSITY_PRESETS:
        return presets.DENSITY_PRESETS[name](grid)
    if os.path.exists(name):
        field = (gridmod.field_from_binary(name) if name.endswith(".bin")
                 else gridmod.field_from_csv(name))
        if field.grid.n != grid.n:
            raise ConfigError(
                f"density file is {field.grid.n}^2 but n={grid.n} requested"
            )
        vals = field.values / field.values.mean()
        return TorusField(grid, vals), float(vals.min()), float(vals.max())
    raise ConfigError(
        f"unknown density {name!r} (presets: {', '.join(presets.DENSITY_PRESETS)})"
    )


def _resolve_potential(name, grid, tol=None):
    if name == "quadratic":
        return presets.quadratic_potential(grid)
    if name == "cosine":
        return presets.perturbed_potential(grid, amplitude=0.01)
    rho, lam, Lam = _resolve_density(name, grid)
    return solve_ma_periodic(rho, lam=lam, Lam=Lam, tol=tol)


# --- subcommands ---------------------------------------------------------------

def cmd_ma_solve(args, cfg):
    n = _positive(_merge(args, cfg, "n", int, 64), "n")
    tol = _positive(_merge(args, cfg, "tol", float, None), "tol")
    rho0 = args.preset or cfg.get("rho0", "perturbed")
    grid = TorusGrid(n)
    rho, lam, Lam = _resolve_density(rho0, grid)
    pot = solve_ma_periodic(rho, lam=lam, Lam=Lam, tol=tol)
    out = _out_dir(args)
    gridmod.field_to_binary(TorusField(grid, pot.q), os.path.join(out, "q.bin"))
    gridmod.field_to_binary(TorusField(grid, pot.det), os.path.join(out, "det.bin"))
    _write_json(os.path.join(out, "solution.json"), pot.header_dict())
    return 0


def cmd_sg_run(args, cfg):
    n = _positive(_merge(args, cfg, "n", int, 64), "n")
    dt = _positive(_merge(args, cfg, "dt", float, 2e-3), "dt")
    t_end = _positive(_merge(args, cfg, "t_end", float, 0.1), "t_end")
    tol = _positive(_merge(args, cfg, "tol", float, None), "tol")
    every = _positive(_merge(args, cfg, "report_every", int, 1), "report_every")
    rho0 = args.preset or cfg.get("rho0", "perturbed")
    lam = _merge(args, cfg, "lambda", float, None)
    Lam = _merge(args, cfg, "Lambda", float, None)

    grid = TorusGrid(n)
    rho, lam0, Lam0 = _resolve_density(rho0, grid)
    res = dynamics.run(rho, grid,
                       dt=dt, t_end=t_end,
                       lam=lam if lam is not None else lam0,
                       Lam=Lam if Lam is not None else Lam0,
                       tol=tol)
    out = _out_dir(args)
    rows = dynamics.certificates_csv(res).splitlines(keepends=True)
    with open(os.path.join(out, "certificates.csv"), "w") as fh:
        fh.write(rows[0])
        fh.writelines(rows[1::every])
    gridmod.field_to_binary(TorusField(grid, res.rho_history[-1]),
                            os.path.join(out, "final_rho.bin"))
    gridmod.field_to_binary(TorusField(grid, res.q_history[-1]),
                            os.path.join(out, "final_q.bin"))
    violated = [(k, v) for k, c in enumerate(res.certificates)
                for v in c.get("violations", [])]
    _write_json(os.path.join(out, "summary.json"), {
        "n": n, "dt": dt, "steps": res.n_steps,
        "final": {k: v for k, v in res.certificates[-1].items()
                  if k != "violations"},
        "lma_residual_max": max(c["lma_residual"] for c in res.certificates),
        "violations": [f"step {k}: {v}" for k, v in violated],
    })
    if violated:
        name = violated[0][1]
        if args.soft:
            print(f"warning: certificate {name} violated "
                  f"({len(violated)} rows)", file=sys.stderr)
        else:
            raise InvariantViolation(name, f"{len(violated)} violated rows")
    return 0


def cmd_lma_dirichlet(args, cfg):
    n = _positive(_merge(args, cfg, "n", int, 64), "n")
    height = _positive(_merge(args, cfg, "h0", float, 0.05), "h0")
    center = _parse_center(args.center or cfg.get("center", "0.5,0.5"))
    name = args.preset or cfg.get("potential", "cosine")
    seed = _merge(args, cfg, "seed", int, 0)

    grid = TorusGrid(n)
    pot = _resolve_potential(name, grid)
    sec = extract_section(pot, center, height)
    rng = np.random.default_rng(seed)
    x1, x2 = grid.centers()
    # random low-frequency flux field to drive the solve
    a = rng.standard_normal(4)
    F1 = a[0] * np.sin(2 * np.pi * x1) + a[1] * np.cos(2 * np.pi * x2)
    F2 = a[2] * np.cos(2 * np.pi * x1) + a[3] * np.sin(2 * np.pi * x2)
    u, info = solve_dirichlet_lma(cofactor(pot), sec.mask, grid, F=(F1, F2),
                                  tol=1e-12)
    out = _out_dir(args)
    gridmod.field_to_binary(TorusField(grid, u), os.path.join(out, "u.bin"))
    _write_json(os.path.join(out, "solve.json"), {
        "n": n, "height": height, "center": list(center),
        "cells": info["cells"], "relative_residual": info["relative_residual"],
        "seed": seed,
    })
    return 0


def cmd_green_report(args, cfg):
    n = _positive(_merge(args, cfg, "n", int, 128), "n")
    h0 = _positive(_merge(args, cfg, "h0", float, 0.02), "h0")
    rungs = _positive(_merge(args, cfg, "rungs", int, 4), "rungs")
    center = _parse_center(args.center or cfg.get("center", "0.5,0.5"))
    name = args.preset or cfg.get("potential", "quadratic")

    grid = TorusGrid(n)
    pot = _resolve_potential(name, grid)
    report = green_integrability_report(pot, center, dyadic_ladder(h0, rungs))
    out = _out_dir(args)
    with open(os.path.join(out, "green_rows.csv"), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["h", "p", "kappa", "norm", "slope", "r2"])
        for row in report["rows"]:
            writer.writerow([repr(row["h"]),
                             "" if row["p"] is None else repr(row["p"]),
                             "" if row["kappa"] is None else repr(row["kappa"]),
                             repr(row["norm"]), repr(row["slope"]),
                             repr(row["r2"])])
    _write_json(os.path.join(out, "green_summary.json"), {
        "potential": name, "n": n, "heights": report["heights"],
        "mass_slope": next(r["slope"] for r in report["rows"] if r["p"] == 1.0),
        "symmetry_defect": report["symmetry_defect"],
        "positivity_floor": report["positivity_floor"],
        "level_set_decay": report["level_set_decay"],
    })
    return 0


def cmd_sections_report(args, cfg):
    n = _positive(_merge(args, cfg, "n", int, 128), "n")
    h0 = _positive(_merge(args, cfg, "h0", float, 0.02), "h0")
    rungs = _positive(_merge(args, cfg, "rungs", int, 4), "rungs")
    n_centers = _positive(_merge(args, cfg, "centers", int, 5), "centers")
    seed = _merge(args, cfg, "seed", int, 0)
    name = args.preset or cfg.get("potential", "perturbed")

    grid = TorusGrid(n)
    pot = _resolve_potential(name, grid)
    rng = np.random.default_rng(seed)
    centers = rng.random((n_centers, 2))
    rows, ratios = [], []
    for c in centers:
        for h in dyadic_ladder(h0, rungs):
            sec = extract_section(pot, c, h)
            try:
                john = john_normalize(sec)
                semi = [float(s) for s in john.semi_axes]
                det_a = john.det_A
            except SGTorusError:
                semi, det_a = [float("nan")] * 2, float("nan")
            rows.append([repr(float(c[0])), repr(float(c[1])), repr(h),
                         sec.n_cells, repr(sec.area), repr(sec.diameter()),
                         repr(sec.area / h), repr(semi[0]), repr(semi[1]),
                         repr(det_a)])
            ratios.append(sec.area / h)
    out = _out_dir(args)
    with open(os.path.join(out, "sections.csv"), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["c1", "c2", "h", "n_cells", "area", "diameter",
                         "area_over_h", "semi_major", "semi_minor", "det_A"])
        writer.writerows(rows)
    _write_json(os.path.join(out, "sections_summary.json"), {
        "potential": name, "n": n, "seed": seed,
        "ratio_min": min(ratios), "ratio_max": max(ratios),
        "spread": max(ratios) / min(ratios),
    })
    return 0


def cmd_regularity_report(args, cfg):
    n = _positive(_merge(args, cfg, "n", int, 128), "n")
    h0 = _positive(_merge(args, cfg, "h0", float, 0.08), "h0")
    rungs = _positive(_merge(args, cfg, "rungs", int, 4), "rungs")
    center = _parse_center(args.center or cfg.get("center", "0.5,0.5"))
    name = args.preset or cfg.get("potential", "cosine")

    grid = TorusGrid(n)
    pot = _resolve_potential(name, grid)
    sec = extract_section(pot, center, h0)
    x1, x2 = grid.centers()
    bdata = np.sin(2 * np.pi * x1) + np.cos(4 * np.pi * x2)
    u, _ = solve_dirichlet_lma(cofactor(pot), sec.mask, grid,
                               boundary_values=bdata, tol=1e-12)
    decay = regularity.oscillation_decay(u, pot, center, h0, rungs=rungs)
    radius = np.sqrt(2.0 * h0)
    fit = regularity.holder_fit(
        u, center, grid,
        radii=np.geomspace(3.0 * grid.spacing, 0.45 * radius, 8),
    )
    out = _out_dir(args)
    with open(os.path.join(out, "oscillation.csv"), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["h", "osc_h", "osc_half", "ratio"])
        for row in decay.rows:
            writer.writerow([repr(row.h), repr(row.osc_h),
                             repr(row.osc_half), repr(row.ratio)])
    with open(os.path.join(out, "shells.csv"), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["r", "m_r"])
        for r, m in fit.shells:
            writer.writerow([repr(r), repr(m)])
    _write_json(os.path.join(out, "regularity_summary.json"), {
        "potential": name, "n": n, "center": list(center), "h0": h0,
        "gamma_hat": fit.gamma, "C_hat": fit.prefactor, "r2": fit.r2,
        "beta_hat_max": decay.beta_max, "constant": decay.constant,
    })
    return 0


def cmd_polar_run(args, cfg):
    n = _positive(_merge(args, cfg, "n", int, 64), "n")
    seed = _merge(args, cfg, "seed", int, 0)
    lam = _merge(args, cfg, "lambda", float, None)
    Lam = _merge(args, cfg, "Lambda", float, None)
    if args.series:
        series = polar.read_series(args.series)
    else:
        steps = _positive(_merge(args, cfg, "steps", int, 6), "steps")
        t_end = _positive(_merge(args, cfg, "t_end", float, 0.5), "t_end")
        times = [0.1 + k * (t_end - 0.1) / (steps - 1) for k in range(steps)]
        series = presets.cosine_family_series(TorusGrid(n), times)
    report = polar.polar_time_regularity(series, lam=lam, Lam=Lam, seed=seed)
    out = _out_dir(args)
    with open(os.path.join(out, "polar_rows.jsonl"), "w") as fh:
        for row in report["rows"]:
            fh.write(json.dumps(row, sort_keys=True) + "\n")
    with open(os.path.join(out, "polar_summary.csv"), "w", newline="") as fh:
        writer = csv.writer(fh)
        keys = sorted(report["summary"])
        writer.writerow(keys)
        writer.writerow([repr(report["summary"][k])
                         if isinstance(report["summary"][k], float)
                         else report["summary"][k] for k in keys])
    return 0


def cmd_verify(args, cfg):
    results = acceptance.run_all(quick=args.quick)
    out = _out_dir(args)
    for r in results:
        print(r.line())
    _write_json(os.path.join(out, "suite.json"), {
        r.name: {"passed": r.passed, "details": r.details,
                 "elapsed_s": round(r.elapsed, 2)}
        for r in results
    })
    failed = [r.name for r in results if not r.passed]
    if failed:
        if args.soft:
            print(f"warning: failed checks: {', '.join(failed)}",
                  file=sys.stderr)
            return 0
        raise InvariantViolation(failed[0], f"{len(failed)} checks failed")
    return 0


COMMANDS = {
    "ma-solve": cmd_ma_solve,
    "sg-run": cmd_sg_run,
    "lma-dirichlet": cmd_lma_dirichlet,
    "green-report": cmd_green_report,
    "sections-report": cmd_sections_report,
    "regularity-report": cmd_regularity_report,
    "polar-run": cmd_polar_run,
    "verify": cmd_verify,
}


def build_parser():
    parser = _Parser(prog="sgtorus",
                     description="Dual semigeostrophic laboratory on the torus")
    sub = parser.add_subparsers(dest="command", required=True,
                                parser_class=_Parser)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="key=value config file")
        p.add_argument("--n", type=int, help="grid cells per axis")
        p.add_argument("--dt", type=float, help="time step")
        p.add_argument("--t-end", dest="t_end", type=float, help="final time")
        p.add_argument("--tol", type=float, help="solver tolerance")
        p.add_argument("--seed", type=int, help="RNG seed (reports are "
                       "byte-identical for a fixed seed)")
        p.add_argument("--out", help="output directory (default sgtorus_out)")
        p.add_argument("--preset", help="density or potential preset name")
        p.add_argument("--center", help="section center as 'x1,x2'")
        p.add_argument("--h0", type=float, help="top section height")
        p.add_argument("--rungs", type=int, help="dyadic ladder length")
        p.add_argument("--soft", action="store_true",
                       help="downgrade invariant violations to warnings")
        p.add_argument("--quick", action="store_true",
                       help="smaller grids and step counts, scaled bounds")
        if name == "polar-run":
            p.add_argument("--series", help="directory with a map-series manifest")
            p.add_argument("--steps", type=int, help="timestamps in the preset family")
        if name == "sections-report":
            p.add_argument("--centers", type=int, help="number of sampled centers")
        if name == "sg-run":
            p.add_argument("--lambda", dest="lam", type=float,
                           help="certified lower density bound")
            p.add_argument("--Lambda", dest="Lam", type=float,
                           help="certified upper density bound")
            p.add_argument("--report-every", dest="report_every", type=int,
                           help="thin certificate rows by this factor")
    return parser


def _merge_flag_aliases(args):
    # argparse dests for --lambda/--Lambda differ from the config keys
    if getattr(args, "lam", None) is not None:
        args.__dict__["lambda"] = args.lam
    if getattr(args, "Lam", None) is not None:
        args.__dict__["Lambda"] = args.Lam


def main(argv=None):
    started = time.time()
    try:
        args = build_parser().parse_args(argv)
        _merge_flag_aliases(args)
        cfg = load_config(args.config) if args.config else {}
        code = COMMANDS[args.command](args, cfg)
        if args.out or args.command != "verify":
            _write_metadata(_out_dir(args), args, started,
                            round(time.time() - started, 3))
        return code
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except InvariantViolation as exc:
        print(exc.name, file=sys.stderr)
        if exc.detail:
            print(exc.detail, file=sys.stderr)
        return 3
    except SGTorusError as exc:
        print(f"solver error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
