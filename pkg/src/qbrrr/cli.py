"""Command-line driver: ``qbrrr {simulate,fit,evaluate,bound,run-all}``.

A JSON config (``--config``) supplies defaults; explicit flags override it.
Every command writes ``manifest.json`` with the fully resolved config next
to its outputs, and ``qbrrr <cmd> --config <out>/manifest.json`` reruns it.

Exit codes: 0 success, 2 configuration error, 3 numerical divergence,
4 I/O error.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import io
from . import rng as rngmod
from .errors import InvalidInputError, NumericalError
from .evaluation import est_error, interval_width
from .experiment import (BOUND_COLUMNS, REPORT_COLUMNS, ExperimentConfig,
                         aggregate_columns, aggregate_rows, build_problem,
                         evaluate_fit, fit, table_layout, run_experiment,
                         standardize_columns)
from .model import ObservationSet
from .sampler import PosteriorSummary
from .simgen import SyntheticDataset, simulate
from .theory import BoundInputs, constants, oracle_bound_rhs

log = logging.getLogger("qbrrr")

EXIT_OK, EXIT_CONFIG, EXIT_DIVERGENCE, EXIT_IO = 0, 2, 3, 4

# flag dest -> config key
_FLAG_KEYS = {
    "setting": "setting", "theta": "theta", "rho_x": "rho_x",
    "algorithm": "algorithm", "lam": "lam", "tau2": "tau2",
    "iterations": "iterations", "burn_in": "burn_in", "step_alpha": "step_alpha",
    "step_size": "step_size", "auto_tune": "auto_tune", "reps": "reps",
    "seed": "seed", "workers": "workers", "out": "out",
    "with_replacement": "with_replacement", "standardize": "standardize",
    "center_response": "center_response", "data": "data", "x": "x", "z": "z",
    "C": "C", "sigma": "sigma", "xi": "xi", "delta": "delta",
    "epsilon": "epsilon", "prior_solver": "prior_solver",
    "pilot_steps": "pilot_steps",
}


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    g = common.add_argument_group("run configuration")
    g.add_argument("--config", type=Path, help="JSON config file (flags override it)")
    g.add_argument("--setting", choices=["I", "II", "III", "IV"])
    g.add_argument("--theta", type=float, help="missing rate in (0, 1)")
    g.add_argument("--rho-x", dest="rho_x", type=float)
    g.add_argument("--algorithm", choices=["lmc", "mala", "both"])
    g.add_argument("--lambda", dest="lam",
                   help="inverse temperature: a number or e.g. n/2 (default n/2)")
    g.add_argument("--tau2", type=float, help="prior scale squared (default 10)")
    g.add_argument("--iterations", type=int)
    g.add_argument("--burn-in", dest="burn_in", type=int)
    g.add_argument("--step-alpha", dest="step_alpha", type=float,
                   help="use h = (p m)^-alpha instead of tuning")
    g.add_argument("--step-size", dest="step_size", type=float)
    g.add_argument("--auto-tune", dest="auto_tune", action="store_true", default=None)
    g.add_argument("--pilot-steps", dest="pilot_steps", type=int)
    g.add_argument("--reps", type=int)
    g.add_argument("--seed", type=int)
    g.add_argument("--workers", type=int)
    g.add_argument("--out", type=str)
    g.add_argument("--with-replacement", dest="with_replacement",
                   action="store_true", default=None)
    g.add_argument("--standardize", action="store_true", default=None,
                   help="rescale X and Z columns to zero mean, unit variance")
    g.add_argument("--no-center-response", dest="center_response",
                   action="store_false", default=None,
                   help="fit raw responses instead of column-centred ones")
    g.add_argument("--prior-solver", dest="prior_solver", choices=["exact", "ridge"])
    g.add_argument("--data", type=str, help="dataset directory written by simulate")
    g.add_argument("--x", type=str, help="design matrix CSV (real-data mode)")
    g.add_argument("--z", type=str, help="response CSV with NA cells (real-data mode)")
    g.add_argument("--C", dest="C", type=float, help="truncation level")
    b = common.add_argument_group("bound constants")
    b.add_argument("--sigma", type=float)
    b.add_argument("--xi", type=float)
    b.add_argument("--delta", type=float)
    b.add_argument("--epsilon", type=float)
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(
        prog="qbrrr",
        description="Quasi-Bayesian reduced-rank regression with missing responses.")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("simulate", parents=[common], help="write a synthetic dataset")
    sub.add_parser("fit", parents=[common], help="sample the quasi-posterior")
    ev = sub.add_parser("evaluate", parents=[common], help="score a fit")
    ev.add_argument("--fit", dest="fit_dir", type=str, required=True,
                    help="directory written by fit")
    bd = sub.add_parser("bound", parents=[common],
                        help="oracle-bound constants and checks")
    bd.add_argument("--fit", dest="fit_dir", type=str,
                    help="fit directory to compare with (single dataset mode)")
    bd.add_argument("--n-override", dest="n_override", type=float,
                    help="evaluate the bound at this sample size instead")
    sub.add_parser("run-all", parents=[common],
                   help="replicate simulate -> fit -> evaluate -> bound")
    return parser


def resolve_config(args):
    base = {}
    if args.config is not None:
        base = io.read_json(args.config)
        base = dict(base.get("config", base))
    for dest, key in _FLAG_KEYS.items():
        val = getattr(args, dest, None)
        if val is not None:
            base[key] = val
    # a data source given by flag replaces a configured setting
    if any(getattr(args, k, None) is not None for k in ("data", "x")):
        base["setting"] = None
    if args.setting is not None:
        base.pop("data", None)
        base.pop("x", None)
        base.pop("z", None)
    return ExperimentConfig.from_dict(base)


def load_base(cfg):
    """Dataset named by ``cfg.data`` or ``cfg.x``/``cfg.z`` (None for settings)."""
    if cfg.data is not None:
        return io.load_dataset(cfg.data)
    if cfg.x is not None:
        X = io.read_matrix(cfg.x)
        Z = io.read_matrix(cfg.z)
        if X.shape[0] != Z.shape[0]:
            raise InvalidInputError("X and Z must have the same number of rows")
        if np.any(np.isnan(X)):
            raise InvalidInputError("missing values in X are not supported")
        if cfg.standardize:
            X = standardize_columns(X)
            Z = standardize_columns(Z)
        obs = ObservationSet.from_matrix(Z)
        return SyntheticDataset(X, None, Z, obs, np.isnan(Z), None)
    return None


def _manifest(cfg, command, **extra):
    return {"command": command, "config": cfg.to_dict(), **extra}


def cmd_simulate(cfg):
    if cfg.setting is None:
        raise InvalidInputError("simulate needs --setting")
    spec = cfg.setting_spec()
    out = Path(cfg.out)
    paths = []
    for rep in range(cfg.reps):
        data = simulate(spec, rngmod.stream(cfg.seed, rep, rngmod.DATA))
        d = out if cfg.reps == 1 else out / f"rep{rep + 1:03d}"
        io.save_dataset(d, data, _manifest(cfg, "simulate", rep=rep + 1))
        paths.append(str(d))
    print(json.dumps({"written": paths}))
    return EXIT_OK


def write_fit(directory, outcome, cfg, extra=None):
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    s = outcome.summary
    io.write_matrix(d / io.M_HAT_FILE, s.mean_coef, prefix="y")
    io.write_matrix(d / io.FITTED_FILE, s.mean_fitted, prefix="y")
    io.write_matrix(d / io.LOWER_FILE, s.lower, prefix="y")
    io.write_matrix(d / io.UPPER_FILE, s.upper, prefix="y")
    io.write_matrix(d / "offsets.csv", outcome.offsets[None, :], prefix="y")
    tuning = outcome.tuning
    report = {
        "algorithm": outcome.algorithm,
        "acceptance_rate": s.acceptance_rate,
        "step_size": outcome.step_size,
        "alpha": outcome.alpha,
        "tuned": tuning is not None,
        "tuning_in_window": None if tuning is None else tuning.in_window,
        "iterations": cfg.iterations,
        "burn_in": cfg.burn_in,
        "n_samples": s.n_samples,
        "restarts": outcome.restarts,
        "lambda": outcome.problem.lam,
        "tau2": cfg.tau2,
        "C": outcome.problem.C,
        "quantile_levels": sorted(s.quantiles),
        "mean_interval_width": interval_width(s),
        "seed": cfg.seed,
        "wall_time_s": outcome.wall_time_s,
    }
    io.write_json(d / io.RUN_REPORT_FILE, report)
    io.write_json(d / io.MANIFEST_FILE, _manifest(cfg, "fit", **(extra or {})))
    return report


def cmd_fit(cfg):
    base = load_base(cfg)
    if base is None:
        base = simulate(cfg.setting_spec(), rngmod.stream(cfg.seed, 0, rngmod.DATA))
    outcomes = fit(base.X, base.obs, base.Z_full.shape[1], cfg, keys=(0,))
    out = Path(cfg.out)
    reports = {}
    for o in outcomes:
        d = out if len(outcomes) == 1 else out / o.algorithm
        reports[o.algorithm] = write_fit(d, o, cfg)
    print(json.dumps(reports, indent=2, default=str))
    return EXIT_OK


def load_fit(directory):
    d = Path(directory)
    report = io.read_json(d / io.RUN_REPORT_FILE)
    levels = report["quantile_levels"]
    quantiles = {levels[0]: io.read_matrix(d / io.LOWER_FILE),
                 levels[-1]: io.read_matrix(d / io.UPPER_FILE)}
    summary = PosteriorSummary(
        mean_fitted=io.read_matrix(d / io.FITTED_FILE),
        mean_coef=io.read_matrix(d / io.M_HAT_FILE),
        quantiles=quantiles,
        acceptance_rate=report["acceptance_rate"],
        n_samples=report["n_samples"],
        step_size=report["step_size"],
        algorithm=report["algorithm"],
    )
    return summary, report


class _LoadedFit:
    def __init__(self, summary, report):
        self.summary = summary
        self.algorithm = report["algorithm"]
        self.wall_time_s = report.get("wall_time_s", 0.0)


def cmd_evaluate(cfg, fit_dir):
    base = load_base(cfg)
    if base is None:
        raise InvalidInputError("evaluate needs --data (or --x/--z) and --fit")
    summary, report = load_fit(fit_dir)
    res = evaluate_fit(base, _LoadedFit(summary, report))
    spec = base.spec
    row = {"setting": spec.setting if spec else "data", "method": report["algorithm"],
           "theta": spec.missing_rate if spec else cfg.theta,
           "rho_x": spec.rho_x if spec else None, "rep": 1,
           "est": res.est, "pred": res.pred, "mse": res.mse, "ecovr": res.ecovr,
           "acceptance_rate": res.acceptance_rate, "step_size": report["step_size"],
           "restarts": report.get("restarts", 0)}
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_reports(out, [row], None, cfg, "evaluate")
    if math.isnan(res.est):
        log.warning("no truth or complete reference response: Est omitted")
    print(json.dumps(row, default=str))
    return EXIT_OK


def _write_reports(out, rows, bounds, cfg, command):
    agg = aggregate_rows(rows)
    io.write_rows(out / "report.csv", rows, REPORT_COLUMNS)
    io.write_rows(out / "aggregate.csv", agg, aggregate_columns())
    io.write_rows(out / "aggregate_table.csv", table_layout(agg),
                  ("metric", "setting", "theta", "rho_x", "method", "value"))
    if bounds is not None:
        io.write_rows(out / "bound.csv", bounds, BOUND_COLUMNS)
    io.write_json(out / io.MANIFEST_FILE, _manifest(cfg, command))
    return agg


def cmd_bound(cfg, fit_dir=None, n_override=None):
    base = load_base(cfg)
    if base is not None:
        if base.M_star is None:
            raise InvalidInputError("bound needs a dataset with M_star.csv")
        prob, _ = build_problem(base.X, base.obs, base.Z_full.shape[1], cfg)
        rank = int(np.linalg.matrix_rank(base.M_star, tol=1e-8 * max(
            1.0, np.linalg.norm(base.M_star, 2))))
        inputs = BoundInputs(cfg.sigma, cfg.xi, prob.C, prob.n, prob.m, prob.p,
                             float(np.linalg.norm(base.X)),
                             float(np.linalg.norm(base.M_star)), rank,
                             cfg.delta, cfg.epsilon)
        if n_override is not None:
            inputs = replace(inputs, n=int(n_override))
        consts = constants(inputs)
        result = {"C1": consts.C1, "C2": consts.C2, "tau_star": consts.tau_star,
                  "lambda_star": consts.lambda_star, "n": inputs.n, "rank": rank,
                  "C": prob.C, "bound": oracle_bound_rhs(inputs, consts, 0.0)}
        if fit_dir is not None:
            summary, _ = load_fit(fit_dir)
            result["est"] = est_error(base.X, base.M_star, summary.mean_coef)
            result["violated"] = result["est"] > result["bound"]
        print(json.dumps(result, indent=2))
        return EXIT_OK
    rows, bounds, _ = run_experiment(cfg)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    io.write_rows(out / "bound.csv", bounds, BOUND_COLUMNS)
    io.write_json(out / io.MANIFEST_FILE, _manifest(cfg, "bound"))
    for b in bounds:
        flag = "VIOLATED" if b["violated"] else "ok"
        print(f"rep {b['rep']:>3} {b['method']:<4} est={b['est']:.4f} "
              f"bound={b['bound']:.4f} {flag}")
    held = sum(not b["violated"] for b in bounds)
    print(f"bound held in {held}/{len(bounds)} fits")
    return EXIT_OK


def cmd_run_all(cfg):
    base = load_base(cfg)
    rows, bounds, timings = run_experiment(cfg, base)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    agg = _write_reports(out, rows, bounds, cfg, "run-all")
    # wall times vary between runs, so they live apart from the report CSVs
    io.write_json(out / "timing.json", timings)
    for r in agg:
        print(f"{r['setting']} {r['method']:<4} theta={r['theta']} reps={r['reps']} "
              f"Est={r['est_mean']:.4f} Pred={r['pred_mean']:.4f} "
              f"ECovR={r['ecovr_mean']:.3f}")
    return EXIT_OK


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        if args.command == "simulate":
            return cmd_simulate(cfg)
        if args.command == "fit":
            return cmd_fit(cfg)
        if args.command == "evaluate":
            return cmd_evaluate(cfg, args.fit_dir)
        if args.command == "bound":
            return cmd_bound(cfg, args.fit_dir, args.n_override)
        return cmd_run_all(cfg)
    except InvalidInputError as exc:
        print(f"qbrrr: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"qbrrr: numerical failure: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE
    except (OSError, json.JSONDecodeError) as exc:
        print(f"qbrrr: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
