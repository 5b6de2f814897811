"""Simulate -> fit -> evaluate pipeline shared by the CLI subcommands.

Replication ``k`` of a run with master seed ``s`` draws its data from the
stream ``(s, k, DATA)``, its pilot chains from ``(s, k, TUNE)`` and the chain
of algorithm ``a`` from ``(s, k, a, CHAIN)``. Worker processes therefore
never change results, only wall time.
"""

from __future__ import annotations

import logging
import math
import re
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import rng as rngmod
from .errors import InvalidInputError
from .evaluation import (ReplicationResult, coverage_rate, est_error,
                         fitted_error, pred_error, summarize)
from .model import ObservationSet, RrrProblem, center_columns
from .prior import PriorConfig
from .sampler import (ALGORITHMS, SamplerConfig, resolve_step_size,
                      run_chain_with_restarts)
from .simgen import SETTINGS, SettingSpec, SyntheticDataset, gen_mask, simulate
from .theory import BoundInputs, constants, oracle_bound_rhs

log = logging.getLogger(__name__)

REPORT_COLUMNS = ("setting", "method", "theta", "rho_x", "rep", "est", "pred",
                  "mse", "ecovr", "acceptance_rate", "step_size", "restarts")
BOUND_COLUMNS = ("setting", "method", "theta", "rho_x", "rep", "n", "C", "rank",
                 "C1", "C2", "tau_star", "lambda_star", "bound", "est", "violated")


@dataclass
class ExperimentConfig:
    """Every knob of a run; the JSON config file uses the same keys."""

    setting: str | None = "I"
    theta: float = 0.2
    rho_x: float = 0.0
    with_replacement: bool = False
    approx_lowrank_sd: float = 0.1
    intercept: str = "ones"
    spec_overrides: dict = field(default_factory=dict)
    data: str | None = None
    x: str | None = None
    z: str | None = None
    standardize: bool = False
    algorithm: str = "mala"
    lam: str = "n/2"
    tau2: float = 10.0
    C: float | None = None
    center_response: bool = True
    prior_solver: str = "exact"
    iterations: int = 5000
    burn_in: int = 2000
    thin: int = 5
    step_alpha: float | None = None
    step_size: float | None = None
    auto_tune: bool = True
    pilot_steps: int = 500
    reps: int = 1
    seed: int = 0
    workers: int = 1
    out: str = "out"
    sigma: float = 1.0
    xi: float = 1.0
    delta: float = 1.0
    epsilon: float = 0.05

    def __post_init__(self):
        sources = [self.setting is not None, self.data is not None, self.x is not None]
        if sum(sources) != 1:
            raise InvalidInputError(
                "give exactly one of: a setting, a dataset directory, or x/z files")
        if self.setting is not None and self.setting not in SETTINGS:
            raise InvalidInputError(f"unknown setting {self.setting!r}")
        if (self.x is None) != (self.z is None):
            raise InvalidInputError("x and z must be given together")
        if self.algorithm not in (*ALGORITHMS, "both"):
            raise InvalidInputError(f"unknown algorithm {self.algorithm!r}")
        if self.workers < 1:
            raise InvalidInputError("workers must be at least 1")
        if self.reps < 1:
            raise InvalidInputError("reps must be at least 1")
        if not 0 <= self.burn_in < self.iterations:
            raise InvalidInputError("burn_in must satisfy 0 <= burn_in < iterations")
        if not self.tau2 > 0:
            raise InvalidInputError("tau2 must be positive")
        if not self.auto_tune and self.step_alpha is None and self.step_size is None:
            raise InvalidInputError("auto_tune is off: give step_alpha or step_size")
        parse_lambda(self.lam, 1)

    @classmethod
    def from_dict(cls, d):
        d = dict(d.get("config", d))
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise InvalidInputError(f"unknown config keys: {sorted(unknown)}")
        if d.get("data") is not None or d.get("x") is not None:
            d.setdefault("setting", None)
        return cls(**d)

    def to_dict(self):
        return asdict(self)

    @property
    def algorithms(self):
        return ALGORITHMS if self.algorithm == "both" else (self.algorithm,)

    def setting_spec(self):
        if self.setting is None:
            raise InvalidInputError("no setting configured")
        return SettingSpec.preset(
            self.setting, rho_x=self.rho_x, missing_rate=self.theta,
            with_replacement=self.with_replacement,
            approx_lowrank_sd=self.approx_lowrank_sd, intercept=self.intercept,
            seed=self.seed, **self.spec_overrides)

    def sampler_config(self, algorithm):
        return SamplerConfig(
            algorithm=algorithm, iterations=self.iterations, burn_in=self.burn_in,
            step_size=self.step_size,
            alpha=self.step_alpha if self.step_size is None else None,
            pilot_steps=self.pilot_steps, thin=self.thin, seed=self.seed)


_LAMBDA = re.compile(r"^\s*(?:(?P<k>[0-9.eE+-]+)\s*\*?\s*)?n\s*(?:/\s*(?P<d>[0-9.eE+-]+))?\s*$")


def parse_lambda(spec, n):
    """Inverse temperature from a number or an expression like ``n/2`` or ``0.5n``."""
    if isinstance(spec, (int, float)):
        value = float(spec)
    else:
        text = str(spec)
        mt = _LAMBDA.match(text)
        if mt:
            value = float(mt.group("k") or 1.0) * n / float(mt.group("d") or 1.0)
        else:
            try:
                value = float(text)
            except ValueError:
                raise InvalidInputError(f"cannot parse lambda {spec!r}") from None
    if not value >= 0 or not math.isfinite(value):
        raise InvalidInputError(f"lambda must be a nonnegative number, got {spec!r}")
    return value


@dataclass
class FitOutcome:
    algorithm: str
    summary: object
    step_size: float
    alpha: float | None
    restarts: int
    wall_time_s: float
    problem: RrrProblem
    offsets: np.ndarray
    tuning: object = None


def build_problem(X, obs, p, cfg):
    """Problem for a fit, centring observed response columns when configured."""
    offsets = np.zeros(p)
    if cfg.center_response:
        obs, offsets = center_columns(obs, p)
    lam = parse_lambda(cfg.lam, obs.n)
    prob = RrrProblem(X, obs, p, lam=lam, tau=math.sqrt(cfg.tau2), C=cfg.C,
                      sigma=cfg.sigma, xi=cfg.xi)
    return prob, offsets


def fit(X, obs, p, cfg, keys=()):
    """Run every configured algorithm on one dataset.

    The step size is resolved once (MALA pilots when auto-tuning) and shared
    by all algorithms.
    """
    prob, offsets = build_problem(X, obs, p, cfg)
    prior = PriorConfig.for_problem(prob, solver=cfg.prior_solver)
    t0 = time.perf_counter()
    tune_cfg = cfg.sampler_config("mala")
    h, tuning = resolve_step_size(prob, prior, tune_cfg, keys=keys)
    tune_time = time.perf_counter() - t0
    alpha = tuning.alpha if tuning is not None else cfg.step_alpha
    outcomes = []
    for alg in cfg.algorithms:
        t0 = time.perf_counter()
        summary, restarts = run_chain_with_restarts(
            prob, prior, cfg.sampler_config(alg), h=h,
            keys=(*keys, ALGORITHMS.index(alg)))
        wall = time.perf_counter() - t0 + tune_time
        outcomes.append(FitOutcome(alg, summary, summary.step_size, alpha, restarts,
                                   wall, prob, offsets, tuning))
    return outcomes


def standardize_columns(A):
    """Zero-mean, unit-variance columns, ignoring NaN cells."""
    mu = np.nanmean(A, axis=0)
    sd = np.nanstd(A, axis=0, ddof=1)
    sd = np.where(sd > 0, sd, 1.0)
    return (A - mu) / sd


def mask_complete_response(X, Y, theta, with_replacement, rng):
    """Hide a random ``theta`` fraction of a (nearly) complete response.

    Cells already missing in ``Y`` are never observed and never scored.
    """
    ell, p = Y.shape
    spec = SettingSpec(ell=ell, m=X.shape[1], p=p, r=1, missing_rate=theta,
                       with_replacement=with_replacement)
    rows, cols, heldout = gen_mask(spec, rng)
    keep = ~np.isnan(Y[rows, cols])
    rows, cols = rows[keep], cols[keep]
    obs = ObservationSet(rows, cols, Y[rows, cols], with_replacement=with_replacement)
    heldout = obs.counts(ell, p) == 0
    return SyntheticDataset(X, None, Y, obs, heldout, None)


def ols_reference(X, Y):
    """Least-squares coefficients per response column over its non-missing rows."""
    B = np.empty((X.shape[1], Y.shape[1]))
    for j in range(Y.shape[1]):
        ok = ~np.isnan(Y[:, j])
        B[:, j] = np.linalg.lstsq(X[ok], Y[ok, j], rcond=None)[0]
    return B


def replicate_dataset(cfg, rep, base=None):
    """Dataset for replication ``rep``: simulated, loaded, or re-masked real data."""
    rng = rngmod.stream(cfg.seed, rep, rngmod.DATA)
    if cfg.setting is not None:
        return simulate(cfg.setting_spec(), rng)
    if base is None:
        raise InvalidInputError("no dataset supplied")
    if cfg.x is not None:
        return mask_complete_response(base.X, base.Z_full, cfg.theta,
                                      cfg.with_replacement, rng)
    return base


def evaluate_fit(data, outcome):
    """Metrics of one fit against a dataset.

    With a known truth, Est compares ``X M_hat`` to ``X M*``; otherwise it
    compares to the least-squares fit on the complete response when that is
    available, and is NaN if not.
    """
    s = outcome.summary
    X = data.X
    reference = data.M_star
    if reference is None and not np.any(np.isnan(data.Z_full)):
        reference = ols_reference(X, data.Z_full)
    if reference is not None:
        est = est_error(X, reference, s.mean_coef)
        mse = fitted_error(X @ reference, s.mean_fitted)
        ecovr = coverage_rate(s, X, reference)
    else:
        est = mse = ecovr = math.nan
    try:
        pred = pred_error(data.Z_full, X, s.mean_coef, data.heldout)
    except InvalidInputError:
        pred = math.nan
    return ReplicationResult(est, pred, mse, ecovr,
                             s.acceptance_rate if outcome.algorithm == "mala" else None,
                             outcome.wall_time_s)


def bound_row(cfg, data, outcome):
    """Oracle-bound check of one fit, taking ``Mbar = M*`` (zero approximation error)."""
    if data.M_star is None:
        return None
    prob = outcome.problem
    rank = int(np.linalg.matrix_rank(data.M_star, tol=1e-8 * max(
        1.0, np.linalg.norm(data.M_star, 2))))
    inputs = BoundInputs(sigma=cfg.sigma, xi=cfg.xi, C=prob.C, n=prob.n, m=prob.m,
                         p=prob.p, X_frob=float(np.linalg.norm(data.X)),
                         Mbar_frob=float(np.linalg.norm(data.M_star)), r=rank,
                         delta=cfg.delta, epsilon=cfg.epsilon)
    consts = constants(inputs)
    bound = oracle_bound_rhs(inputs, consts, 0.0)
    est = est_error(data.X, data.M_star, outcome.summary.mean_coef)
    return {"n": prob.n, "C": prob.C, "rank": rank, "C1": consts.C1,
            "C2": consts.C2, "tau_star": consts.tau_star,
            "lambda_star": consts.lambda_star, "bound": bound, "est": est,
            "violated": bool(est > bound)}


def run_replication(cfg, rep, base=None):
    """Fit and score one replication; returns ``(report_rows, bound_rows, timings)``."""
    data = replicate_dataset(cfg, rep, base)
    outcomes = fit(data.X, data.obs, data.Z_full.shape[1], cfg, keys=(rep,))
    label = cfg.setting if cfg.setting is not None else "data"
    rows, bounds, timings = [], [], []
    for out in outcomes:
        res = evaluate_fit(data, out)
        head = {"setting": label, "method": out.algorithm, "theta": cfg.theta,
                "rho_x": cfg.rho_x if label != "data" else None, "rep": rep + 1}
        rows.append({**head, "est": res.est, "pred": res.pred, "mse": res.mse,
                     "ecovr": res.ecovr, "acceptance_rate": res.acceptance_rate,
                     "step_size": out.step_size, "restarts": out.restarts})
        b = bound_row(cfg, data, out)
        if b is not None:
            bounds.append({**head, **b})
        timings.append({**head, "wall_time_s": res.wall_time_s})
    return rows, bounds, timings


def _replication_task(args):
    cfg_dict, rep, base = args
    return run_replication(ExperimentConfig.from_dict(cfg_dict), rep, base)


def run_experiment(cfg, base=None):
    """All replications, in replication order regardless of ``cfg.workers``."""
    tasks = [(cfg.to_dict(), rep, base) for rep in range(cfg.reps)]
    if cfg.workers == 1 or cfg.reps == 1:
        results = [_replication_task(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            results = list(pool.map(_replication_task, tasks))
    rows = [r for res in results for r in res[0]]
    bounds = [b for res in results for b in res[1]]
    timings = [t for res in results for t in res[2]]
    return rows, bounds, timings


def aggregate_rows(rows, metrics=("est", "pred", "mse", "ecovr", "acceptance_rate")):
    """Group tidy report rows by (setting, method, theta, rho_x) and summarize."""
    groups = {}
    for r in rows:
        key = (r["setting"], r["method"], r["theta"], r["rho_x"])
        groups.setdefault(key, []).append(r)
    out = []
    for key, members in groups.items():
        row = dict(zip(("setting", "method", "theta", "rho_x"), key))
        row["reps"] = len(members)
        for mname in metrics:
            s = summarize(m.get(mname) for m in members)
            row[f"{mname}_mean"] = s.mean
            row[f"{mname}_sd"] = s.sd
            row[f"{mname}_se"] = s.se
        out.append(row)
    return out


def aggregate_columns(metrics=("est", "pred", "mse", "ecovr", "acceptance_rate")):
    cols = ["setting", "method", "theta", "rho_x", "reps"]
    for m in metrics:
        cols += [f"{m}_mean", f"{m}_sd", f"{m}_se"]
    return cols


def table_layout(agg_rows):
    """Rows ``metric x method`` with ``"mean (sd)"`` cells, one block per cell setup."""
    table = []
    for metric, label in (("est", "Est"), ("pred", "Pred"), ("mse", "MSE"),
                          ("ecovr", "ECovR")):
        for r in agg_rows:
            mean, sd = r[f"{metric}_mean"], r[f"{metric}_sd"]
            if mean is None or (isinstance(mean, float) and math.isnan(mean)):
                continue
            cell = f"{mean:.3f}" if sd is None else f"{mean:.3f} ({sd:.3f})"
            table.append({"metric": label, "setting": r["setting"],
                          "theta": r["theta"], "rho_x": r["rho_x"],
                          "method": r["method"], "value": cell})
    return table
