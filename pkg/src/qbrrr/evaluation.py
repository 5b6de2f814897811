"""Error metrics, credible-interval coverage and replication aggregation."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInputError

METRICS = ("est", "pred", "mse", "ecovr")


@dataclass
class ReplicationResult:
    est: float
    pred: float
    mse: float
    ecovr: float
    acceptance_rate: float | None = None
    wall_time_s: float = 0.0

    def __post_init__(self):
        for name in ("est", "pred", "mse"):
            v = getattr(self, name)
            if v is not None and not (math.isnan(v) or v >= 0):
                raise InvalidInputError(f"{name} must be nonnegative")
        if self.ecovr is not None and not (math.isnan(self.ecovr)
                                           or 0 <= self.ecovr <= 1):
            raise InvalidInputError("ecovr must lie in [0, 1]")


@dataclass
class MetricSummary:
    mean: float
    sd: float | None
    se: float | None


@dataclass
class AggregateReport:
    """Per-metric mean, sample sd and sd / sqrt(reps)."""

    metrics: dict
    reps: int
    spec: dict = field(default_factory=dict)


def _shapes(X, M):
    X = np.asarray(X, dtype=float)
    M = np.asarray(M, dtype=float)
    if X.shape[1] != M.shape[0]:
        raise InvalidInputError(f"X {X.shape} and M {M.shape} are not conformable")
    return X, M


def est_error(X, M_star, M_hat):
    """``||X M* - X M_hat||_F^2 / (ell p)``."""
    X, M_star = _shapes(X, M_star)
    M_hat = np.asarray(M_hat, dtype=float)
    if M_hat.shape != M_star.shape:
        raise InvalidInputError("M_hat and M_star shapes differ")
    D = X @ (M_star - M_hat)
    return float(np.mean(D * D))


def fitted_error(F_true, F_hat):
    """Mean squared difference of two fitted surfaces."""
    F_true = np.asarray(F_true, dtype=float)
    F_hat = np.asarray(F_hat, dtype=float)
    if F_true.shape != F_hat.shape:
        raise InvalidInputError("fitted surfaces differ in shape")
    D = F_true - F_hat
    return float(np.mean(D * D))


def pred_error(Z, X, M_hat, heldout, valid=None):
    """Mean squared error of ``X M_hat`` against ``Z`` over held-out cells.

    ``heldout`` is a boolean ``ell x p`` mask; ``valid`` optionally excludes
    cells whose true value is itself missing (NaN cells are always dropped).
    """
    X, M_hat = _shapes(X, M_hat)
    Z = np.asarray(Z, dtype=float)
    heldout = np.asarray(heldout, dtype=bool)
    if Z.shape != heldout.shape or Z.shape != (X.shape[0], M_hat.shape[1]):
        raise InvalidInputError("Z, heldout and X M_hat must share a shape")
    use = heldout & ~np.isnan(Z)
    if valid is not None:
        use &= np.asarray(valid, dtype=bool)
    if not use.any():
        raise InvalidInputError("no held-out cells to evaluate")
    D = (Z - X @ M_hat)[use]
    return float(np.mean(D * D))


def coverage_rate(summary, X, M_star, levels=(0.025, 0.975)):
    """Fraction of entries of ``X M*`` inside their posterior credible interval."""
    quantiles = getattr(summary, "quantiles", summary)
    try:
        lower = quantiles[levels[0]]
        upper = quantiles[levels[1]]
    except KeyError as exc:
        raise InvalidInputError(f"posterior summary lacks quantile level {exc}") from None
    truth = np.asarray(X, dtype=float) @ np.asarray(M_star, dtype=float)
    if truth.shape != lower.shape:
        raise InvalidInputError("interval shape does not match X M*")
    return float(np.mean((lower <= truth) & (truth <= upper)))


def interval_width(summary, levels=(0.025, 0.975)):
    """Mean width of the entrywise credible intervals."""
    q = summary.quantiles
    return float(np.mean(q[levels[1]] - q[levels[0]]))


def summarize(values):
    vals = np.asarray([v for v in values if v is not None and not math.isnan(v)],
                      dtype=float)
    if vals.size == 0:
        return MetricSummary(math.nan, None, None)
    if vals.size < 2:
        return MetricSummary(float(vals.mean()), None, None)
    sd = float(np.std(vals, ddof=1))
    return MetricSummary(float(vals.mean()), sd, sd / math.sqrt(vals.size))


def aggregate(results, spec=None):
    """Mean and spread of every metric over a list of replications."""
    results = list(results)
    if not results:
        raise InvalidInputError("cannot aggregate an empty result list")
    metrics = {name: summarize(getattr(r, name) for r in results) for name in METRICS}
    acc = [r.acceptance_rate for r in results if r.acceptance_rate is not None]
    if acc:
        metrics["acceptance_rate"] = summarize(acc)
    return AggregateReport(metrics, len(results), dict(spec or {}))
