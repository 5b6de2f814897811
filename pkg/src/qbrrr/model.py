"""Regression model with a partially observed response.

The response is an ``ell x p`` matrix of which only ``n`` entries are seen,
each as a ``(row, col, value)`` triple. Predictions are ``X @ M`` clamped
entrywise to ``[-C, C]``. Indices are 0-based inside this module; the
1-based convention of the file formats is converted in :mod:`qbrrr.io`.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInputError


@dataclass(frozen=True)
class ObservationSet:
    """Observed entries of the response matrix.

    Attributes:
        rows: 0-based row index of each observation, shape ``(n,)``.
        cols: 0-based column index of each observation, shape ``(n,)``.
        values: observed value of each entry, shape ``(n,)``.
        with_replacement: whether positions were drawn i.i.d. (duplicates allowed).
    """

    rows: np.ndarray
    cols: np.ndarray
    values: np.ndarray
    with_replacement: bool = False

    def __post_init__(self):
        rows = np.asarray(self.rows, dtype=np.int64).ravel()
        cols = np.asarray(self.cols, dtype=np.int64).ravel()
        values = np.asarray(self.values, dtype=float).ravel()
        if not (rows.size == cols.size == values.size):
            raise InvalidInputError("rows, cols and values must have equal length")
        if rows.size == 0:
            raise InvalidInputError("observation set is empty")
        if not np.all(np.isfinite(values)):
            raise InvalidInputError("observed values must be finite")
        if rows.min() < 0 or cols.min() < 0:
            raise InvalidInputError("observation indices must be nonnegative")
        object.__setattr__(self, "rows", rows)
        object.__setattr__(self, "cols", cols)
        object.__setattr__(self, "values", values)

    @property
    def n(self):
        return self.values.size

    def __len__(self):
        return self.n

    def validate(self, ell, p):
        """Check indices against an ``ell x p`` grid and the duplicate rule."""
        if self.rows.max() >= ell or self.cols.max() >= p:
            bad = np.flatnonzero((self.rows >= ell) | (self.cols >= p))[0]
            raise InvalidInputError(
                f"observation ({self.rows[bad] + 1}, {self.cols[bad] + 1}) "
                f"outside the {ell}x{p} grid"
            )
        if not self.with_replacement:
            flat = self.rows * p + self.cols
            if np.unique(flat).size != flat.size:
                raise InvalidInputError(
                    "duplicate positions require with_replacement=True"
                )

    @classmethod
    def from_matrix(cls, Z, counts=None, with_replacement=False):
        """Build from a response matrix with NaN marking unobserved cells.

        ``counts`` optionally gives how many times each cell was drawn; cells
        with count ``k > 1`` are repeated ``k`` times (row-major order).
        """
        Z = np.asarray(Z, dtype=float)
        if counts is None:
            counts = (~np.isnan(Z)).astype(np.int64)
        counts = np.asarray(counts, dtype=np.int64)
        if counts.shape != Z.shape:
            raise InvalidInputError("counts must match the response shape")
        if np.any(np.isnan(Z) & (counts > 0)):
            raise InvalidInputError("a cell marked observed has a missing value")
        flat = np.repeat(np.arange(Z.size), counts.ravel())
        rows, cols = np.divmod(flat, Z.shape[1])
        return cls(rows, cols, Z.ravel()[flat], with_replacement=with_replacement)

    def counts(self, ell, p):
        """Number of times each grid cell was observed, as an ``ell x p`` array."""
        flat = self.rows * p + self.cols
        return np.bincount(flat, minlength=ell * p).reshape(ell, p)

    def to_matrix(self, ell, p):
        """Response matrix with NaN in unobserved cells (last duplicate wins)."""
        Z = np.full((ell, p), np.nan)
        Z[self.rows, self.cols] = self.values
        return Z


@dataclass
class RrrProblem:
    """Design matrix, observations and model constants.

    ``lam`` is the inverse temperature of the quasi-posterior, ``tau`` the
    prior scale and ``C`` the truncation level of predictions. ``sigma`` and
    ``xi`` are the noise moment constants, only read by :mod:`qbrrr.theory`.
    """

    X: np.ndarray
    obs: ObservationSet
    p: int
    lam: float
    tau: float = np.sqrt(10.0)
    C: float | None = None
    sigma: float = 1.0
    xi: float = 1.0
    _flat: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=float)
        if self.X.ndim != 2:
            raise InvalidInputError("X must be a 2-d matrix")
        if not np.all(np.isfinite(self.X)):
            raise InvalidInputError("X must be finite")
        if self.p < 1:
            raise InvalidInputError("p must be positive")
        if self.C is None:
            self.C = default_truncation(self.obs)
        # lam = 0 is accepted: the chain then targets the prior alone
        if not self.lam >= 0:
            raise InvalidInputError(f"lambda must be nonnegative, got {self.lam}")
        if not self.tau > 0:
            raise InvalidInputError(f"tau must be positive, got {self.tau}")
        if not self.C > 0:
            raise InvalidInputError(f"C must be positive, got {self.C}")
        self.obs.validate(self.ell, self.p)
        self._flat = self.obs.rows * self.p + self.obs.cols

    @property
    def ell(self):
        return self.X.shape[0]

    @property
    def m(self):
        return self.X.shape[1]

    @property
    def n(self):
        return self.obs.n

    def with_lambda(self, lam):
        """Copy of the problem with a different inverse temperature."""
        return RrrProblem(self.X, self.obs, self.p, lam, self.tau, self.C,
                          self.sigma, self.xi)


def default_truncation(obs):
    """Ten times the largest absolute observed value (never binds in practice)."""
    top = float(np.max(np.abs(obs.values)))
    return 10.0 * top if top > 0 else 1.0


def _check_coef(prob, M):
    M = np.asarray(M, dtype=float)
    if M.shape != (prob.m, prob.p):
        raise InvalidInputError(
            f"coefficient matrix has shape {M.shape}, expected {(prob.m, prob.p)}"
        )
    return M


def clamp_projection(A, C):
    """Entrywise clamp of ``A`` to ``[-C, C]``.

    This is the Frobenius-nearest matrix whose sup-norm is at most ``C``.
    """
    A = np.asarray(A, dtype=float)
    if not C > 0:
        raise InvalidInputError(f"C must be positive, got {C}")
    if not np.all(np.isfinite(A)):
        raise InvalidInputError("clamp_projection received non-finite entries")
    return np.clip(A, -C, C)


def observed_fitted(prob, M):
    """Unclamped ``(X M)`` at the observed positions."""
    return (prob.X @ M).ravel()[prob._flat]


def empirical_risk(prob, M):
    """Mean squared residual of the clamped predictions on observed entries."""
    M = _check_coef(prob, M)
    fitted = np.clip(observed_fitted(prob, M), -prob.C, prob.C)
    resid = prob.obs.values - fitted
    return float(resid @ resid) / prob.n


def data_log_density(prob, M):
    """Data term of the log quasi-posterior, ``-lam * empirical_risk``."""
    return -prob.lam * empirical_risk(prob, M)


def data_grad(prob, M):
    """Gradient of :func:`data_log_density` with respect to ``M`` (``m x p``).

    Observations whose unclamped prediction is not strictly inside
    ``(-C, C)`` contribute nothing.
    """
    M = _check_coef(prob, M)
    fitted = observed_fitted(prob, M)
    resid = np.where(np.abs(fitted) < prob.C, prob.obs.values - fitted, 0.0)
    return _scatter_grad(prob, resid)


def _scatter_grad(prob, resid):
    # sum_i G_i r_i = X^T R with R the ell x p scatter of residuals
    R = np.bincount(prob._flat, weights=resid, minlength=prob.ell * prob.p)
    return (2.0 * prob.lam / prob.n) * (prob.X.T @ R.reshape(prob.ell, prob.p))


def data_terms(prob, M):
    """``(data_log_density, data_grad)`` sharing one pass over the observations."""
    fitted = observed_fitted(prob, M)
    inside = np.abs(fitted) < prob.C
    resid_clamped = prob.obs.values - np.clip(fitted, -prob.C, prob.C)
    logdens = -prob.lam * float(resid_clamped @ resid_clamped) / prob.n
    # inside the box the clamped and raw residuals coincide
    grad = _scatter_grad(prob, np.where(inside, resid_clamped, 0.0))
    return logdens, grad


def weighted_frobenius_sq(A, weights):
    """Squared Frobenius norm with entry weights from a probability table."""
    A = np.asarray(A, dtype=float)
    weights = np.asarray(weights, dtype=float)
    if A.shape != weights.shape:
        raise InvalidInputError("weights must have the same shape as A")
    if np.any(weights < 0):
        raise InvalidInputError("weights must be nonnegative")
    if abs(weights.sum() - 1.0) > 1e-9:
        raise InvalidInputError(f"weights sum to {weights.sum()}, expected 1")
    return float(np.sum(weights * A * A))


def center_columns(obs, p):
    """Subtract each response column's observed mean.

    Returns ``(centered, offsets)`` where ``offsets`` has length ``p``;
    columns without observations get offset 0.
    """
    sums = np.bincount(obs.cols, weights=obs.values, minlength=p)
    counts = np.bincount(obs.cols, minlength=p)
    offsets = np.divide(sums, counts, out=np.zeros(p), where=counts > 0)
    centered = ObservationSet(obs.rows, obs.cols, obs.values - offsets[obs.cols],
                              with_replacement=obs.with_replacement)
    return centered, offsets
