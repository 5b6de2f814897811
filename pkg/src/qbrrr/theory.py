"""Constants and right-hand side of the oracle inequality for the posterior mean.

With ``C1 = 8 (sigma^2 + C^2)`` and ``C2 = 64 C max(xi, C)``, the squared
``Pi``-weighted error of the truncated posterior mean is bounded, with
probability ``1 - epsilon``, by

    (1 + delta) ||X Mbar - X M*||^2
      + C1 (1 + delta)^2 / delta * [4 r (m + p + 2) log(1 + |X|_F |Mbar|_F / sqrt(C1)
                                       * sqrt(n m p / (r (m + p))))
                                    + (m + p) + 2 log(2 / epsilon)] / n

for every ``Mbar`` of rank at most ``r``, when ``tau = tau*`` and
``lambda = lambda*``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

from .errors import InvalidInputError


@dataclass(frozen=True)
class BoundInputs:
    sigma: float
    xi: float
    C: float
    n: int
    m: int
    p: int
    X_frob: float
    Mbar_frob: float
    r: int
    delta: float = 1.0
    epsilon: float = 0.05

    def __post_init__(self):
        for name in ("sigma", "xi", "C", "delta"):
            if not getattr(self, name) > 0:
                raise InvalidInputError(f"{name} must be positive")
        if min(self.n, self.m, self.p) < 1:
            raise InvalidInputError("n, m and p must be positive")
        if not 0 < self.epsilon < 1:
            raise InvalidInputError("epsilon must lie in (0, 1)")
        if self.X_frob < 0 or self.Mbar_frob < 0:
            raise InvalidInputError("norms must be nonnegative")
        if not 0 <= self.r <= min(self.m, self.p):
            raise InvalidInputError(f"rank budget {self.r} outside [0, min(m, p)]")


@dataclass(frozen=True)
class TheoryConstants:
    C1: float
    C2: float
    tau_star: float
    lambda_star: float


def constants(inputs):
    """``C1``, ``C2``, the prior scale ``tau*`` and inverse temperature ``lambda*``."""
    if inputs.X_frob == 0:
        raise InvalidInputError("tau* is undefined when ||X||_F = 0")
    C1 = 8.0 * (inputs.sigma ** 2 + inputs.C ** 2)
    C2 = 64.0 * inputs.C * max(inputs.xi, inputs.C)
    n, m, p = inputs.n, inputs.m, inputs.p
    tau_star = math.sqrt(C1 * (m + p) / (n * m * p * inputs.X_frob ** 2))
    d = inputs.delta
    lambda_star = n * min(1.0 / (2.0 * C2), d / (C1 * (1.0 + d)))
    return TheoryConstants(C1, C2, tau_star, lambda_star)


def complexity_term(inputs, consts):
    """Rank-dependent remainder (everything except the approximation error)."""
    n, m, p, r = inputs.n, inputs.m, inputs.p, inputs.r
    C1, d = consts.C1, inputs.delta
    if r == 0:
        if inputs.Mbar_frob > 0:
            raise InvalidInputError("a rank-0 reference matrix must be zero")
        log_term = 0.0  # 0 * log(1 + 0/0) read as 0
    else:
        ratio = inputs.X_frob * inputs.Mbar_frob / math.sqrt(C1)
        log_term = 4.0 * r * (m + p + 2) * math.log1p(
            ratio * math.sqrt(n * m * p / (r * (m + p))))
    bracket = log_term + (m + p) + 2.0 * math.log(2.0 / inputs.epsilon)
    return C1 * (1.0 + d) ** 2 / d * bracket / n


def oracle_bound_rhs(inputs, consts, approx_err=0.0):
    """Bound on the weighted squared error for one reference matrix.

    ``approx_err`` is ``||X Mbar - X M*||^2`` in the weighted norm; it is
    zero when the reference is the truth itself.
    """
    if approx_err < 0:
        raise InvalidInputError("approx_err must be nonnegative")
    return (1.0 + inputs.delta) * approx_err + complexity_term(inputs, consts)


def best_over_delta(inputs, approx_err=0.0, deltas=None):
    """Smallest bound over a grid of ``delta`` values (includes ``delta = 1``)."""
    if deltas is None:
        deltas = [10 ** (k / 10) for k in range(-20, 21)]
    best = math.inf
    for d in set(deltas) | {1.0}:
        b_in = replace(inputs, delta=d)
        best = min(best, oracle_bound_rhs(b_in, constants(b_in), approx_err))
    return best
