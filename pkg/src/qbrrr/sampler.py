"""Langevin samplers for the quasi-posterior of a coefficient matrix.

Two chains are available: unadjusted Langevin Monte Carlo (LMC) and its
Metropolis-adjusted variant (MALA). Both move along the gradient of the log
quasi-posterior ``-lam * r(M) + log prior(M)``. :func:`run_chain` averages the
clamped fitted surface over the post-burn-in iterates and keeps thinned
samples of ``X M`` for entrywise credible intervals.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import rng as rngmod
from .errors import (DivergenceError, InvalidInputError, NumericalError,
                     TuningError)
from .model import data_grad, data_log_density, data_terms
from .prior import (PriorConfig, grad_log_prior, grad_log_prior_ridge,
                    log_prior_unnorm, prior_terms)

log = logging.getLogger(__name__)

ALGORITHMS = ("lmc", "mala")


def default_alpha_grid():
    return tuple(np.round(np.arange(0.5, 2.0 + 1e-9, 0.05), 2))


@dataclass(frozen=True)
class SamplerConfig:
    """Chain settings.

    The step size is resolved in this order: ``step_size`` if given, else
    ``(p m) ** -alpha`` if ``alpha`` is given, else a pilot search over
    ``alpha_grid`` (see :func:`tune_step_size`).
    """

    algorithm: str = "mala"
    iterations: int = 5000
    burn_in: int = 2000
    step_size: float | None = None
    alpha: float | None = None
    alpha_grid: tuple = field(default_factory=default_alpha_grid)
    pilot_steps: int = 500
    target_acceptance: tuple = (0.4, 0.6)
    quantile_levels: tuple = (0.025, 0.975)
    thin: int = 5
    max_quantile_samples: int | None = None
    seed: int = 0
    max_consecutive_rejections: int = 10_000
    divergence_threshold: float = 1e8

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise InvalidInputError(f"unknown algorithm {self.algorithm!r}")
        if self.iterations < 1:
            raise InvalidInputError("iterations must be positive")
        if not 0 <= self.burn_in < self.iterations:
            raise InvalidInputError("burn_in must satisfy 0 <= burn_in < iterations")
        if self.step_size is not None and not self.step_size > 0:
            raise InvalidInputError("step_size must be positive")
        lo, hi = self.target_acceptance
        if not 0 < lo <= hi < 1:
            raise InvalidInputError("target_acceptance must lie inside (0, 1)")
        if any(not 0 <= q <= 1 for q in self.quantile_levels):
            raise InvalidInputError("quantile levels must lie in [0, 1]")
        if self.thin < 1:
            raise InvalidInputError("thin must be at least 1")
        if len(self.alpha_grid) == 0:
            raise InvalidInputError("alpha_grid is empty")


class Target:
    """Log quasi-posterior of a problem under the Student prior."""

    def __init__(self, prob, prior=None):
        self.prob = prob
        self.prior = prior if prior is not None else PriorConfig.for_problem(prob)

    @property
    def shape(self):
        return (self.prob.m, self.prob.p)

    def evaluate(self, M):
        """Return ``(log density, gradient)`` at ``M``."""
        data_ld, data_g = data_terms(self.prob, M)
        prior_ld, prior_g = prior_terms(self.prior, M)
        return data_ld + prior_ld, data_g + prior_g

    def state(self, M, iteration=0):
        M = np.array(M, dtype=float)
        logdens, grad = self.evaluate(M)
        return ChainState(M, grad, logdens, iteration)


@dataclass
class ChainState:
    """Current iterate with its cached log density and gradient."""

    M: np.ndarray
    grad: np.ndarray
    logdens: float
    iteration: int = 0
    accepted: int = 0
    consecutive_rejections: int = 0


@dataclass
class PosteriorSummary:
    """Post-burn-in averages and entrywise quantiles of ``X M``.

    Attributes:
        mean_fitted: average of the clamped surfaces ``Pi_C(X M_k)``.
        mean_coef: average of the coefficient iterates ``M_k``.
        quantiles: quantile level -> ``ell x p`` array of quantiles of ``(X M)``.
        acceptance_rate: accepted fraction over all iterations (1.0 for LMC).
        n_samples: number of averaged iterates.
        step_size: step size the chain ran with.
    """

    mean_fitted: np.ndarray
    mean_coef: np.ndarray
    quantiles: dict
    acceptance_rate: float
    n_samples: int
    step_size: float
    algorithm: str = "mala"

    @property
    def lower(self):
        return self.quantiles[min(self.quantiles)]

    @property
    def upper(self):
        return self.quantiles[max(self.quantiles)]


def log_posterior(prob, prior, M):
    """Unnormalized log quasi-posterior at ``M``."""
    return data_log_density(prob, M) + log_prior_unnorm(prior, M)


def grad_log_posterior(prob, prior, M):
    """Gradient of :func:`log_posterior`."""
    if prior.solver == "ridge":
        return data_grad(prob, M) + grad_log_prior_ridge(prior, M, prior.tol)
    return data_grad(prob, M) + grad_log_prior(prior, M)


def _check_h(h):
    if not h > 0:
        raise InvalidInputError(f"step size must be positive, got {h}")


def lmc_step(target, state, h, rng, noise=None, threshold=1e8):
    """One unadjusted Langevin move ``M + h grad + sqrt(2h) W``.

    ``noise`` replaces the Gaussian draw ``W`` when given (test hook).
    """
    _check_h(h)
    W = rng.standard_normal(state.M.shape) if noise is None else noise
    M_new = state.M + h * state.grad + math.sqrt(2.0 * h) * W
    it = state.iteration + 1
    sup = float(np.max(np.abs(M_new))) if np.all(np.isfinite(M_new)) else math.inf
    if sup > threshold:
        raise DivergenceError(
            f"LMC iterate diverged at iteration {it} (|M|_max = {sup:.3g}); "
            "halve h and restart",
            it, sup,
        )
    logdens, grad = target.evaluate(M_new)
    return ChainState(M_new, grad, logdens, it, state.accepted + 1, 0)


def mala_step(target, state, h, rng, noise=None, uniform=None,
              max_consecutive_rejections=10_000):
    """One Metropolis-adjusted Langevin move.

    The proposal is the LMC move; it is kept with probability
    ``min(1, rho(M')q(M|M') / (rho(M)q(M'|M)))`` where
    ``log q(x'|x) = -||x' - x - h grad(x)||^2 / (4h)``. Non-finite proposals
    are rejected; too many rejections in a row raise :class:`DivergenceError`.
    """
    _check_h(h)
    W = rng.standard_normal(state.M.shape) if noise is None else noise
    u = rng.random() if uniform is None else uniform
    it = state.iteration + 1
    proposal = state.M + h * state.grad + math.sqrt(2.0 * h) * W
    log_accept = -math.inf
    if np.all(np.isfinite(proposal)):
        try:
            ld_prop, g_prop = target.evaluate(proposal)
        except NumericalError:
            ld_prop = -math.inf
        if math.isfinite(ld_prop) and np.all(np.isfinite(g_prop)):
            back = state.M - proposal - h * g_prop
            log_q_back = -float(np.sum(back * back)) / (4.0 * h)
            # forward residual is exactly sqrt(2h) W
            log_q_fwd = -float(np.sum(W * W)) / 2.0
            log_accept = ld_prop - state.logdens + log_q_back - log_q_fwd
    if log_accept >= 0.0 or u < math.exp(log_accept):
        return ChainState(proposal, g_prop, ld_prop, it, state.accepted + 1, 0)
    rejections = state.consecutive_rejections + 1
    if rejections >= max_consecutive_rejections:
        sup = float(np.max(np.abs(state.M)))
        raise DivergenceError(
            f"MALA rejected {rejections} consecutive proposals at iteration {it}; "
            "halve h and restart",
            it, sup,
        )
    return ChainState(state.M, state.grad, state.logdens, it, state.accepted,
                      rejections)


def _step_fn(cfg):
    if cfg.algorithm == "lmc":
        return lambda target, st, h, rng: lmc_step(
            target, st, h, rng, threshold=cfg.divergence_threshold)
    return lambda target, st, h, rng: mala_step(
        target, st, h, rng,
        max_consecutive_rejections=cfg.max_consecutive_rejections)


def _initial(target, M0):
    if M0 is None:
        return np.zeros(target.shape)
    M0 = np.asarray(M0, dtype=float)
    if M0.shape != target.shape:
        raise InvalidInputError(f"M0 has shape {M0.shape}, expected {target.shape}")
    if not np.all(np.isfinite(M0)):
        raise InvalidInputError("M0 must be finite")
    return M0


def pilot_acceptance(target, h, steps, rng, M0=None, cfg=None):
    """MALA acceptance fraction over a short chain, or ``None`` if it diverges."""
    cfg = cfg or SamplerConfig()
    state = target.state(_initial(target, M0))
    try:
        for _ in range(steps):
            state = mala_step(target, state, h, rng,
                              max_consecutive_rejections=cfg.max_consecutive_rejections)
            if np.max(np.abs(state.M)) > cfg.divergence_threshold:
                return None
    except DivergenceError:
        return None
    return state.accepted / steps


@dataclass(frozen=True)
class StepTuning:
    """Outcome of the pilot search over ``h = (p m) ** -alpha``."""

    step_size: float
    alpha: float
    acceptance: float
    in_window: bool
    pilots: tuple = ()


def tune_step_size(prob, prior, cfg, rng, M0=None):
    """Pick ``h = (p m) ** -alpha`` from ``cfg.alpha_grid`` by pilot MALA runs.

    Among grid points whose pilot acceptance falls inside
    ``cfg.target_acceptance`` the one closest to 0.5 wins. If none lands
    inside, the closest-to-0.5 point is returned with ``in_window=False``.
    A single-point grid is returned without running pilots.
    """
    pm = prob.p * prob.m
    grid = tuple(float(a) for a in cfg.alpha_grid)
    if len(grid) == 1:
        return StepTuning(pm ** -grid[0], grid[0], math.nan, True)
    target = Target(prob, prior)
    lo, hi = cfg.target_acceptance
    pilots = []
    for alpha, child in zip(grid, rng.spawn(len(grid))):
        acc = pilot_acceptance(target, pm ** -alpha, cfg.pilot_steps, child, M0, cfg)
        pilots.append((alpha, acc))
    finite = [(a, acc) for a, acc in pilots if acc is not None]
    if not finite:
        raise TuningError("every pilot chain diverged; widen the alpha grid upwards")
    inside = [(a, acc) for a, acc in finite if lo <= acc <= hi]
    pool = inside or finite
    alpha, acc = min(pool, key=lambda t: (abs(t[1] - 0.5), t[0]))
    if not inside:
        log.warning("no pilot acceptance inside [%.2f, %.2f]; using alpha=%.2f "
                    "with acceptance %.3f", lo, hi, alpha, acc)
    return StepTuning(pm ** -alpha, alpha, acc, bool(inside), tuple(pilots))


def resolve_step_size(prob, prior, cfg, M0=None, keys=()):
    """Step size and tuning record implied by ``cfg``.

    Pilot chains draw from the stream ``(cfg.seed, *keys, TUNE)``.
    """
    if cfg.step_size is not None:
        return cfg.step_size, None
    if cfg.alpha is not None:
        return (prob.p * prob.m) ** -cfg.alpha, None
    tuning = tune_step_size(prob, prior, cfg,
                            rngmod.stream(cfg.seed, *keys, rngmod.TUNE), M0)
    return tuning.step_size, tuning


def run_chain(prob, prior, cfg, M0=None, h=None, rng=None):
    """Run the configured sampler and summarize the post-burn-in iterates.

    ``h`` overrides the step-size resolution of ``cfg``; ``rng`` overrides the
    chain stream derived from ``cfg.seed``. Iterates ``k = burn_in+1 .. T`` are
    averaged; every ``thin``-th of them is kept for quantiles.
    """
    if prior is None:
        prior = PriorConfig.for_problem(prob)
    target = Target(prob, prior)
    M = _initial(target, M0)
    if h is None:
        h, _ = resolve_step_size(prob, prior, cfg, M)
    _check_h(h)
    if rng is None:
        rng = rngmod.stream(cfg.seed, rngmod.CHAIN)

    n_post = cfg.iterations - cfg.burn_in
    thin = cfg.thin
    if cfg.max_quantile_samples:
        thin = max(thin, math.ceil(n_post / cfg.max_quantile_samples))
    n_keep = (n_post - 1) // thin + 1
    X, C = prob.X, prob.C
    kept = np.empty((n_keep, prob.ell, prob.p))
    sum_fitted = np.zeros((prob.ell, prob.p))
    sum_coef = np.zeros_like(M)

    step = _step_fn(cfg)
    state = target.state(M)
    for k in range(1, cfg.iterations + 1):
        state = step(target, state, h, rng)
        j = k - cfg.burn_in - 1
        if j < 0:
            continue
        XM = X @ state.M
        sum_fitted += np.clip(XM, -C, C)
        sum_coef += state.M
        if j % thin == 0:
            kept[j // thin] = XM

    levels = tuple(sorted(set(float(q) for q in cfg.quantile_levels)))
    quantiles = {}
    if levels:
        qs = np.quantile(kept, levels, axis=0)
        quantiles = {q: qs[i] for i, q in enumerate(levels)}
    rate = state.accepted / cfg.iterations if cfg.algorithm == "mala" else 1.0
    return PosteriorSummary(
        mean_fitted=sum_fitted / n_post,
        mean_coef=sum_coef / n_post,
        quantiles=quantiles,
        acceptance_rate=rate,
        n_samples=n_post,
        step_size=h,
        algorithm=cfg.algorithm,
    )


def run_chain_with_restarts(prob, prior, cfg, M0=None, h=None, keys=(),
                            max_restarts=5):
    """:func:`run_chain`, halving ``h`` and restarting after a divergence.

    Attempt ``k`` draws from the stream ``(cfg.seed, *keys, CHAIN, k)``
    (``k = 0`` drops the trailing key), so outcomes stay seed-deterministic.
    Returns ``(summary, restarts)``.
    """
    if prior is None:
        prior = PriorConfig.for_problem(prob)
    if h is None:
        h, _ = resolve_step_size(prob, prior, cfg, M0, keys)
    for restart in range(max_restarts + 1):
        extra = (restart,) if restart else ()
        rng = rngmod.stream(cfg.seed, *keys, rngmod.CHAIN, *extra)
        try:
            return run_chain(prob, prior, cfg, M0, h, rng), restart
        except DivergenceError as exc:
            if restart == max_restarts:
                raise
            log.info("chain diverged at iteration %d with h=%.3g; retrying with h/2",
                     exc.iteration, h)
            h = h / 2.0
    raise AssertionError("unreachable")
