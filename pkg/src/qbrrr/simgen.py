"""Synthetic reduced-rank data with a partially observed response.

Four presets are provided:

* ``I``: ``ell=100, p=8, m=12``, rank-2 coefficients, Gaussian noise;
* ``II``: as I with ``ell=500, p=40, m=40``;
* ``III``: as I but coefficients ``2 * low_rank + small Gaussian perturbation``;
* ``IV``: as I with Student-t (3 d.o.f.) noise.

The design rows are ``N(0, Sigma)`` with unit variances and common
correlation ``rho_x``; the full response is ``1 + X M* + E``.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, replace

import numpy as np

from .errors import InvalidInputError
from .model import ObservationSet

SETTINGS = ("I", "II", "III", "IV")
NOISES = ("gaussian_unit", "student_t3", "none")

_PRESETS = {
    "I": dict(ell=100, m=12, p=8, r=2, noise="gaussian_unit"),
    "II": dict(ell=500, m=40, p=40, r=2, noise="gaussian_unit"),
    "III": dict(ell=100, m=12, p=8, r=2, noise="gaussian_unit"),
    "IV": dict(ell=100, m=12, p=8, r=2, noise="student_t3"),
}


@dataclass(frozen=True)
class SettingSpec:
    setting: str = "I"
    ell: int = 100
    m: int = 12
    p: int = 8
    r: int = 2
    rho_x: float = 0.0
    missing_rate: float = 0.2
    with_replacement: bool = False
    intercept: str = "ones"
    noise: str = "gaussian_unit"
    approx_lowrank_sd: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.setting not in SETTINGS:
            raise InvalidInputError(f"unknown setting {self.setting!r}")
        if min(self.ell, self.m, self.p, self.r) < 1:
            raise InvalidInputError("dimensions and rank must be positive")
        if self.r > min(self.m, self.p):
            raise InvalidInputError(f"rank {self.r} exceeds min(m, p)")
        if not 0 <= self.rho_x < 1:
            raise InvalidInputError("rho_x must lie in [0, 1)")
        if not 0 < self.missing_rate < 1:
            raise InvalidInputError("missing_rate must lie in (0, 1)")
        if self.intercept not in ("ones", "none"):
            raise InvalidInputError(f"unknown intercept {self.intercept!r}")
        if self.noise not in NOISES:
            raise InvalidInputError(f"unknown noise {self.noise!r}")
        if self.approx_lowrank_sd < 0:
            raise InvalidInputError("approx_lowrank_sd must be nonnegative")

    @classmethod
    def preset(cls, setting, **overrides):
        """Standard dimensions for a setting, with field overrides."""
        if setting not in _PRESETS:
            raise InvalidInputError(f"unknown setting {setting!r}")
        return cls(setting=setting, **{**_PRESETS[setting], **overrides})

    def replace(self, **changes):
        return replace(self, **changes)

    def to_dict(self):
        return asdict(self)

    @property
    def n_observed(self):
        return int(round((1.0 - self.missing_rate) * self.ell * self.p))


@dataclass
class SyntheticDataset:
    """One simulated instance.

    ``heldout`` is a boolean ``ell x p`` mask of cells never observed.
    """

    X: np.ndarray
    M_star: np.ndarray
    Z_full: np.ndarray
    obs: ObservationSet
    heldout: np.ndarray
    spec: SettingSpec | None = None

    @property
    def Z_observed(self):
        """Response with NaN in unobserved cells."""
        return self.obs.to_matrix(*self.Z_full.shape)


def gen_design(spec, rng):
    """``ell x m`` design with equicorrelated Gaussian rows."""
    rho, m = spec.rho_x, spec.m
    if not 0 <= rho < 1:
        raise InvalidInputError("rho_x must lie in [0, 1)")
    # Sigma^(1/2) = a I + b 11^T; eigenvalues 1-rho (x m-1) and 1-rho+m rho
    a = np.sqrt(1.0 - rho)
    b = (np.sqrt(1.0 - rho + m * rho) - a) / m
    G = rng.standard_normal((spec.ell, m))
    return a * G + b * G.sum(axis=1, keepdims=True)


def gen_coef(spec, rng):
    """``m x p`` coefficient matrix of rank ``r`` (approximately, for III)."""
    Q, _ = np.linalg.qr(rng.standard_normal((spec.p, spec.r)))
    factor = rng.standard_normal((spec.m, spec.r))
    M = factor @ Q.T
    if spec.setting == "III":
        M = 2.0 * M + spec.approx_lowrank_sd * rng.standard_normal(M.shape)
    return M


def gen_noise(spec, shape, rng):
    if spec.noise == "gaussian_unit":
        return rng.standard_normal(shape)
    if spec.noise == "student_t3":
        return rng.standard_t(3, size=shape)
    return np.zeros(shape)


def gen_response(spec, X, M_star, rng):
    """Full response ``intercept + X M* + E``."""
    if X.shape[1] != M_star.shape[0]:
        raise InvalidInputError("X and M_star are not conformable")
    Z = X @ M_star + gen_noise(spec, (X.shape[0], M_star.shape[1]), rng)
    if spec.intercept == "ones":
        Z += 1.0
    return Z


def gen_mask(spec, rng):
    """Observed positions and the never-observed mask.

    Without replacement a uniform subset of ``round((1 - missing_rate) ell p)``
    cells is observed; with replacement that many i.i.d. uniform draws are
    made. Returns ``(rows, cols, heldout)`` with positions sorted row-major.
    """
    size = spec.ell * spec.p
    n = spec.n_observed
    if n < 1:
        raise InvalidInputError("missing rate leaves no observed entries")
    if spec.with_replacement:
        flat = np.sort(rng.integers(0, size, size=n))
    else:
        flat = np.sort(rng.choice(size, size=n, replace=False))
    heldout = np.ones(size, dtype=bool)
    heldout[flat] = False
    rows, cols = np.divmod(flat, spec.p)
    return rows, cols, heldout.reshape(spec.ell, spec.p)


def simulate(spec, rng=None):
    """Draw a full :class:`SyntheticDataset` (design, truth, response, mask)."""
    if rng is None:
        rng = np.random.default_rng(spec.seed)
    X = gen_design(spec, rng)
    M_star = gen_coef(spec, rng)
    Z = gen_response(spec, X, M_star, rng)
    rows, cols, heldout = gen_mask(spec, rng)
    obs = ObservationSet(rows, cols, Z[rows, cols],
                         with_replacement=spec.with_replacement)
    return SyntheticDataset(X, M_star, Z, obs, heldout, spec)
