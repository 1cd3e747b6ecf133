"""Per-antenna energy detection of the visibility region.

Closed-form error probabilities of the threshold test, the distribution of
detection outcomes (number of correctly / falsely detected antennas), and
two heuristic threshold calibrators.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import binom

from .util import complex_normal

__all__ = [
    "DetectorParams",
    "ErrorProbs",
    "OutcomeDistribution",
    "p_false",
    "p_miss",
    "error_probs",
    "detect",
    "outcome_pmfs",
    "outcome_distribution",
    "threshold_min_sum",
    "threshold_equal_error",
    "mc_error_rates",
]


@dataclass(frozen=True)
class DetectorParams:
    """Operating point of the energy detector.

    zeta0: energy threshold (linear units), tau: pilot length in symbols,
    sigma2_tr: uplink noise power, g: compensated pilot-power/gain product.
    """

    zeta0: float
    tau: int
    sigma2_tr: float
    g: float

    def __post_init__(self):
        if not (self.zeta0 >= 0.0 and math.isfinite(self.zeta0)):
            raise ValueError(f"zeta0 must be >= 0, got {self.zeta0}")
        if self.tau < 1 or int(self.tau) != self.tau:
            raise ValueError(f"tau must be a positive integer, got {self.tau}")
        if not self.sigma2_tr > 0.0:
            raise ValueError(f"sigma2_tr must be positive, got {self.sigma2_tr}")
        if not self.g > 0.0:
            raise ValueError(f"g must be positive, got {self.g}")


@dataclass(frozen=True)
class ErrorProbs:
    """False-detection (p10) and missed-detection (p01) probabilities."""

    p10: float
    p01: float

    def __post_init__(self):
        for name in ("p10", "p01"):
            v = getattr(self, name)
            if not (0.0 <= v <= 1.0):
                raise ValueError(f"{name} must lie in [0, 1], got {v}")


def p_false(params: DetectorParams) -> float:
    """Probability of declaring an out-of-region antenna visible."""
    return math.exp(-params.zeta0 / (params.tau * params.sigma2_tr))


def p_miss(params: DetectorParams) -> float:
    """Probability of declaring an in-region antenna invisible."""
    tau = params.tau
    return 1.0 - math.exp(-params.zeta0 / (tau * tau * params.g + tau * params.sigma2_tr))


def error_probs(params: DetectorParams) -> ErrorProbs:
    return ErrorProbs(p10=p_false(params), p01=p_miss(params))


def detect(observed_column: np.ndarray, zeta0: float) -> np.ndarray:
    """Indices whose correlated-observation energy strictly exceeds zeta0."""
    energy = np.abs(np.asarray(observed_column)) ** 2
    return np.flatnonzero(energy > zeta0)


@dataclass(frozen=True)
class OutcomeDistribution:
    """Joint law of (I, J): correctly and falsely detected antenna counts.

    grid[i, j] is the probability of detecting exactly i of the L true
    antennas and j of the M - L others; shape (L+1, M-L+1).
    """

    grid: np.ndarray

    def __post_init__(self):
        g = np.asarray(self.grid, dtype=float)
        if g.ndim != 2:
            raise ValueError("grid must be 2-D")
        if np.any(g < -1e-15) or np.any(g > 1.0 + 1e-12):
            raise ValueError("grid entries must be probabilities in [0, 1]")
        total = float(g.sum())
        if abs(total - 1.0) > 1e-12:
            raise ValueError(f"grid must sum to 1 within 1e-12, got {total}")
        object.__setattr__(self, "grid", g)

    @property
    def n_true(self) -> int:
        return self.grid.shape[0] - 1

    @property
    def n_antennas(self) -> int:
        return self.grid.shape[0] - 1 + self.grid.shape[1] - 1

    def marginal_correct(self) -> np.ndarray:
        return self.grid.sum(axis=1)

    def marginal_false(self) -> np.ndarray:
        return self.grid.sum(axis=0)

    @classmethod
    def point_mass(cls, i: int, j: int, l: int, m: int) -> "OutcomeDistribution":
        grid = np.zeros((l + 1, m - l + 1))
        grid[i, j] = 1.0
        return cls(grid)


def outcome_pmfs(p: ErrorProbs, l: int, m: int):
    """Marginal laws of I ~ Bin(L, 1-p01) and J ~ Bin(M-L, p10)."""
    if l > m:
        raise ValueError(f"need L <= M, got L={l}, M={m}")
    pmf_i = binom.pmf(np.arange(l + 1), l, 1.0 - p.p01)
    pmf_j = binom.pmf(np.arange(m - l + 1), m - l, p.p10)
    return pmf_i, pmf_j


def outcome_distribution(p: ErrorProbs, l: int, m: int) -> OutcomeDistribution:
    """Full (L+1) x (M-L+1) outcome grid; I and J are independent binomials."""
    pmf_i, pmf_j = outcome_pmfs(p, l, m)
    return OutcomeDistribution(np.outer(pmf_i, pmf_j))


def threshold_min_sum(tau: int, sigma2_tr: float, g: float) -> float:
    """Threshold minimizing p10 + p01 (closed form)."""
    s2 = float(sigma2_tr)
    return s2 * (tau * g + s2) / g * math.log((s2 + tau * g) / s2)


def threshold_equal_error(tau: int, sigma2_tr: float, g: float, tol: float = 1e-12) -> float:
    """Threshold equalizing the two error probabilities.

    h(z) = p10(z) - p01(z) is continuous and strictly decreasing with
    h(0) = 1 and h(inf) = -1, so bisection always converges.
    """

    def h(z):
        params = DetectorParams(zeta0=z, tau=tau, sigma2_tr=sigma2_tr, g=g)
        return p_false(params) - p_miss(params)

    hi = tau * sigma2_tr
    while h(hi) > 0.0:
        hi *= 2.0
    lo = 0.0
    z = 0.5 * hi
    for _ in range(400):
        z = 0.5 * (lo + hi)
        val = h(z)
        if abs(val) <= tol:
            break
        if val > 0.0:
            lo = z
        else:
            hi = z
        if (hi - lo) <= 1e-18 * hi:  # double-precision floor
            break
    return z


def mc_error_rates(params: DetectorParams, n_trials: int, rng) -> ErrorProbs:
    """Empirical detector error frequencies over synthetic observations."""
    tau, s2, g = params.tau, params.sigma2_tr, params.g
    y_out = complex_normal(rng, n_trials, tau * s2)
    y_in = complex_normal(rng, n_trials, tau * tau * g + tau * s2)
    p10_hat = np.count_nonzero(np.abs(y_out) ** 2 > params.zeta0) / n_trials
    p01_hat = np.count_nonzero(np.abs(y_in) ** 2 <= params.zeta0) / n_trials
    return ErrorProbs(p10=p10_hat, p01=p01_hat)
