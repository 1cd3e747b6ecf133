"""Circuit power and deterministic average energy efficiency.

The average EE sums rate-per-watt over the detection-outcome grid weighted
by the outcome probabilities. The grid concentrates sharply, so the sum is
truncated by descending probability once the retained mass reaches
1 - 1e-9; an exhaustive flag forces the full sum for validation runs.
Rates are natural-log based throughout; conversion to bits happens at the
CLI boundary.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import detequiv
from .scenario import SystemConfig
from .vr_detect import DetectorParams, OutcomeDistribution, error_probs, outcome_pmfs

__all__ = ["EEReport", "p_cir", "ee_tdd_bar", "ee_fdd_bar", "ee_static_vr"]

_MASS_TARGET = 1.0 - 1e-9


def p_cir(active_antennas: int, config: SystemConfig) -> float:
    """Total consumed downlink power with the given number of active chains."""
    if not (0 <= active_antennas <= config.M):
        raise ValueError(f"active antenna count must lie in [0, M], got {active_antennas}")
    c = config.circuit
    return (config.M * config.P_T / c.varsigma + 2.0 * c.P_syn
            + active_antennas * c.P_CT + config.K * c.P_CR)


@dataclass(frozen=True)
class EEReport:
    """Deterministic average EE (nats/joule) with its outcome breakdown.

    breakdown rows are (i, j, probability, sum_rate, p_cir) sorted by
    probability descending; retained_mass is their total probability and
    truncation_bound caps the absolute EE contribution of discarded cells.
    """

    ee: float
    zeta0: float
    tau: int
    duplex: str
    breakdown: tuple
    retained_mass: float
    truncation_bound: float
    b: int | None = None

    def __post_init__(self):
        if self.retained_mass < _MASS_TARGET - 1e-15:
            raise ValueError(
                f"retained probability mass {self.retained_mass} below target")


def _select_cells(prob_grid: np.ndarray, exhaustive: bool):
    """Cells ordered by probability descending until the mass target is met."""
    flat = prob_grid.ravel()
    order = np.argsort(-flat, kind="stable")
    if exhaustive:
        keep = order[flat[order] > 0.0]
    else:
        csum = np.cumsum(flat[order])
        stop = int(np.searchsorted(csum, _MASS_TARGET)) + 1
        keep = order[:stop]
        keep = keep[flat[keep] > 0.0]
    ii, jj = np.unravel_index(keep, prob_grid.shape)
    return ii, jj, flat[keep]


def _assemble(config: SystemConfig, prob_grid: np.ndarray, zeta0: float, tau: int,
              duplex: str, b: int | None, exhaustive: bool) -> EEReport:
    ii, jj, probs = _select_cells(prob_grid, exhaustive)

    rates = np.zeros(len(ii))
    live = ii > 0  # cells without a correctly detected antenna carry zero rate
    if np.any(live):
        cells = list(zip(ii[live], jj[live]))
        if duplex == "tdd":
            rates[live] = detequiv.sum_rate_cells(config, cells, "tdd", tau=tau)
        else:
            rates[live] = detequiv.sum_rate_cells(config, cells, "fdd", b=b)

    pcir = np.array([p_cir(int(i + j), config) for i, j in zip(ii, jj)])
    if duplex == "tdd":
        weights = np.full(len(ii), (config.T - tau) / config.T)
    else:
        weights = np.maximum(config.T - tau - (ii + jj), 0) / config.T

    ee = float(config.W * np.sum(weights * probs * rates / pcir))
    retained = float(probs.sum())
    max_rate = float(rates.max(initial=0.0))
    min_pcir = p_cir(0, config)
    bound = config.W * max(1.0 - retained, 0.0) * max_rate / min_pcir

    order = np.argsort(-probs, kind="stable")
    breakdown = tuple(
        (int(ii[o]), int(jj[o]), float(probs[o]), float(rates[o]), float(pcir[o]))
        for o in order
    )
    return EEReport(ee=ee, zeta0=float(zeta0), tau=int(tau), duplex=duplex,
                    breakdown=breakdown, retained_mass=retained,
                    truncation_bound=float(bound), b=b)


def _check_tau(config, tau):
    if not (config.K <= tau <= config.T):
        raise ValueError(f"tau must lie in [K, T] = [{config.K}, {config.T}], got {tau}")


def _probs_grid(config, zeta0, tau) -> np.ndarray:
    params = DetectorParams(zeta0=zeta0, tau=tau, sigma2_tr=config.sigma2_tr, g=config.g)
    pmf_i, pmf_j = outcome_pmfs(error_probs(params), config.L, config.M)
    return np.outer(pmf_i, pmf_j)


def ee_tdd_bar(config: SystemConfig, zeta0: float, tau: int,
               exhaustive: bool = False) -> EEReport:
    """Deterministic TDD average EE at detection threshold zeta0, pilot length tau."""
    _check_tau(config, tau)
    if zeta0 < 0.0:
        raise ValueError(f"zeta0 must be >= 0, got {zeta0}")
    return _assemble(config, _probs_grid(config, zeta0, tau), zeta0, tau,
                     "tdd", None, exhaustive)


def ee_fdd_bar(config: SystemConfig, zeta0: float, tau: int, b: int | None = None,
               exhaustive: bool = False) -> EEReport:
    """Deterministic FDD average EE; the downlink pilot spends i + j symbols per outcome."""
    _check_tau(config, tau)
    if zeta0 < 0.0:
        raise ValueError(f"zeta0 must be >= 0, got {zeta0}")
    if config.fdd is None:
        raise ValueError("config has no FDD parameters")
    if b is None:
        b = config.fdd.B
    return _assemble(config, _probs_grid(config, zeta0, tau), zeta0, tau,
                     "fdd", int(b), exhaustive)


def ee_static_vr(config: SystemConfig, fixed_dist, tau: int,
                 exhaustive: bool = False) -> EEReport:
    """TDD average EE with a frozen outcome distribution.

    Models re-using a past detection over later coherence blocks: the
    outcome law stays fixed while the rates still follow the pilot length.
    """
    _check_tau(config, tau)
    if isinstance(fixed_dist, OutcomeDistribution):
        grid = fixed_dist.grid
    else:
        grid = OutcomeDistribution(np.asarray(fixed_dist, dtype=float)).grid
    expect = (config.L + 1, config.M - config.L + 1)
    if grid.shape != expect:
        raise ValueError(f"fixed distribution shape {grid.shape} != {expect}")
    return _assemble(config, grid, float("nan"), tau, "tdd", None, exhaustive)
