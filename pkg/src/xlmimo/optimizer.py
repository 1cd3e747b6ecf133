"""Alternating design of the detection threshold and the pilot length.

The threshold subproblem is solved exactly (coarse log grid plus
golden-section refinement; the rate grid does not depend on the threshold)
or by one of two cheap heuristics; the pilot-length subproblem is an
exhaustive integer search. The outer loop alternates until the pilot
length stabilizes, with a safeguard iteration cap.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import detequiv, energy_ee
from .scenario import SystemConfig
from .util import parallel_map
from .vr_detect import threshold_equal_error, threshold_min_sum

__all__ = [
    "OptResult",
    "THRESHOLD_MODES",
    "objective_ee",
    "opt_threshold",
    "opt_tau",
    "alternate_optimize",
    "opt_tau_d_perfect_vr",
    "golden_section_max",
]

THRESHOLD_MODES = ("exact", "min_sum", "equal_error")
_GRID_POINTS = 60
_GRID_SPAN = 1e3  # grid spans [1/span, span] * tau * sigma2_tr
_MAX_ALTERNATE_ITERS = 20


@dataclass(frozen=True)
class OptResult:
    """Outcome of the alternating (threshold, pilot length) optimization."""

    zeta0: float
    tau: int
    ee: float
    iterations: int
    converged: bool
    trace: tuple  # ((zeta0, tau, ee) per iteration, ...)
    threshold_mode: str
    duplex: str


def objective_ee(config: SystemConfig, zeta0: float, tau: int,
                 duplex: str = "tdd", b: int | None = None) -> float:
    """Average-EE objective value (nats/joule) at one operating point."""
    if duplex == "tdd":
        return energy_ee.ee_tdd_bar(config, zeta0, tau).ee
    return energy_ee.ee_fdd_bar(config, zeta0, tau, b=b).ee


def golden_section_max(fn, lo: float, hi: float, rel_tol: float = 1e-6):
    """Golden-section maximization on [lo, hi]; returns (x_best, f_best)."""
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    invphi2 = (3.0 - math.sqrt(5.0)) / 2.0
    a, b = float(lo), float(hi)
    c = a + invphi2 * (b - a)
    d = a + invphi * (b - a)
    fc, fd = fn(c), fn(d)
    best = max(((fc, c), (fd, d)))
    while (b - a) > rel_tol * max(abs(b), 1e-300):
        if fc >= fd:
            b, d, fd = d, c, fc
            c = a + invphi2 * (b - a)
            fc = fn(c)
            best = max(best, (fc, c))
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = fn(d)
            best = max(best, (fd, d))
    f_best, x_best = best
    return x_best, f_best


def opt_threshold(config: SystemConfig, tau: int, mode: str = "exact",
                  duplex: str = "tdd", b: int | None = None) -> float:
    """Detection threshold for a fixed pilot length.

    exact       -- maximize the average-EE objective over the threshold;
    min_sum     -- closed form minimizing p10 + p01;
    equal_error -- root of p10 = p01.
    """
    if mode == "min_sum":
        return threshold_min_sum(tau, config.sigma2_tr, config.g)
    if mode == "equal_error":
        return threshold_equal_error(tau, config.sigma2_tr, config.g)
    if mode != "exact":
        raise ValueError(f"unknown threshold mode {mode!r}")

    def fn(zeta):
        return objective_ee(config, zeta, tau, duplex, b)

    grid = tau * config.sigma2_tr * np.logspace(
        -math.log10(_GRID_SPAN), math.log10(_GRID_SPAN), _GRID_POINTS)
    values = np.array(parallel_map(lambda idx: fn(grid[idx]), len(grid), chunk=8))
    best = int(np.argmax(values))
    lo = grid[max(best - 1, 0)]
    hi = grid[min(best + 1, len(grid) - 1)]
    z_ref, f_ref = golden_section_max(fn, lo, hi)
    if f_ref >= values[best]:
        return float(z_ref)
    return float(grid[best])


def opt_tau(config: SystemConfig, zeta0: float, duplex: str = "tdd",
            b: int | None = None) -> int:
    """Exhaustive pilot-length search at a fixed threshold; ties pick the shortest."""
    if zeta0 < 0.0:
        raise ValueError(f"zeta0 must be >= 0, got {zeta0}")
    hi = config.T if duplex == "tdd" else config.T - 1
    taus = list(range(config.K, hi + 1))
    if not taus:
        raise ValueError("no feasible pilot length")
    values = parallel_map(
        lambda idx: objective_ee(config, zeta0, taus[idx], duplex, b),
        len(taus), chunk=8)
    return taus[int(np.argmax(values))]


def alternate_optimize(config: SystemConfig, duplex: str = "tdd",
                       threshold_mode: str = "exact", b: int | None = None,
                       fixed_zeta0: float | None = None) -> OptResult:
    """Alternate the two subproblems from tau = K until tau stabilizes.

    The best point seen is returned even if the loop hits the safeguard cap
    (the discrete pilot length can in principle cycle). With fixed_zeta0
    the threshold stays constant and only the pilot length is optimized.
    """
    if duplex == "fdd" and b is None:
        b = config.fdd.B
    tau_prev = config.K
    trace = []
    best = None
    converged = False
    iterations = 0
    for iterations in range(1, _MAX_ALTERNATE_ITERS + 1):
        if fixed_zeta0 is not None:
            zeta = float(fixed_zeta0)
        else:
            zeta = opt_threshold(config, tau_prev, threshold_mode, duplex, b)
        tau = opt_tau(config, zeta, duplex, b)
        ee = objective_ee(config, zeta, tau, duplex, b)
        trace.append((zeta, tau, ee))
        if best is None or ee > best[0]:
            best = (ee, zeta, tau)
        if tau == tau_prev:
            converged = True
            break
        tau_prev = tau
    ee, zeta, tau = best
    return OptResult(zeta0=zeta, tau=tau, ee=ee, iterations=iterations,
                     converged=converged, trace=tuple(trace),
                     threshold_mode="fixed" if fixed_zeta0 is not None else threshold_mode,
                     duplex=duplex)


def opt_tau_d_perfect_vr(config: SystemConfig, tau: int, b: int | None = None) -> int:
    """Best downlink pilot length when the region is detected perfectly.

    Searches tau_d in {L, ..., T - tau}, trading estimation quality against
    the remaining data phase; ties pick the shortest pilot.
    """
    if config.fdd is None:
        raise ValueError("config has no FDD parameters")
    if b is None:
        b = config.fdd.B
    hi = config.T - tau
    if hi < config.L:
        raise ValueError(
            f"no feasible downlink pilot: T - tau = {hi} is below L = {config.L}")
    pc = energy_ee.p_cir(config.L, config)

    def value(tau_d):
        gamma = detequiv.gamma_bar_fdd(config, config.L, 0, b, tau_d=tau_d)
        rate = float(np.log1p(gamma).sum())
        return config.W * (config.T - tau - tau_d) / (config.T * pc) * rate

    candidates = list(range(config.L, hi + 1))
    values = parallel_map(lambda idx: value(candidates[idx]), len(candidates), chunk=16)
    return candidates[int(np.argmax(values))]
