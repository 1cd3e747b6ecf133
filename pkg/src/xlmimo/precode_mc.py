"""RZF precoding and the Monte-Carlo rate / energy-efficiency oracle.

Every trial derives its own RNG stream from (seed, trial index), so results
are reproducible and independent of execution order. The power scaling is
calibrated once per detection-outcome statistics from an independent batch,
mirroring a deterministic normalization constant.
"""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from . import channel as ch
from .scenario import SystemConfig
from .util import parallel_map, stream_rng
from .vr_detect import detect

__all__ = [
    "DegenerateScenarioError",
    "RateStats",
    "McEEReport",
    "rzf_directions",
    "calibrate_alpha",
    "instantaneous_sinr",
    "ergodic_rate",
    "mc_average_ee",
]

_RESIDUAL_TOL = 1e-10


class DegenerateScenarioError(RuntimeError):
    """Calibration impossible: all sampled channels were empty."""


def rzf_directions(h_hat: np.ndarray, xi: float) -> np.ndarray:
    """Unnormalized RZF directions W = (H H^H + xi I)^-1 H.

    Computed through the equivalent K x K Hermitian positive-definite
    system W = H (H^H H + xi I_K)^-1 (the big inverse is never formed);
    the residual of the full system is checked on every call.
    """
    if not xi > 0.0:
        raise ValueError(f"xi must be positive, got {xi}")
    gram = h_hat.conj().T @ h_hat
    gram[np.diag_indices_from(gram)] += xi
    # W = H C^-1 with Hermitian C, i.e. (C^-1 H^H)^H
    factor = cho_factor(gram, lower=True, overwrite_a=False, check_finite=False)
    w = cho_solve(factor, h_hat.conj().T, check_finite=False).conj().T
    h_norm = np.linalg.norm(h_hat)
    residual = np.linalg.norm(h_hat @ (h_hat.conj().T @ w) + xi * w - h_hat)
    if not residual <= _RESIDUAL_TOL * max(h_norm, 1e-300):
        raise FloatingPointError(
            f"RZF linear solve residual {residual:.3e} exceeds tolerance")
    return w


def instantaneous_sinr(h_true_on_hat: np.ndarray, w: np.ndarray, alpha: float,
                       config: SystemConfig) -> np.ndarray:
    """Per-user SINR of one realization under precoder alpha * W."""
    return _sinr_parts(h_true_on_hat, w, alpha, config)[0]


def _sinr_parts(h_true_on_hat, w, alpha, config):
    """(sinr, denominator) per user; the denominator feeds the sensitivity math."""
    cross = (h_true_on_hat.conj().T @ w) * alpha  # [k, j] = h_k^H w_j
    p = config.p_dl_arr
    powers = np.abs(cross) ** 2 * p[None, :]
    signal = np.einsum("kk->k", powers).copy()
    denom = powers.sum(axis=1) - signal + config.sigma2_dl
    return signal / denom, denom


def _pick_fixed_outcome(config, vr_true, i, j, rng):
    parts = []
    if i:
        parts.append(rng.choice(vr_true, size=i, replace=False))
    if j:
        outside = np.setdiff1d(np.arange(config.M), vr_true, assume_unique=False)
        parts.append(rng.choice(outside, size=j, replace=False))
    if not parts:
        return np.empty(0, dtype=int)
    return np.sort(np.concatenate(parts))


def _trial_estimates(config, tau, rng, duplex, b, ij=None, zeta0=None):
    """One training pass: detected set plus true/estimated channels on it."""
    vr_true = ch.random_visibility_region(config.M, config.L, rng)
    h_full = ch.draw_channel(config, vr_true, rng)
    y = ch.correlated_observation(config, h_full, tau, rng)
    if zeta0 is not None:
        vr_hat = detect(y[:, 0], zeta0)  # one detection shared by the group
    else:
        vr_hat = _pick_fixed_outcome(config, vr_true, ij[0], ij[1], rng)
    n_det = vr_hat.size
    if n_det == 0:
        return 0, 0, None, None
    i_cnt = np.intersect1d(vr_hat, vr_true, assume_unique=True).size
    h_on_hat = h_full[vr_hat, :]
    if duplex == "tdd":
        h_hat = ch.ls_estimate_tdd(config, y, vr_hat, tau)
    else:
        model = ch.FeedbackModel.for_detected(b, n_det, config.fdd.p_dp)
        h_hat = ch.fdd_estimate_and_feedback(config, h_on_hat, model, rng)
    return i_cnt, n_det - i_cnt, h_on_hat, h_hat


def calibrate_alpha(config: SystemConfig, i: int, j: int, tau: int, rng,
                    n_cal: int = 1000, duplex: str = "tdd", b: int | None = None) -> float:
    """Power normalization from an independent two-pass calibration batch."""
    return _calibrate_alpha_stats(config, i, j, tau, rng, n_cal, duplex, b)[0]


def _calibrate_alpha_stats(config, i, j, tau, rng, n_cal, duplex, b):
    """(alpha, standard error of log alpha) from the calibration batch."""
    if n_cal < 100:
        raise ValueError(f"n_cal must be >= 100, got {n_cal}")
    if i + j == 0:
        raise DegenerateScenarioError("cannot calibrate power on an empty region")
    p = config.p_dl_arr
    traces = np.empty(n_cal)
    for t in range(n_cal):
        _, _, _, h_hat = _trial_estimates(config, tau, rng, duplex, b, ij=(i, j))
        w = rzf_directions(h_hat, config.xi)
        traces[t] = float((p * (np.abs(w) ** 2).sum(axis=0)).sum())
    mean = traces.mean()
    if mean <= 0.0:
        raise DegenerateScenarioError("calibration trace vanished")
    se_mean = traces.std(ddof=1) / math.sqrt(n_cal)
    # alpha = sqrt(M P_T / mean): relative error is half the mean's
    return math.sqrt(config.M * config.P_T / mean), se_mean / (2.0 * mean)


class _AlphaCache:
    """Per-outcome power scalings; values depend only on (seed, i, j)."""

    def __init__(self, config, tau, seed, duplex, b, n_cal):
        self._args = (config, tau, duplex, b, n_cal)
        self._seed = seed
        self._lock = threading.Lock()
        self._store: dict = {}

    def get(self, i, j):
        key = (i, j)
        with self._lock:
            if key in self._store:
                return self._store[key]
        config, tau, duplex, b, n_cal = self._args
        rng = stream_rng(self._seed, 1, i, j)
        value = _calibrate_alpha_stats(config, i, j, tau, rng, n_cal, duplex, b)
        with self._lock:
            self._store.setdefault(key, value)
        return value


@dataclass(frozen=True)
class RateStats:
    """Monte-Carlo ergodic rates in nats per channel use."""

    sum_rate: float
    se_sum: float
    per_user: np.ndarray
    se_user: np.ndarray
    n_trials: int


@dataclass(frozen=True)
class McEEReport:
    """Monte-Carlo average energy efficiency in nats per joule.

    stderr covers the per-trial sampling noise; stderr_calibration is the
    propagated uncertainty of the power-scaling calibrations, which does
    not shrink with the trial count.
    """

    ee: float
    stderr: float
    stderr_calibration: float
    zeta0: float
    tau: int
    duplex: str
    n_trials: int
    outcomes: tuple  # ((i, j, count, mean_sum_rate), ...) sorted by count desc

    @property
    def stderr_combined(self) -> float:
        return math.hypot(self.stderr, self.stderr_calibration)


def _run_rate_trials(config, tau, n_trials, seed, duplex, b, ij=None, zeta0=None,
                     n_cal=1000):
    """Per-trial (i, j, per-user rates, d(sum rate)/d(log alpha), se(log alpha))."""
    alphas = _AlphaCache(config, tau, seed, duplex, b, n_cal)
    k = config.K

    def one(t):
        rng = stream_rng(seed, 0, t)
        i, j, h_on_hat, h_hat = _trial_estimates(config, tau, rng, duplex, b,
                                                 ij=ij, zeta0=zeta0)
        if i + j == 0:
            return i, j, np.zeros(k), 0.0, 0.0
        w = rzf_directions(h_hat, config.xi)
        alpha, se_log_alpha = alphas.get(i, j)
        sinr, denom = _sinr_parts(h_on_hat, w, alpha, config)
        sens = float((2.0 * sinr * config.sigma2_dl / (denom * (1.0 + sinr))).sum())
        return i, j, np.log1p(sinr), sens, se_log_alpha

    return parallel_map(one, n_trials)


def _validate_run(config, tau, n_trials, duplex, b, ij, zeta0):
    if (ij is None) == (zeta0 is None):
        raise ValueError("specify exactly one of ij=(i, j) or zeta0")
    if n_trials < 1:
        raise ValueError(f"n_trials must be >= 1, got {n_trials}")
    if not (config.K <= tau <= config.T):
        raise ValueError(f"tau must lie in [K, T] = [{config.K}, {config.T}], got {tau}")
    if duplex not in ("tdd", "fdd"):
        raise ValueError(f"unknown duplex mode {duplex!r}")
    if duplex == "fdd" and b is None:
        b = config.fdd.B
    return b


def ergodic_rate(config: SystemConfig, tau: int, n_trials: int, seed: int,
                 ij=None, zeta0=None, duplex: str = "tdd", b: int | None = None,
                 n_cal: int = 1000) -> RateStats:
    """Monte-Carlo ergodic sum rate, either at a fixed outcome or end-to-end.

    With ij=(i, j) the detected set is i random in-region plus j random
    out-of-region antennas per trial; with zeta0 given, the detector runs
    and the outcome varies per trial.
    """
    b = _validate_run(config, tau, n_trials, duplex, b, ij, zeta0)
    rows = _run_rate_trials(config, tau, n_trials, seed, duplex, b, ij, zeta0, n_cal)
    rates = np.array([row[2] for row in rows])
    sums = rates.sum(axis=1)
    denom = math.sqrt(n_trials) if n_trials > 1 else 1.0
    return RateStats(
        sum_rate=float(sums.mean()),
        se_sum=float(sums.std(ddof=1) / denom) if n_trials > 1 else float("nan"),
        per_user=rates.mean(axis=0),
        se_user=rates.std(axis=0, ddof=1) / denom if n_trials > 1 else np.full(config.K, np.nan),
        n_trials=n_trials,
    )


def mc_average_ee(config: SystemConfig, zeta0: float, tau: int, n_trials: int,
                  seed: int, duplex: str = "tdd", b: int | None = None,
                  n_cal: int = 1000) -> McEEReport:
    """End-to-end Monte-Carlo average EE: detect, estimate, precode, rate.

    Each trial contributes W (T - tau) / T * rate / P_cir(|detected|) in TDD,
    or with the data phase further shortened by the downlink pilot (clamped
    at zero) in FDD.
    """
    b = _validate_run(config, tau, n_trials, duplex, b, None, zeta0)
    from .energy_ee import p_cir  # local import to avoid a cycle

    rows = _run_rate_trials(config, tau, n_trials, seed, duplex, b, zeta0=zeta0,
                            n_cal=n_cal)
    values = np.empty(n_trials)
    tally: dict = {}
    sens_by_cell: dict = {}
    for t, (i, j, rates, sens, se_log_alpha) in enumerate(rows):
        rate = float(rates.sum())
        if duplex == "tdd":
            frac = (config.T - tau) / config.T
        else:
            frac = max(config.T - tau - (i + j), 0) / config.T
        scale = config.W * frac / p_cir(i + j, config)
        values[t] = scale * rate
        cnt, acc = tally.get((i, j), (0, 0.0))
        tally[(i, j)] = (cnt + 1, acc + rate)
        grad, _ = sens_by_cell.get((i, j), (0.0, 0.0))
        sens_by_cell[(i, j)] = (grad + scale * sens, se_log_alpha)

    # calibration batches are independent across outcome cells
    se_cal_sq = sum((grad / n_trials * se) ** 2
                    for grad, se in sens_by_cell.values())

    outcomes = tuple(
        (i, j, cnt, acc / cnt)
        for (i, j), (cnt, acc) in sorted(tally.items(), key=lambda kv: (-kv[1][0], kv[0]))
    )
    denom = math.sqrt(n_trials) if n_trials > 1 else 1.0
    return McEEReport(
        ee=float(values.mean()),
        stderr=float(values.std(ddof=1) / denom) if n_trials > 1 else float("nan"),
        stderr_calibration=math.sqrt(se_cal_sq),
        zeta0=float(zeta0),
        tau=int(tau),
        duplex=duplex,
        n_trials=n_trials,
        outcomes=outcomes,
    )
