"""Deterministic-equivalent (large-system) SINR for the RZF downlink.

Given a detection outcome (i correctly and j falsely detected antennas),
the random per-user SINR concentrates around a deterministic value that is
computed here from a small fixed point plus K x K linear corrections, for
both TDD (uplink LS estimates) and FDD (downlink estimation with quantized
feedback). A generic trace fixed point over diagonal covariances provides
an independent cross-check route, and the closed-form conjugate-beamforming
and perfect-CSI limits are exposed for validation.

All cells of the (i, j) outcome grid are solved in one vectorized batch and
cached per (config, duplex, pilot setting).
"""

from __future__ import annotations

import threading

import numpy as np

from .scenario import SystemConfig

__all__ = [
    "ConvergenceError",
    "solve_e_tdd",
    "correctors_tdd",
    "gamma_bar_tdd",
    "gamma_bar_fdd",
    "sum_rate_cells",
    "sum_rate_tdd",
    "sum_rate_fdd",
    "generic_trace_fixed_point",
    "cb_limit_gamma",
    "perfect_csi_gamma",
    "feedback_q2",
    "clear_cache",
]

_FP_TOL = 1e-12
_FP_MAX_ITER = 10_000


class ConvergenceError(RuntimeError):
    """Fixed-point iteration failed to converge; carries the last residual."""

    def __init__(self, message: str, residual: float):
        super().__init__(f"{message} (last residual {residual:.3e})")
        self.residual = residual


def _damped_iterate(e0: np.ndarray, step):
    """Iterate e <- step(e) with per-row halving damping on residual growth."""
    e = e0
    damp = np.ones(e.shape[0])
    prev = np.full(e.shape[0], np.inf)
    for _ in range(_FP_MAX_ITER):
        target = step(e)
        res = np.max(np.abs(target - e) / (1.0 + np.abs(e)), axis=1)
        if np.all(res <= _FP_TOL):
            return target
        damp = np.where(res > prev, np.maximum(damp * 0.5, 2.0 ** -30), damp)
        e = e + damp[:, None] * (target - e)
        prev = res
    raise ConvergenceError("fixed point did not converge", float(np.max(res)))


# ---------------------------------------------------------------------------
# TDD branch
# ---------------------------------------------------------------------------

def _tdd_fixed_point(config: SystemConfig, tau: int, i_arr, j_arr):
    beta = config.beta_arr
    m, xi = config.M, config.xi
    s = config.sigma2_tr / (config.g * tau)
    i_col = i_arr[:, None].astype(float)
    j_col = j_arr[:, None].astype(float)

    def step(e):
        eta = (beta / (1.0 + e)).sum(axis=1, keepdims=True)
        den1 = m * xi + eta * (1.0 + s)
        den2 = m * xi / s + eta
        return beta[None, :] * (i_col * (1.0 + s) / den1 + j_col / den2)

    e = _damped_iterate(np.full((len(i_arr), beta.size), 1.0 / xi), step)
    eta = (beta / (1.0 + e)).sum(axis=1)
    return e, eta, s


def _tdd_correctors(config: SystemConfig, e, eta, s, i_arr, j_arr):
    beta = config.beta_arr
    m, xi = config.M, config.xi
    k = beta.size
    i_col = i_arr[:, None].astype(float)
    j_col = j_arr[:, None].astype(float)
    den1 = m * xi + eta[:, None] * (1.0 + s)
    den2 = m * xi / s + eta[:, None]
    den_a = xi + eta[:, None] * (1.0 + s) / m
    den_b = xi + s * eta[:, None] / m

    c1 = i_col * (1.0 + s) ** 2 / den1 ** 2 + j_col / den2 ** 2
    j_mat = beta[None, :, None] * beta[None, None, :] * c1[..., None] \
        / (1.0 + e)[:, None, :] ** 2
    v_cross = (1.0 + s) * i_col[..., None] * beta[None, :, None] * beta[None, None, :] \
        / (m * den_a[..., None] ** 2)
    v_self = beta[None, :] / m * (i_col * (1.0 + s) / den_a ** 2 + j_col * s / den_b ** 2)

    lhs = np.eye(k)[None, :, :] - j_mat
    e_cross = np.linalg.solve(lhs, v_cross)          # [cell, i, k]
    e_self = np.linalg.solve(lhs, v_self[..., None])[..., 0]
    return e_cross, e_self, den_a, den_b


def _assemble_gamma(config, e, mu_k, mu_bar, a, e_cross, e_self, signal_scale):
    """Shared SINR assembly; signal_scale is 1 (TDD) or 1 - q^2 (FDD)."""
    p_dl = config.p_dl_arr
    m = config.M
    w = p_dl[None, :] / (1.0 + e) ** 2
    lam_k = np.einsum("nik,ni->nk", e_cross, w) \
        - w * np.einsum("nkk->nk", e_cross)
    lam_bar_all = (w * e_self).sum(axis=1, keepdims=True)
    lam_bar_k = lam_bar_all - w * e_self
    lam_bar = lam_bar_all[:, 0]

    scale = signal_scale if np.ndim(signal_scale) else np.full(e.shape[0], signal_scale)
    scale = scale[:, None]
    one_plus = 1.0 + a * mu_bar[:, None]
    num = scale / m * p_dl[None, :] * mu_k ** 2
    den = (
        lam_k * one_plus ** 2
        + scale / m * a * lam_bar_k * mu_k ** 2
        + (lam_bar[:, None] * config.sigma2_dl / config.P_T)
        * (one_plus + scale / m * mu_k) ** 2
    )
    with np.errstate(invalid="ignore", divide="ignore"):
        gamma = np.where(den > 0.0, num / den, 0.0)
    return gamma


def _gamma_tdd_batch(config: SystemConfig, tau: int, i_arr, j_arr) -> np.ndarray:
    """Deterministic per-user SINR for every (i, j) cell; shape (ncells, K)."""
    i_arr = np.asarray(i_arr, dtype=int)
    j_arr = np.asarray(j_arr, dtype=int)
    out = np.zeros((len(i_arr), config.K))
    live = np.flatnonzero(i_arr > 0)  # no correctly detected antenna -> no signal
    if live.size == 0:
        return out
    i_live, j_live = i_arr[live], j_arr[live]

    e, eta, s = _tdd_fixed_point(config, tau, i_live, j_live)
    e_cross, e_self, den_a, den_b = _tdd_correctors(config, e, eta, s, i_live, j_live)
    beta = config.beta_arr
    mu_k = i_live[:, None] * beta[None, :] / den_a
    mu_bar = i_live / den_a[:, 0] + j_live / den_b[:, 0]
    a = (config.sigma2_tr * beta / (config.M * tau * config.g))[None, :]
    out[live] = _assemble_gamma(config, e, mu_k, mu_bar, a, e_cross, e_self, 1.0)
    return out


def solve_e_tdd(config: SystemConfig, i: int, j: int, tau: int):
    """Converged auxiliary fixed point (e_1..e_K, eta) for one outcome cell."""
    e, eta, _ = _tdd_fixed_point(config, tau, np.array([i]), np.array([j]))
    return e[0], float(eta[0])


def correctors_tdd(config: SystemConfig, e: np.ndarray, eta: float, i: int, j: int, tau: int):
    """Interference-correction solves: (K, K) cross matrix [i, k] and self vector."""
    s = config.sigma2_tr / (config.g * tau)
    e_cross, e_self, _, _ = _tdd_correctors(
        config, np.asarray(e, dtype=float)[None, :], np.array([float(eta)]), s,
        np.array([i]), np.array([j]))
    return e_cross[0], e_self[0]


def gamma_bar_tdd(config: SystemConfig, i: int, j: int, tau: int) -> np.ndarray:
    """Deterministic per-user SINR for outcome (i, j) with uplink pilot length tau."""
    _check_cell(config, i, j)
    if tau < 1:
        raise ValueError(f"tau must be >= 1, got {tau}")
    return _gamma_tdd_batch(config, tau, np.array([i]), np.array([j]))[0]


# ---------------------------------------------------------------------------
# FDD branch
# ---------------------------------------------------------------------------

def feedback_q2(b: int, n_detected: int) -> float:
    """Squared quantization inaccuracy for B bits over n detected antennas."""
    if n_detected < 1:
        raise ValueError("feedback undefined for n_detected < 1")
    if n_detected == 1:
        return 0.0
    q2 = 2.0 ** (-b / (n_detected - 1.0))
    if q2 > 1.0 - 1e-9:
        raise ValueError(f"quantization accuracy too poor (q^2={q2}); increase B")
    return q2


def _gamma_fdd_batch(config: SystemConfig, b: int, i_arr, j_arr, tau_d_arr=None) -> np.ndarray:
    """FDD counterpart of the SINR batch; tau_d defaults to i + j per cell."""
    if config.fdd is None:
        raise ValueError("config has no FDD parameters")
    i_arr = np.asarray(i_arr, dtype=int)
    j_arr = np.asarray(j_arr, dtype=int)
    n_det = i_arr + j_arr
    if tau_d_arr is None:
        tau_d_arr = n_det
    tau_d_arr = np.asarray(tau_d_arr, dtype=int)

    out = np.zeros((len(i_arr), config.K))
    live = np.flatnonzero((i_arr > 0) & (tau_d_arr > 0))
    if live.size == 0:
        return out
    i_live = i_arr[live]
    j_live = j_arr[live]
    n_live = n_det[live]
    tau_d = tau_d_arr[live].astype(float)

    q2 = np.array([feedback_q2(b, int(n)) for n in n_live])
    one_m_q2 = 1.0 - q2
    beta = config.beta_arr
    m, xi = config.M, config.xi
    k = beta.size
    p_dp = config.fdd.p_dp

    a = one_m_q2[:, None] * config.sigma2_dl / (p_dp * m * tau_d[:, None]) \
        + beta[None, :] * q2[:, None] / m
    i_col = i_live[:, None].astype(float)
    j_col = j_live[:, None].astype(float)

    def step(e):
        eta1 = (one_m_q2[:, None] * beta[None, :] / (1.0 + e)).sum(axis=1, keepdims=True)
        eta2 = (a / (1.0 + e)).sum(axis=1, keepdims=True)
        den_a = eta1 / m + eta2 + xi
        den_b = eta2 + xi
        return (one_m_q2[:, None] * beta[None, :] / m + a) * i_col / den_a \
            + a * j_col / den_b

    e = _damped_iterate(np.full((live.size, k), 1.0 / xi), step)
    eta1 = (one_m_q2[:, None] * beta[None, :] / (1.0 + e)).sum(axis=1)
    eta2 = (a / (1.0 + e)).sum(axis=1)
    den_a = (eta1 / m + eta2 + xi)[:, None]
    den_b = (eta2 + xi)[:, None]

    bvec = beta[None, :] / m + a / one_m_q2[:, None]
    j_mat = one_m_q2[:, None, None] / (1.0 + e)[:, None, :] ** 2 * (
        bvec[:, :, None] * bvec[:, None, :] * i_col[..., None] / den_a[..., None] ** 2
        + (a[:, :, None] * a[:, None, :] / one_m_q2[:, None, None] ** 2)
        * j_col[..., None] / den_b[..., None] ** 2
    )
    v_cross = beta[None, None, :] * bvec[:, :, None] * i_col[..., None] / den_a[..., None] ** 2
    v_self = bvec * i_col / den_a ** 2 + a / one_m_q2[:, None] * j_col / den_b ** 2

    lhs = np.eye(k)[None, :, :] / one_m_q2[:, None, None] - j_mat
    e_cross = np.linalg.solve(lhs, v_cross)
    e_self = np.linalg.solve(lhs, v_self[..., None])[..., 0]

    mu_k = i_col * beta[None, :] / den_a
    mu_bar = (i_col / den_a + j_col / den_b)[:, 0]
    out[live] = _assemble_gamma(config, e, mu_k, mu_bar, a, e_cross, e_self, one_m_q2)
    return out


def gamma_bar_fdd(config: SystemConfig, i: int, j: int, b: int, tau_d: int | None = None) -> np.ndarray:
    """Deterministic per-user FDD SINR for outcome (i, j) with B = b feedback bits."""
    _check_cell(config, i, j)
    if i + j == 0:
        return np.zeros(config.K)
    tau_d_arr = None if tau_d is None else np.array([tau_d])
    return _gamma_fdd_batch(config, b, np.array([i]), np.array([j]), tau_d_arr)[0]


def _check_cell(config, i, j):
    if not (0 <= i <= config.L):
        raise ValueError(f"i must lie in [0, L], got {i}")
    if not (0 <= j <= config.M - config.L):
        raise ValueError(f"j must lie in [0, M-L], got {j}")


# ---------------------------------------------------------------------------
# Cached sum-rate grid
# ---------------------------------------------------------------------------

_cache_lock = threading.Lock()
_rate_cache: dict = {}


def clear_cache():
    with _cache_lock:
        _rate_cache.clear()


def sum_rate_cells(config: SystemConfig, cells, duplex: str = "tdd",
                   tau: int | None = None, b: int | None = None) -> np.ndarray:
    """Deterministic sum rates (nats/use) for a list of (i, j) cells, cached.

    TDD rates are keyed by the uplink pilot length tau; FDD rates by the
    feedback bits b (the downlink pilot length is i + j per cell).
    """
    cells = [(int(i), int(j)) for i, j in cells]
    if duplex == "tdd":
        if tau is None:
            raise ValueError("tau is required for TDD rates")
        key = (config, "tdd", int(tau))
    elif duplex == "fdd":
        if b is None:
            raise ValueError("b is required for FDD rates")
        key = (config, "fdd", int(b))
    else:
        raise ValueError(f"unknown duplex mode {duplex!r}")

    with _cache_lock:
        store = _rate_cache.setdefault(key, {})
        missing = sorted(set(c for c in cells if c not in store))
    if missing:
        i_arr = np.array([c[0] for c in missing])
        j_arr = np.array([c[1] for c in missing])
        if duplex == "tdd":
            gamma = _gamma_tdd_batch(config, int(tau), i_arr, j_arr)
        else:
            gamma = _gamma_fdd_batch(config, int(b), i_arr, j_arr)
        rates = np.log1p(gamma).sum(axis=1)
        with _cache_lock:
            store.update(zip(missing, rates.tolist()))
    with _cache_lock:
        return np.array([store[c] for c in cells])


def sum_rate_tdd(config: SystemConfig, i: int, j: int, tau: int) -> float:
    return float(sum_rate_cells(config, [(i, j)], "tdd", tau=tau)[0])


def sum_rate_fdd(config: SystemConfig, i: int, j: int, b: int) -> float:
    return float(sum_rate_cells(config, [(i, j)], "fdd", b=b)[0])


# ---------------------------------------------------------------------------
# Independent cross-check route and closed-form limits
# ---------------------------------------------------------------------------

def generic_trace_fixed_point(t_diags, c: float, q_diag, m_norm: int):
    """Normalized-trace fixed point over diagonal covariance profiles.

    Solves e_k = tr(T_k S) / m with S = (sum_k T_k / (m (1 + e_k)) + c I)^-1
    for diagonal T_k, and returns (tr(Q S) / m, e). This is the generic
    resolvent route underlying the closed-form quantities above.
    """
    t = np.atleast_2d(np.asarray(t_diags, dtype=float))
    q_diag = np.asarray(q_diag, dtype=float)
    if not c > 0.0:
        raise ValueError(f"regularizer c must be positive, got {c}")
    if t.shape[1] != q_diag.size:
        raise ValueError("T_k and Q must share the diagonal length")

    def step(e_row):
        e = e_row[0]
        s_diag = 1.0 / ((t / (1.0 + e)[:, None]).sum(axis=0) / m_norm + c)
        return ((t * s_diag[None, :]).sum(axis=1) / m_norm)[None, :]

    e = _damped_iterate(np.zeros((1, t.shape[0])), step)[0]
    s_diag = 1.0 / ((t / (1.0 + e)[:, None]).sum(axis=0) / m_norm + c)
    return float((q_diag * s_diag).sum() / m_norm), e


def cb_limit_gamma(config: SystemConfig, i: int, j: int, tau: int) -> np.ndarray:
    """Closed-form SINR in the conjugate-beamforming (large-regularizer) limit."""
    _check_cell(config, i, j)
    if i <= 0:
        raise ValueError("the conjugate-beamforming limit needs i > 0")
    beta = config.beta_arr
    p = config.p_dl_arr
    s = config.sigma2_tr / (config.g * tau)
    pb = p * beta
    total = pb.sum()
    interference = beta * (1.0 + s) * (total - pb)
    noise = config.sigma2_dl / config.P_T * total * (1.0 + s * (1.0 + j / i))
    return p * i * beta ** 2 / (interference + noise)


def perfect_csi_gamma(config: SystemConfig) -> np.ndarray:
    """Closed-form SINR with exact channel knowledge on the true region."""
    beta = config.beta_arr
    p = config.p_dl_arr
    pb = p * beta
    total = pb.sum()
    return p * config.L * beta ** 2 / (
        beta * (total - pb) + config.sigma2_dl / config.P_T * total)
