"""Non-stationary channel synthesis, training observations, and estimation.

The uplink pilot matrix is never materialized: the pilot-correlated
observation is statistically a per-entry complex Gaussian, so it is drawn
directly. Entries outside the true visibility region carry noise only.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .scenario import SystemConfig
from .util import complex_normal

__all__ = [
    "EmptyVRError",
    "FeedbackModel",
    "random_visibility_region",
    "draw_channel",
    "correlated_observation",
    "ls_estimate_tdd",
    "fdd_estimate_and_feedback",
]


class EmptyVRError(ValueError):
    """No antenna was detected; the caller should score the trial as rate 0."""


def random_visibility_region(m: int, l: int, rng) -> np.ndarray:
    """Uniformly random set of l visible antennas out of m."""
    return np.sort(rng.choice(m, size=l, replace=False))


def draw_channel(config: SystemConfig, vr_true: np.ndarray, rng) -> np.ndarray:
    """One (M, K) channel draw; entry variance beta_k / M inside the region, 0 outside."""
    h = np.zeros((config.M, config.K), dtype=complex)
    vr_true = np.asarray(vr_true)
    if vr_true.size:
        fading = complex_normal(rng, (vr_true.size, config.K), 1.0 / config.M)
        h[vr_true] = np.sqrt(config.beta_arr)[None, :] * fading
    return h


def _pilot_scale(config: SystemConfig, tau: int) -> np.ndarray:
    # per-user amplitude of the pilot-correlated signal part
    return tau * np.sqrt(config.M * config.p_tr_per_user)


def correlated_observation(config: SystemConfig, h_full: np.ndarray, tau: int, rng) -> np.ndarray:
    """Pilot-correlated training observation: scaled channel plus CN(0, tau*sigma2) noise."""
    noise = complex_normal(rng, h_full.shape, tau * config.sigma2_tr)
    return h_full * _pilot_scale(config, tau)[None, :] + noise


def ls_estimate_tdd(config: SystemConfig, y_corr: np.ndarray, vr_hat: np.ndarray, tau: int) -> np.ndarray:
    """Least-squares channel estimate restricted to the detected antennas.

    Equals the true channel there plus white estimation noise of per-entry
    variance sigma2_tr / (p_tr_k * M * tau).
    """
    vr_hat = np.asarray(vr_hat)
    if vr_hat.size == 0:
        raise EmptyVRError("detected visibility region is empty")
    return y_corr[vr_hat, :] / _pilot_scale(config, tau)[None, :]


@dataclass(frozen=True)
class FeedbackModel:
    """Quantized-feedback model for FDD downlink channel acquisition.

    q in [0, 1) is the quantization inaccuracy; B feedback bits are spread
    over the detected antennas, q^2 = 2^(-B / (n - 1)) for n >= 2 detected
    antennas. A single detected antenna is fed back exactly (q = 0).
    """

    q: float
    B: int
    tau_d: int
    p_dp: float

    def __post_init__(self):
        if not (0.0 <= self.q and self.q * self.q <= 1.0 - 1e-9):
            raise ValueError(f"q^2 must be <= 1 - 1e-9, got q={self.q}")
        if self.tau_d < 1:
            raise ValueError(f"tau_d must be >= 1, got {self.tau_d}")
        if not self.p_dp > 0.0:
            raise ValueError(f"p_dp must be positive, got {self.p_dp}")

    @classmethod
    def for_detected(cls, b: int, n_detected: int, p_dp: float,
                     tau_d: Optional[int] = None) -> "FeedbackModel":
        """Model for n_detected antennas; tau_d defaults to n_detected."""
        if n_detected < 1:
            raise EmptyVRError("feedback undefined for an empty detected region")
        q = 0.0 if n_detected == 1 else math.sqrt(2.0 ** (-b / (n_detected - 1.0)))
        return cls(q=q, B=b, tau_d=n_detected if tau_d is None else tau_d, p_dp=p_dp)


def fdd_estimate_and_feedback(config: SystemConfig, h_true_on_hat: np.ndarray,
                              model: FeedbackModel, rng) -> np.ndarray:
    """Downlink LS estimate distorted by quantized feedback.

    h_tilde = sqrt(1 - q^2) * (h + e_ls) + q * e_q with LS-noise variance
    sigma2_dl / (p_dp * M * tau_d) and quantization-noise variance beta_k / M.
    """
    n, k = h_true_on_hat.shape
    var_ls = config.sigma2_dl / (model.p_dp * config.M * model.tau_d)
    e_ls = complex_normal(rng, (n, k), var_ls)
    e_q = complex_normal(rng, (n, k), config.beta_arr[None, :] / config.M)
    q = model.q
    return math.sqrt(1.0 - q * q) * (h_true_on_hat + e_ls) + q * e_q
