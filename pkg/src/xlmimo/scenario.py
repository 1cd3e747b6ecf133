"""System configuration: unit conversions, validation, derived scalars.

All powers are stored in watts; dBm appears only at the CLI/config-file
boundary (keys with a ``_dbm`` suffix).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Optional

import numpy as np

__all__ = [
    "ConfigError",
    "CircuitPower",
    "FddParams",
    "SystemConfig",
    "DEFAULTS",
    "dbm_to_watt",
    "watt_to_dbm",
    "pathloss",
    "build_config",
    "default_config",
    "parse_config_text",
    "parse_config_file",
    "merge_raw",
]


class ConfigError(ValueError):
    """A configuration value is missing, malformed, or inconsistent."""


def dbm_to_watt(x: float) -> float:
    """Convert a power in dBm to watts."""
    x = float(x)
    if not math.isfinite(x):
        raise ConfigError(f"dBm value must be finite, got {x}")
    return 10.0 ** ((x - 30.0) / 10.0)


def watt_to_dbm(w: float) -> float:
    """Convert a power in watts to dBm."""
    w = float(w)
    if not (w > 0.0 and math.isfinite(w)):
        raise ConfigError(f"power must be positive and finite, got {w} W")
    return 30.0 + 10.0 * math.log10(w)


def pathloss(d: float) -> float:
    """Large-scale channel gain at distance d meters: -35.3 - 37.6*log10(d) dB."""
    d = float(d)
    if not (d > 0.0 and math.isfinite(d)):
        raise ConfigError(f"distance d must be positive, got {d}")
    return 10.0 ** (-3.53) * d ** (-3.76)


@dataclass(frozen=True)
class CircuitPower:
    """Transceiver circuit-power model parameters (watts)."""

    varsigma: float = 0.35  # power-amplifier efficiency, in (0, 1]
    P_syn: float = 0.05
    P_CT: float = 0.0482
    P_CR: float = 0.0625

    def __post_init__(self):
        if not (0.0 < self.varsigma <= 1.0):
            raise ConfigError(f"varsigma must be in (0, 1], got {self.varsigma}")
        for name in ("P_syn", "P_CT", "P_CR"):
            v = getattr(self, name)
            if not (v > 0.0 and math.isfinite(v)):
                raise ConfigError(f"{name} must be positive, got {v}")


@dataclass(frozen=True)
class FddParams:
    """Downlink-pilot power and per-user feedback bits for FDD operation."""

    p_dp: float = 0.1
    B: int = 32

    def __post_init__(self):
        if not (self.p_dp > 0.0 and math.isfinite(self.p_dp)):
            raise ConfigError(f"p_dp must be positive, got {self.p_dp}")
        if int(self.B) != self.B or self.B < 1:
            raise ConfigError(f"B must be a positive integer, got {self.B}")


@dataclass(frozen=True)
class SystemConfig:
    """Immutable scenario description shared by every module.

    Invariant: uplink pilot powers are compensated so that the product
    p_tr_k * beta_k is the same constant g for every user; the stored
    p_tr is the pilot power of user 1.
    """

    M: int
    L: int
    K: int
    T: int
    W: float
    p_tr: float
    sigma2_tr: float
    sigma2_dl: float
    P_T: float
    p_dl: tuple
    beta: tuple
    d: tuple
    circuit: CircuitPower
    xi: float
    fdd: Optional[FddParams] = None

    def __post_init__(self):
        for name in ("M", "L", "K", "T"):
            v = getattr(self, name)
            if int(v) != v or v < 1:
                raise ConfigError(f"{name} must be a positive integer, got {v}")
        if self.L > self.M:
            raise ConfigError(f"L must satisfy L <= M, got L={self.L}, M={self.M}")
        if self.K > self.T:
            raise ConfigError(f"K must satisfy K <= T, got K={self.K}, T={self.T}")
        for name in ("W", "p_tr", "sigma2_tr", "sigma2_dl", "P_T", "xi"):
            v = getattr(self, name)
            if not (v > 0.0 and math.isfinite(v)):
                raise ConfigError(f"{name} must be positive and finite, got {v}")
        for name in ("p_dl", "beta", "d"):
            vec = getattr(self, name)
            if len(vec) != self.K:
                raise ConfigError(f"{name} must have K={self.K} entries, got {len(vec)}")
            if any(not (x > 0.0 and math.isfinite(x)) for x in vec):
                raise ConfigError(f"{name} entries must be positive, got {vec}")

    @property
    def g(self) -> float:
        """Common compensated pilot-power/gain product p_tr_k * beta_k."""
        return self.p_tr * self.beta[0]

    @property
    def p_tr_per_user(self) -> np.ndarray:
        """Per-user compensated uplink pilot powers g / beta_k."""
        return self.g / np.asarray(self.beta)

    @property
    def beta_arr(self) -> np.ndarray:
        return np.asarray(self.beta)

    @property
    def p_dl_arr(self) -> np.ndarray:
        return np.asarray(self.p_dl)

    def replace(self, **raw) -> "SystemConfig":
        """Rebuild with the given raw-key overrides (same validation path)."""
        return build_config(merge_raw(self.as_raw(), raw))

    def as_raw(self) -> dict:
        """Flat key/value map that reconstructs this config bit-identically."""
        out = {
            "M": self.M, "L": self.L, "K": self.K, "T": self.T, "W": self.W,
            "p_tr": self.p_tr, "sigma2_tr": self.sigma2_tr,
            "sigma2_dl": self.sigma2_dl, "P_T": self.P_T,
            "p_dl": self.p_dl, "beta": self.beta, "d": self.d,
            "varsigma": self.circuit.varsigma, "P_syn": self.circuit.P_syn,
            "P_CT": self.circuit.P_CT, "P_CR": self.circuit.P_CR,
            "xi": self.xi,
        }
        if self.fdd is not None:
            out["p_dp"] = self.fdd.p_dp
            out["B"] = self.fdd.B
        return out


# Desk-scale defaults used throughout the experiments.
DEFAULTS: dict = {
    "M": 128,
    "L": 16,
    "K": 4,
    "T": 200,
    "W": 100e6,
    "p_tr": 0.1,                      # 20 dBm
    "sigma2_tr": dbm_to_watt(-96.0),
    "P_T": 1.0,                       # 30 dBm
    "d": 400.0,
    "varsigma": 0.35,
    "P_syn": 0.05,
    "P_CT": 0.0482,
    "P_CR": 0.0625,
    "p_dp": 0.1,
    "B": 32,
}

_REQUIRED = ("M", "L", "K", "T", "W", "p_tr", "sigma2_tr", "P_T")
_INT_KEYS = ("M", "L", "K", "T", "B")
_VEC_KEYS = ("p_dl", "beta", "d")
_DBM_KEYS = ("p_tr", "sigma2_tr", "sigma2_dl", "P_T", "P_syn", "P_CT", "P_CR", "p_dp")
_ALL_KEYS = frozenset(
    _REQUIRED + _VEC_KEYS + _INT_KEYS
    + ("sigma2_dl", "xi", "varsigma", "P_syn", "P_CT", "P_CR", "p_dp")
)


def _canonical(key: str) -> str:
    if key.endswith("_dbm") and key[:-4] in _DBM_KEYS:
        return key[:-4]
    return key


def merge_raw(base: Mapping, update: Mapping) -> dict:
    """Overlay raw maps; a `key_dbm` spelling displaces plain `key` and vice versa."""
    out = dict(base)
    for key, value in update.items():
        canon = _canonical(key)
        out.pop(canon, None)
        out.pop(canon + "_dbm", None)
        out[key] = value
    return out


def _as_float(key, value):
    try:
        return float(value)
    except (TypeError, ValueError):
        raise ConfigError(f"key '{key}' must be a number, got {value!r}") from None


def _as_vector(key, value, k):
    if np.isscalar(value):
        return (float(_as_float(key, value)),) * k
    vec = tuple(float(_as_float(key, v)) for v in value)
    if len(vec) == 1:
        return vec * k
    return vec


def build_config(raw: Mapping) -> SystemConfig:
    """Validate a flat key/value map and derive the remaining scalars.

    Derived when absent: sigma2_dl (= sigma2_tr), beta (from d through the
    path-loss model), p_dl (uniform 1), and the regularization default
    xi = sigma2_dl / (p_dl_1 * M * P_T).
    """
    raw = dict(raw)

    # Resolve dBm spellings first so validation sees watts.
    for key in list(raw):
        canon = _canonical(key)
        if canon != key:
            if canon in raw:
                raise ConfigError(f"both '{canon}' and '{key}' were given")
            raw[canon] = dbm_to_watt(_as_float(key, raw.pop(key)))

    unknown = set(raw) - _ALL_KEYS
    if unknown:
        raise ConfigError(f"unknown configuration key(s): {sorted(unknown)}")
    for key in _REQUIRED:
        if key not in raw:
            raise ConfigError(f"missing required key '{key}'")

    ints = {}
    for key in _INT_KEYS:
        if key in raw:
            v = _as_float(key, raw[key])
            if v != int(v):
                raise ConfigError(f"key '{key}' must be an integer, got {raw[key]!r}")
            ints[key] = int(v)

    m, l, k, t = ints["M"], ints["L"], ints["K"], ints["T"]
    if k < 1:
        raise ConfigError(f"K must be positive, got {k}")

    d = _as_vector("d", raw.get("d", DEFAULTS["d"]), k)
    beta = _as_vector("beta", raw["beta"], k) if "beta" in raw else tuple(pathloss(x) for x in d)
    p_dl = _as_vector("p_dl", raw.get("p_dl", 1.0), k)

    sigma2_tr = _as_float("sigma2_tr", raw["sigma2_tr"])
    sigma2_dl = _as_float("sigma2_dl", raw.get("sigma2_dl", sigma2_tr))
    p_t = _as_float("P_T", raw["P_T"])
    if "xi" in raw:
        xi = _as_float("xi", raw["xi"])
    else:
        if not (p_dl[0] > 0 and m > 0 and p_t > 0):
            raise ConfigError("cannot derive xi from non-positive p_dl, M, P_T")
        xi = sigma2_dl / (p_dl[0] * m * p_t)

    circuit = CircuitPower(
        varsigma=_as_float("varsigma", raw.get("varsigma", DEFAULTS["varsigma"])),
        P_syn=_as_float("P_syn", raw.get("P_syn", DEFAULTS["P_syn"])),
        P_CT=_as_float("P_CT", raw.get("P_CT", DEFAULTS["P_CT"])),
        P_CR=_as_float("P_CR", raw.get("P_CR", DEFAULTS["P_CR"])),
    )
    fdd = FddParams(
        p_dp=_as_float("p_dp", raw.get("p_dp", raw["p_tr"])),
        B=ints.get("B", DEFAULTS["B"]),
    )

    return SystemConfig(
        M=m, L=l, K=k, T=t,
        W=_as_float("W", raw["W"]),
        p_tr=_as_float("p_tr", raw["p_tr"]),
        sigma2_tr=sigma2_tr,
        sigma2_dl=sigma2_dl,
        P_T=p_t,
        p_dl=p_dl,
        beta=beta,
        d=d,
        circuit=circuit,
        xi=xi,
        fdd=fdd,
    )


def default_config(**overrides) -> SystemConfig:
    """Desk-scale default scenario, with optional raw-key overrides."""
    return build_config(merge_raw(DEFAULTS, overrides))


def _parse_value(text: str):
    text = text.strip()
    if "," in text:
        return tuple(_parse_value(part) for part in text.split(",") if part.strip())
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        raise ConfigError(f"cannot parse value {text!r}") from None


def parse_config_text(text: str) -> dict:
    """Parse `key = value` lines ('#' starts a comment) into a raw map."""
    raw: dict = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        if not key:
            raise ConfigError(f"line {lineno}: empty key")
        if key in raw:
            raise ConfigError(f"line {lineno}: duplicate key '{key}'")
        raw[key] = _parse_value(value)
    return raw


def parse_config_file(path) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config_text(fh.read())
