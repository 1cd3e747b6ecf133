"""Command-line front end: reproducible experiments emitting CSV or JSON.

Powers cross the boundary in dBm and rates in bits; the library works in
watts and nats internally. Every stochastic command is controlled by a
(--seed, --trials) pair and produces byte-identical output for identical
invocations, independent of the worker count.
"""

from __future__ import annotations

import argparse
import json
import math
import sys

import numpy as np

from . import detequiv, energy_ee, optimizer, precode_mc
from .scenario import (
    ConfigError, DEFAULTS, build_config, dbm_to_watt, merge_raw,
    parse_config_file, watt_to_dbm,
)
from .util import fmt_float
from .vr_detect import (
    DetectorParams, error_probs, threshold_equal_error, threshold_min_sum,
)

LN2 = math.log(2.0)
SCHEMES = ("perfect", "without_vr", "exact", "min_sum", "equal_error", "fixed_threshold")


def _parse_values(text: str) -> list:
    """Numeric list syntax: 'lo:hi:n' (inclusive linspace) or 'a,b,c' or scalar."""
    text = text.strip()
    if ":" in text:
        parts = text.split(":")
        if len(parts) != 3:
            raise ConfigError(f"range syntax is lo:hi:n, got {text!r}")
        lo, hi, n = float(parts[0]), float(parts[1]), int(parts[2])
        if n < 1:
            raise ConfigError(f"range needs n >= 1 points, got {n}")
        return [float(v) for v in np.linspace(lo, hi, n)]
    return [float(v) for v in text.split(",") if v.strip()]


def _parse_pairs(text: str) -> list:
    pairs = []
    for chunk in text.split(";"):
        chunk = chunk.strip()
        if not chunk:
            continue
        try:
            i_s, j_s = chunk.split(",")
            pairs.append((int(i_s), int(j_s)))
        except ValueError:
            raise ConfigError(f"pair syntax is 'i,j;i,j;...', got {chunk!r}") from None
    if not pairs:
        raise ConfigError("no (i, j) pairs given")
    return pairs


def _resolve_raw(args) -> dict:
    raw = dict(DEFAULTS)
    if args.config:
        raw = merge_raw(raw, parse_config_file(args.config))
    overrides = {}
    for item in args.set or []:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        key, _, value = item.partition("=")
        from .scenario import _parse_value  # same grammar as the config file
        overrides[key.strip()] = _parse_value(value)
    return merge_raw(raw, overrides)


def _emit(args, command: str, columns: list, rows: list, config_raw: dict):
    if args.format == "csv":
        lines = [",".join(columns)]
        for row in rows:
            cells = []
            for v in row:
                if isinstance(v, str):
                    cells.append(v)
                elif isinstance(v, (int, np.integer)):
                    cells.append(str(int(v)))
                else:
                    cells.append(fmt_float(v))
            lines.append(",".join(cells))
        text = "\n".join(lines) + "\n"
    else:
        payload = {
            "command": command,
            "seed": args.seed,
            "trials": args.trials,
            "config": {k: list(v) if isinstance(v, tuple) else v
                       for k, v in sorted(config_raw.items())},
            "columns": columns,
            "rows": [[v if isinstance(v, (str, int)) else float(v) for v in row]
                     for row in rows],
        }
        text = json.dumps(payload, indent=2) + "\n"
    if args.output:
        with open(args.output, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _resolve_zeta0(config, tau, mode, zeta_dbm):
    if zeta_dbm is not None:
        return dbm_to_watt(zeta_dbm)
    if mode == "min_sum":
        return threshold_min_sum(tau, config.sigma2_tr, config.g)
    if mode == "equal_error":
        return threshold_equal_error(tau, config.sigma2_tr, config.g)
    if mode == "exact":
        return optimizer.opt_threshold(config, tau, "exact")
    raise ConfigError(f"cannot resolve a threshold from mode {mode!r}")


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_probs(args, raw):
    config = build_config(raw)
    taus = [int(t) for t in _parse_values(args.tau)]
    zetas_dbm = np.linspace(args.zeta_dbm_min, args.zeta_dbm_max, args.zeta_points)
    rows = []
    for tau in taus:
        for z_dbm in zetas_dbm:
            params = DetectorParams(zeta0=dbm_to_watt(z_dbm), tau=tau,
                                    sigma2_tr=config.sigma2_tr, g=config.g)
            p = error_probs(params)
            rows.append([tau, float(z_dbm), p.p10, p.p01])
    _emit(args, "probs", ["tau", "zeta0_dbm", "p10", "p01"], rows, raw)


def cmd_rate(args, raw):
    pairs = _parse_pairs(args.pairs)
    rows = []
    for pt_dbm in _parse_values(args.pt_dbm):
        config = build_config(merge_raw(raw, {"P_T_dbm": pt_dbm}))
        b = args.feedback_bits if args.feedback_bits else (
            config.fdd.B if args.duplex == "fdd" else None)
        for i, j in pairs:
            if args.duplex == "tdd":
                det = detequiv.sum_rate_tdd(config, i, j, args.tau)
            else:
                det = detequiv.sum_rate_fdd(config, i, j, b)
            mc = precode_mc.ergodic_rate(config, args.tau, args.trials, args.seed,
                                         ij=(i, j), duplex=args.duplex, b=b)
            rows.append([float(pt_dbm), i, j, det / LN2, mc.sum_rate / LN2,
                         mc.se_sum / LN2])
    _emit(args, "rate",
          ["p_t_dbm", "i", "j", "rate_det_bits", "rate_mc_bits", "rate_mc_stderr_bits"],
          rows, raw)


def _point_mass_ee(config, i, j, tau, duplex, b):
    """EE of a single forced outcome (i, j); used by the reference schemes."""
    rate = (detequiv.sum_rate_tdd(config, i, j, tau) if duplex == "tdd"
            else detequiv.sum_rate_fdd(config, i, j, b))
    pc = energy_ee.p_cir(i + j, config)
    if duplex == "tdd":
        frac = (config.T - tau) / config.T
    else:
        frac = max(config.T - tau - (i + j), 0) / config.T
    return config.W * frac * rate / pc


def _best_tau_point_mass(config, i, j, duplex, b):
    hi = config.T if duplex == "tdd" else config.T - 1
    best = (-1.0, config.K)
    for tau in range(config.K, hi + 1):
        v = _point_mass_ee(config, i, j, tau, duplex, b)
        if v > best[0]:
            best = (v, tau)
    return best  # (ee, tau)


def cmd_ee(args, raw):
    schemes = [s.strip() for s in args.schemes.split(",") if s.strip()]
    unknown = set(schemes) - set(SCHEMES)
    if unknown:
        raise ConfigError(f"unknown scheme(s): {sorted(unknown)}")
    rows = []
    for pt_dbm in _parse_values(args.pt_dbm):
        config = build_config(merge_raw(raw, {"P_T_dbm": pt_dbm}))
        b = config.fdd.B if args.duplex == "fdd" else None
        for scheme in schemes:
            if scheme in ("perfect", "without_vr"):
                j = 0 if scheme == "perfect" else config.M - config.L
                ee, tau = _best_tau_point_mass(config, config.L, j, args.duplex, b)
                rows.append([float(pt_dbm), scheme, "", tau, ee / LN2])
                continue
            if scheme == "fixed_threshold":
                res = optimizer.alternate_optimize(
                    config, args.duplex, b=b,
                    fixed_zeta0=dbm_to_watt(args.fixed_zeta_dbm))
            else:
                res = optimizer.alternate_optimize(config, args.duplex,
                                                   threshold_mode=scheme, b=b)
            rows.append([float(pt_dbm), scheme, fmt_float(watt_to_dbm(res.zeta0)),
                         res.tau, res.ee / LN2])
    _emit(args, "ee",
          ["p_t_dbm", "scheme", "zeta0_dbm", "tau", "ee_bits_per_joule"],
          rows, raw)


def cmd_optimize(args, raw):
    config = build_config(raw)
    b = config.fdd.B if args.duplex == "fdd" else None
    res = optimizer.alternate_optimize(config, args.duplex,
                                       threshold_mode=args.threshold_mode, b=b)
    rows = []
    for it, (zeta, tau, ee) in enumerate(res.trace, start=1):
        rows.append([it, watt_to_dbm(zeta), tau, ee / LN2, 0])
    rows.append([res.iterations, watt_to_dbm(res.zeta0), res.tau, res.ee / LN2, 1])
    _emit(args, "optimize",
          ["iteration", "zeta0_dbm", "tau", "ee_bits_per_joule", "is_final"],
          rows, raw)


def cmd_montecarlo(args, raw):
    config = build_config(raw)
    tau = args.tau if args.tau else config.K
    b = config.fdd.B if args.duplex == "fdd" else None
    zeta0 = _resolve_zeta0(config, tau, args.threshold_mode, args.zeta_dbm)
    mc = precode_mc.mc_average_ee(config, zeta0, tau, args.trials, args.seed,
                                  duplex=args.duplex, b=b)
    det = optimizer.objective_ee(config, zeta0, tau, args.duplex, b)
    rows = [[args.duplex, watt_to_dbm(zeta0), tau, args.trials,
             mc.ee / LN2, mc.stderr / LN2, det / LN2]]
    _emit(args, "montecarlo",
          ["duplex", "zeta0_dbm", "tau", "trials",
           "ee_mc_bits_per_joule", "ee_mc_stderr", "ee_det_bits_per_joule"],
          rows, raw)


def cmd_sweep(args, raw):
    rows = []
    for value in _parse_values(args.values):
        if args.key == "tau":
            config = build_config(raw)
            tau = int(value)
        else:
            config = build_config(merge_raw(raw, {args.key: value}))
            tau = args.tau if args.tau else config.K
        b = config.fdd.B if args.duplex == "fdd" else None
        zeta0 = _resolve_zeta0(config, tau, args.threshold_mode, args.zeta_dbm)
        ee = optimizer.objective_ee(config, zeta0, tau, args.duplex, b)
        rows.append([args.key, float(value), watt_to_dbm(zeta0), tau, ee / LN2])
    _emit(args, "sweep",
          ["key", "value", "zeta0_dbm", "tau", "ee_det_bits_per_joule"],
          rows, raw)


def cmd_validate(args, raw):
    from .acceptance import run_all

    results = run_all(seed=args.seed, verbose=True)
    if args.output:
        with open(args.output, "w", encoding="utf-8", newline="") as fh:
            for name, ok, detail in results:
                fh.write(f"{'PASS' if ok else 'FAIL'} {name}: {detail}\n")
    return 0 if all(ok for _, ok, _ in results) else 1


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="xlmimo",
        description="Energy-efficiency experiments for non-stationary XL-MIMO.")
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat key=value configuration file")
    common.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override a configuration key (repeatable)")
    common.add_argument("--seed", type=int, default=42)
    common.add_argument("--trials", type=int, default=10_000)
    common.add_argument("--output", help="write to this path instead of stdout")
    common.add_argument("--format", choices=("csv", "json"), default="csv")

    p = sub.add_parser("probs", parents=[common],
                       help="detector error probabilities versus threshold")
    p.add_argument("--tau", default="4", help="pilot length(s), e.g. '4,8'")
    p.add_argument("--zeta-dbm-min", type=float, default=-130.0)
    p.add_argument("--zeta-dbm-max", type=float, default=-80.0)
    p.add_argument("--zeta-points", type=int, default=51)
    p.set_defaults(func=cmd_probs)

    p = sub.add_parser("rate", parents=[common],
                       help="deterministic vs Monte-Carlo sum rate per outcome")
    p.add_argument("--pairs", default="16,0;8,0;16,112;8,16")
    p.add_argument("--pt-dbm", default="10:40:7", help="transmit power grid")
    p.add_argument("--tau", type=int, default=20)
    p.add_argument("--duplex", choices=("tdd", "fdd"), default="tdd")
    p.add_argument("--feedback-bits", type=int, default=0)
    p.set_defaults(func=cmd_rate)

    p = sub.add_parser("ee", parents=[common],
                       help="average EE of the threshold schemes vs transmit power")
    p.add_argument("--pt-dbm", default="10:30:5")
    p.add_argument("--duplex", choices=("tdd", "fdd"), default="tdd")
    p.add_argument("--schemes", default=",".join(SCHEMES))
    p.add_argument("--fixed-zeta-dbm", type=float, default=-60.0)
    p.set_defaults(func=cmd_ee)

    p = sub.add_parser("optimize", parents=[common],
                       help="alternating threshold / pilot-length optimization")
    p.add_argument("--duplex", choices=("tdd", "fdd"), default="tdd")
    p.add_argument("--threshold-mode", choices=optimizer.THRESHOLD_MODES,
                   default="exact")
    p.set_defaults(func=cmd_optimize)

    p = sub.add_parser("montecarlo", parents=[common],
                       help="Monte-Carlo average EE at one operating point")
    p.add_argument("--tau", type=int, default=0, help="pilot length (default K)")
    p.add_argument("--zeta-dbm", type=float, default=None)
    p.add_argument("--threshold-mode", default="min_sum",
                   choices=optimizer.THRESHOLD_MODES)
    p.add_argument("--duplex", choices=("tdd", "fdd"), default="tdd")
    p.set_defaults(func=cmd_montecarlo)

    p = sub.add_parser("sweep", parents=[common],
                       help="deterministic EE over a swept configuration key")
    p.add_argument("--key", required=True, help="config key, or 'tau'")
    p.add_argument("--values", required=True, help="'lo:hi:n' or 'a,b,c'")
    p.add_argument("--tau", type=int, default=0, help="pilot length (default K)")
    p.add_argument("--zeta-dbm", type=float, default=None)
    p.add_argument("--threshold-mode", default="min_sum",
                   choices=optimizer.THRESHOLD_MODES)
    p.add_argument("--duplex", choices=("tdd", "fdd"), default="tdd")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("validate", parents=[common],
                       help="run the acceptance suite and report pass/fail")
    p.set_defaults(func=cmd_validate)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        raw = _resolve_raw(args)
        status = args.func(args, raw)
    except (ConfigError, ValueError, OSError) as exc:
        print(f"xlmimo: error: {exc}", file=sys.stderr)
        return 2
    return int(status or 0)


if __name__ == "__main__":
    sys.exit(main())
