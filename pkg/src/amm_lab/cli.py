"""Command-line front door: ``amm-lab {calibrate,solve,simulate,verify,report}``.

Every run reads one ``key = value`` config file whose keys mirror
:class:`~amm_lab.core.ModelParams` and :class:`~amm_lab.simulate.SimConfig`
fields; flags override it. Outputs go under ``--out``, else ``$AMM_LAB_OUT``,
else ``./amm_lab_out``.

Exit codes: 0 success, 1 verification failure, 2 input error.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from dataclasses import dataclass, fields
from importlib import resources
from pathlib import Path

import numpy as np

from . import calibrate as cal
from . import oracle
from .core import DomainError, ModelParams
from .riccati import RiccatiBlowUp, RiccatiSolution, existence_check, solve
from .simulate import (RISK_AVERSE, Ensemble, EnsembleSummary, SimConfig, SimulationGridError,
                       equal_split_P0, simulate_ensemble)

__all__ = ["RunConfig", "ConfigError", "load_config", "build_parser", "main"]

log = logging.getLogger("amm_lab")

EXIT_OK, EXIT_VERIFY, EXIT_INPUT = 0, 1, 2
SHIPPED = ("noise_trading", "baseline")
DEFAULT_CONFIG = "noise_trading"
RICCATI_CSV = "riccati.csv"
SIM_DIR = "simulate"
ENSEMBLE_NPZ = "ensemble.npz"

_PARAM_KEYS = {f.name for f in fields(ModelParams)}
_SIM_KEYS = {f.name for f in fields(SimConfig)}
_RUN_KEYS = {"solve_steps": int, "ticks": str, "window_minutes": float,
             "verify_paths": int, "argmax_states": int}


class ConfigError(ValueError):
    """Bad config file or flag value."""


class MissingArtifact(FileNotFoundError):
    """An upstream subcommand has not been run yet."""


@dataclass(frozen=True)
class RunConfig:
    params: ModelParams
    sim: SimConfig
    out: Path
    source: str
    solve_steps: int = 10_000
    ticks: Path | None = None
    window_minutes: float = 10.0
    verify_paths: int = 2000
    argmax_states: int = 200


def _coerce(raw: str, like):
    if isinstance(like, bool) or like is bool:
        low = raw.lower()
        if low not in ("1", "0", "true", "false", "yes", "no"):
            raise ConfigError(f"expected a boolean, got {raw!r}")
        return low in ("1", "true", "yes")
    if like is int or isinstance(like, int):
        try:
            return int(raw)
        except ValueError:
            value = float(raw)  # accept 1e4
            if not value.is_integer():
                raise ConfigError(f"expected an integer, got {raw!r}") from None
            return int(value)
    if like is float or isinstance(like, float):
        return float(raw)
    return raw


def _read_pairs(text: str, source: str) -> dict[str, str]:
    pairs = {}
    for n, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{n}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        if key in pairs:
            raise ConfigError(f"{source}:{n}: duplicate key {key!r}")
        pairs[key] = value
    return pairs


def _config_text(name: str | None) -> tuple[str, str]:
    name = name or DEFAULT_CONFIG
    if name in SHIPPED:
        ref = resources.files("amm_lab") / "configs" / f"{name}.cfg"
        return ref.read_text(), f"<shipped:{name}>"
    path = Path(name)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path} (shipped configs: {', '.join(SHIPPED)})")
    return path.read_text(), str(path)


def load_config(name: str | None = None, out: str | Path | None = None,
                **overrides) -> RunConfig:
    """Parse a config file (path or shipped name) and apply overrides.

    ``overrides`` take the same keys as the file; ``None`` values are ignored.
    """
    text, source = _config_text(name)
    pairs: dict[str, object] = dict(_read_pairs(text, source))
    pairs.update({k: v for k, v in overrides.items() if v is not None})
    unknown = set(pairs) - _PARAM_KEYS - _SIM_KEYS - set(_RUN_KEYS)
    if unknown:
        raise ConfigError(f"{source}: unknown keys {sorted(unknown)}")

    def typed(key, like):
        value = pairs[key]
        return _coerce(value, like) if isinstance(value, str) else value

    try:
        pkw = {k: typed(k, float) for k in _PARAM_KEYS if k in pairs}
        defaults = SimConfig()
        skw = {}
        for k in _SIM_KEYS & set(pairs):
            like = getattr(defaults, k)
            if k == "nu_override":
                like = float
            elif k == "backend":
                like = str
            skw[k] = typed(k, like)
        params = ModelParams(**pkw)
        sim = SimConfig(**skw)
        run = {k: typed(k, t) for k, t in _RUN_KEYS.items() if k in pairs}
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"{source}: {exc}") from exc
    if "ticks" in run:
        run["ticks"] = Path(run["ticks"])
    out_dir = Path(out or os.environ.get("AMM_LAB_OUT") or "amm_lab_out")
    return RunConfig(params=params, sim=sim, out=out_dir, source=source, **run)


# subcommands ---------------------------------------------------------------------------

def cmd_calibrate(cfg: RunConfig) -> int:
    if cfg.ticks is None:
        raise ConfigError("calibrate needs a ticks CSV (--ticks or 'ticks = ...' in the config)")
    ticks = cal.load_ticks(cfg.ticks)
    for issue in ticks.issues[:10]:
        log.warning("%s:%d skipped: %s", cfg.ticks, issue.line, issue.message)
    buckets = cal.bucketize(ticks.records, cfg.window_minutes)
    result = cal.fit_intensities(buckets)
    cfg.out.mkdir(parents=True, exist_ok=True)
    result.to_json(cfg.out / "calibration.json")
    cal.write_residuals(buckets, result, cfg.out / "calibration_residuals.csv")
    print(f"buckets: {result.n_buckets}  skipped rows: {len(ticks.issues)}")
    print(f"a1_hat = {result.a1_hat:.6g} +/- {result.a1_se:.3g}")
    print(f"a3_hat = {result.a3_hat:.6g} +/- {result.a3_se:.3g}")
    print(f"boundary d = a1/a3 = {result.boundary_d:.6g}")
    print(f"violation fraction: {result.violation_fraction:.4%} "
          f"(left {result.violations_left}, right {result.violations_right})")
    return EXIT_OK


def cmd_solve(cfg: RunConfig) -> int:
    diag = existence_check(cfg.params)
    status = "PASS" if diag.passes else "FAIL"
    print(f"existence: {status} (max eigenvalue {diag.max_eigenvalue:.6g}, "
          f"threshold {diag.threshold:.3g})")
    if not diag.passes:
        print("warning: Theta + Theta^T is not negative semi-definite; the sufficient "
              "condition for a global solution does not hold, integrating anyway",
              file=sys.stderr)
    sol = solve(cfg.params, n_steps=cfg.solve_steps)
    cfg.out.mkdir(parents=True, exist_ok=True)
    sol.to_csv(cfg.out / RICCATI_CSV)
    g2 = sol.g2[0]
    print(f"solved on [0, {sol.horizon:g}] with {sol.n_steps} RK4 steps -> {cfg.out / RICCATI_CSV}")
    print("G2(0) =")
    for row in g2:
        print("  " + "  ".join(f"{v: .10e}" for v in row))
    return EXIT_OK


def _load_solution(cfg: RunConfig, force: bool = False) -> RiccatiSolution | None:
    if cfg.sim.regime != RISK_AVERSE and not force:
        return None
    path = cfg.out / RICCATI_CSV
    if not path.is_file():
        raise MissingArtifact(f"{path} not found; run 'amm-lab solve' with the same "
                              f"--config and --out first")
    sol = RiccatiSolution.from_csv(path)
    if abs(sol.horizon - cfg.params.horizon_T) > 1e-12:
        raise ConfigError(f"{path} covers [0, {sol.horizon}] but horizon_T = "
                          f"{cfg.params.horizon_T}; rerun 'amm-lab solve'")
    return sol


def cmd_simulate(cfg: RunConfig, write_paths: bool = False) -> int:
    sol = _load_solution(cfg)
    ens = simulate_ensemble(cfg.params, sol, cfg.sim)
    p0 = equal_split_P0(ens)
    shifted = ens.shifted(p0)
    summary = EnsembleSummary.from_ensemble(shifted)
    out = cfg.out / SIM_DIR
    summary.write(out, paths=write_paths)
    with open(out / "summary.json") as fh:
        doc = json.load(fh)
    doc["equal_split_p0"] = p0
    doc["guard_steps"] = int(ens.guard_steps.sum())
    doc["max_jump_prob"] = float(ens.max_jump_prob.max())
    with open(out / "summary.json", "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
    np.savez_compressed(out / ENSEMBLE_NPZ, times=shifted.times, p0=p0,
                        **shifted.series)
    print(f"{summary.n_paths} paths x {cfg.sim.n_steps} steps ({cfg.sim.regime}) -> {out}")
    print(f"equal-split P0 = {p0:.6g}")
    print(f"mean cumulative LP flow = {summary.mean_cum_nu:.6g} ETH")
    print(f"mean external fees = {summary.mean_ext_fees:.6g} USDC")
    print(f"mean reward = {summary.mean_reward:.6g} +/- {summary.se_reward:.3g}")
    print(f"mean venue PnL = {summary.mean_venue_pnl:.6g} +/- {summary.se_venue_pnl:.3g}")
    return EXIT_OK


def _verify_reports(cfg: RunConfig, sol: RiccatiSolution) -> list[oracle.OracleReport]:
    p = cfg.params
    reports = [
        oracle.laurent_error(p.y0, p.xi),
        oracle.risk_neutral_limit(p),
        oracle.argmax_sweep(sol, p, cfg.argmax_states, seed=cfg.sim.seed),
        oracle.residual_lattice(sol, p),
    ]
    mc = cfg.sim.with_(n_paths=cfg.verify_paths, regime=RISK_AVERSE)
    reports.append(oracle.supermartingale_check(p, sol, mc, "optimal"))
    reports.append(oracle.supermartingale_check(p, sol, mc, "zero"))
    return reports


def cmd_verify(cfg: RunConfig) -> int:
    sol = _load_solution(cfg, force=True)
    reports = _verify_reports(cfg, sol)
    cfg.out.mkdir(parents=True, exist_ok=True)
    with open(cfg.out / "verify.jsonl", "w") as fh:
        for r in reports:
            fh.write(r.to_json_line() + "\n")
    for r in reports:
        print(f"{'PASS' if r.passed else 'FAIL'}  {r.name:<20} {r.metric} = "
              f"{r.value:.3g} (tol {r.tolerance:g})")
    return EXIT_OK if all(r.passed for r in reports) else EXIT_VERIFY


def _write_hist(path: Path, values: np.ndarray, bins: int = 50) -> None:
    counts, edges = np.histogram(values[np.isfinite(values)], bins=bins)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["left", "right", "count"])
        for lo, hi, c in zip(edges[:-1], edges[1:], counts):
            w.writerow([repr(float(lo)), repr(float(hi)), int(c)])


def _write_bands(path: Path, times: np.ndarray, named: dict[str, np.ndarray]) -> None:
    cols = ["t"]
    data = [times]
    for name, arr in named.items():
        q05, q50, q95 = np.quantile(arr, [0.05, 0.5, 0.95], axis=0)
        cols += [f"{name}_mean", f"{name}_q05", f"{name}_median", f"{name}_q95"]
        data += [arr.mean(axis=0), q05, q50, q95]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for row in zip(*data):
            w.writerow([repr(float(v)) for v in row])


def cmd_report(cfg: RunConfig) -> int:
    npz = cfg.out / SIM_DIR / ENSEMBLE_NPZ
    if not npz.is_file():
        raise MissingArtifact(f"{npz} not found; run 'amm-lab simulate' with the same "
                              f"--config and --out first")
    data = np.load(npz)
    series = {k: data[k] for k in data.files if k not in ("times", "p0")}
    times, p0 = data["times"], float(data["p0"])
    ens = Ensemble(times, series, p0, cfg.params.fee_r, cfg.sim)
    out = cfg.out / "report"
    out.mkdir(parents=True, exist_ok=True)

    written = []
    resid = cfg.out / "calibration_residuals.csv"
    if resid.is_file():
        with open(resid, newline="") as fh:
            m = np.array([float(r["mispricing"]) for r in csv.DictReader(fh) if r["side"] == "minus"])
        _write_hist(out / "hist_mispricing_data.csv", m)
        written.append("hist_mispricing_data.csv")
    hists = {"hist_mispricing_sim.csv": (series["s"] - series["z"]).ravel(),
             "hist_reward.csv": ens.reward, "hist_venue_pnl.csv": ens.venue_pnl}
    for name, values in hists.items():
        _write_hist(out / name, values)
        written.append(name)
    bands = {
        "band_prices.csv": {"s": series["s"], "z": series["z"], "gap": series["s"] - series["z"]},
        "band_reserves.csv": {"y": series["y"], "c": series["c"]},
        "band_liquidity.csv": {"nu": series["nu"], "cum_nu": series["cum_nu"],
                               "ext_fees": series["ext_fees"]},
        "band_jumps.csv": {"n_minus": series["n_minus"], "n_plus": series["n_plus"]},
        "band_wealth.csv": {"p": series["p"], "q_lp": series["q_lp"],
                            "venue": cfg.params.fee_r * (series["n_minus"] + series["n_plus"])
                            - series["p"]},
    }
    for name, named in bands.items():
        _write_bands(out / name, times, named)
        written.append(name)
    if not resid.is_file():
        print("note: no calibration residuals found; run 'amm-lab calibrate' for the "
              "empirical mispricing histogram")
    print(f"wrote {len(written)} files to {out}: {', '.join(written)}")
    return EXIT_OK


# argument handling ---------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help=f"config file or shipped name {SHIPPED} "
                                         f"(default {DEFAULT_CONFIG})")
    common.add_argument("--seed", type=int)
    common.add_argument("--paths", type=int, help="Monte Carlo paths")
    common.add_argument("--steps", type=int,
                        help="time steps (ODE steps for solve, Euler steps otherwise)")
    common.add_argument("--threads", type=int, help="worker threads for the ensemble")
    common.add_argument("--out", help="output directory (default $AMM_LAB_OUT or ./amm_lab_out)")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="amm-lab", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    p_cal = sub.add_parser("calibrate", parents=[common], help="fit a1, a3 from a ticks CSV")
    p_cal.add_argument("--ticks", help="CSV with columns timestamp,s,z,side,size[,y]")
    p_cal.add_argument("--window", type=float, help="bucket width in minutes (default 10)")
    sub.add_parser("solve", parents=[common], help="integrate the Riccati system")
    p_sim = sub.add_parser("simulate", parents=[common], help="run the Monte Carlo ensemble")
    p_sim.add_argument("--write-paths", action="store_true",
                       help="also write every recorded path per series")
    sub.add_parser("verify", parents=[common], help="run the oracle suite")
    sub.add_parser("report", parents=[common], help="assemble plot-ready CSV bundles")
    return parser


def _run_config(args: argparse.Namespace) -> RunConfig:
    overrides = {"seed": args.seed, "n_paths": args.paths, "threads": args.threads}
    if args.steps is not None:
        overrides["solve_steps" if args.command == "solve" else "n_steps"] = args.steps
    if args.command == "calibrate":
        overrides["ticks"] = args.ticks
        overrides["window_minutes"] = args.window
    if args.paths is not None and args.command == "verify":
        overrides["verify_paths"] = overrides.pop("n_paths")
    return load_config(args.config, out=args.out, **overrides)


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _run_config(args)
        if args.command == "calibrate":
            return cmd_calibrate(cfg)
        if args.command == "solve":
            return cmd_solve(cfg)
        if args.command == "simulate":
            return cmd_simulate(cfg, write_paths=args.write_paths)
        if args.command == "verify":
            return cmd_verify(cfg)
        return cmd_report(cfg)
    except (ConfigError, MissingArtifact, cal.TickFormatError, cal.CalibrationError,
            DomainError, SimulationGridError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except RiccatiBlowUp as exc:
        print(f"error: {exc}; the parameters admit no solution on the whole horizon",
              file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
