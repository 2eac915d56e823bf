"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line.

Tolerances are fixed here and never tuned to the outcome. Monte Carlo
criteria run the production grid (10,000 steps per day).
"""
from __future__ import annotations

import math
import time

import numpy as np
import pytest

from amm_lab.calibrate import fit_intensities, synthetic_buckets
from amm_lab.controls import controls_risk_neutral
from amm_lab.core import baseline_params, noise_trading_params
from amm_lab.oracle import argmax_sweep, residual_lattice, supermartingale_check
from amm_lab.riccati import existence_check, solve
from amm_lab.simulate import SimConfig, equal_split_P0, simulate_ensemble

from .conftest import ACCEPTANCE_LINES

pytestmark = pytest.mark.slow

N_STEPS = 10_000


def record(n: int, ok: bool, text: str) -> None:
    line = f"{'PASS' if ok else 'FAIL'} criterion {n}: {text}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def _flat(sol, k=0):
    return np.concatenate([[sol.g11[k]], sol.g1[k], sol.g2[k].ravel()])


def _rel_diff(a, b):
    fa, fb = _flat(a), _flat(b)
    return float(np.max(np.abs(fa - fb) / np.maximum(np.abs(fb), 1e-300)))


@pytest.fixture(scope="module", autouse=True)
def warm_kernels():
    # compile (or load cached) numba kernels outside every timed section
    p = noise_trading_params()
    sol = solve(p, n_steps=2000)
    simulate_ensemble(p, sol, SimConfig(n_steps=2000, n_paths=1, record_stride=2000))


@pytest.fixture(scope="module")
def nt_run():
    p = noise_trading_params()
    t0 = time.perf_counter()
    sol = solve(p, n_steps=N_STEPS)
    ens = simulate_ensemble(p, sol, SimConfig(n_steps=N_STEPS, n_paths=1000, seed=0))
    return p, sol, ens, time.perf_counter() - t0


def test_criterion_1_riccati_existence_and_solve():
    p = baseline_params()
    diag = existence_check(p)
    t0 = time.perf_counter()
    sol = solve(p, n_steps=N_STEPS)
    runtime = time.perf_counter() - t0
    asym = float(np.max(np.abs(sol.g2 - np.swapaxes(sol.g2, 1, 2))))
    sols = {n: solve(p, n_steps=n) for n in (16, 32, 64)}
    order = math.log2(_rel_diff(sols[16], sols[32]) / _rel_diff(sols[32], sols[64]))
    ok = diag.passes and asym <= 1e-10 and order >= 3.5 and runtime <= 5.0
    record(1, ok, f"existence {'PASS' if diag.passes else 'FAIL'} (max eigenvalue "
                  f"{diag.max_eigenvalue:.3g} vs threshold {diag.threshold:.3g}); "
                  f"|G2 - G2^T| = {asym:.1e}; order {order:.2f}; solve {runtime:.2f} s")
    assert ok


def test_criterion_2_hjb_residual():
    t0 = time.perf_counter()
    lattice = {}
    for name, p in (("baseline", baseline_params()), ("noise", noise_trading_params())):
        lattice[name] = residual_lattice(solve(p, n_steps=N_STEPS), p, n=5, tol=1e-6)
    # the calibrated sets sit on the float64 floor at every step count, so the
    # halving ratio is measured where the solver error dominates
    stiff = noise_trading_params(gamma=1e-6, zeta=1e-6, a3=0.0, impact_a=1e-4)
    coarse = residual_lattice(solve(stiff, n_steps=512), stiff).max_abs_error
    fine = residual_lattice(solve(stiff, n_steps=1024), stiff).max_abs_error
    ratio = coarse / fine
    p = noise_trading_params()
    floor_ratio = (residual_lattice(solve(p, n_steps=N_STEPS // 2), p).max_abs_error
                   / lattice["noise"].max_abs_error)
    runtime = time.perf_counter() - t0
    worst = max(r.value for r in lattice.values())
    ok = worst <= 1e-6 and 11.3 <= ratio <= 22.6 and runtime <= 30.0
    record(2, ok, f"max relative residual {worst:.2e} (tol 1e-6); halving ratio "
                  f"{ratio:.2f} on the stiff probe set (calibrated set: {floor_ratio:.2f}, "
                  f"roundoff-bound); {runtime:.1f} s")
    assert ok


def test_criterion_3_risk_neutral_limit():
    p = noise_trading_params(eta=1e-10)
    nu0 = controls_risk_neutral(0.0, p.z0, p.y0, p.s0, p).nu_star
    target = p.a2 * p.fee_r * p.horizon_T / p.impact_a
    limit_err = abs(nu0 / target - 1.0)
    cum = p.a2 * p.fee_r * p.horizon_T**2 / (2.0 * p.impact_a)
    fees = (p.a2 * p.fee_r) ** 2 * p.horizon_T**3 / (3.0 * p.impact_a)
    ok = (limit_err <= 1e-6 and abs(cum - 8460.0) <= 1e-9 * cum
          and abs(cum / 8000.0 - 1.0) <= 0.10 and abs(fees / 500.0 - 1.0) <= 0.10)
    record(3, ok, f"|nu(0) a/(a2 r T) - 1| = {limit_err:.1e}; integral of nu = {cum:.1f} ETH "
                  f"(vs ~8000: {cum / 8000 - 1:+.1%}); fees = {fees:.1f} USDC "
                  f"(vs ~500: {fees / 500 - 1:+.1%})")
    assert ok


def test_criterion_4_monte_carlo_reproduction(nt_run):
    p, _, ens, runtime = nt_run
    p0 = equal_split_P0(ens)
    run = ens.shifted(p0)
    cum, fees = float(run.cum_nu.mean()), float(run.ext_fees.mean())
    reward, venue = float(run.reward.mean()), float(run.venue_pnl.mean())
    total = p.fee_r * run.n_jumps
    # venue PnL is defined as r N - R, so the identity holds to the last ulp
    ulp = np.spacing(np.maximum(np.abs(run.reward), np.abs(total)))
    ident = float(np.max(np.abs(run.reward + run.venue_pnl - total) / ulp))
    ok = (6000 <= cum <= 10000 and 375 <= fees <= 625 and reward > 0 and venue > 0
          and ident <= 2 and runtime <= 300)
    record(4, ok, f"mean integral of nu = {cum:.1f} ETH; fees = {fees:.1f} USDC; "
                  f"P0* = {p0:.4g}; mean R = {reward:.4g}; mean venue = {venue:.4g}; "
                  f"identity within {ident:.0f} ulp; {runtime:.1f} s")
    assert ok


def test_criterion_5_collapse_without_noise_trading(nt_run):
    reference = float(nt_run[2].cum_nu.mean())
    limit = 0.01 * reference
    worst = {}
    for impact in (1e-13, 1e-12):
        p = baseline_params(impact_a=impact)
        ens = simulate_ensemble(p, solve(p, n_steps=N_STEPS),
                                SimConfig(n_steps=N_STEPS, n_paths=1000, seed=0))
        worst[impact] = float(np.max(np.abs(ens.series["cum_nu"].mean(axis=0))))
    ok = max(worst.values()) <= limit
    record(5, ok, "max_t |mean integral of nu| = "
                  + ", ".join(f"{v:.1f} ETH (a={k:g})" for k, v in worst.items())
                  + f" vs limit {limit:.1f}")
    assert ok


def test_criterion_6_no_mispricing_violations():
    p = baseline_params()
    ens = simulate_ensemble(p, solve(p, n_steps=N_STEPS),
                            SimConfig(n_steps=N_STEPS, n_paths=1000, seed=0))
    gap = np.abs(ens.series["s"] - ens.series["z"])
    d = p.a1 / p.a3
    frac = float(np.mean(gap > d))
    ok = frac == 0.0
    record(6, ok, f"fraction of |S - Z| > {d:.2f}: {frac:.4f} "
                  f"(max |S - Z| = {gap.max():.1f}) over {gap.size} samples")
    assert ok


def test_criterion_7_calibration_round_trip():
    hits = 0
    for seed in range(20):
        res = fit_intensities(synthetic_buckets(142.7, 13.6, n_buckets=17_000, seed=seed))
        hits += (abs(res.a1_hat - 142.7) <= 2 * res.a1_se
                 and abs(res.a3_hat - 13.6) <= 2 * res.a3_se)
    ok = hits >= 19
    record(7, ok, f"{hits}/20 seeds recover (a1, a3) within 2 SE (17,000 buckets each)")
    assert ok


def test_criterion_8_argmax_oracle():
    out = []
    for p in (baseline_params(), noise_trading_params()):
        out.append(argmax_sweep(solve(p, n_steps=N_STEPS), p, n_states=200, seed=0))
    ok = all(r.passed for r in out)
    record(8, ok, "; ".join(f"{r.details['n_states'] - r.details['n_failed']}/200 states, "
                            f"max gap {r.value:.1e}, max {r.details['max_steps_off']:.2f} "
                            f"grid steps off" for r in out))
    assert ok


def test_criterion_9_supermartingale(nt_run):
    p, sol = nt_run[0], nt_run[1]
    cfg = SimConfig(n_steps=N_STEPS, n_paths=20_000, seed=1)
    mart = supermartingale_check(p, sol, cfg, "optimal", tol_se=3.0)
    sup = supermartingale_check(p, sol, cfg, "zero", tol_se=3.0)
    ok = mart.passed and sup.passed
    record(9, ok, f"nu = nu_bar: max |m(t) - m(0)| = {mart.value:.2f} SE; "
                  f"nu = 0: max increase = {sup.value:.2f} SE (20,000 paths)")
    assert ok


def test_criterion_10_poisson_counts():
    p = baseline_params(a3=0.0)
    n = 2000
    ens = simulate_ensemble(p, solve(p, n_steps=N_STEPS),
                            SimConfig(n_steps=N_STEPS, n_paths=n, seed=0, record_stride=N_STEPS))
    lam = p.a1 * p.horizon_T
    se_mean = math.sqrt(lam / n)
    se_var = math.sqrt((lam + 2 * lam * lam) / n)
    worst, parts = 0.0, []
    for side in ("n_minus", "n_plus"):
        counts = ens.series[side][:, -1]
        zm = (counts.mean() - lam) / se_mean
        zv = (counts.var(ddof=1) - lam) / se_var
        worst = max(worst, abs(zm), abs(zv))
        parts.append(f"{side} mean {counts.mean():.2f} ({zm:+.2f} SE), "
                     f"var {counts.var(ddof=1):.1f} ({zv:+.2f} SE)")
    ok = worst <= 4.0
    record(10, ok, f"target {lam:.1f}; " + "; ".join(parts))
    assert ok
