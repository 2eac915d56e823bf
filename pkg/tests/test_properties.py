"""Property-based checks of the model invariants."""
import math

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from amm_lab.calibrate import TradeBucket, fit_intensities, synthetic_buckets
from amm_lab.controls import controls_risk_averse, nu_bar, value_jumps
from amm_lab.core import (PoolState, Side, apply_lp_flow, apply_lt_trade, baseline_params,
                          intensities, jump_deltas, noise_trading_params)
from amm_lab.oracle import laurent_error
from amm_lab.riccati import existence_check, solve, value_hat

prices = st.floats(500.0, 10_000.0)
reserves = st.floats(1_000.0, 200_000.0)
lots = st.floats(1.0, 500.0)
times = st.floats(0.0, 1.0)

_NT = noise_trading_params()
_SOL = solve(_NT, n_steps=400)


@given(z=prices, y=reserves, xi=lots, side=st.sampled_from(list(Side)))
def test_trade_preserves_depth_and_price_identity(z, y, xi, side):
    assume(side is Side.SELL or y > xi)
    pool = PoolState.from_price(z, y)
    new = apply_lt_trade(pool, side, xi)
    assert new.c == pool.c
    assert new.z == pytest.approx(new.c / new.y**2, rel=1e-12)
    assert (new.z > pool.z) == (side is Side.BUY)


@given(z=prices, y=reserves, xi=lots)
def test_sell_then_buy_round_trips(z, y, xi):
    pool = PoolState.from_price(z, y)
    back = apply_lt_trade(apply_lt_trade(pool, Side.SELL, xi), Side.BUY, xi)
    assert back.y == pytest.approx(y, rel=1e-14)
    assert back.z == pytest.approx(z, rel=1e-12)


@given(z=prices, y=reserves, dy=st.floats(-900.0, 5_000.0))
def test_lp_flow_keeps_marginal_price(z, y, dy):
    pool = apply_lp_flow(PoolState.from_price(z, y), dy)
    assert pool.z == z
    assert pool.c == pytest.approx(z * pool.y**2, rel=1e-12)


@given(z=prices, y=reserves, s=prices)
def test_intensities_floor_and_mirror(z, y, s):
    p = noise_trading_params()
    lm, lp = intensities(p, z, y, s)
    assert lm >= p.a0 and lp >= p.a0
    lm2, lp2 = intensities(p, s, y, z)  # swapping the gap mirrors the sides
    assert (lm, lp) == pytest.approx((lp2, lm2))


@given(z=prices, y=reserves, s=prices, xi=lots)
def test_jump_deltas_exact_mark_to_market(z, y, s, xi):
    d_m, d_p = jump_deltas(z, y, s, xi)
    pool = PoolState.from_price(z, y)
    sold = apply_lt_trade(pool, Side.SELL, xi)
    # LP wealth at external price: x + s*y
    assert d_p == pytest.approx((sold.x + s * sold.y) - (pool.x + s * pool.y),
                                rel=1e-9, abs=1e-6 * pool.x)
    if y > xi:
        bought = apply_lt_trade(pool, Side.BUY, xi)
        assert d_m == pytest.approx((bought.x + s * bought.y) - (pool.x + s * pool.y),
                                    rel=1e-9, abs=1e-6 * pool.x)


@given(k=st.floats(1e-3, 1e3))
def test_existence_check_scale_aware(k):
    p = baseline_params()
    a = existence_check(p)
    b = existence_check(p.with_(a1=p.a1 * k, a3=p.a3 * k))
    assert a.passes == b.passes


@given(t=times, z=st.floats(2600.0, 3000.0), y=st.floats(30_000.0, 70_000.0),
       s=st.floats(2600.0, 3000.0))
@settings(max_examples=50, deadline=None)
def test_value_jumps_equal_direct_difference(t, z, y, s):
    jm, jp = value_jumps(t, z, y, s, _SOL, _NT.xi)
    v0 = value_hat(t, z, y, s, _SOL)
    tol = 1e-9 * max(1.0, abs(v0))
    assert jp == pytest.approx(value_hat(t, z, y + _NT.xi, s, _SOL) - v0, abs=tol)
    assert jm == pytest.approx(value_hat(t, z, y - _NT.xi, s, _SOL) - v0, abs=tol)


@given(t=times, z=st.floats(2600.0, 3000.0), y=st.floats(30_000.0, 70_000.0),
       s=st.floats(2600.0, 3000.0), cap=st.floats(1.0, 1e6))
@settings(max_examples=50, deadline=None)
def test_speed_within_cap(t, z, y, s, cap):
    p = _NT.with_(nu_max=cap)
    c = controls_risk_averse(t, z, y, s, _SOL, p)
    assert abs(c.nu_star) <= cap
    assert c.nu_star == nu_bar(c.a_b, p)


@given(y=st.floats(2_000.0, 1e6), xi=st.floats(0.5, 100.0))
def test_laurent_bound_in_regime(y, xi):
    assume(xi / y <= 0.05)
    r = laurent_error(y, xi)
    assert r.passed and r.value <= 8.0 * xi * xi / y


@given(shift=st.floats(-5.0, 5.0), scale=st.floats(0.2, 5.0))
@settings(max_examples=25, deadline=None)
def test_calibration_equivariance(shift, scale):
    base = synthetic_buckets(n_buckets=400, seed=9)
    moved = [TradeBucket(b.window_start, b.lambda_minus_hat + shift, b.lambda_plus_hat + shift,
                         b.mean_mispricing * scale) for b in base]
    a, b = fit_intensities(base), fit_intensities(moved)
    assert b.a1_hat == pytest.approx(a.a1_hat + shift, rel=1e-9)
    assert b.a3_hat == pytest.approx(a.a3_hat / scale, rel=1e-9)
    assert b.a3_se == pytest.approx(a.a3_se / scale, rel=1e-9)


@given(seed=st.integers(0, 2**32))
@settings(max_examples=10, deadline=None)
def test_fee_accounting_per_path(seed):
    from amm_lab.simulate import SimConfig, simulate_ensemble
    sol = solve(_NT, n_steps=2000)
    ens = simulate_ensemble(_NT, sol, SimConfig(n_steps=2000, n_paths=3, seed=seed,
                                                record_stride=2000))
    total = _NT.fee_r * ens.n_jumps
    ulp = np.spacing(np.maximum(np.abs(ens.reward), np.abs(total)))
    assert np.all(np.abs(ens.reward + ens.venue_pnl - total) <= 2 * ulp)
    assert np.all(ens.series["n_hat_minus"] >= ens.series["n_minus"])
    assert np.all(ens.series["c"] > 0) and not math.isnan(ens.reward.sum())
