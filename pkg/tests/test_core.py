import math

import numpy as np
import pytest

from amm_lab.core import (DomainError, ModelParams, PoolState, Side, TradeRejected,
                          apply_lp_flow, apply_lt_trade, baseline_params, intensities,
                          jump_deltas, level_x, marginal_price, noise_trading_params)


def test_default_parameters_are_the_calibrated_set():
    p = baseline_params()
    assert p.fee_r == pytest.approx(8460.0)
    assert p.sigma == pytest.approx(160.458)
    assert p.a1 / p.a3 == pytest.approx(10.4926, abs=1e-4)
    assert p.c0 == pytest.approx(2820.0 * 50_000.0**2)


def test_noise_trading_overrides():
    p = noise_trading_params()
    assert (p.a2, p.impact_a) == (1e-5, 5e-6)
    assert noise_trading_params(a2=0.0).a2 == 0.0


@pytest.mark.parametrize("field,value", [("sigma", 0.0), ("gamma", -1.0), ("a3", -1.0),
                                         ("xi", math.nan), ("y0", 100.0)])
def test_invalid_parameters_rejected(field, value):
    with pytest.raises(DomainError):
        ModelParams(**{field: value})


def test_with_returns_modified_copy():
    p = baseline_params()
    q = p.with_(a2=1e-5)
    assert q.a2 == 1e-5 and p.a2 == 0.0
    assert q.as_dict()["a2"] == 1e-5


def test_level_and_marginal_price():
    assert level_x(100.0, 4.0) == 25.0
    assert marginal_price(100.0, 4.0) == 6.25
    with pytest.raises(DomainError):
        marginal_price(100.0, 0.0)


def test_lt_trade_keeps_depth_and_moves_price():
    pool = PoolState.from_price(2820.0, 50_000.0)
    sold = apply_lt_trade(pool, Side.SELL, 300.0)
    assert sold.c == pool.c
    assert sold.y == 50_300.0
    assert sold.z == pytest.approx(pool.c / 50_300.0**2, rel=1e-14)
    assert sold.z < pool.z
    bought = apply_lt_trade(pool, "buy", 300.0)
    assert bought.z > pool.z


def test_buy_rejected_when_reserves_too_small():
    pool = PoolState.from_price(2820.0, 300.0)
    with pytest.raises(TradeRejected):
        apply_lt_trade(pool, Side.BUY, 300.0)


def test_lp_flow_keeps_price_and_changes_depth():
    pool = PoolState.from_price(2820.0, 50_000.0)
    more = apply_lp_flow(pool, 1000.0)
    assert more.z == pool.z
    assert more.c > pool.c
    assert more.x / more.y == pytest.approx(pool.z, rel=1e-14)
    with pytest.raises(DomainError):
        apply_lp_flow(pool, -60_000.0)


def test_inconsistent_pool_rejected():
    with pytest.raises(DomainError):
        PoolState(x=1.0, y=1.0, z=1.0, c=2.0)


def test_intensities_are_symmetric_and_floored():
    p = baseline_params()
    lm, lp = intensities(p, 2820.0, 50_000.0, 2820.0)
    assert lm == lp == p.a1
    lm, lp = intensities(p, 2850.0, 50_000.0, 2820.0)  # pool rich: LTs sell ETH into it
    assert lm == p.a0 and lp == pytest.approx(p.a1 + 30.0 * p.a3)
    arr = intensities(p, np.array([2800.0, 2840.0]), 50_000.0, 2820.0)
    assert arr.lambda_minus.shape == (2,)


def test_intensities_depend_on_depth_through_a2():
    p = noise_trading_params()
    lm, _ = intensities(p, 2820.0, 60_000.0, 2820.0)
    assert lm == pytest.approx(p.a1 + 0.6)


def test_jump_deltas_at_parity():
    s = z = 2820.0
    y, xi = 50_000.0, 300.0
    d_m, d_p = jump_deltas(z, y, s, xi)
    assert d_p == pytest.approx(xi * s * xi / (y + xi))
    assert d_m == pytest.approx(xi * s * xi / (y - xi))
    assert jump_deltas(z, 200.0, s, xi)[0] == 0.0


def test_side_enum_accepts_strings():
    assert Side("sell") is Side.SELL
    with pytest.raises(ValueError):
        Side("hold")
