"""Model parameters, constant-product pool mechanics and order-flow intensities.

The pool trades ETH (``y``) against USDC (``x``) on the level set ``x * y = c``.
Liquidity takers move along the level set in lots of size ``xi``; liquidity
providers move the pool to a new level set at the current marginal price.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from enum import Enum
from typing import NamedTuple

import numpy as np

__all__ = [
    "DomainError",
    "TradeRejected",
    "Side",
    "ModelParams",
    "PoolState",
    "MarketState",
    "IntensityPair",
    "baseline_params",
    "noise_trading_params",
    "level_x",
    "marginal_price",
    "apply_lt_trade",
    "apply_lp_flow",
    "intensities",
    "jump_deltas",
]

RTOL_DEPTH = 1e-12


class DomainError(ValueError):
    """An argument lies outside the domain of a pool or model function."""


class TradeRejected(RuntimeError):
    """A liquidity-taker buy was suppressed because the pool holds ``y <= xi``."""


class Side(str, Enum):
    BUY = "buy"  # LT buys ETH from the pool (counting process N-)
    SELL = "sell"  # LT sells ETH to the pool (counting process N+)


@dataclass(frozen=True)
class ModelParams:
    """Scalar model parameters. Units: USDC, ETH, days.

    ``impact_a`` is the temporary price impact paid by the LP in the external
    venue; ``fee_r`` is the fee the venue collects per liquidity-taker jump.
    ``s0``, ``z0`` and ``y0`` are the initial external price, pool price and
    pool ETH reserves.
    """

    sigma: float = 0.0569 * 2820.0
    eta: float = 1e-10
    xi: float = 300.0
    impact_a: float = 1e-14
    fee_r: float = 0.01 * 300.0 * 2820.0
    gamma: float = 1e-18
    zeta: float = 1e-6
    horizon_T: float = 1.0
    nu_max: float = 1e6
    a0: float = 1e-3
    a1: float = 142.7
    a2: float = 0.0
    a3: float = 13.6
    s0: float = 2820.0
    z0: float = 2820.0
    y0: float = 50_000.0

    def __post_init__(self) -> None:
        positive = ("sigma", "eta", "xi", "impact_a", "fee_r", "gamma", "horizon_T",
                    "nu_max", "a0", "s0", "z0", "y0")
        for name in positive:
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise DomainError(f"{name} must be finite and > 0, got {value!r}")
        for name in ("zeta", "a1", "a2", "a3"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value >= 0):
                raise DomainError(f"{name} must be finite and >= 0, got {value!r}")
        if self.y0 <= self.xi:
            raise DomainError("initial reserves y0 must exceed the trade size xi")

    @property
    def c0(self) -> float:
        """Initial depth constant ``x0 * y0 = z0 * y0**2``."""
        return self.z0 * self.y0 * self.y0

    def with_(self, **changes: float) -> "ModelParams":
        return replace(self, **changes)

    def as_dict(self) -> dict[str, float]:
        return {f: getattr(self, f) for f in self.__dataclass_fields__}


def baseline_params(**overrides: float) -> ModelParams:
    """Calibrated ETH-USDC parameters with no depth-driven order flow (``a2 = 0``)."""
    return ModelParams(**overrides)


def noise_trading_params(**overrides: float) -> ModelParams:
    """Parameters of the noise-trading experiment: ``a2 = 1e-5``, ``impact_a = 5e-6``."""
    base = {"a2": 1e-5, "impact_a": 5e-6}
    base.update(overrides)
    return ModelParams(**base)


@dataclass(frozen=True)
class PoolState:
    """Reserves ``x`` (USDC) and ``y`` (ETH), marginal price ``z`` and depth ``c``."""

    x: float
    y: float
    z: float
    c: float

    def __post_init__(self) -> None:
        if not (self.x > 0 and self.y > 0):
            raise DomainError(f"reserves must be positive, got x={self.x}, y={self.y}")
        if abs(self.c - self.x * self.y) > RTOL_DEPTH * abs(self.c) * 10:
            raise DomainError("depth constant inconsistent with reserves")

    @classmethod
    def from_price(cls, z: float, y: float) -> "PoolState":
        x = z * y
        return cls(x=x, y=y, z=z, c=x * y)

    @classmethod
    def from_reserves(cls, x: float, y: float) -> "PoolState":
        return cls(x=x, y=y, z=x / y, c=x * y)


@dataclass(frozen=True)
class MarketState:
    t: float
    s: float
    pool: PoolState

    def __post_init__(self) -> None:
        if self.t < 0:
            raise DomainError("time must be non-negative")
        if not self.s > 0:
            raise DomainError("external price must be positive")


class IntensityPair(NamedTuple):
    lambda_minus: float
    lambda_plus: float


def _check_positive(**values: float) -> None:
    for name, v in values.items():
        if not v > 0:
            raise DomainError(f"{name} must be > 0, got {v!r}")


def level_x(c: float, y: float) -> float:
    """USDC reserves on the level set ``x = c / y``."""
    _check_positive(c=c, y=y)
    return c / y


def marginal_price(c: float, y: float) -> float:
    """Marginal pool price ``c / y**2`` (minus the slope of the level function)."""
    _check_positive(c=c, y=y)
    return c / (y * y)


def apply_lt_trade(pool: PoolState, side: Side | str, xi: float) -> PoolState:
    """Move the pool along its level set by one liquidity-taker lot.

    Raises
    ------
    TradeRejected
        For a buy when ``pool.y <= xi``; the dynamics suppress such jumps.
    """
    side = Side(side)
    if side is Side.BUY:
        if pool.y <= xi:
            raise TradeRejected(f"buy of {xi} ETH rejected: pool holds {pool.y} ETH")
        y_new = pool.y - xi
    else:
        y_new = pool.y + xi
    ratio = pool.y / y_new
    # z * (y / y')**2 rather than c / y'**2: same value, no loss when c ~ 1e12
    return PoolState(x=pool.c / y_new, y=y_new, z=pool.z * ratio * ratio, c=pool.c)


def apply_lp_flow(pool: PoolState, dy: float) -> PoolState:
    """Add ``dy`` ETH (and ``z * dy`` USDC) at the current marginal price."""
    y_new = pool.y + dy
    if not y_new > 0:
        raise DomainError(f"LP flow {dy} would leave non-positive reserves")
    x_new = pool.x + pool.z * dy
    return PoolState(x=x_new, y=y_new, z=pool.z, c=x_new * y_new)


def intensities(p: ModelParams, z, y, s):
    """Buy/sell arrival intensities ``max(a0, a1 + a2*y -/+ a3*(z - s))``.

    Accepts scalars or numpy arrays; returns an :class:`IntensityPair`.
    """
    base = p.a1 + p.a2 * np.asarray(y, dtype=float)
    gap = p.a3 * (np.asarray(z, dtype=float) - np.asarray(s, dtype=float))
    lm = np.maximum(p.a0, base - gap)
    lp = np.maximum(p.a0, base + gap)
    if lm.ndim == 0:
        return IntensityPair(float(lm), float(lp))
    return IntensityPair(lm, lp)


def jump_deltas(z: float, y: float, s: float, xi: float) -> tuple[float, float]:
    """LP mark-to-market change per LT buy (minus) and sell (plus).

    ``delta_minus`` is returned as 0 when ``y <= xi``: the buy is suppressed
    and there is no pool change to value.
    """
    delta_plus = xi * (s - z * y / (y + xi))
    if y <= xi:
        return 0.0, delta_plus
    delta_minus = -xi * (s - z * y / (y - xi))
    return delta_minus, delta_plus
