"""Venue/liquidity-provider contracts on a constant-product pool.

Submodules: :mod:`~amm_lab.core` (pool mechanics and parameters),
:mod:`~amm_lab.riccati` (value-function ODEs), :mod:`~amm_lab.controls`
(contract loadings), :mod:`~amm_lab.simulate` (Monte Carlo),
:mod:`~amm_lab.calibrate` (intensity fit), :mod:`~amm_lab.oracle`
(independent verifiers) and :mod:`~amm_lab.cli`.
"""
from ._backend import backend_name
from .controls import ContractControls, controls_risk_averse, controls_risk_neutral
from .core import (DomainError, ModelParams, PoolState, Side, TradeRejected, baseline_params,
                   noise_trading_params)
from .riccati import RiccatiBlowUp, RiccatiSolution, existence_check, solve
from .simulate import SimConfig, equal_split_P0, run_ensemble, simulate_ensemble

__version__ = "0.1.0"

__all__ = [
    "ContractControls",
    "DomainError",
    "ModelParams",
    "PoolState",
    "RiccatiBlowUp",
    "RiccatiSolution",
    "SimConfig",
    "Side",
    "TradeRejected",
    "backend_name",
    "baseline_params",
    "controls_risk_averse",
    "controls_risk_neutral",
    "equal_split_P0",
    "existence_check",
    "noise_trading_params",
    "run_ensemble",
    "simulate_ensemble",
    "solve",
]
