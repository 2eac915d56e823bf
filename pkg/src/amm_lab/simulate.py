"""Monte Carlo engine for the pool/contract system under the LP's best response.

Each path owns a Philox stream keyed by ``(seed, path_index)``, so results do
not depend on chunking or thread count. The heavy loop lives in
:mod:`amm_lab._mc_kernel`; :func:`step` is a readable single-step reference
used to cross-check the kernels.
"""
from __future__ import annotations

import csv
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import NamedTuple

import numpy as np

from . import _mc_kernel as K
from .controls import ContractControls
from .core import ModelParams, PoolState, Side, apply_lp_flow, apply_lt_trade, intensities, jump_deltas
from .riccati import RiccatiSolution

__all__ = [
    "RISK_NEUTRAL",
    "RISK_AVERSE",
    "SimulationGridError",
    "SimConfig",
    "SimState",
    "Shocks",
    "SimPath",
    "Ensemble",
    "EnsembleSummary",
    "step",
    "draw_shocks",
    "simulate_ensemble",
    "simulate_path",
    "run_ensemble",
    "equal_split_P0",
]

log = logging.getLogger(__name__)

RISK_NEUTRAL = "risk_neutral"
RISK_AVERSE = "risk_averse"
HIST_BINS = 50


class SimulationGridError(ValueError):
    """The time grid is too coarse for the Bernoulli jump approximation."""


@dataclass(frozen=True)
class SimConfig:
    """Monte Carlo settings.

    ``nu_override`` replaces the LP's equilibrium speed by a constant (None
    keeps the equilibrium response). ``exact_shift`` and ``ab_branch`` are
    forwarded to the risk-averse controls. With ``strict_guard`` any step
    whose jump probability ``lambda * dt`` reaches 0.1 aborts the run;
    otherwise such steps are counted in :attr:`Ensemble.guard_steps`.
    """

    n_steps: int = 10_000
    n_paths: int = 1000
    seed: int = 0
    regime: str = RISK_AVERSE
    record_stride: int = 100
    nu_override: float | None = None
    exact_shift: bool = False
    ab_branch: str = "printed"
    threads: int = 1
    chunk_size: int = 256
    backend: str | None = None
    strict_guard: bool = False

    def __post_init__(self) -> None:
        if self.n_steps < 1 or self.n_paths < 1:
            raise ValueError("n_steps and n_paths must be >= 1")
        if self.regime not in (RISK_NEUTRAL, RISK_AVERSE):
            raise ValueError(f"unknown regime {self.regime!r}")
        if self.record_stride < 1 or self.n_steps % self.record_stride:
            raise ValueError("record_stride must divide n_steps")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must fit in 64 bits")
        if self.ab_branch not in ("printed", "derived"):
            raise ValueError(f"unknown ab_branch {self.ab_branch!r}")
        if self.threads < 1 or self.chunk_size < 1:
            raise ValueError("threads and chunk_size must be >= 1")

    def with_(self, **changes) -> "SimConfig":
        return replace(self, **changes)


# single-step reference ---------------------------------------------------------------

@dataclass(frozen=True)
class SimState:
    t: float
    s: float
    pool: PoolState
    p: float = 0.0
    q: float = 0.0
    n_minus: int = 0
    n_plus: int = 0
    n_hat_minus: int = 0
    cum_nu: float = 0.0
    ext_fees: float = 0.0


class Shocks(NamedTuple):
    eps_w: float
    eps_b: float
    u_minus: float
    u_plus: float


def step(state: SimState, controls: ContractControls, dt: float,
         rng: np.random.Generator | Shocks, p: ModelParams,
         nu: float | None = None) -> SimState:
    """Advance one Euler step of length ``dt``.

    ``controls`` are the loadings at the pre-step state; ``nu`` defaults to
    ``controls.nu_star``. ``rng`` is either a generator (two normals then two
    uniforms are drawn) or explicit :class:`Shocks`.

    Raises
    ------
    SimulationGridError
        If ``lambda * dt >= 0.1`` for either side.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    if isinstance(rng, Shocks):
        shocks = rng
    else:
        ew, eb = rng.standard_normal(2)
        um, up = rng.random(2)
        shocks = Shocks(ew, eb, um, up)
    pool, s = state.pool, state.s
    lam_m, lam_p = intensities(p, pool.z, pool.y, s)
    if max(lam_m, lam_p) * dt >= K.MAX_JUMP_PROB:
        raise SimulationGridError(
            f"lambda*dt = {max(lam_m, lam_p) * dt:.3g} >= {K.MAX_JUMP_PROB} at t={state.t}; "
            "use more time steps")
    nu_bar = controls.nu_star
    nu = nu_bar if nu is None else nu
    d_minus, d_plus = jump_deltas(pool.z, pool.y, s, p.xi)
    g, a, sq = p.gamma, p.impact_a, math.sqrt(dt)
    h_opt = -a * nu_bar**2 + controls.a_b * nu_bar / p.eta
    drift = (0.5 * g * ((controls.a_w + p.sigma * pool.y) ** 2
                        + (controls.a_b + p.eta * (s + pool.z)) ** 2)
             + lam_m * math.expm1(-g * (controls.a_minus + d_minus)) / g
             + lam_p * math.expm1(-g * (controls.a_plus + d_plus)) / g
             - h_opt + controls.a_b * nu / p.eta)
    pp = state.p + drift * dt + controls.a_w * sq * shocks.eps_w + controls.a_b * sq * shocks.eps_b
    q = (state.q - a * nu * nu * dt + p.eta * (s + pool.z) * sq * shocks.eps_b
         + p.sigma * pool.y * sq * shocks.eps_w)
    s_new = s + p.sigma * sq * shocks.eps_w
    pool = apply_lp_flow(pool, nu * dt + p.eta * sq * shocks.eps_b)

    n_m, n_p, n_hm = state.n_minus, state.n_plus, state.n_hat_minus
    if shocks.u_minus < lam_m * dt:
        n_hm += 1
        pp += controls.a_minus
        if pool.y > p.xi:
            q += jump_deltas(pool.z, pool.y, s_new, p.xi)[0]
            pool = apply_lt_trade(pool, Side.BUY, p.xi)
            n_m += 1
    if shocks.u_plus < lam_p * dt:
        pp += controls.a_plus
        q += jump_deltas(pool.z, pool.y, s_new, p.xi)[1]
        pool = apply_lt_trade(pool, Side.SELL, p.xi)
        n_p += 1
    return SimState(t=state.t + dt, s=s_new, pool=pool, p=pp, q=q, n_minus=n_m, n_plus=n_p,
                    n_hat_minus=n_hm, cum_nu=state.cum_nu + nu * dt,
                    ext_fees=state.ext_fees + a * nu * nu * dt)


# ensemble ----------------------------------------------------------------------------

def draw_shocks(seed: int, path_index: int, n_steps: int) -> tuple[np.ndarray, np.ndarray]:
    """Normals ``(n_steps, 2)`` for (W, B) and uniforms ``(n_steps, 2)`` for (N-, N+)."""
    rng = np.random.Generator(np.random.Philox(key=[seed, path_index]))
    return rng.standard_normal((n_steps, 2)), rng.random((n_steps, 2))


def _param_vector(p: ModelParams) -> np.ndarray:
    prm = np.empty(K.N_PRM)
    prm[K.SIGMA], prm[K.ETA], prm[K.XI], prm[K.IMPACT] = p.sigma, p.eta, p.xi, p.impact_a
    prm[K.FEE], prm[K.GAMMA], prm[K.ZETA], prm[K.NU_MAX] = p.fee_r, p.gamma, p.zeta, p.nu_max
    prm[K.A0], prm[K.A1], prm[K.A2], prm[K.A3] = p.a0, p.a1, p.a2, p.a3
    prm[K.HORIZON] = p.horizon_T
    return prm


def _coefficients(p: ModelParams, sol: RiccatiSolution | None,
                  cfg: SimConfig) -> tuple[np.ndarray, np.ndarray]:
    n = cfg.n_steps
    if cfg.regime == RISK_NEUTRAL:
        return np.zeros((n + 1, 3)), np.zeros((n + 1, 3, 3))
    if sol is None:
        raise ValueError("the risk-averse regime needs a RiccatiSolution")
    if not math.isclose(sol.horizon, p.horizon_T):
        raise ValueError("solution horizon does not match the model horizon")
    if sol.n_steps == n:
        return np.ascontiguousarray(sol.g1), np.ascontiguousarray(sol.g2)
    _, g1, g2 = sol.resample(np.linspace(0.0, p.horizon_T, n + 1))
    return g1, g2


@dataclass
class Ensemble:
    """Raw per-path output: ``series[name]`` has shape ``(n_paths, n_rec)``."""

    times: np.ndarray
    series: dict[str, np.ndarray]
    p0: float
    fee_r: float
    config: SimConfig
    guard_steps: np.ndarray | None = None
    max_jump_prob: np.ndarray | None = None

    @property
    def n_paths(self) -> int:
        return self.series["s"].shape[0]

    @property
    def n_jumps(self) -> np.ndarray:
        return self.series["n_minus"][:, -1] + self.series["n_plus"][:, -1]

    @property
    def reward(self) -> np.ndarray:
        return self.series["p"][:, -1]

    @property
    def venue_pnl(self) -> np.ndarray:
        return self.fee_r * self.n_jumps - self.reward

    @property
    def ext_fees(self) -> np.ndarray:
        return self.series["ext_fees"][:, -1]

    @property
    def cum_nu(self) -> np.ndarray:
        return self.series["cum_nu"][:, -1]

    def path(self, i: int) -> "SimPath":
        return SimPath(times=self.times, **{k: v[i] for k, v in self.series.items()},
                       fee_r=self.fee_r)

    def shifted(self, p0: float) -> "Ensemble":
        """The same ensemble with a different initial contract level.

        ``P`` enters no other dynamics, so the shift is exact.
        """
        series = dict(self.series)
        series["p"] = self.series["p"] + (p0 - self.p0)
        return replace(self, series=series, p0=p0)


@dataclass
class SimPath:
    """One recorded path; terminal quantities are properties."""

    times: np.ndarray
    s: np.ndarray
    y: np.ndarray
    z: np.ndarray
    c: np.ndarray
    nu: np.ndarray
    p: np.ndarray
    q_lp: np.ndarray
    n_minus: np.ndarray
    n_plus: np.ndarray
    n_hat_minus: np.ndarray
    cum_nu: np.ndarray
    ext_fees: np.ndarray
    fee_r: float

    @property
    def reward(self) -> float:
        return float(self.p[-1])

    @property
    def venue_pnl(self) -> float:
        return float(self.fee_r * (self.n_minus[-1] + self.n_plus[-1]) - self.p[-1])


def simulate_ensemble(p: ModelParams, sol: RiccatiSolution | None, cfg: SimConfig,
                      P0: float = 0.0, path_offset: int = 0) -> Ensemble:
    """Simulate paths ``path_offset .. path_offset + n_paths - 1``.

    Raises
    ------
    SimulationGridError
        If ``lambda * dt >= 0.1`` at the initial state, or on any step when
        ``cfg.strict_guard`` is set.
    RuntimeError
        If the LP flow would drive the ETH reserves to zero.
    """
    dt = p.horizon_T / cfg.n_steps
    lam0 = max(intensities(p, p.z0, p.y0, p.s0))
    if lam0 * dt >= K.MAX_JUMP_PROB:
        raise SimulationGridError(
            f"lambda*dt = {lam0 * dt:.3g} >= {K.MAX_JUMP_PROB} at the initial state; "
            f"increase n_steps (now {cfg.n_steps})")
    g1, g2 = _coefficients(p, sol, cfg)
    prm = _param_vector(p)
    state0 = np.array([p.s0, p.y0, p.z0])
    nu_override = math.nan if cfg.nu_override is None else float(cfg.nu_override)
    args = (prm, cfg.regime == RISK_NEUTRAL, cfg.exact_shift, cfg.ab_branch == "printed",
            nu_override, g1, g2, state0, float(P0))

    def run_chunk(start: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        stop = min(start + cfg.chunk_size, cfg.n_paths)
        normals = np.empty((stop - start, cfg.n_steps, 2))
        uniforms = np.empty((stop - start, cfg.n_steps, 2))
        for j, idx in enumerate(range(start, stop)):
            normals[j], uniforms[j] = draw_shocks(cfg.seed, path_offset + idx, cfg.n_steps)
        return K.simulate_batch(*args, normals, uniforms, cfg.record_stride,
                                backend=cfg.backend)

    starts = range(0, cfg.n_paths, cfg.chunk_size)
    if cfg.threads > 1:
        with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
            parts = list(pool.map(run_chunk, starts))
    else:
        parts = [run_chunk(s) for s in starts]
    rec = np.concatenate([part[0] for part in parts])
    status = np.concatenate([part[1] for part in parts])
    guard = np.concatenate([part[2] for part in parts])
    failed = np.flatnonzero(status[:, 0])
    if failed.size:
        t = status[failed[0], 1] * dt
        raise RuntimeError(f"path {failed[0]}: LP flow exhausted the ETH reserves at t={t:.6g}")
    hits = int(guard[:, 0].sum())
    if hits:
        msg = (f"{hits} steps on {int(np.count_nonzero(guard[:, 0]))} paths reached "
               f"lambda*dt >= {K.MAX_JUMP_PROB} (max {guard[:, 1].max():.3g})")
        if cfg.strict_guard:
            raise SimulationGridError(msg + f"; increase n_steps (now {cfg.n_steps})")
        log.info(msg)
    times = np.linspace(0.0, p.horizon_T, cfg.n_steps // cfg.record_stride + 1)
    series = {name: np.ascontiguousarray(rec[:, :, i]) for i, name in enumerate(K.SERIES)}
    return Ensemble(times, series, float(P0), p.fee_r, cfg,
                    guard_steps=guard[:, 0].astype(np.int64), max_jump_prob=guard[:, 1])


def simulate_path(p: ModelParams, sol: RiccatiSolution | None, cfg: SimConfig, P0: float,
                  path_seed: int) -> SimPath:
    """One path, identical to path ``path_seed`` of an ensemble with the same seed."""
    one = cfg.with_(n_paths=1, threads=1)
    return simulate_ensemble(p, sol, one, P0, path_offset=path_seed).path(0)


# summaries ---------------------------------------------------------------------------

def _histogram(values: np.ndarray) -> dict[str, list[float]]:
    counts, edges = np.histogram(values, bins=HIST_BINS)
    return {"edges": edges.tolist(), "counts": counts.tolist()}


@dataclass
class EnsembleSummary:
    """Per-node mean, standard deviation and 5%/95% bands for every series,
    terminal statistics and histograms of the reward and venue PnL."""

    times: np.ndarray
    mean: dict[str, np.ndarray]
    std: dict[str, np.ndarray]
    q05: dict[str, np.ndarray]
    q95: dict[str, np.ndarray]
    n_paths: int
    p0: float
    mean_reward: float
    se_reward: float
    mean_venue_pnl: float
    se_venue_pnl: float
    mean_cum_nu: float
    mean_ext_fees: float
    mean_jumps: float
    hist_reward: dict[str, list[float]]
    hist_venue_pnl: dict[str, list[float]]
    ensemble: Ensemble | None = field(default=None, repr=False)

    @classmethod
    def from_ensemble(cls, ens: Ensemble, keep_paths: bool = True) -> "EnsembleSummary":
        n = ens.n_paths
        stats = {k: {} for k in ("mean", "std", "q05", "q95")}
        for name, arr in ens.series.items():
            stats["mean"][name] = arr.mean(axis=0)
            stats["std"][name] = arr.std(axis=0, ddof=1) if n > 1 else np.zeros(arr.shape[1])
            stats["q05"][name], stats["q95"][name] = np.quantile(arr, [0.05, 0.95], axis=0)
        se = (lambda v: float(v.std(ddof=1) / math.sqrt(n)) if n > 1 else math.nan)
        return cls(
            times=ens.times, **stats, n_paths=n, p0=ens.p0,
            mean_reward=float(ens.reward.mean()), se_reward=se(ens.reward),
            mean_venue_pnl=float(ens.venue_pnl.mean()), se_venue_pnl=se(ens.venue_pnl),
            mean_cum_nu=float(ens.cum_nu.mean()), mean_ext_fees=float(ens.ext_fees.mean()),
            mean_jumps=float(ens.n_jumps.mean()),
            hist_reward=_histogram(ens.reward), hist_venue_pnl=_histogram(ens.venue_pnl),
            ensemble=ens if keep_paths else None,
        )

    def to_json_dict(self) -> dict:
        out = {
            "n_paths": self.n_paths,
            "p0": self.p0,
            "mean_reward": self.mean_reward,
            "se_reward": self.se_reward,
            "mean_venue_pnl": self.mean_venue_pnl,
            "se_venue_pnl": self.se_venue_pnl,
            "mean_cum_nu": self.mean_cum_nu,
            "mean_ext_fees": self.mean_ext_fees,
            "mean_jumps": self.mean_jumps,
            "hist_reward": self.hist_reward,
            "hist_venue_pnl": self.hist_venue_pnl,
            "times": self.times.tolist(),
            "bands": {name: {"mean": self.mean[name].tolist(), "q05": self.q05[name].tolist(),
                             "q95": self.q95[name].tolist()} for name in self.mean},
        }
        if self.ensemble is not None:
            out["config"] = asdict(self.ensemble.config)
        return out

    def write(self, out_dir: str | Path, paths: bool = False) -> None:
        """Write ``summary.json`` and one band CSV per series; with ``paths``
        also one CSV per series holding every path."""
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "summary.json", "w") as fh:
            json.dump(self.to_json_dict(), fh, indent=2, sort_keys=True)
        for name in self.mean:
            with open(out / f"band_{name}.csv", "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["t", "mean", "std", "q05", "q95"])
                for k, t in enumerate(self.times):
                    w.writerow([repr(float(v)) for v in (t, self.mean[name][k], self.std[name][k],
                                                         self.q05[name][k], self.q95[name][k])])
        if paths and self.ensemble is not None:
            for name, arr in self.ensemble.series.items():
                np.savetxt(out / f"paths_{name}.csv", arr, delimiter=",", fmt="%.17g")


def run_ensemble(p: ModelParams, sol: RiccatiSolution | None, cfg: SimConfig,
                 P0: float = 0.0) -> EnsembleSummary:
    """Simulate ``cfg.n_paths`` independent paths and summarise them."""
    return EnsembleSummary.from_ensemble(simulate_ensemble(p, sol, cfg, P0))


def equal_split_P0(ens: Ensemble | EnsembleSummary) -> float:
    """Initial contract level that equalises mean reward and mean venue PnL.

    By linearity ``P0* = E[r N] / 2 - E[P_T]`` evaluated at ``P0 = 0``.
    """
    if isinstance(ens, EnsembleSummary):
        if ens.ensemble is None:
            raise ValueError("summary was built without its paths")
        ens = ens.ensemble
    base = ens.shifted(0.0)
    return float(0.5 * ens.fee_r * base.n_jumps.mean() - base.reward.mean())
