"""Equilibrium contract loadings and the LP's induced provision speed."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import DomainError, ModelParams, jump_deltas
from .riccati import RiccatiSolution

__all__ = [
    "ContractControls",
    "nu_bar",
    "alpha_risk_neutral",
    "nu_hat_risk_neutral",
    "alpha_risk_averse",
    "controls_risk_neutral",
    "controls_risk_averse",
    "value_jumps",
]


@dataclass(frozen=True)
class ContractControls:
    """Loadings of the contract on W, B, N- and N+, and the LP's response.

    ``clamped`` is True when the A^B loading falls outside the band
    ``[-2 a eta nu_max, 2 a eta nu_max]`` and the fallback branch is used.
    """

    a_w: float
    a_b: float
    a_minus: float
    a_plus: float
    nu_star: float
    clamped: bool

    def as_tuple(self) -> tuple[float, float, float, float, float]:
        return self.a_w, self.a_b, self.a_minus, self.a_plus, self.nu_star


def nu_bar(a_b: float, p: ModelParams) -> float:
    """Maximiser of ``-a nu^2 + a_b nu / eta`` over ``|nu| <= nu_max``."""
    return float(np.clip(a_b / (2.0 * p.impact_a * p.eta), -p.nu_max, p.nu_max))


def _band(p: ModelParams) -> float:
    return 2.0 * p.impact_a * p.eta * p.nu_max


def alpha_risk_neutral(dyv: float, z: float, s: float, p: ModelParams) -> float:
    a, eta, g = p.impact_a, p.eta, p.gamma
    return (dyv / (a * eta) - 2.0 * (s + z) * g * eta) / (2.0 * g + 1.0 / (a * eta * eta))


def nu_hat_risk_neutral(t: float, z: float, s: float, p: ModelParams) -> float:
    """Closed-form approximate LP speed for a risk-neutral venue, ``nu_max -> inf``."""
    a, eta, g = p.impact_a, p.eta, p.gamma
    num = 2.0 * p.a2 * p.fee_r * (p.horizon_T - t) - 2.0 * (s + z) * g * a * eta * eta
    return num / (4.0 * eta * eta * a * a * g + 2.0 * a)


def controls_risk_neutral(t: float, z: float, y: float, s: float, p: ModelParams,
                          dyv: float | None = None) -> ContractControls:
    """Loadings that maximise the risk-neutral venue's Hamiltonian.

    ``dyv`` is the Y-derivative of the venue's value; by default the
    approximate closed form ``2 a2 r (T - t)``.
    """
    if not 0.0 <= t <= p.horizon_T:
        raise DomainError(f"t={t} outside [0, {p.horizon_T}]")
    if dyv is None:
        dyv = 2.0 * p.a2 * p.fee_r * (p.horizon_T - t)
    d_minus, d_plus = jump_deltas(z, y, s, p.xi)
    alpha = alpha_risk_neutral(dyv, z, s, p)
    inside = abs(alpha) <= _band(p)
    a_b = alpha if inside else -(s + z) * p.eta
    return ContractControls(
        a_w=-y * p.sigma,
        a_b=a_b,
        a_minus=-d_minus if y > p.xi else 0.0,
        a_plus=-d_plus,
        nu_star=nu_bar(a_b, p),
        clamped=not inside,
    )


def alpha_risk_averse(dyv: float, z: float, s: float, p: ModelParams) -> float:
    a, eta, g, k = p.impact_a, p.eta, p.gamma, p.zeta
    num = (1.0 / (a * eta) + 2.0 * k * eta) * dyv - 2.0 * g * eta * (s + z)
    return num / (2.0 * (g + k) + 1.0 / (a * eta * eta))


def value_jumps(t: float, z: float, y: float, s: float, sol: RiccatiSolution, xi: float,
                exact_shift: bool = False) -> tuple[float, float]:
    """``(v(minus) - v, v(plus) - v)`` for the quadratic value after one LT lot.

    The differences are expanded algebraically, which avoids cancelling the
    large ``g11`` and ``Z^2`` contributions.
    """
    _, g1, g2 = sol.at(t)
    state = np.array([z, y, s], dtype=float)
    out = []
    for sign in (-1.0, 1.0):
        y_new = y + sign * xi
        dz = z * (y / y_new) ** 2 - z if exact_shift else 0.0
        d = np.array([dz, sign * xi, 0.0])
        out.append(float(2.0 * d @ g1 + 2.0 * d @ (g2 @ state) + d @ g2 @ d))
    return out[0], out[1]


def controls_risk_averse(t: float, z: float, y: float, s: float, sol: RiccatiSolution,
                         p: ModelParams, *, exact_shift: bool = False,
                         ab_branch: str = "printed") -> ContractControls:
    """Loadings that optimise the risk-averse venue's Hamiltonian under the
    quadratic value approximation.

    ``exact_shift`` evaluates the post-jump value at the shifted pool price
    ``Z Y^2 / (Y +/- xi)^2`` instead of the unshifted ``Z``.
    ``ab_branch`` selects the A^B value used outside the band:
    ``"derived"`` is the minimiser with the LP speed pinned at the cap,
    ``(zeta eta dYv - gamma eta (S+Z)) / (gamma+zeta)``; ``"printed"``
    multiplies ``dYv`` by ``zeta gamma`` instead.
    """
    if ab_branch not in ("derived", "printed"):
        raise ValueError(f"unknown ab_branch {ab_branch!r}")
    if not 0.0 <= t <= sol.horizon:
        raise DomainError(f"t={t} outside [0, {sol.horizon}]")
    g, k, eta = p.gamma, p.zeta, p.eta
    _, g1, g2 = sol.at(t)
    grad = 2.0 * g1 + 2.0 * g2 @ np.array([z, y, s], dtype=float)
    dzv, dyv, dsv = (float(v) for v in grad)

    alpha = alpha_risk_averse(dyv, z, s, p)
    inside = abs(alpha) <= _band(p)
    if inside:
        a_b = alpha
    else:
        scale = eta if ab_branch == "derived" else g
        a_b = (k * scale * dyv - g * eta * (s + z)) / (g + k)

    d_minus, d_plus = jump_deltas(z, y, s, p.xi)
    jump_m, jump_p = value_jumps(t, z, y, s, sol, p.xi, exact_shift=exact_shift)
    a_minus = (-g * d_minus + k * (jump_m + p.fee_r)) / (g + k) if y > p.xi else 0.0
    a_plus = (-g * d_plus + k * (jump_p + p.fee_r)) / (g + k)
    return ContractControls(
        a_w=p.sigma * (k * dsv - g * y) / (g + k),
        a_b=a_b,
        a_minus=a_minus,
        a_plus=a_plus,
        nu_star=nu_bar(a_b, p),
        clamped=not inside,
    )
