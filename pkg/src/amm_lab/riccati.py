"""Backward ODE system for the risk-averse venue's quadratic value function.

The value function is approximated by

    v(t, y) = g11(t) + 2 y' G1(t) + y' G2(t) y,    y = (Z, Y, S),

where G2 solves a matrix Riccati equation, G1 a linear equation driven by G2,
and g11 a quadrature of both. All three vanish at the horizon.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np

from ._riccati_kernel import (A1, A2, BETA, ETA, FEE, KAPPA, N_CONSTS, PRINTED,
                              RHO, SIGMA, TWO_A3_XI, XI, riccati_rk4)
from .core import DomainError, ModelParams

log = logging.getLogger(__name__)

__all__ = [
    "RiccatiBlowUp",
    "SystemMatrices",
    "RiccatiSolution",
    "ExistenceDiagnostic",
    "build_system",
    "theta_sym",
    "existence_check",
    "solve",
    "value_hat",
    "grad_value_hat",
    "CSV_COLUMNS",
]

CSV_COLUMNS = ("t", "g11", "g12", "g13", "g14", "g22", "g23", "g24", "g33", "g34", "g44")
_SYM_INDEX = ((0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2))


class RiccatiBlowUp(ArithmeticError):
    def __init__(self, t: float):
        super().__init__(f"Riccati system produced non-finite values at t={t:.6g}")
        self.t = t


@dataclass(frozen=True)
class SystemMatrices:
    """Constant matrices of the G2 equation plus the scalars feeding C(t), E(t).

    ``kappa`` is minus the (Y, Y) entry of ``U``: the curvature of the
    venue's value in the LP speed. ``beta`` collects the LP's inventory-noise
    premium and ``rho`` the price-risk sharing term ``gamma*zeta*sigma^2/(gamma+zeta)``.
    """

    U: np.ndarray
    V: np.ndarray
    R: np.ndarray
    kappa: float
    beta: float
    rho: float
    two_a3_xi: float
    a2: float
    xi: float
    fee_r: float
    as_printed: bool = False

    def C(self, g2: np.ndarray) -> np.ndarray:
        g2 = np.asarray(g2, dtype=float)
        g_mid = g2[0, 2] if self.as_printed else g2[1, 2]
        k, b, r, a = self.kappa, self.beta, self.rho, self.two_a3_xi
        return np.array([
            [0.0, -b + a + k * g2[0, 1], -2.0 * r * g2[0, 2]],
            [0.0, k * g2[1, 1], -r * (1.0 + 2.0 * g_mid)],
            [0.0, -b - a + k * g2[1, 2], -2.0 * r * g2[2, 2]],
        ])

    def E(self, g2: np.ndarray) -> np.ndarray:
        g2 = np.asarray(g2, dtype=float)
        return np.array([
            self.a2 * self.xi**2 * (1.0 - 4.0 * g2[0, 1]),
            self.a2 * (self.fee_r + self.xi**2 * g2[1, 1]),
            0.0,
        ])


def _scalars(p: ModelParams) -> tuple[float, float, float, float]:
    a, g, z, eta = p.impact_a, p.gamma, p.zeta, p.eta
    m = 1.0 + 2.0 * a * (g + z) * eta**2
    n = 1.0 + 2.0 * a * z * eta**2
    kappa = (n - 4.0 * a * a * g * z * eta**4) / (a * m)
    beta = g * eta**2 * n / m
    rho = g * z * p.sigma**2 / (g + z)
    return kappa, beta, rho, m


def build_system(p: ModelParams, as_printed: bool = False) -> SystemMatrices:
    """Assemble ``U``, ``V``, ``R`` and the ``C``/``E`` builders.

    With ``as_printed=True`` the corner entries of ``R`` use ``2*a3`` and the
    (Y, S) entry of ``C`` uses ``g24`` (a legacy variant kept for comparison);
    the default uses ``2*a3*xi`` and ``g34``, which make the quadratic ansatz
    an exact solution of the approximated PDE.
    """
    kappa, beta, rho, _ = _scalars(p)
    two_a3_xi = 2.0 * p.a3 * p.xi
    U = np.diag([0.0, -kappa, 2.0 * rho])
    V = np.array([
        [0.0, 0.0, 0.0],
        [beta - two_a3_xi, 0.0, beta + two_a3_xi],
        [0.0, rho, 0.0],
    ])
    corner = 2.0 * p.a3 if as_printed else two_a3_xi
    R = np.array([
        [corner + beta / 2.0, 0.0, -corner + beta / 2.0],
        [0.0, rho / 2.0, 0.0],
        [-corner + beta / 2.0, 0.0, corner + beta / 2.0],
    ])
    return SystemMatrices(U=U, V=V, R=R, kappa=kappa, beta=beta, rho=rho,
                          two_a3_xi=two_a3_xi, a2=p.a2, xi=p.xi, fee_r=p.fee_r,
                          as_printed=as_printed)


def theta_sym(p: ModelParams) -> np.ndarray:
    """The 6x6 matrix ``Theta + Theta^T`` entry by entry, as typeset.

    ``Theta`` is built with ``C = I`` and ``D = 0``, so the blocks reduce to
    ``[[-(V + V^T), -U], [-U^T, 0]]``; this function does not go through
    ``build_system`` so the two can be compared.
    """
    a, g, z, eta, s = p.impact_a, p.gamma, p.zeta, p.eta, p.sigma
    den = 2.0 * a * eta**2 * (g + z) + 1.0
    noise = eta**2 * g * (2.0 * a * eta**2 * z + 1.0) / den
    price = g * s**2 * z / (g + z)
    curv = -(4.0 * a**2 * eta**4 * g * z - 2.0 * a * eta**2 * z - 1.0) / (a * den)
    M = np.zeros((6, 6))
    M[0, 1] = M[1, 0] = 2.0 * p.a3 * p.xi - noise
    M[1, 2] = M[2, 1] = -2.0 * p.a3 * p.xi - noise - price
    M[1, 4] = M[4, 1] = curv
    M[2, 5] = M[5, 2] = -2.0 * price
    return M


class ExistenceDiagnostic(NamedTuple):
    passes: bool
    max_eigenvalue: float
    threshold: float
    matrix: np.ndarray


def existence_check(p: ModelParams) -> ExistenceDiagnostic:
    """Negative semi-definiteness test of ``Theta + Theta^T``.

    Passes iff the largest eigenvalue is at most ``1e-9 * (1 + ||M||_inf)``.
    The test is scale-aware: rescaling by a positive constant cannot flip it
    (up to the ``1 +`` guard for tiny matrices).
    """
    M = theta_sym(p)
    eig = np.linalg.eigvalsh(M)
    lam = float(eig[-1])
    threshold = 1e-9 * (1.0 + float(np.abs(M).sum(axis=1).max()))
    return ExistenceDiagnostic(lam <= threshold, lam, threshold, M)


@dataclass(frozen=True, eq=False)
class RiccatiSolution:
    """Coefficients on a uniform grid ``0 = t_0 < ... < t_N = T``.

    ``g1[k] = (g12, g13, g14)`` and ``g2[k]`` is the symmetric 3x3 matrix in
    the state ordering (Z, Y, S).
    """

    grid: np.ndarray
    g11: np.ndarray
    g1: np.ndarray
    g2: np.ndarray

    def __post_init__(self) -> None:
        for arr in (self.grid, self.g11, self.g1, self.g2):
            arr.setflags(write=False)

    @property
    def horizon(self) -> float:
        return float(self.grid[-1])

    @property
    def n_steps(self) -> int:
        return len(self.grid) - 1

    def at(self, t: float) -> tuple[float, np.ndarray, np.ndarray]:
        """Linearly interpolated ``(g11, G1, G2)`` at time ``t``."""
        if not (0.0 <= t <= self.horizon):
            raise DomainError(f"t={t} outside [0, {self.horizon}]")
        pos = t / self.horizon * self.n_steps
        k = min(int(pos), self.n_steps - 1)
        w = pos - k
        if w == 0.0:
            return float(self.g11[k]), self.g1[k], self.g2[k]
        lerp = lambda a: (1.0 - w) * a[k] + w * a[k + 1]  # noqa: E731
        return float(lerp(self.g11)), lerp(self.g1), lerp(self.g2)

    def resample(self, times: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Coefficient arrays at arbitrary times (vectorised ``at``)."""
        times = np.asarray(times, dtype=float)
        g11 = np.interp(times, self.grid, self.g11)
        g1 = np.stack([np.interp(times, self.grid, self.g1[:, i]) for i in range(3)], axis=-1)
        g2 = np.empty(times.shape + (3, 3))
        for i in range(3):
            for j in range(3):
                g2[..., i, j] = np.interp(times, self.grid, self.g2[:, i, j])
        return g11, g1, g2

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(CSV_COLUMNS)
            for k, t in enumerate(self.grid):
                row = [t, self.g11[k], *self.g1[k]]
                row += [self.g2[k][i, j] for i, j in _SYM_INDEX]
                w.writerow([repr(float(v)) for v in row])

    @classmethod
    def from_csv(cls, path: str | Path) -> "RiccatiSolution":
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = tuple(next(reader))
            if header != CSV_COLUMNS:
                raise ValueError(f"{path}: expected columns {CSV_COLUMNS}, got {header}")
            rows = np.array([[float(v) for v in row] for row in reader])
        g2 = np.empty((len(rows), 3, 3))
        for col, (i, j) in enumerate(_SYM_INDEX, start=5):
            g2[:, i, j] = g2[:, j, i] = rows[:, col]
        return cls(grid=rows[:, 0].copy(), g11=rows[:, 1].copy(),
                   g1=rows[:, 2:5].copy(), g2=g2)


def _consts(p: ModelParams, system: SystemMatrices) -> np.ndarray:
    c = np.zeros(N_CONSTS)
    c[BETA] = system.beta
    c[TWO_A3_XI] = system.two_a3_xi
    c[KAPPA] = system.kappa
    c[RHO] = system.rho
    c[A2] = p.a2
    c[XI] = p.xi
    c[FEE] = p.fee_r
    c[A1] = p.a1
    c[ETA] = p.eta
    c[SIGMA] = p.sigma
    c[PRINTED] = 1.0 if system.as_printed else 0.0
    return c


def solve(p: ModelParams, n_steps: int = 10_000, *, as_printed: bool = False,
          strict: bool = False) -> RiccatiSolution:
    """Integrate the system backward from ``T`` with classical RK4.

    ``G2`` is re-symmetrised after every step. With ``strict=True`` a failing
    :func:`existence_check` raises instead of logging a warning.

    Raises
    ------
    RiccatiBlowUp
        If any coefficient becomes non-finite; carries the failing time.
    """
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    diag = existence_check(p)
    if not diag.passes:
        msg = (f"Theta + Theta^T is not negative semi-definite "
               f"(max eigenvalue {diag.max_eigenvalue:.4g}); integrating anyway")
        if strict:
            raise ValueError(msg)
        log.debug(msg)
    system = build_system(p, as_printed=as_printed)
    with np.errstate(over="ignore", invalid="ignore"):  # blow-up is reported below
        g11, g1, g2, bad = riccati_rk4(
            np.ascontiguousarray(system.U), np.ascontiguousarray(system.V),
            np.ascontiguousarray(system.R), _consts(p, system), float(p.horizon_T),
            int(n_steps))
    grid = np.linspace(0.0, p.horizon_T, n_steps + 1)
    if bad >= 0:
        raise RiccatiBlowUp(float(grid[bad]))
    return RiccatiSolution(grid=grid, g11=g11, g1=g1, g2=g2)


def _state(z, y, s) -> np.ndarray:
    return np.array([z, y, s], dtype=float)


def value_hat(t: float, z: float, y: float, s: float, sol: RiccatiSolution) -> float:
    g11, g1, g2 = sol.at(t)
    v = _state(z, y, s)
    return float(g11 + 2.0 * v @ g1 + v @ g2 @ v)


def grad_value_hat(t: float, z: float, y: float, s: float,
                   sol: RiccatiSolution) -> np.ndarray:
    """``(dv/dZ, dv/dY, dv/dS) = 2 G1 + 2 G2 y``."""
    _, g1, g2 = sol.at(t)
    return 2.0 * g1 + 2.0 * g2 @ _state(z, y, s)
