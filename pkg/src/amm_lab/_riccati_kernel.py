"""Fixed-step RK4 kernel for the backward (g11, G1, G2) system.

Written in the numba-compatible subset of numpy so the same source serves as
the compiled kernel and as the fallback.
"""
from __future__ import annotations

import numpy as np

from ._backend import maybe_njit

# layout of the ``consts`` vector passed to the kernel
BETA, TWO_A3_XI, KAPPA, RHO, A2, XI, FEE, A1, ETA, SIGMA, PRINTED = range(11)
N_CONSTS = 11


@maybe_njit
def _rhs(g2, g1, consts, U, V, R):
    beta = consts[BETA]
    two_a3_xi = consts[TWO_A3_XI]
    kappa = consts[KAPPA]
    rho = consts[RHO]
    a2 = consts[A2]
    xi = consts[XI]
    fee = consts[FEE]
    a1 = consts[A1]
    eta = consts[ETA]
    sigma = consts[SIGMA]

    d_g2 = g2 @ U @ g2 + V.T @ g2 + g2 @ V + R

    g22, g23, g24 = g2[0, 0], g2[0, 1], g2[0, 2]
    g33, g34, g44 = g2[1, 1], g2[1, 2], g2[2, 2]
    # legacy variant reads g24; the ansatz needs g34
    g_mid = g24 if consts[PRINTED] > 0.5 else g34
    C = np.zeros((3, 3))
    C[0, 1] = -beta + two_a3_xi + kappa * g23
    C[0, 2] = -2.0 * rho * g24
    C[1, 1] = kappa * g33
    C[1, 2] = -rho * (1.0 + 2.0 * g_mid)
    C[2, 1] = -beta - two_a3_xi + kappa * g34
    C[2, 2] = -2.0 * rho * g44
    E = np.empty(3)
    E[0] = a2 * xi * xi * (1.0 - 4.0 * g23)
    E[1] = a2 * (fee + xi * xi * g33)
    E[2] = 0.0
    d_g1 = -(C @ g1 + E)

    g13, g14 = g1[1], g1[2]
    d_g11 = (-2.0 * a1 * fee - kappa * g13 * g13 + 2.0 * rho * g14 * g14
             - (2.0 * a1 * xi * xi + eta * eta) * g33 - sigma * sigma * g44)
    return d_g2, d_g1, d_g11


@maybe_njit
def riccati_rk4(U, V, R, consts, horizon, n_steps):
    """Integrate from ``t = horizon`` (all zero) back to 0 on a uniform grid.

    Returns ``(g11, g1, g2, bad)`` with node 0 at ``t = 0``; ``bad`` is the
    first node index (counting backward from T) holding a non-finite value,
    or -1.
    """
    h = horizon / n_steps
    g11 = np.zeros(n_steps + 1)
    g1 = np.zeros((n_steps + 1, 3))
    g2 = np.zeros((n_steps + 1, 3, 3))
    bad = -1
    for k in range(n_steps, 0, -1):
        G2 = g2[k].copy()
        G1 = g1[k].copy()
        a2_, a1_, a0_ = _rhs(G2, G1, consts, U, V, R)
        b2_, b1_, b0_ = _rhs(G2 - 0.5 * h * a2_, G1 - 0.5 * h * a1_, consts, U, V, R)
        c2_, c1_, c0_ = _rhs(G2 - 0.5 * h * b2_, G1 - 0.5 * h * b1_, consts, U, V, R)
        d2_, d1_, d0_ = _rhs(G2 - h * c2_, G1 - h * c1_, consts, U, V, R)
        new2 = G2 - (h / 6.0) * (a2_ + 2.0 * b2_ + 2.0 * c2_ + d2_)
        g2[k - 1] = 0.5 * (new2 + new2.T)
        g1[k - 1] = G1 - (h / 6.0) * (a1_ + 2.0 * b1_ + 2.0 * c1_ + d1_)
        g11[k - 1] = g11[k] - (h / 6.0) * (a0_ + 2.0 * b0_ + 2.0 * c0_ + d0_)
        if not (np.all(np.isfinite(g2[k - 1])) and np.all(np.isfinite(g1[k - 1]))
                and np.isfinite(g11[k - 1])):
            bad = k - 1
            break
    return g11, g1, g2, bad
