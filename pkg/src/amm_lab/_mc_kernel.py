"""Path-batch Monte Carlo kernels.

Two implementations of the same Euler/Bernoulli scheme over pre-drawn shocks:
``simulate_batch_numba`` loops over paths and steps in compiled scalar code,
``simulate_batch_numpy`` vectorises across paths and loops over steps.  Both
consume identical shock arrays and must agree to rounding.
"""
from __future__ import annotations

import math

import numpy as np

from ._backend import USE_NUMBA, maybe_njit

# layout of the ``prm`` vector
SIGMA, ETA, XI, IMPACT, FEE, GAMMA, ZETA, NU_MAX, A0, A1, A2, A3, HORIZON = range(13)
N_PRM = 13

# recorded series, last axis of the ``rec`` output
S, Y, Z, C, NU, P, Q, NM, NP, NHM, CUMNU, FEES = range(12)
SERIES = ("s", "y", "z", "c", "nu", "p", "q_lp", "n_minus", "n_plus", "n_hat_minus",
          "cum_nu", "ext_fees")

# status codes, first column of the ``status`` output
OK, RESERVES_EXHAUSTED = 0, 2
MAX_JUMP_PROB = 0.1


@maybe_njit
def controls_scalar(risk_neutral, t, z, y, s, g1, g2, prm, exact_shift, printed):
    """Closed-form controls at one state; returns ``(a_w, a_b, a_m, a_p, nu_bar)``."""
    sigma, eta, xi, a = prm[SIGMA], prm[ETA], prm[XI], prm[IMPACT]
    fee, g, k, nu_max = prm[FEE], prm[GAMMA], prm[ZETA], prm[NU_MAX]
    band = 2.0 * a * eta * nu_max
    has_buy = y > xi
    d_plus = xi * (s - z * y / (y + xi))
    d_minus = -xi * (s - z * y / (y - xi)) if has_buy else 0.0

    if risk_neutral:
        dyv = 2.0 * prm[A2] * fee * (prm[HORIZON] - t)
        alpha = (dyv / (a * eta) - 2.0 * (s + z) * g * eta) / (2.0 * g + 1.0 / (a * eta * eta))
        a_b = alpha if abs(alpha) <= band else -(s + z) * eta
        a_w = -y * sigma
        a_m = -d_minus if has_buy else 0.0
        a_p = -d_plus
    else:
        gz = g2[0, 0] * z + g2[0, 1] * y + g2[0, 2] * s
        gy = g2[1, 0] * z + g2[1, 1] * y + g2[1, 2] * s
        gs = g2[2, 0] * z + g2[2, 1] * y + g2[2, 2] * s
        dyv = 2.0 * (g1[1] + gy)
        dsv = 2.0 * (g1[2] + gs)
        alpha = (((1.0 / (a * eta) + 2.0 * k * eta) * dyv - 2.0 * g * eta * (s + z))
                 / (2.0 * (g + k) + 1.0 / (a * eta * eta)))
        if abs(alpha) <= band:
            a_b = alpha
        else:
            scale = g if printed else eta
            a_b = (k * scale * dyv - g * eta * (s + z)) / (g + k)
        a_w = sigma * (k * dsv - g * y) / (g + k)
        # v(Z + dz, Y + dy, S) - v(Z, Y, S) for the quadratic ansatz
        dy_p = xi
        dz_p = z * (y / (y + xi)) ** 2 - z if exact_shift else 0.0
        jump_p = (2.0 * (dz_p * (g1[0] + gz) + dy_p * (g1[1] + gy))
                  + g2[0, 0] * dz_p * dz_p + 2.0 * g2[0, 1] * dz_p * dy_p + g2[1, 1] * dy_p * dy_p)
        a_p = (-g * d_plus + k * (jump_p + fee)) / (g + k)
        if has_buy:
            dy_m = -xi
            dz_m = z * (y / (y - xi)) ** 2 - z if exact_shift else 0.0
            jump_m = (2.0 * (dz_m * (g1[0] + gz) + dy_m * (g1[1] + gy))
                      + g2[0, 0] * dz_m * dz_m + 2.0 * g2[0, 1] * dz_m * dy_m
                      + g2[1, 1] * dy_m * dy_m)
            a_m = (-g * d_minus + k * (jump_m + fee)) / (g + k)
        else:
            a_m = 0.0
    nu = a_b / (2.0 * a * eta)
    nu = min(max(nu, -nu_max), nu_max)
    return a_w, a_b, a_m, a_p, nu


@maybe_njit(nogil=True)
def simulate_batch_numba(prm, risk_neutral, exact_shift, printed, nu_override,
                         g1, g2, state0, p0, normals, uniforms, stride):
    """Scalar loop over paths and steps.

    ``g1`` and ``g2`` hold the ansatz coefficients at every time node
    (``n_steps + 1`` rows). ``state0`` is ``(s, y, z)``. ``nu_override`` is NaN
    for the equilibrium speed or a constant speed otherwise.
    Returns ``(rec, status, guard)``: ``status[i] = (code, step)`` flags an
    aborted path; ``guard[i]`` holds the number of steps with
    ``lambda * dt >= MAX_JUMP_PROB`` and the largest ``lambda * dt`` seen.
    """
    n_paths, n_steps = normals.shape[0], normals.shape[1]
    n_rec = n_steps // stride + 1
    rec = np.zeros((n_paths, n_rec, 12))
    status = np.zeros((n_paths, 2), dtype=np.int64)
    guard = np.zeros((n_paths, 2))
    dt = prm[HORIZON] / n_steps
    sq = math.sqrt(dt)
    sigma, eta, xi, a = prm[SIGMA], prm[ETA], prm[XI], prm[IMPACT]
    g = prm[GAMMA]
    a0, a1, a2, a3 = prm[A0], prm[A1], prm[A2], prm[A3]
    fixed_nu = not math.isnan(nu_override)

    for i in range(n_paths):
        s, y, z = state0[0], state0[1], state0[2]
        x = z * y
        c = x * y
        pp, q = p0, 0.0
        n_m, n_p, n_hm = 0.0, 0.0, 0.0
        cum_nu, fees = 0.0, 0.0
        for k in range(n_steps + 1):
            t = k * dt
            a_w, a_b, a_m, a_p, nu_bar = controls_scalar(
                risk_neutral, t, z, y, s, g1[k], g2[k], prm, exact_shift, printed)
            nu = nu_override if fixed_nu else nu_bar
            if k % stride == 0:
                r = rec[i, k // stride]
                r[S], r[Y], r[Z], r[C], r[NU] = s, y, z, c, nu
                r[P], r[Q], r[NM], r[NP], r[NHM] = pp, q, n_m, n_p, n_hm
                r[CUMNU], r[FEES] = cum_nu, fees
            if k == n_steps:
                break

            gap = a3 * (z - s)
            lam_m = max(a0, a1 + a2 * y - gap)
            lam_p = max(a0, a1 + a2 * y + gap)
            jump_prob = max(lam_m, lam_p) * dt
            if jump_prob >= MAX_JUMP_PROB:
                guard[i, 0] += 1.0
            guard[i, 1] = max(guard[i, 1], jump_prob)
            has_buy = y > xi
            d_plus = xi * (s - z * y / (y + xi))
            d_minus = -xi * (s - z * y / (y - xi)) if has_buy else 0.0

            h_opt = -a * nu_bar * nu_bar + a_b * nu_bar / eta
            vw = a_w + sigma * y
            vb = a_b + eta * (s + z)
            drift = (0.5 * g * (vw * vw + vb * vb)
                     + lam_m * math.expm1(-g * (a_m + d_minus)) / g
                     + lam_p * math.expm1(-g * (a_p + d_plus)) / g
                     - h_opt + a_b * nu / eta)
            ew = normals[i, k, 0]
            eb = normals[i, k, 1]
            pp += drift * dt + a_w * sq * ew + a_b * sq * eb
            q += -a * nu * nu * dt + eta * (s + z) * sq * eb + sigma * y * sq * ew
            fees += a * nu * nu * dt
            cum_nu += nu * dt
            s = s + sigma * sq * ew

            dy = nu * dt + eta * sq * eb
            if y + dy <= 0.0:
                status[i, 0] = RESERVES_EXHAUSTED
                status[i, 1] = k
                break
            x = x + z * dy
            y = y + dy
            c = x * y

            if uniforms[i, k, 0] < lam_m * dt:
                n_hm += 1.0
                pp += a_m
                if y > xi:
                    q += -xi * (s - z * y / (y - xi))
                    ratio = y / (y - xi)
                    z = z * ratio * ratio
                    y = y - xi
                    x = c / y
                    n_m += 1.0
            if uniforms[i, k, 1] < lam_p * dt:
                pp += a_p
                q += xi * (s - z * y / (y + xi))
                ratio = y / (y + xi)
                z = z * ratio * ratio
                y = y + xi
                x = c / y
                n_p += 1.0
    return rec, status, guard


def controls_vector(risk_neutral, t, z, y, s, g1, g2, prm, exact_shift, printed):
    """Array version of :func:`controls_scalar` over a batch of states."""
    sigma, eta, xi, a = prm[SIGMA], prm[ETA], prm[XI], prm[IMPACT]
    fee, g, k, nu_max = prm[FEE], prm[GAMMA], prm[ZETA], prm[NU_MAX]
    band = 2.0 * a * eta * nu_max
    has_buy = y > xi
    d_plus = xi * (s - z * y / (y + xi))
    safe_den = np.where(has_buy, y - xi, 1.0)
    d_minus = np.where(has_buy, -xi * (s - z * y / safe_den), 0.0)

    if risk_neutral:
        dyv = 2.0 * prm[A2] * fee * (prm[HORIZON] - t)
        alpha = (dyv / (a * eta) - 2.0 * (s + z) * g * eta) / (2.0 * g + 1.0 / (a * eta * eta))
        a_b = np.where(np.abs(alpha) <= band, alpha, -(s + z) * eta)
        a_w = -y * sigma
        a_m = np.where(has_buy, -d_minus, 0.0)
        a_p = -d_plus
    else:
        gz = g2[0, 0] * z + g2[0, 1] * y + g2[0, 2] * s
        gy = g2[1, 0] * z + g2[1, 1] * y + g2[1, 2] * s
        gs = g2[2, 0] * z + g2[2, 1] * y + g2[2, 2] * s
        dyv = 2.0 * (g1[1] + gy)
        dsv = 2.0 * (g1[2] + gs)
        alpha = (((1.0 / (a * eta) + 2.0 * k * eta) * dyv - 2.0 * g * eta * (s + z))
                 / (2.0 * (g + k) + 1.0 / (a * eta * eta)))
        scale = g if printed else eta
        a_b = np.where(np.abs(alpha) <= band, alpha,
                       (k * scale * dyv - g * eta * (s + z)) / (g + k))
        a_w = sigma * (k * dsv - g * y) / (g + k)
        dz_p = z * (y / (y + xi)) ** 2 - z if exact_shift else 0.0
        jump_p = (2.0 * (dz_p * (g1[0] + gz) + xi * (g1[1] + gy))
                  + g2[0, 0] * dz_p * dz_p + 2.0 * g2[0, 1] * dz_p * xi + g2[1, 1] * xi * xi)
        a_p = (-g * d_plus + k * (jump_p + fee)) / (g + k)
        dz_m = z * (y / safe_den) ** 2 - z if exact_shift else 0.0
        jump_m = (2.0 * (dz_m * (g1[0] + gz) - xi * (g1[1] + gy))
                  + g2[0, 0] * dz_m * dz_m - 2.0 * g2[0, 1] * dz_m * xi + g2[1, 1] * xi * xi)
        a_m = np.where(has_buy, (-g * d_minus + k * (jump_m + fee)) / (g + k), 0.0)
    nu = np.clip(a_b / (2.0 * a * eta), -nu_max, nu_max)
    return a_w, a_b, a_m, a_p, nu


def simulate_batch_numpy(prm, risk_neutral, exact_shift, printed, nu_override,
                         g1, g2, state0, p0, normals, uniforms, stride):
    """Vectorised-over-paths fallback with the same contract as the numba kernel.

    If reserves are exhausted the whole batch stops at that step; the caller
    treats any nonzero status as fatal.
    """
    n_paths, n_steps = normals.shape[0], normals.shape[1]
    n_rec = n_steps // stride + 1
    rec = np.zeros((n_paths, n_rec, 12))
    status = np.zeros((n_paths, 2), dtype=np.int64)
    guard = np.zeros((n_paths, 2))
    dt = prm[HORIZON] / n_steps
    sq = math.sqrt(dt)
    sigma, eta, xi, a = prm[SIGMA], prm[ETA], prm[XI], prm[IMPACT]
    g = prm[GAMMA]
    a0, a1, a2, a3 = prm[A0], prm[A1], prm[A2], prm[A3]
    fixed_nu = not math.isnan(nu_override)

    s = np.full(n_paths, state0[0])
    y = np.full(n_paths, state0[1])
    z = np.full(n_paths, state0[2])
    x = z * y
    c = x * y
    pp = np.full(n_paths, float(p0))
    q = np.zeros(n_paths)
    n_m = np.zeros(n_paths)
    n_p = np.zeros(n_paths)
    n_hm = np.zeros(n_paths)
    cum_nu = np.zeros(n_paths)
    fees = np.zeros(n_paths)

    for k in range(n_steps + 1):
        t = k * dt
        a_w, a_b, a_m, a_p, nu_bar = controls_vector(
            risk_neutral, t, z, y, s, g1[k], g2[k], prm, exact_shift, printed)
        nu = np.full(n_paths, nu_override) if fixed_nu else nu_bar
        if k % stride == 0:
            r = rec[:, k // stride]
            for col, arr in ((S, s), (Y, y), (Z, z), (C, c), (NU, nu), (P, pp), (Q, q),
                             (NM, n_m), (NP, n_p), (NHM, n_hm), (CUMNU, cum_nu), (FEES, fees)):
                r[:, col] = arr
        if k == n_steps:
            break

        gap = a3 * (z - s)
        lam_m = np.maximum(a0, a1 + a2 * y - gap)
        lam_p = np.maximum(a0, a1 + a2 * y + gap)
        jump_prob = np.maximum(lam_m, lam_p) * dt
        guard[:, 0] += jump_prob >= MAX_JUMP_PROB
        guard[:, 1] = np.maximum(guard[:, 1], jump_prob)
        has_buy = y > xi
        d_plus = xi * (s - z * y / (y + xi))
        d_minus = np.where(has_buy, -xi * (s - z * y / np.where(has_buy, y - xi, 1.0)), 0.0)

        h_opt = -a * nu_bar * nu_bar + a_b * nu_bar / eta
        vw = a_w + sigma * y
        vb = a_b + eta * (s + z)
        drift = (0.5 * g * (vw * vw + vb * vb)
                 + lam_m * np.expm1(-g * (a_m + d_minus)) / g
                 + lam_p * np.expm1(-g * (a_p + d_plus)) / g
                 - h_opt + a_b * nu / eta)
        ew = normals[:, k, 0]
        eb = normals[:, k, 1]
        pp = pp + (drift * dt + a_w * sq * ew + a_b * sq * eb)
        q = q + (-a * nu * nu * dt + eta * (s + z) * sq * eb + sigma * y * sq * ew)
        fees = fees + a * nu * nu * dt
        cum_nu = cum_nu + nu * dt
        s = s + sigma * sq * ew

        dy = nu * dt + eta * sq * eb
        bad = y + dy <= 0.0
        if bad.any():
            status[bad, 0] = RESERVES_EXHAUSTED
            status[bad, 1] = k
            break
        x = x + z * dy
        y = y + dy
        c = x * y

        buy = uniforms[:, k, 0] < lam_m * dt
        n_hm = n_hm + buy
        pp = pp + np.where(buy, a_m, 0.0)
        exec_buy = buy & (y > xi)
        y_after = np.where(exec_buy, y - xi, y)
        q = q + np.where(exec_buy, -xi * (s - z * y / np.where(exec_buy, y_after, 1.0)), 0.0)
        ratio = y / y_after
        z = z * ratio * ratio
        y = y_after
        x = np.where(exec_buy, c / y, x)
        n_m = n_m + exec_buy

        sell = uniforms[:, k, 1] < lam_p * dt
        pp = pp + np.where(sell, a_p, 0.0)
        y_after = np.where(sell, y + xi, y)
        q = q + np.where(sell, xi * (s - z * y / (y + xi)), 0.0)
        ratio = y / y_after
        z = z * ratio * ratio
        y = y_after
        x = np.where(sell, c / y, x)
        n_p = n_p + sell
    return rec, status, guard


def simulate_batch(*args, backend: str | None = None):
    """Dispatch to the selected backend (``"numba"``, ``"numpy"`` or the default)."""
    if backend is None:
        backend = "numba" if USE_NUMBA else "numpy"
    if backend == "numba":
        if not USE_NUMBA:
            raise RuntimeError("numba backend requested but numba is disabled or missing")
        return simulate_batch_numba(*args)
    if backend == "numpy":
        return simulate_batch_numpy(*args)
    raise ValueError(f"unknown backend {backend!r}")
