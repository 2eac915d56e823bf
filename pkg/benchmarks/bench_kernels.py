"""Wall-clock comparison of the numba kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--paths 256] [--steps 10000] [--repeat 3]

Both backends consume identical shocks, so the script also checks that the
recorded series agree bitwise.
"""
from __future__ import annotations

import argparse
import time

import numpy as np

from amm_lab import _mc_kernel as K
from amm_lab._backend import USE_NUMBA
from amm_lab._riccati_kernel import riccati_rk4
from amm_lab.core import noise_trading_params
from amm_lab.riccati import _consts, build_system, solve
from amm_lab.simulate import SimConfig, _coefficients, _param_vector, draw_shocks


def best_of(fn, repeat: int) -> float:
    out = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        out.append(time.perf_counter() - t0)
    return min(out)


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--paths", type=int, default=256)
    ap.add_argument("--steps", type=int, default=10_000)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()

    p = noise_trading_params()
    sol = solve(p, n_steps=args.steps)
    cfg = SimConfig(n_steps=args.steps, n_paths=args.paths)
    g1, g2 = _coefficients(p, sol, cfg)
    normals = np.empty((args.paths, args.steps, 2))
    uniforms = np.empty_like(normals)
    for i in range(args.paths):
        normals[i], uniforms[i] = draw_shocks(0, i, args.steps)
    call = (_param_vector(p), False, False, True, np.nan, g1, g2,
            np.array([p.s0, p.y0, p.z0]), 0.0, normals, uniforms, cfg.record_stride)

    print(f"{args.paths} paths x {args.steps} steps, best of {args.repeat}")
    t_np = best_of(lambda: K.simulate_batch_numpy(*call), args.repeat)
    print(f"  monte carlo  numpy : {t_np:8.3f} s")
    if USE_NUMBA:
        K.simulate_batch_numba(*call)  # compile or load from cache
        t_nb = best_of(lambda: K.simulate_batch_numba(*call), args.repeat)
        same = np.array_equal(K.simulate_batch_numba(*call)[0], K.simulate_batch_numpy(*call)[0])
        print(f"  monte carlo  numba : {t_nb:8.3f} s   speed-up {t_np / t_nb:5.1f}x   "
              f"bitwise equal: {same}")

        system = build_system(p)
        rk_args = (np.ascontiguousarray(system.U), np.ascontiguousarray(system.V),
                   np.ascontiguousarray(system.R), _consts(p, system), p.horizon_T, args.steps)
        riccati_rk4(*rk_args)
        t_rk_nb = best_of(lambda: riccati_rk4(*rk_args), args.repeat)
        t_rk_py = best_of(lambda: riccati_rk4.py_func(*rk_args), 1)
        print(f"  riccati rk4  python: {t_rk_py:8.3f} s")
        print(f"  riccati rk4  numba : {t_rk_nb:8.3f} s   speed-up {t_rk_py / t_rk_nb:5.1f}x")
    else:
        print("  numba unavailable or disabled (AMM_LAB_DISABLE_NUMBA); numpy only")


if __name__ == "__main__":
    main()
