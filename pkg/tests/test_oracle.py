import json

import numpy as np
import pytest

from amm_lab.core import DomainError
from amm_lab.oracle import (GridSpec, LAURENT_C, OracleReport, argmax_sweep,
                            hamiltonian_argmax, hamiltonian_objectives,
                            hjb_residual_risk_averse, laurent_error, operating_states,
                            residual_lattice, risk_neutral_limit, supermartingale_check)
from amm_lab.riccati import solve
from amm_lab.simulate import SimConfig


def test_report_json_line_uses_pass_key():
    r = OracleReport("x", 1.0, 0.1, {"a": 1}, True, 0.5, value=0.1)
    doc = json.loads(r.to_json_line())
    assert doc["pass"] is True and "passed" not in doc and doc["value"] == 0.1


def test_laurent_worked_example():
    r = laurent_error(50_000.0, 300.0)
    exact = 50_000.0**3 / 50_300.0**2
    assert r.details["errors"]["y^3/(y+1xi)^2"] == pytest.approx(exact - 49_400.0)
    assert r.tolerance == pytest.approx(LAURENT_C * 300.0**2 / 50_000.0)
    assert r.passed and r.value <= r.tolerance


def test_laurent_small_lot_and_out_of_regime():
    assert laurent_error(50_000.0, 1.0).value <= 1e-4
    r = laurent_error(600.0, 300.0)
    assert not r.details["in_regime"] and not r.passed
    with pytest.raises(DomainError):
        laurent_error(100.0, 300.0)


def test_risk_neutral_closed_forms(nt_p):
    r = risk_neutral_limit(nt_p)
    assert r.passed
    assert r.details["cum_nu"]["closed_form"] == pytest.approx(8460.0)
    assert r.details["ext_fees"]["closed_form"] == pytest.approx(477.144)


def test_risk_neutral_no_noise_trading(base_p):
    r = risk_neutral_limit(base_p)
    assert all(abs(d["closed_form"]) == 0.0 for d in r.details.values())
    assert r.details["cum_nu"]["value"] == pytest.approx(0.0, abs=1e-3)


def test_argmax_terminal_and_random_states(nt_p, nt_sol):
    assert hamiltonian_argmax(1.0, 2830.0, 49_000.0, 2822.0, nt_sol, nt_p).passed
    rep = argmax_sweep(nt_sol, nt_p, n_states=20, seed=1)
    assert rep.passed and rep.details["n_failed"] == 0


def test_argmax_detects_wrong_controls(nt_p, nt_sol, monkeypatch):
    from amm_lab import oracle
    real = oracle.controls_risk_averse

    def off(*a, **k):
        c = real(*a, **k)
        return c.__class__(c.a_w * 1.01, c.a_b, c.a_minus, c.a_plus, c.nu_star, c.clamped)

    monkeypatch.setattr(oracle, "controls_risk_averse", off)
    assert not hamiltonian_argmax(0.3, 2830.0, 49_000.0, 2822.0, nt_sol, nt_p).passed


def test_plus_objective_strictly_concave(nt_p, nt_sol):
    f, sense = hamiltonian_objectives(0.5, 2825.0, 50_000.0, 2820.0, nt_sol, nt_p)["a_plus"]
    assert sense == 1
    xs = np.linspace(-2e4, 2e4, 41)
    vals = np.array([f(x) for x in xs])
    assert np.all(vals[:-2] - 2 * vals[1:-1] + vals[2:] < 0)


def test_operating_states_shape(nt_p):
    st = operating_states(7, nt_p, seed=0)
    assert st.shape == (7, 4) and np.all((st[:, 0] >= 0) & (st[:, 0] <= 1))


def test_grid_spec_even_points():
    assert GridSpec().n_points % 2 == 0


def test_residual_small_and_terminal(nt_p, nt_sol):
    rep = residual_lattice(nt_sol, nt_p, n=3)
    assert rep.passed and rep.value <= 1e-6
    end = hjb_residual_risk_averse(1.0, 2830.0, 50_000.0, 2815.0, nt_sol, nt_p)
    assert end.relative <= 1e-8
    with pytest.raises(DomainError):
        hjb_residual_risk_averse(0.5 + 1e-5, 2830.0, 50_000.0, 2815.0, nt_sol, nt_p)


def test_residual_detects_perturbed_solution(nt_p, nt_sol):
    from amm_lab.riccati import RiccatiSolution
    g2 = nt_sol.g2.copy()
    g2[:, 0, 0] *= 1.001
    bad = RiccatiSolution(nt_sol.grid.copy(), nt_sol.g11.copy(), nt_sol.g1.copy(), g2)
    assert not residual_lattice(bad, nt_p, n=3).passed


def test_supermartingale_trivial_without_risk_aversion(base_p):
    p = base_p.with_(gamma=1e-30)
    sol = solve(p, n_steps=10_000)
    cfg = SimConfig(n_steps=10_000, n_paths=50, record_stride=1000)
    rep = supermartingale_check(p, sol, cfg, "optimal")
    np.testing.assert_allclose(rep.details["m"], -1.0, atol=1e-12)


def test_supermartingale_small_ensemble(nt_p, nt_sol):
    cfg = SimConfig(n_steps=10_000, n_paths=200)
    for policy in ("optimal", "zero", 100.0):
        rep = supermartingale_check(nt_p, nt_sol, cfg, policy)
        assert rep.metric == "standard_errors"
        assert len(rep.details["z_scores"]) == 11
    with pytest.raises(ValueError):
        supermartingale_check(nt_p, nt_sol, cfg, "zero", n_grid=7)
