"""Lapse-equation solver: stepping, maximum principle, residual checks."""

import numpy as np
import pytest

from penlab.bartnik import (
    StepRejected,
    advance_u,
    initial_u,
    reaction_coefficient,
    scalar_residual,
    solve_u,
)
from penlab.flow import FlowConfig, run_flow
from penlab.oracle import round_flow_u, schwarzschild_rho
from penlab.refgeom import isothermal_profile, make_reference
from penlab.sphere import SphereGrid
from penlab.surfgeom import curved_geometry, perturbed_surface, round_surface


@pytest.fixture(scope="module")
def grid():
    return SphereGrid(16, 32)


@pytest.fixture(scope="module")
def schw():
    return make_reference("schwarzschild", m=1.0)


@pytest.fixture(scope="module")
def schw_profile(schw):
    return isothermal_profile(schw, np.geomspace(2.02, 800.0, 500))


@pytest.fixture(scope="module")
def round_geom(grid, schw_profile):
    return curved_geometry(round_surface(grid, schwarzschild_rho(1.0, 4.0)), schw_profile)


@pytest.fixture(scope="module")
def round_fol(grid, schw_profile):
    rho0 = schwarzschild_rho(1.0, 4.0)
    return run_flow(round_surface(grid, rho0), schw_profile,
                    FlowConfig(ds=0.05, s_max=5.0, store_every=1))


# ------------------------------------------------------------- ingredients

def test_reaction_coefficient_schwarzschild(round_geom):
    c = reaction_coefficient(round_geom)
    assert c == pytest.approx(0.0625, abs=1e-10)


def test_reaction_coefficient_rn(grid):
    rn = make_reference("reissner_nordstrom", m=1.0, e=0.5)
    prof = isothermal_profile(rn, np.geomspace(1.9, 500.0, 500))
    rho = prof.rho_of_r(4.0)
    geom = curved_geometry(round_surface(grid, float(rho)), prof)
    # radial closed form phi/r^2 + phi'/r at r = 4
    phi, dphi = 0.515625, 0.1171875
    assert reaction_coefficient(geom) == pytest.approx(
        phi / 16.0 + dphi / 4.0, abs=1e-9)


def test_initial_u_flagship(round_geom):
    h_phys = 0.5 * np.sqrt(1.0 - 2.4 / 4.0)
    u0 = initial_u(h_phys, round_geom.H0)
    assert u0 == pytest.approx(np.sqrt(1.25), abs=1e-9)
    assert initial_u(round_geom.H0, round_geom.H0) == pytest.approx(1.0, abs=0)


def test_initial_u_rejects_nonpositive(round_geom):
    with pytest.raises(ValueError, match="positive"):
        initial_u(-0.1, round_geom.H0)
    with pytest.raises(ValueError, match="positive"):
        initial_u(round_geom.H0, 0.0 * round_geom.H0)


# ----------------------------------------------------------------- stepping

def test_advance_fixed_point_exact(round_geom):
    ones = np.ones_like(round_geom.H0)
    u1 = advance_u(round_geom, ones, 0.05)
    assert np.array_equal(u1, ones)


def test_advance_matches_frozen_slope(round_geom):
    ds = 1e-3
    u1 = advance_u(round_geom, 1.2, ds)
    slope = (np.mean(u1) - 1.2) / ds
    assert slope == pytest.approx(-0.0933381, abs=1e-4)


def test_advance_rejects_wild_step(round_geom):
    with pytest.raises(StepRejected):
        advance_u(round_geom, 1.2, 30.0, bounds=(1.0, 1.2))


# ------------------------------------------------------------------ solves

def test_solve_matches_ode_oracle(schw, round_fol):
    uf = solve_u(round_fol, 1.2, with_residual=False)
    states, _ = round_flow_u(schw, 4.0, 1.2, 5.0, n_samples=101)
    for i in (10, 40, 100):
        u_mean = float(np.mean(uf.u[i]))
        assert u_mean == pytest.approx(states[i].u, abs=1e-6)
        assert np.max(uf.u[i]) - np.min(uf.u[i]) < 1e-10
    assert uf.halvings == 0
    assert uf.decay_bounded
    assert uf.bounds == (1.0, 1.2)


def test_solve_max_principle_every_slice(round_fol):
    uf = solve_u(round_fol, 1.2, with_residual=False)
    eps = 1e-10
    for ui in uf.u:
        assert np.min(ui) >= 1.0 - eps
        assert np.max(ui) <= 1.2 + eps
    # monotone relaxation toward 1 for constant supersolution data
    devs = uf.max_u_minus_1()
    assert np.all(np.diff(devs) < 0.0)


def test_solve_whole_run_fixed_point(round_fol):
    uf = solve_u(round_fol, 1.0)
    assert all(np.array_equal(ui, np.ones_like(ui)) for ui in uf.u)
    assert np.all(uf.residual == 0.0)
    assert np.all(uf.decay == 0.0)


def test_solve_angular_perturbation_decays(grid, schw_profile):
    rho0 = schwarzschild_rho(1.0, 4.0)
    fol = run_flow(round_surface(grid, rho0), schw_profile,
                   FlowConfig(ds=0.05, s_max=3.0, store_every=1))
    tt, pp = np.meshgrid(grid.theta, grid.phi, indexing="ij")
    u0 = 1.0 + 0.1 * np.sin(tt) ** 2 * np.cos(2.0 * pp)
    uf = solve_u(fol, u0, with_residual=False)
    lo, hi = uf.bounds
    eps = 1e-10
    for ui in uf.u:
        assert np.min(ui) >= lo - eps and np.max(ui) <= hi + eps
    devs = uf.max_u_minus_1()
    # the flow expands the surfaces, so angular smoothing weakens with s;
    # the deviation still shrinks every step and lands well below start
    assert np.all(np.diff(devs) < 0.0)
    assert devs[-1] < 0.1 * devs[0]
    assert uf.halvings == 0


def test_solve_requires_positive_coefficient(grid):
    # a potential well with phi' < -phi/r makes the reaction coefficient negative
    r = np.linspace(1.0, 30.0, 600)
    phi = 0.5 + 0.4 * np.cos(r)
    ref = make_reference("tabulated", tabulated_data=(r, phi, np.ones_like(r)))
    prof = isothermal_profile(ref, np.linspace(1.5, 25.0, 400))
    rho2 = float(prof.rho_of_r(2.0))
    fol = run_flow(round_surface(grid, rho2), prof,
                   FlowConfig(ds=0.01, s_max=0.03, store_every=1,
                              abort_on_condition_failure=False))
    with pytest.raises(ValueError, match="not positive"):
        solve_u(fol, 1.1)


# ---------------------------------------------------------------- residual

def test_residual_small_and_second_order(grid, schw_profile):
    rho0 = schwarzschild_rho(1.0, 4.0)
    maxima = []
    for ds in (0.04, 0.02, 0.01):
        fol = run_flow(round_surface(grid, rho0), schw_profile,
                       FlowConfig(ds=ds, s_max=0.8, store_every=1))
        uf = solve_u(fol, 1.2, dt_max=10.0, adapt=False)
        maxima.append(float(np.max(np.abs(uf.residual))))
    assert maxima[1] < 1e-5
    assert 3.0 < maxima[0] / maxima[1] < 5.0
    assert 3.0 < maxima[1] / maxima[2] < 5.0


def test_residual_term_isolation_rn(grid):
    rn = make_reference("reissner_nordstrom", m=1.0, e=0.5)
    prof = isothermal_profile(rn, np.geomspace(1.9, 500.0, 500))
    rho3 = float(prof.rho_of_r(3.0))
    surf = perturbed_surface(grid, rho3, {(2, 0): 0.15})
    fol = run_flow(surf, prof, FlowConfig(ds=0.005, s_max=0.05, store_every=1))
    uf = solve_u(fol, 1.1)
    res_without = scalar_residual(fol, uf, include_coupling=False)
    term = np.array([(1.0 / uf.u[k] ** 2 - 1.0) * fol.geometry(k).t_field
                     for k in range(len(fol))])
    assert np.max(np.abs(uf.residual)) < 1.2e-5
    assert np.max(np.abs(term)) > 4e-5
    assert np.max(np.abs(res_without - term)) < 1.2e-5


def test_ufield_series_csv(round_fol):
    uf = solve_u(round_fol, 1.2)
    lines = uf.series_csv().strip().split("\n")
    assert lines[0] == "s,max_u_minus_1,min_u,max_residual"
    assert len(lines) == len(uf.u) + 1
    assert "nan" not in lines[1]
