"""Implicit enthalpy step: conservation, Robin equilibrium, non-negativity."""

from __future__ import annotations

import numpy as np
import pytest

from mesomag import (
    Grid,
    HeatStepProblem,
    Material,
    check_nonnegativity,
    conductivity_state_dependent,
    enthalpy_of_theta,
    heat_capacity,
    heat_step,
    theta_of_enthalpy,
)


def _problem(grid, mat, w_prev, tau_=0.1, **kw):
    """Zero-rate step data; sources off, diffusion and Robin as configured."""
    lam = np.zeros((grid.ncells, grid.dim + 1))
    return HeatStepProblem(
        grid=grid, tau=tau_, w_prev=w_prev, lam_new=lam, lam_prev=lam, mat=mat, **kw
    )


# -- exact identities ----------------------------------------------------------------


def test_insulated_zero_rate_conserves_heat_content():
    mat = Material.uniaxial(1)
    grid = Grid((16,), (1.0 / 16,))
    rng = np.random.default_rng(0)
    w_prev = rng.uniform(0.0, 2.0, grid.ncells)
    res = heat_step(_problem(grid, mat, w_prev))
    total0 = grid.cell_volume * w_prev.sum()
    total1 = grid.cell_volume * res.w.sum()
    assert total1 == pytest.approx(total0, rel=1e-12)
    assert res.flux == 0.0
    assert not np.array_equal(res.w, w_prev)  # diffusion does act


def test_uniform_dissipation_source_adds_tau_xi():
    # rate in the moment slot only: the coupling term vanishes and the source
    # is the uniform constant rho |c| + eps |c|^q, so w moves by exactly tau s0
    mat = Material.uniaxial(1, rho_S=0.2, eps_visc=0.3, q=2.0)
    grid = Grid((8,), (0.25,))
    tau, c = 0.05, 1.7
    w_prev = np.full(grid.ncells, 0.8)
    n = grid.ncells
    lam_prev = np.zeros((n, 2))
    lam_new = lam_prev.copy()
    lam_new[:, 0] = tau * c
    prob = HeatStepProblem(
        grid=grid, tau=tau, w_prev=w_prev, lam_new=lam_new,
        lam_prev=lam_prev, mat=mat,
    )
    res = heat_step(prob)
    s0 = 0.2 * abs(c) + 0.3 * c**2
    assert res.w == pytest.approx(w_prev + tau * s0, rel=1e-12)
    assert res.iterations <= 3


def test_heat_content_bookkeeping_identity():
    # test function 1: content change = dissipation + coupling + boundary flux
    mat = Material.uniaxial(1, rho_S=0.15, eps_visc=0.2, cv_omega=2.0)
    grid = Grid((12,), (1.0 / 12,))
    rng = np.random.default_rng(3)
    w_prev = rng.uniform(0.0, 1.5, grid.ncells)
    lam_prev = rng.normal(size=(grid.ncells, 2))
    lam_new = lam_prev + rng.normal(scale=0.2, size=lam_prev.shape)
    prob = HeatStepProblem(
        grid=grid, tau=0.07, w_prev=w_prev, lam_new=lam_new, lam_prev=lam_prev,
        mat=mat, b_coeff=0.8, theta_ext=0.6,
    )
    res = heat_step(prob)
    change = grid.cell_volume * float(np.sum(res.w - w_prev))
    budget = res.source_dissipation + res.source_coupling + res.flux
    assert change == pytest.approx(budget, abs=1e-10 * (1.0 + abs(budget)))


# -- Robin boundary ------------------------------------------------------------------


def test_robin_equilibrium_is_a_fixed_point():
    mat = Material.uniaxial(1, cv_omega=2.5)
    grid = Grid((2,), (0.5,))
    theta_ext = 0.9
    w_star = np.full(grid.ncells, enthalpy_of_theta(theta_ext, mat))
    res = heat_step(_problem(grid, mat, w_star, b_coeff=2.0, theta_ext=theta_ext))
    assert res.w == pytest.approx(w_star, abs=1e-12)
    assert abs(res.flux) <= 1e-12


def test_two_cell_step_matches_hand_iteration():
    # same lagged linearization written out with dense 2x2 algebra
    mat = Material.uniaxial(1, kappa0=0.3, cv_omega=2.0, cv_c0=1.0)
    grid = Grid((2,), (0.5,))
    tau, b, theta_ext = 0.2, 1.5, 0.7
    w_prev = np.array([0.1, 1.2])
    res = heat_step(_problem(grid, mat, w_prev, tau_=tau, b_coeff=b, theta_ext=theta_ext))

    vol, dx = 0.5, 0.5
    kf = 0.3 * vol / dx**2  # constant conductivity, one interior face
    area = vol / dx  # one wall face per cell
    w = w_prev.copy()
    for _ in range(120):
        theta = np.maximum((2.0 * np.maximum(w, 0.0) + 1.0) ** 0.5 - 1.0, 0.0)
        cv = (1.0 + theta)
        A = np.array(
            [
                [vol / tau + kf + b * area / cv[0], -kf],
                [-kf, vol / tau + kf + b * area / cv[1]],
            ]
        )
        rhs = vol / tau * w_prev + b * area * (theta_ext - theta + w / cv)
        w = np.linalg.solve(A, rhs)
    assert res.w == pytest.approx(w, rel=1e-9)


def test_long_run_approaches_external_temperature():
    mat = Material.uniaxial(1)
    grid = Grid((4,), (0.25,))
    theta_ext = 1.1
    w = np.zeros(grid.ncells)
    for _ in range(150):
        w = heat_step(
            _problem(grid, mat, w, tau_=0.5, b_coeff=4.0, theta_ext=theta_ext)
        ).w
    assert np.max(np.abs(theta_of_enthalpy(w, mat) - theta_ext)) <= 1e-6


def test_monotone_in_external_temperature():
    mat = Material.uniaxial(1, rho_S=0.1)
    grid = Grid((3, 3), (0.4, 0.3))
    rng = np.random.default_rng(7)
    w_prev = rng.uniform(0.0, 1.0, grid.ncells)
    lam_prev = rng.normal(size=(grid.ncells, 3))
    lam_new = lam_prev + rng.normal(scale=0.1, size=lam_prev.shape)
    out = []
    for theta_ext in (0.3, 0.9):
        prob = HeatStepProblem(
            grid=grid, tau=0.1, w_prev=w_prev, lam_new=lam_new,
            lam_prev=lam_prev, mat=mat, b_coeff=1.2, theta_ext=theta_ext,
        )
        out.append(heat_step(prob).w)
    assert np.all(out[1] >= out[0] - 1e-12)


# -- non-negativity ------------------------------------------------------------------


def test_cooling_coupling_cannot_cross_zero():
    # strongly negative coupling power at w near 0: the clamped temperature
    # shuts the sink off before w can go negative
    mat = Material.uniaxial(1, rho_S=0.0, eps_visc=0.05, q=2.0)
    grid = Grid((6,), (1.0 / 6,))
    n = grid.ncells
    lam_prev = np.zeros((n, 2))
    lam_new = lam_prev.copy()
    lam_new[:, -1] = -3.0  # rate_last = -30 at tau = 0.1
    w = np.full(n, 1e-6)
    for _ in range(5):
        prob = HeatStepProblem(
            grid=grid, tau=0.1, w_prev=w, lam_new=lam_new, lam_prev=lam_prev, mat=mat
        )
        w = heat_step(prob).w
        assert w.min() >= -1e-12


def test_randomized_steps_stay_nonnegative():
    rng = np.random.default_rng(11)
    for trial in range(100):
        dim = int(rng.integers(1, 3))
        if dim == 1:
            grid = Grid((int(rng.integers(2, 12)),), (float(rng.uniform(0.1, 1.0)),))
        else:
            grid = Grid(
                (int(rng.integers(2, 5)), int(rng.integers(2, 5))),
                (float(rng.uniform(0.1, 1.0)), float(rng.uniform(0.1, 1.0))),
            )
        mat = Material.uniaxial(
            dim,
            q=float(rng.choice([2.0, 2.5])),
            cv_omega=float(rng.uniform(2.0, 3.0)),
            rho_S=float(rng.uniform(0.0, 0.3)),
            eps_visc=float(rng.uniform(0.05, 0.4)),
            kappa0=float(rng.uniform(0.05, 0.5)),
            C_K=2.0,
        )
        n = grid.ncells
        w_prev = np.maximum(rng.normal(0.4, 0.5, n), 0.0)
        lam_prev = rng.normal(size=(n, dim + 1))
        lam_new = lam_prev + rng.normal(scale=rng.uniform(0.01, 0.5), size=lam_prev.shape)
        kfn = conductivity_state_dependent if rng.integers(0, 2) else None
        kw = {} if kfn is None else {"kappa_fn": kfn}
        prob = HeatStepProblem(
            grid=grid, tau=float(rng.uniform(0.01, 0.2)), w_prev=w_prev,
            lam_new=lam_new, lam_prev=lam_prev, mat=mat,
            b_coeff=float(rng.choice([0.0, 1.0]) * rng.uniform(0.1, 3.0)),
            theta_ext=float(rng.uniform(0.0, 2.0)), **kw,
        )
        res = heat_step(prob)
        assert res.w.min() >= -1e-12, f"trial {trial}"
        assert res.weak_residual <= 1e-8


# -- reporting ------------------------------------------------------------------------


def test_check_nonnegativity_reports_cells():
    assert check_nonnegativity(np.zeros(4)) == (0.0, [])
    val, bad = check_nonnegativity(np.array([0.5, -1.0, 0.2]))
    assert val == -1.0 and bad == [1]


def test_problem_validation():
    mat = Material.uniaxial(1)
    grid = Grid((4,), (0.25,))
    with pytest.raises(ValueError):
        HeatStepProblem(
            grid=grid, tau=0.1, w_prev=np.zeros(3), lam_new=np.zeros((4, 2)),
            lam_prev=np.zeros((4, 2)), mat=mat,
        )
    with pytest.raises(ValueError):
        HeatStepProblem(
            grid=grid, tau=0.1, w_prev=np.zeros(4), lam_new=np.zeros((4, 2)),
            lam_prev=np.zeros((4, 2)), mat=mat, b_coeff=-1.0,
        )


def test_conductivity_floor_guard():
    mat = Material.uniaxial(1)
    grid = Grid((4,), (0.25,))
    prob = HeatStepProblem(
        grid=grid, tau=0.1, w_prev=np.zeros(4), lam_new=np.zeros((4, 2)),
        lam_prev=np.zeros((4, 2)), mat=mat,
        kappa_fn=lambda lam, w, m: np.zeros(len(w)),
    )
    with pytest.raises(RuntimeError):
        heat_step(prob)
