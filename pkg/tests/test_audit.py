"""Audit layer: flow-rule, energy balance, semistability, variation, report text."""

from __future__ import annotations

import numpy as np
import pytest

from mesomag import (
    AtomicYoungMeasure,
    FieldSolvers,
    Grid,
    IncrementProblem,
    Material,
    Schedule,
    Trajectory,
    atom_dictionary,
    energy_balance_report,
    enthalpy_of_theta,
    flowrule_residual,
    incremental_solve,
    lambda_step,
    run_audit,
    semistability_residual,
    static_solve,
    uniform_dictionary_measure,
    variation_measure,
)


def _cell_setup(**mat_kw):
    mat = Material.uniaxial(1, **mat_kw)
    grid = Grid((1,), (1.0,))
    solvers = FieldSolvers(grid, mat, magnetostatics=False)
    nu = uniform_dictionary_measure(grid, atom_dictionary(1, mat.r_max))
    return mat, grid, solvers, nu


def _evolve(nu0, mat, solvers, theta0, h_of_t, tau, nsteps):
    """Run increments and collect the trajectory; loading via keyframes."""
    sched = Schedule(
        T_end=nsteps * tau,
        tau=tau,
        h_keyframes=tuple((k * tau, (h_of_t(k * tau),)) for k in range(nsteps + 1)),
    )
    grid = nu0.grid
    w = enthalpy_of_theta(np.full(grid.ncells, theta0), mat)
    lam = nu0.moments().Lnu
    traj = Trajectory(grid=grid, atoms=nu0.atoms, mat=mat, tau=tau)
    traj.begin(nu0, lam, w, np.array([[h_of_t(0.0)]] * grid.ncells))
    nu = nu0
    for k in range(1, nsteps + 1):
        prob = IncrementProblem(
            tau=tau, k=k, nu_prev=nu, lam_prev=lam, w_prev=w,
            mat=mat, schedule=sched, solvers=solvers,
        )
        sol = incremental_solve(prob)
        nu, lam = sol.nu, sol.lam
        traj.append(
            k * tau, np.broadcast_to(prob.h_now, (grid.ncells, 1)),
            nu.weights, lam, w, prob.theta_prev,
        )
    return traj


# -- flow rule ---------------------------------------------------------------------


def test_flowrule_zero_at_accepted_minimizer():
    mat, grid, solvers, nu = _cell_setup(rho_S=0.1, eps_visc=0.2, kappa_pen=5.0)
    rng = np.random.default_rng(2)
    tau = 0.05
    lam_prev = nu.moments().Lnu + rng.normal(0.0, 0.5, size=(1, 2))
    prob = IncrementProblem(
        tau=tau, k=1, nu_prev=nu, lam_prev=lam_prev,
        w_prev=enthalpy_of_theta(np.array([0.6]), mat), mat=mat,
        schedule=Schedule(T_end=0.5, tau=tau, h_keyframes=((0.0, (0.3,)),)),
        solvers=solvers,
    )
    lam, _ = lambda_step(prob, nu, tol_rel=1e-12)
    res = flowrule_residual(
        lam_prev, lam, nu.moments().Lnu, prob.w_prev, mat, solvers, tau
    )
    # v = rate is in the test family, so the minimum is at most 0; first-order
    # optimality of the accepted step keeps every direction nonnegative
    assert -1e-9 <= res <= 0.0


def test_flowrule_zero_in_stick_state():
    mat, grid, solvers, nu = _cell_setup(rho_S=0.5, theta_c=1.0, reg_weight=0.0)
    res = flowrule_residual(
        nu.moments().Lnu, nu.moments().Lnu, nu.moments().Lnu,
        enthalpy_of_theta(np.array([0.95]), mat), mat, solvers, 0.05,
    )
    assert -1e-12 <= res <= 0.0


def test_flowrule_flags_an_uphill_update():
    # moving the internal variable against the thermal drive far beyond the
    # threshold cannot satisfy the inequality: the audit must report it
    mat, grid, solvers, nu = _cell_setup(rho_S=0.01, theta_c=1.0, reg_weight=0.0)
    lam_prev = nu.moments().Lnu
    lam_bad = lam_prev + np.array([[0.0, 2.0]])  # uphill: dtheta > 0 pushes down
    res = flowrule_residual(
        lam_prev, lam_bad, nu.moments().Lnu,
        enthalpy_of_theta(np.array([1.8]), mat), mat, solvers, 0.05,
    )
    assert res < -1e-3


# -- energy balance ----------------------------------------------------------------


def test_energy_balance_frozen_state_is_exact():
    # no motion and a pure field ramp: the Gibbs change is exactly the Zeeman
    # work, so every slack vanishes to rounding
    mat, grid, solvers, nu = _cell_setup(kappa_pen=4.0)
    lam = nu.moments().Lnu
    w = enthalpy_of_theta(np.array([0.5]), mat)
    theta = np.array([0.5])
    traj = Trajectory(grid=grid, atoms=nu.atoms, mat=mat, tau=0.1)
    traj.begin(nu, lam, w, np.array([[0.0]]))
    for k in range(1, 6):
        traj.append(0.1 * k, np.array([[0.2 * k]]), nu.weights, lam, w, theta)
    rep = energy_balance_report(traj, solvers)
    assert np.all(rep.diss_zeta == 0.0)
    assert np.max(np.abs(rep.slack_cum)) <= 1e-12 * rep.scale
    assert np.max(np.abs(rep.flow_slack)) <= 1e-12 * rep.scale
    assert rep.min_slack >= -1e-12


def test_energy_balance_penalty_work_bookkeeping():
    # one pure internal-variable move at fixed weights: flow_slack collects
    # coupling work minus penalty increase minus heat production, all explicit
    mat, grid, solvers, nu = _cell_setup(
        kappa_pen=6.0, rho_S=0.2, eps_visc=0.3, reg_weight=0.0
    )
    tau = 0.1
    theta = np.array([0.4])
    w = enthalpy_of_theta(theta, mat)
    lam0 = nu.moments().Lnu
    lam1 = lam0 + np.array([[0.05, -0.12]])
    traj = Trajectory(grid=grid, atoms=nu.atoms, mat=mat, tau=tau)
    traj.begin(nu, lam0, w, np.array([[0.0]]))
    traj.append(tau, np.array([[0.0]]), nu.weights, lam1, w, theta)
    rep = energy_balance_report(traj, solvers)

    from mesomag.energy import dissipation_rate, gibbs_energy

    dlam = lam1 - lam0
    work_c = -float(np.sum((theta - mat.theta_c) * mat.a0 * dlam[:, -1]))
    pen0 = gibbs_energy(nu, lam0, theta, np.zeros((1, 1)), mat, solvers).penalty
    pen1 = gibbs_energy(nu, lam1, theta, np.zeros((1, 1)), mat, solvers).penalty
    xi = tau * float(np.sum(dissipation_rate(dlam / tau, mat)))
    assert rep.work_coupling[1] == pytest.approx(work_c, rel=1e-12)
    assert rep.diss_xi[1] == pytest.approx(xi, rel=1e-12)
    assert rep.flow_slack[1] == pytest.approx(
        work_c + (pen0 - pen1) - xi, rel=1e-10
    )


def test_energy_slack_nonnegative_on_solved_run():
    mat, grid, solvers, nu = _cell_setup(rho_S=0.1, eps_visc=0.1, kappa_pen=10.0)
    traj = _evolve(nu, mat, solvers, 0.5, lambda t: 3.0 * t, 0.05, 8)
    rep = energy_balance_report(traj, solvers)
    assert rep.min_slack >= -1e-6
    assert np.min(rep.flow_slack) >= -1e-7 * rep.scale


# -- semistability and variation -----------------------------------------------------


def _projector_material(**overrides):
    # A = diag(0, 1) keeps the thermal coupling direction viscous and leaves
    # the magnetization slot rate-independent
    kw = dict(A_proj=((0.0, 0.0), (0.0, 1.0)), rho_S1=0.15, rho_S2=0.05)
    kw.update(overrides)
    return Material.uniaxial(1, **kw)


def test_semistability_trivial_competitor_margin_zero():
    mat = _projector_material()
    grid = Grid((1,), (1.0,))
    solvers = FieldSolvers(grid, mat, magnetostatics=False)
    nu = uniform_dictionary_measure(grid, atom_dictionary(1, mat.r_max))
    lam = nu.moments().Lnu + np.array([[0.1, -0.2]])
    w = enthalpy_of_theta(np.array([0.7]), mat)
    lam_perp = lam - np.array([[0.0, lam[0, 1]]])
    res = semistability_residual(
        nu, lam, w, np.zeros((1, 1)), mat, solvers, 0.05,
        pairs=[(nu.weights, lam_perp)],
    )
    assert res == pytest.approx(0.0, abs=1e-14)


def test_semistability_nonnegative_at_solved_states():
    mat = _projector_material(kappa_pen=8.0, eps_visc=0.2)
    grid = Grid((4,), (0.25,))
    solvers = FieldSolvers(grid, mat, magnetostatics=False)
    nu0 = uniform_dictionary_measure(grid, atom_dictionary(1, mat.r_max))
    traj = _evolve(nu0, mat, solvers, 0.6, lambda t: 1.5 * t, 0.05, 5)
    for k in range(1, traj.nsteps + 1):
        res = semistability_residual(
            traj.measure(k), traj.lam[k], traj.w[k - 1], traj.h[k],
            mat, solvers, traj.tau,
        )
        assert res >= -1e-6


def test_variation_measure_additive_and_exact():
    mat = Material.uniaxial(1, rho_S=0.3)
    grid = Grid((2,), (0.5,))
    rng = np.random.default_rng(8)
    lams = [rng.normal(size=(2, 2)) for _ in range(5)]
    full = variation_measure(lams, mat, grid)
    left = variation_measure(lams, mat, grid, interval=(0, 2))
    right = variation_measure(lams, mat, grid, interval=(2, 4))
    assert full == pytest.approx(left + right, abs=1e-12 * (1.0 + full))

    # a back-and-forth move pays the threshold twice; ball: rho |dlam| per cell
    lam0, lam1 = lams[0], lams[1]
    expected = 2.0 * 0.5 * 0.3 * float(np.sum(np.linalg.norm(lam1 - lam0, axis=1)))
    assert variation_measure([lam0, lam1, lam0], mat, grid) == pytest.approx(
        expected, rel=1e-13
    )


def test_variation_measure_rejects_bad_interval():
    mat = Material.uniaxial(1)
    grid = Grid((1,), (1.0,))
    lams = [np.zeros((1, 2)) for _ in range(3)]
    with pytest.raises(ValueError):
        variation_measure(lams, mat, grid, interval=(2, 1))


# -- assembled report ---------------------------------------------------------------


def test_run_audit_passes_on_solved_evolution():
    mat, grid, solvers, nu = _cell_setup(rho_S=0.1, eps_visc=0.1, kappa_pen=10.0)
    traj = _evolve(nu, mat, solvers, 0.5, lambda t: 2.0 * t, 0.05, 6)
    rep = run_audit(traj, solvers, n_directions=16)
    assert rep.passed, rep.failures
    assert rep.energy.min_slack >= -1e-6
    assert rep.variation >= 0.0
    assert np.max(rep.columns["simplex_defect"]) <= 1e-12


def test_run_audit_reports_corrupted_step():
    mat, grid, solvers, nu = _cell_setup(rho_S=0.05, eps_visc=0.1, kappa_pen=10.0)
    traj = _evolve(nu, mat, solvers, 0.5, lambda t: 2.0 * t, 0.05, 4)
    traj.lam[2] = traj.lam[2] + np.array([[0.0, 1.5]])  # not a minimizer anymore
    rep = run_audit(traj, solvers, n_directions=16)
    assert not rep.passed
    assert any("flow-rule" in msg or "energy" in msg for msg in rep.failures)


def test_audit_report_text_format():
    mat, grid, solvers, nu = _cell_setup(rho_S=0.1)
    traj = _evolve(nu, mat, solvers, 0.5, lambda t: t, 0.1, 3)
    rep = run_audit(traj, solvers, n_directions=8)
    text = rep.to_text()
    lines = text.strip().split("\n")
    assert lines[0].startswith("# audit report")
    assert any(line == "# passed: yes" for line in lines)
    header = next(line for line in lines if not line.startswith("#"))
    names = header.split("\t")
    data = [line.split("\t") for line in lines[lines.index(header) + 1 :]]
    assert len(data) == traj.nsteps + 1
    assert all(len(row) == len(names) for row in data)
    float(data[-1][0])  # numeric payload


def test_jensen_gap_nonnegative_along_run():
    mat, grid, solvers, nu = _cell_setup(rho_S=0.1)
    traj = _evolve(nu, mat, solvers, 0.5, lambda t: 2.0 * t, 0.05, 5)
    for k in range(traj.nsteps + 1):
        assert float(np.min(traj.measure(k).moments().jensen_gap())) >= -1e-12
