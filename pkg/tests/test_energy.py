"""Potentials, dissipation calculus, prox oracle, enthalpy maps."""

from __future__ import annotations

import math

import numpy as np
import pytest

from mesomag import (
    AtomicYoungMeasure,
    FieldSolvers,
    Grid,
    L_of,
    Material,
    conductivity,
    conductivity_state_dependent,
    dirac,
    dissipation_potential,
    dissipation_rate,
    enthalpy_of_theta,
    gibbs_energy,
    gibbs_lambda_gradient,
    gibbs_weight_gradient,
    heat_capacity,
    phi,
    project_simplex,
    prox_dissipation,
    psi,
    psi_minimizer_magnitude,
    support_S,
    theta_of_enthalpy,
)


# -- anisotropy ---------------------------------------------------------------


def test_phi_on_easy_axis_drops_pole_term():
    mat = Material.uniaxial(2, beta_aniso=3.0, b0=1.0, b_p=0.01, p=6.0)
    t = 0.8
    m = np.array([t, 0.0])
    assert phi(m, mat) == pytest.approx(t**4 + 0.01 * t**6, rel=1e-14)
    assert phi(np.zeros(2), mat) == 0.0


def test_phi_even_and_nonnegative():
    mat = Material.uniaxial(2, beta_aniso=2.0)
    rng = np.random.default_rng(0)
    m = rng.normal(size=(50, 2))
    assert np.allclose(phi(m, mat), phi(-m, mat))
    assert np.all(phi(m, mat) >= 0.0)


def test_psi_minimizer_magnitude_formula():
    mat = Material.uniaxial(1, a0=2.0, b0=1.0, theta_c=1.0, b_p=0.0)
    t = psi_minimizer_magnitude(0.5, mat)
    assert t == pytest.approx(math.sqrt(0.5), abs=1e-12)
    # above the transition the minimizer collapses to zero
    assert psi_minimizer_magnitude(1.5, mat) == 0.0
    # the closed form is a genuine minimizer of psi along the axis
    s = np.linspace(-2.0, 2.0, 2001)[:, None]
    vals = psi(s, 0.5, mat)
    assert abs(abs(s[np.argmin(vals), 0]) - t) <= 2e-3


def test_L_of_shapes():
    m = np.array([[1.0, 2.0], [0.0, -1.0]])
    L = L_of(m)
    assert L.shape == (2, 3)
    assert np.allclose(L[:, 2], [5.0, 1.0])


# -- Gibbs functional -----------------------------------------------------------


def _setup_1d(n=8, **mat_kw):
    g = Grid((n,), (1.0 / n,))
    mat = Material.uniaxial(1, **mat_kw)
    return g, mat, FieldSolvers(g, mat)


def test_gibbs_zero_state_is_zero():
    g, mat, sol = _setup_1d()
    nu = dirac(g, np.zeros((8, 1)))
    ev = gibbs_energy(nu, np.zeros((8, 2)), mat.theta_c, np.zeros(1), mat, sol)
    assert ev.total == 0.0
    for part in (ev.anisotropy, ev.coupling, ev.magnetostatic, ev.zeeman, ev.penalty):
        assert part == 0.0


def test_gibbs_penalty_vanishes_on_constraint():
    g, mat, sol = _setup_1d()
    rng = np.random.default_rng(1)
    m = rng.normal(size=(8, 1)) * 0.5
    nu = dirac(g, m)
    ev = gibbs_energy(nu, nu.moments().Lnu, 0.5, np.array([0.3]), mat, sol)
    assert ev.penalty <= 1e-14


def test_gibbs_single_cell_hand_formula():
    g = Grid((1,), (1.0,))
    mat = Material.uniaxial(1, kappa_pen=5.0)
    sol = FieldSolvers(g, mat)
    m0, h0 = 0.7, 0.2
    nu = dirac(g, np.array([[m0]]))
    lam = L_of(np.array([[m0]]))
    ev = gibbs_energy(nu, lam, mat.theta_c, np.array([h0]), mat, sol)
    h_dem = sol.magneto.solve(np.array([[m0]])).h_dem[0, 0]
    expected = float(phi(np.array([m0]), mat)) + 0.5 * m0 * h_dem - h0 * m0
    assert ev.total == pytest.approx(expected, rel=1e-12)


def test_gibbs_parts_signs_random_states():
    g, mat, sol = _setup_1d()
    rng = np.random.default_rng(2)
    atoms = np.linspace(-1.5, 1.5, 7)[:, None]
    for _ in range(10):
        w = project_simplex(rng.normal(size=(8, 7)))
        nu = AtomicYoungMeasure(g, atoms, w)
        lam = rng.normal(size=(8, 2))
        ev = gibbs_energy(nu, lam, rng.uniform(0, 2), rng.normal(size=1), mat, sol)
        assert ev.anisotropy >= 0.0
        assert ev.magnetostatic >= -1e-12
        assert ev.penalty >= 0.0
        s = ev.anisotropy + ev.coupling + ev.magnetostatic + ev.zeeman + ev.penalty
        assert ev.total == pytest.approx(s, rel=1e-12)
        assert ev.magnetic == pytest.approx(ev.total - ev.coupling, rel=1e-12)


def test_gibbs_convex_in_weights_and_lambda():
    g, mat, sol = _setup_1d()
    rng = np.random.default_rng(3)
    atoms = np.linspace(-1.2, 1.2, 5)[:, None]
    theta, h = 0.6, np.array([0.1])
    for _ in range(8):
        w0, w1 = project_simplex(rng.normal(size=(2, 8, 5)))
        l0, l1 = rng.normal(size=(2, 8, 2))
        e0 = gibbs_energy(AtomicYoungMeasure(g, atoms, w0), l0, theta, h, mat, sol).total
        e1 = gibbs_energy(AtomicYoungMeasure(g, atoms, w1), l1, theta, h, mat, sol).total
        mid = gibbs_energy(
            AtomicYoungMeasure(g, atoms, 0.5 * (w0 + w1)),
            0.5 * (l0 + l1),
            theta,
            h,
            mat,
            sol,
        ).total
        assert mid <= 0.5 * (e0 + e1) + 1e-10


# -- gradient checks -------------------------------------------------------------


def _fd_lambda_gradient(nu, lam, theta, h, mat, sol):
    grad = np.zeros_like(lam)
    for c in range(lam.shape[0]):
        for j in range(lam.shape[1]):
            step = 1e-6 * (1.0 + abs(lam[c, j]))
            lp, lm = lam.copy(), lam.copy()
            lp[c, j] += step
            lm[c, j] -= step
            ep = gibbs_energy(nu, lp, theta, h, mat, sol).total
            em = gibbs_energy(nu, lm, theta, h, mat, sol).total
            grad[c, j] = (ep - em) / (2.0 * step)
    return grad


def test_lambda_gradient_matches_finite_differences():
    g, mat, sol = _setup_1d(6, kappa_pen=7.0)
    rng = np.random.default_rng(4)
    atoms = np.linspace(-1.0, 1.0, 5)[:, None]
    nu = AtomicYoungMeasure(g, atoms, project_simplex(rng.normal(size=(6, 5))))
    lam = rng.normal(size=(6, 2))
    theta, h = 0.4, np.array([0.2])
    ev = gibbs_energy(nu, lam, theta, h, mat, sol)
    analytic = gibbs_lambda_gradient(ev, theta, mat, g)
    fd = _fd_lambda_gradient(nu, lam, theta, h, mat, sol)
    assert np.max(np.abs(analytic - fd)) <= 1e-5 * (1.0 + np.max(np.abs(fd)))


def test_weight_gradient_matches_finite_differences():
    # difference along simplex-tangent directions e_i - e_j from an interior
    # point; that is the component of the gradient the solvers consume
    g, mat, sol = _setup_1d(4, kappa_pen=3.0)
    rng = np.random.default_rng(5)
    K = 4
    atoms = np.linspace(-1.0, 1.0, K)[:, None]
    w = 0.5 / K + 0.5 * project_simplex(rng.normal(size=(4, K)))
    lam = rng.normal(size=(4, 2)) * 0.5
    theta, h = 0.8, np.array([-0.3])
    nu = AtomicYoungMeasure(g, atoms, w)
    ev = gibbs_energy(nu, lam, theta, h, mat, sol)
    analytic = gibbs_weight_gradient(nu, ev, h, mat)
    step = 1e-6
    for c in range(4):
        for i in range(K - 1):
            wp, wm = w.copy(), w.copy()
            wp[c, i] += step
            wp[c, i + 1] -= step
            wm[c, i] -= step
            wm[c, i + 1] += step
            ep = gibbs_energy(AtomicYoungMeasure(g, atoms, wp), lam, theta, h, mat, sol)
            em = gibbs_energy(AtomicYoungMeasure(g, atoms, wm), lam, theta, h, mat, sol)
            fd = (ep.total - em.total) / (2.0 * step)
            an = analytic[c, i] - analytic[c, i + 1]
            assert abs(an - fd) <= 1e-5 * (1.0 + abs(fd))


# -- dissipation ------------------------------------------------------------------


def test_support_examples():
    mat_ball = Material.uniaxial(2, rho_S=1.0, S_shape="ball")
    assert support_S(np.zeros(3), mat_ball) == 0.0
    assert support_S(np.array([3.0, 4.0, 0.0]), mat_ball) == pytest.approx(5.0)
    mat_box = Material.uniaxial(2, rho_S=1.0, S_shape="box")
    assert support_S(np.array([1.0, -2.0, 3.0]), mat_box) == pytest.approx(6.0)
    # positive 1-homogeneity, exact
    v = np.array([0.3, -1.2, 0.7])
    assert support_S(2.5 * v, mat_ball) == 2.5 * support_S(v, mat_ball)
    assert support_S(2.5 * v, mat_box) == 2.5 * support_S(v, mat_box)


def test_dissipation_rate_examples():
    mat = Material.uniaxial(1, rho_S=1.0, eps_visc=1.0, q=2.0)
    assert dissipation_rate(np.zeros(2), mat) == 0.0
    assert dissipation_rate(np.array([1.0, 0.0]), mat) == pytest.approx(2.0)
    rng = np.random.default_rng(6)
    v = rng.normal(size=(20, 2))
    xi = dissipation_rate(v, mat)
    zeta = dissipation_potential(v, mat)
    gap = mat.eps_visc * (1.0 - 1.0 / mat.q) * np.linalg.norm(v, axis=-1) ** mat.q
    assert np.allclose(xi - zeta, gap, rtol=1e-12)
    assert np.all(xi >= zeta)


def _prox_objective(v, z, sigma, mat):
    return (
        dissipation_potential(v, mat)
        + np.sum((v - z) ** 2, axis=-1) / (2.0 * sigma)
    )


def test_prox_stick_region():
    mat = Material.uniaxial(1, rho_S=1.0, eps_visc=0.5, q=2.0)
    assert np.allclose(prox_dissipation(np.array([0.6, 0.7]), 1.0, mat), 0.0)
    # just outside: moves
    assert np.linalg.norm(prox_dissipation(np.array([0.8, 0.8]), 1.0, mat)) > 0.0


def test_prox_closed_form_q2():
    mat = Material.uniaxial(1, rho_S=1.0, eps_visc=1.0, q=2.0)
    v = prox_dissipation(np.array([2.0, 0.0]), 1.0, mat)
    assert np.allclose(v, [0.5, 0.0], atol=1e-14)


def test_prox_identity_without_dissipation():
    mat = Material.uniaxial(1, rho_S=0.0, eps_visc=0.0)
    z = np.array([[1.3, -0.4], [0.0, 2.0]])
    assert np.allclose(prox_dissipation(z, 0.7, mat), z)


def test_prox_newton_q3_hand_value():
    mat = Material.uniaxial(1, rho_S=0.5, eps_visc=2.0, q=3.0)
    v = prox_dissipation(np.array([2.0, 0.0]), 1.0, mat)
    # r + 2 r^2 = 1.5  =>  r = (-1 + sqrt(13))/4
    r = (-1.0 + math.sqrt(13.0)) / 4.0
    assert v[0] == pytest.approx(r, abs=1e-12)
    assert v[1] == 0.0


@pytest.mark.parametrize("shape", ["ball", "box"])
@pytest.mark.parametrize("q", [2.0, 3.0])
def test_prox_against_grid_search(shape, q):
    mat = Material.uniaxial(1, rho_S=0.7, eps_visc=0.9, q=q, S_shape=shape)
    rng = np.random.default_rng(8)
    xs = np.linspace(-3.0, 3.0, 401)
    V = np.stack(np.meshgrid(xs, xs, indexing="ij"), axis=-1).reshape(-1, 2)
    for _ in range(4):
        z = rng.uniform(-2.0, 2.0, size=2)
        sigma = rng.uniform(0.3, 2.0)
        v = prox_dissipation(z, sigma, mat)
        obj_v = _prox_objective(v, z, sigma, mat)
        obj_grid = _prox_objective(V, z, sigma, mat)
        assert obj_v <= obj_grid.min() + 1e-9
        assert np.linalg.norm(v - V[np.argmin(obj_grid)]) <= 2 * (xs[1] - xs[0])


def test_prox_nonexpansive():
    mat = Material.uniaxial(1, rho_S=0.4, eps_visc=0.6, q=2.5)
    rng = np.random.default_rng(9)
    for _ in range(50):
        z1, z2 = rng.normal(size=(2, 2)) * 3.0
        d_in = np.linalg.norm(z1 - z2)
        d_out = np.linalg.norm(
            prox_dissipation(z1, 1.3, mat) - prox_dissipation(z2, 1.3, mat)
        )
        assert d_out <= d_in + 1e-12


def test_prox_projector_variant_hand_value():
    mat = Material.uniaxial(
        1,
        rho_S=1.0,
        eps_visc=1.0,
        q=2.0,
        A_proj=((0.0, 0.0), (0.0, 1.0)),
        rho_S1=0.5,
        rho_S2=1.0,
    )
    v = prox_dissipation(np.array([2.0, 3.0]), 1.0, mat)
    # complement: soft threshold by rho_S1; range of A: threshold + viscous scale
    assert np.allclose(v, [1.5, 1.0])
    # the complement carries no viscosity: pure shrink even for huge inputs
    v2 = prox_dissipation(np.array([10.0, 0.0]), 1.0, mat)
    assert v2[0] == pytest.approx(9.5)


def test_dissipation_projector_variant_values():
    mat = Material.uniaxial(
        1,
        rho_S=1.0,
        eps_visc=2.0,
        q=2.0,
        A_proj=((0.0, 0.0), (0.0, 1.0)),
        rho_S1=0.3,
        rho_S2=0.7,
    )
    v = np.array([2.0, -1.0])
    # zeta = 0.3*2 + 0.7*1 + (2/2)*1 ; xi adds (2 - 1)*1
    assert dissipation_potential(v, mat) == pytest.approx(0.6 + 0.7 + 1.0)
    assert dissipation_rate(v, mat) == pytest.approx(0.6 + 0.7 + 2.0)


# -- enthalpy -----------------------------------------------------------------------


def test_enthalpy_linear_case():
    mat = Material.uniaxial(1, cv_omega=1.0, cv_c0=1.0)
    th = np.array([0.0, 0.3, 2.0])
    assert np.allclose(enthalpy_of_theta(th, mat), th)
    assert np.allclose(theta_of_enthalpy(th, mat), th)


def test_enthalpy_quadratic_roundtrip():
    mat = Material.uniaxial(1, cv_omega=2.0, cv_c0=1.0)
    assert enthalpy_of_theta(1.0, mat) == pytest.approx(1.5)
    assert theta_of_enthalpy(1.5, mat) == pytest.approx(1.0)
    assert theta_of_enthalpy(-0.3, mat) == 0.0
    rng = np.random.default_rng(10)
    th = rng.uniform(0.0, 5.0, size=40)
    assert np.allclose(theta_of_enthalpy(enthalpy_of_theta(th, mat), mat), th)
    with pytest.raises(ValueError):
        enthalpy_of_theta(-0.1, mat)


def test_enthalpy_lower_bound():
    # on the admissible range w >= 0 (negative w only appears transiently and
    # reads as theta = 0, where the bound is vacuous)
    mat = Material.uniaxial(1, cv_omega=2.5, cv_c0=0.8)
    w = np.linspace(0.0, 6.0, 100)
    rhs = (mat.cv_c0 / mat.cv_omega) * (
        (1.0 + theta_of_enthalpy(w, mat)) ** mat.cv_omega - 1.0
    )
    assert np.all(w >= rhs - 1e-12)


def test_heat_capacity_derivative_consistency():
    mat = Material.uniaxial(1, cv_omega=3.0, cv_c0=2.0)
    th = 1.2
    fd = (enthalpy_of_theta(th + 1e-6, mat) - enthalpy_of_theta(th - 1e-6, mat)) / 2e-6
    assert heat_capacity(th, mat) == pytest.approx(fd, rel=1e-8)


# -- conduction -----------------------------------------------------------------------


def test_conductivity_default_constant():
    mat = Material.uniaxial(1, kappa0=0.25, C_K=2.0)
    lam = np.zeros((5, 2))
    w = np.linspace(-1, 3, 5)
    assert np.allclose(conductivity(lam, w, mat), 0.25)


def test_conductivity_state_dependent_bounds_and_clamp():
    mat = Material.uniaxial(1, kappa0=0.25, C_K=2.0)
    rng = np.random.default_rng(12)
    lam = rng.normal(size=(30, 2)) * 5
    w = rng.normal(size=30) * 5
    k = conductivity_state_dependent(lam, w, mat)
    assert np.all(k >= mat.kappa0) and np.all(k <= mat.C_K)
    # negative enthalpy reads as theta = 0
    assert conductivity_state_dependent(
        np.zeros(2), -1.0, mat
    ) == conductivity_state_dependent(np.zeros(2), 0.0, mat)
