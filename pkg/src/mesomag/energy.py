"""Scalar potentials and their calculus.

Everything that turns states into energies lives here: the anisotropy
densities ``phi``/``psi``, the penalized Gibbs functional and its parts, the
dissipation potential with its proximal map, and the enthalpy transformation
pair. Gradient formulas follow the sign conventions of :mod:`mesomag.elliptic`:
``solve(f)`` inverts the Laplacian (not its negative), so the penalty gradient
in the internal variable is ``-kappa * solve(lam - Lnu)`` per unit volume.

The dissipation potential is

    zeta(v) = support_S(v) + (eps/q) |v|^q

with ``support_S`` the support function of the activation set (ball or box).
When a projector ``A`` is configured, the viscous and rate-dependent part acts
on ``A v`` (radius ``rho_S2``) while the complement ``(I-A) v`` dissipates
rate-independently with radius ``rho_S1``; ``A = I`` recovers the plain model.
The heat production rate ``xi`` carries the full ``eps`` weight on the viscous
term (``xi - zeta = eps (1 - 1/q) |v|^q``).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import Grid, Material
from .elliptic import DirichletPoisson, MagnetostaticSolver
from .measure import AtomicYoungMeasure

__all__ = [
    "GibbsEvaluation",
    "FieldSolvers",
    "phi",
    "psi",
    "psi_minimizer_magnitude",
    "L_of",
    "gibbs_energy",
    "gibbs_lambda_gradient",
    "gibbs_weight_gradient",
    "support_S",
    "support_S1_perp",
    "dissipation_potential",
    "dissipation_rate",
    "prox_dissipation",
    "enthalpy_of_theta",
    "theta_of_enthalpy",
    "heat_capacity",
    "conductivity",
    "conductivity_state_dependent",
]


# -- anisotropy ------------------------------------------------------------------


def phi(m: np.ndarray, mat: Material) -> np.ndarray:
    """Anisotropy density at magnetization vectors ``m`` of shape (..., d).

    phi(m) = beta (|m|^2 - max_a (m.s_a)^2) + b0 |m|^4 + b_p |m|^p. The pole
    term vanishes on the easy axes and is nonnegative for unit axes; the
    quartic makes the multiwell, the p-term (p > 4) restores coercive growth.
    """
    m = np.asarray(m, dtype=float)
    axes = np.asarray(mat.easy_axes, dtype=float)
    m2 = np.sum(m * m, axis=-1)
    proj2 = np.max(np.einsum("...d,ad->...a", m, axes) ** 2, axis=-1)
    out = mat.beta_aniso * (m2 - proj2) + mat.b0 * m2**2
    if mat.b_p > 0:
        out = out + mat.b_p * m2 ** (mat.p / 2.0)
    return out


def psi(m: np.ndarray, theta, mat: Material) -> np.ndarray:
    """Temperature-coupled anisotropy: phi(m) + a0 (theta - theta_c) |m|^2."""
    m = np.asarray(m, dtype=float)
    m2 = np.sum(m * m, axis=-1)
    return phi(m, mat) + mat.a0 * (np.asarray(theta, dtype=float) - mat.theta_c) * m2


def psi_minimizer_magnitude(theta: float, mat: Material) -> float:
    """|t| minimizing psi(t s_a, theta) for b_p = 0: t^2 = (theta_c-theta) a0/(2 b0).

    Above theta_c the minimizer is 0. With b_p > 0 the true minimizer shifts
    slightly; this closed form is the reference value of the quartic model.
    """
    t2 = (mat.theta_c - theta) * mat.a0 / (2.0 * mat.b0)
    return float(np.sqrt(max(t2, 0.0)))


def L_of(m: np.ndarray) -> np.ndarray:
    """Moment map L(m) = (m, |m|^2), shape (..., d) -> (..., d+1)."""
    m = np.asarray(m, dtype=float)
    return np.concatenate([m, np.sum(m * m, axis=-1, keepdims=True)], axis=-1)


# -- Gibbs functional --------------------------------------------------------------


class FieldSolvers:
    """Shared elliptic machinery for one grid.

    Bundles the Dirichlet inverse Laplacian (penalty metric) and, unless
    disabled, the stray-field solver. Factorizations are built once and
    reused across energy evaluations and solver iterations.
    """

    def __init__(
        self,
        grid: Grid,
        mat: Material,
        magnetostatics: bool = True,
        pad_factor: int = 4,
        far_bc: str | None = None,
    ) -> None:
        self.grid = grid
        self.poisson = DirichletPoisson(grid)
        self.magneto = (
            MagnetostaticSolver(grid, mat.mu0, pad_factor=pad_factor, far_bc=far_bc)
            if magnetostatics
            else None
        )


@dataclass
class GibbsEvaluation:
    """The penalized Gibbs energy split into its five parts.

    ``total`` is the literal sum of the parts; ``magnetic`` drops the
    temperature-coupling part (the piece whose time derivative the energy
    balance books separately). ``m``, ``h_dem`` and ``chi`` are kept for
    gradient reuse: ``chi = solve(lam - Lnu)`` columnwise.
    """

    anisotropy: float
    coupling: float
    magnetostatic: float
    zeeman: float
    penalty: float
    m: np.ndarray = field(repr=False)
    h_dem: np.ndarray = field(repr=False)
    chi: np.ndarray = field(repr=False)

    @property
    def total(self) -> float:
        return (
            self.anisotropy
            + self.coupling
            + self.magnetostatic
            + self.zeeman
            + self.penalty
        )

    @property
    def magnetic(self) -> float:
        return self.total - self.coupling


def _theta_cells(theta, ncells: int) -> np.ndarray:
    th = np.asarray(theta, dtype=float)
    if th.ndim == 0:
        return np.full(ncells, float(th))
    if th.shape != (ncells,):
        raise ValueError(f"theta must be scalar or shape ({ncells},), got {th.shape}")
    return th


def _h_cells(h, ncells: int, dim: int) -> np.ndarray:
    hh = np.asarray(h, dtype=float)
    if hh.shape == (dim,):
        return np.broadcast_to(hh, (ncells, dim))
    if hh.shape != (ncells, dim):
        raise ValueError(f"h must have shape ({dim},) or ({ncells},{dim})")
    return hh


def gibbs_energy(
    nu: AtomicYoungMeasure,
    lam: np.ndarray,
    theta,
    h,
    mat: Material,
    solvers: FieldSolvers,
) -> GibbsEvaluation:
    """Evaluate the penalized Gibbs energy at (nu, lam) under (theta, h).

    Parts: anisotropy int phi . nu, coupling int (theta-theta_c) a . lam,
    stray field (1/2) int m.h_dem, applied field -int h.m, and the penalty
    (kappa/2) ||lam - L.nu||^2 in the Dirichlet inverse-Laplacian metric.
    """
    grid = nu.grid
    vol = grid.cell_volume
    ncells = grid.ncells
    d = nu.atoms.shape[-1]
    lam = np.asarray(lam, dtype=float)
    if lam.shape != (ncells, d + 1):
        raise ValueError(f"lam must have shape ({ncells},{d + 1}), got {lam.shape}")
    th = _theta_cells(theta, ncells)
    hh = _h_cells(h, ncells, d)

    mp = nu.moments()
    phi_atoms = phi(nu.atoms, mat)
    if nu.shared_atoms:
        aniso = vol * float(np.sum(nu.weights @ phi_atoms))
    else:
        aniso = vol * float(np.sum(nu.weights * phi_atoms))
    coupling = vol * float(np.sum((th - mat.theta_c) * mat.a0 * lam[:, -1]))
    zeeman = -vol * float(np.sum(hh * mp.m))

    if solvers.magneto is not None:
        ms = solvers.magneto.solve(mp.m)
        h_dem = ms.h_dem
        magnetostatic = ms.energy
    else:
        h_dem = np.zeros_like(mp.m)
        magnetostatic = 0.0

    f = lam - mp.Lnu
    chi = solvers.poisson.solve(f)
    penalty = -0.5 * mat.kappa_pen * vol * float(np.sum(chi * f))
    penalty = max(penalty, 0.0)  # exact quadratic form, clip rounding dust

    return GibbsEvaluation(
        anisotropy=aniso,
        coupling=coupling,
        magnetostatic=magnetostatic,
        zeeman=zeeman,
        penalty=penalty,
        m=mp.m,
        h_dem=h_dem,
        chi=chi,
    )


def gibbs_lambda_gradient(
    ev: GibbsEvaluation, theta, mat: Material, grid: Grid
) -> np.ndarray:
    """d(Gibbs)/d(lam_c): vol * ((theta - theta_c) a_flat - kappa chi_c)."""
    th = _theta_cells(theta, grid.ncells)
    a = mat.a_flat()
    return grid.cell_volume * (
        (th - mat.theta_c)[:, None] * a[None, :] - mat.kappa_pen * ev.chi
    )


def gibbs_weight_gradient(
    nu: AtomicYoungMeasure, ev: GibbsEvaluation, h, mat: Material
) -> np.ndarray:
    """d(Gibbs)/d(weight_{c,i}), shape (ncells, K).

    Per cell and atom: vol * (phi(s_i) - h.s_i + h_dem_c.s_i + kappa chi_c.L(s_i)).
    Exact for the quadratic stray-field and penalty parts because their cell
    operators are symmetric.
    """
    grid = nu.grid
    vol = grid.cell_volume
    d = nu.atoms.shape[-1]
    hh = _h_cells(h, grid.ncells, d)
    phi_atoms = phi(nu.atoms, mat)
    L_atoms = L_of(nu.atoms)
    if nu.shared_atoms:
        lin = (
            phi_atoms[None, :]
            + (ev.h_dem - hh) @ nu.atoms.T
            + mat.kappa_pen * ev.chi @ L_atoms.T
        )
    else:
        lin = (
            phi_atoms
            + np.einsum("cd,ckd->ck", ev.h_dem - hh, nu.atoms)
            + mat.kappa_pen * np.einsum("ce,cke->ck", ev.chi, L_atoms)
        )
    return vol * lin


# -- dissipation --------------------------------------------------------------------


def _split(v: np.ndarray, mat: Material):
    """(A v, (I-A) v) under the configured projector; (v, 0) without one."""
    A = mat.projector()
    if A is None:
        return v, None
    va = np.einsum("ij,...j->...i", A, v)
    return va, v - va


def _support(v: np.ndarray, rho, shape: str) -> np.ndarray:
    if shape == "ball":
        return np.asarray(rho).max() * np.linalg.norm(v, axis=-1)
    return np.sum(np.asarray(rho) * np.abs(v), axis=-1)


def support_S(v: np.ndarray, mat: Material) -> np.ndarray:
    """Support function of the activation set: ball rho|v|, box sum rho_i |v_i|."""
    v = np.asarray(v, dtype=float)
    return _support(v, mat.rho_vector(), mat.S_shape)


def support_S1_perp(v: np.ndarray, mat: Material) -> np.ndarray:
    """Purely rate-independent threshold term: delta*_{S1}((I-A) v).

    Without a projector this is the full delta*_S; with one, only the
    complement component dissipates rate-independently at the S1 radius.
    """
    v = np.asarray(v, dtype=float)
    _, vperp = _split(v, mat)
    if vperp is None:
        return support_S(v, mat)
    r1, _ = mat.split_radii()
    return _support(vperp, r1, mat.S_shape)


def dissipation_potential(vdot: np.ndarray, mat: Material) -> np.ndarray:
    """zeta(rate): threshold term + (eps/q) |rate|^q (viscous on the A part)."""
    vdot = np.asarray(vdot, dtype=float)
    va, vperp = _split(vdot, mat)
    if vperp is None:
        return support_S(vdot, mat) + (mat.eps_visc / mat.q) * np.linalg.norm(
            vdot, axis=-1
        ) ** mat.q
    r1, r2 = mat.split_radii()
    return (
        _support(vperp, r1, mat.S_shape)
        + _support(va, r2, mat.S_shape)
        + (mat.eps_visc / mat.q) * np.linalg.norm(va, axis=-1) ** mat.q
    )


def dissipation_rate(vdot: np.ndarray, mat: Material) -> np.ndarray:
    """Heat production xi(rate): like zeta but with the full eps on the viscous term."""
    vdot = np.asarray(vdot, dtype=float)
    va, _ = _split(vdot, mat)
    scale = mat.eps_visc * (1.0 - 1.0 / mat.q)
    return dissipation_potential(vdot, mat) + scale * np.linalg.norm(va, axis=-1) ** mat.q


def _shrink(z: np.ndarray, sigma_rho, shape: str) -> np.ndarray:
    """Minimizer shift of the rate-independent part: radial or componentwise."""
    if shape == "ball":
        nz = np.linalg.norm(z, axis=-1, keepdims=True)
        factor = np.maximum(nz - np.asarray(sigma_rho).max(), 0.0)
        with np.errstate(invalid="ignore", divide="ignore"):
            out = np.where(nz > 0, z * (factor / np.where(nz > 0, nz, 1.0)), 0.0)
        return out
    return np.sign(z) * np.maximum(np.abs(z) - np.asarray(sigma_rho), 0.0)


def _radial_root(b: np.ndarray, c: float, q: float) -> np.ndarray:
    """Solve r + c r^(q-1) = b for r >= 0, elementwise; b >= 0, c >= 0, q >= 2."""
    b = np.asarray(b, dtype=float)
    if c == 0.0:
        return b.copy()
    if q == 2.0:
        return b / (1.0 + c)
    # F(r) = r + c r^(q-1) is convex increasing; Newton from r = b descends
    # monotonically onto the root
    r = b.copy()
    for _ in range(100):
        g = r + c * r ** (q - 1.0) - b
        if np.all(np.abs(g) <= 1e-14 * (1.0 + b)):
            return r
        dg = 1.0 + c * (q - 1.0) * r ** (q - 2.0)
        r = np.maximum(r - g / dg, 0.0)
    raise RuntimeError(
        "radial prox equation did not converge: max residual "
        f"{np.max(np.abs(r + c * r ** (q - 1.0) - b)):.3e}"
    )


def _prox_threshold_viscous(
    z: np.ndarray, sigma: float, rho, shape: str, eps: float, q: float
) -> np.ndarray:
    y = _shrink(z, sigma * np.asarray(rho), shape)
    ny = np.linalg.norm(y, axis=-1, keepdims=True)
    r = _radial_root(ny, sigma * eps, q)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(ny > 0, y * (r / np.where(ny > 0, ny, 1.0)), 0.0)


def prox_dissipation(z: np.ndarray, sigma: float, mat: Material) -> np.ndarray:
    """argmin_v zeta(v) + |v - z|^2 / (2 sigma), elementwise over leading axes.

    The threshold shrink (radial for a ball, soft-threshold for a box) reduces
    the problem to the scalar radial equation r + sigma eps r^(q-1) = |y|,
    closed-form for q = 2. Sticks at 0 whenever z lies in sigma-scaled S.
    """
    if sigma <= 0:
        raise ValueError(f"sigma must be > 0, got {sigma}")
    z = np.asarray(z, dtype=float)
    za, zperp = _split(z, mat)
    if zperp is None:
        return _prox_threshold_viscous(
            z, sigma, mat.rho_vector(), mat.S_shape, mat.eps_visc, mat.q
        )
    r1, r2 = mat.split_radii()
    va = _prox_threshold_viscous(za, sigma, r2, mat.S_shape, mat.eps_visc, mat.q)
    vperp = _shrink(zperp, sigma * r1, mat.S_shape)
    return va + vperp


# -- enthalpy transformation ---------------------------------------------------------


def enthalpy_of_theta(theta, mat: Material) -> np.ndarray:
    """w = integral_0^theta c_v = cv_c0 ((1+theta)^omega - 1)/omega; theta >= 0."""
    th = np.asarray(theta, dtype=float)
    if np.any(th < 0):
        raise ValueError("enthalpy_of_theta needs theta >= 0")
    w = mat.cv_c0 * ((1.0 + th) ** mat.cv_omega - 1.0) / mat.cv_omega
    return w if w.ndim else float(w)


def theta_of_enthalpy(w, mat: Material) -> np.ndarray:
    """Inverse map, clamped: (omega w / cv_c0 + 1)^(1/omega) - 1 for w >= 0, else 0."""
    ww = np.maximum(np.asarray(w, dtype=float), 0.0)
    th = (mat.cv_omega * ww / mat.cv_c0 + 1.0) ** (1.0 / mat.cv_omega) - 1.0
    return th if th.ndim else float(th)


def heat_capacity(theta, mat: Material) -> np.ndarray:
    """c_v(theta) = cv_c0 (1+theta)^(omega-1) on theta >= 0."""
    th = np.maximum(np.asarray(theta, dtype=float), 0.0)
    cv = mat.cv_c0 * (1.0 + th) ** (mat.cv_omega - 1.0)
    return cv if cv.ndim else float(cv)


# -- conduction -----------------------------------------------------------------------


def conductivity(lam, w, mat: Material) -> np.ndarray:
    """Default conduction coefficient: the constant ellipticity floor kappa0."""
    w = np.asarray(w, dtype=float)
    out = np.full(w.shape, mat.kappa0)
    return out if out.ndim else float(out)


def conductivity_state_dependent(lam, w, mat: Material) -> np.ndarray:
    """A clamped state-dependent model exercising the [kappa0, C_K] bounds.

    Depends on w only through the clamped temperature, so negative enthalpy
    reads as theta = 0.
    """
    lam = np.asarray(lam, dtype=float)
    th = theta_of_enthalpy(w, mat)
    raw = mat.kappa0 + (mat.C_K - mat.kappa0) / (
        1.0 + np.sum(lam * lam, axis=-1) + np.asarray(th)
    )
    out = np.clip(raw, mat.kappa0, mat.C_K)
    return out if out.ndim else float(out)
