"""One implicit step of the enthalpy-form heat equation.

The unknown is the enthalpy w = c_v-integral of the temperature; the
temperature enters only through the clamped inverse map I(w) (theta = 0 for
w <= 0). Each step solves the cell-centered finite-volume system

    (w - w_prev)/tau - div(K grad w) = xi(rate) + I(w) a0 rate_last      in the cells,
    K grad w . n + b (I(w) - theta_ext) = 0                              on wall faces,

by fixed-point lagging of the two nonlinearities: the conduction coefficient
K(lam, w) and the temperature map I(w). Every inner iterate assembles a
symmetric M-matrix (positive diagonal, nonpositive couplings, diagonally
dominant) and performs one sparse SPD solve. The Robin term is linearized
around the lagged iterate,

    b I(w) ~ b [I(w_lag) + (w - w_lag)/c_v(I(w_lag))],

which keeps the implicit part on the diagonal with a positive sign; at the
fixed point the linearization is exact. Non-negativity of w is never
enforced; it emerges from the M-matrix structure together with the clamped
temperature in the sources, and is only measured afterwards.

Heat sources per cell, all additive: the rate-independent threshold term,
the full viscous heat production, and the thermal coupling power

    xi(rate) = delta*_S(rate) + eps |A rate|^q,   I(w) a0 rate_last,

with rate = (lam_new - lam_prev)/tau evaluated once per step.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .core import Grid, Material
from .energy import (
    conductivity,
    dissipation_rate,
    heat_capacity,
    theta_of_enthalpy,
)

__all__ = [
    "HeatStepProblem",
    "HeatStepResult",
    "heat_step",
    "check_nonnegativity",
]

_TOL_FIXED_POINT = 1e-10
_TOL_WEAK = 1e-8
_MAX_FIXED_POINT = 200


@dataclass
class HeatStepProblem:
    """Data of one heat step on a grid; lam arrays sized (ncells, d+1)."""

    grid: Grid
    tau: float
    w_prev: np.ndarray
    lam_new: np.ndarray
    lam_prev: np.ndarray
    mat: Material
    b_coeff: float = 0.0
    theta_ext: float = 0.0
    kappa_fn: Callable = conductivity

    def __post_init__(self) -> None:
        if self.tau <= 0:
            raise ValueError(f"tau must be > 0, got {self.tau}")
        if self.b_coeff < 0:
            raise ValueError(f"b_coeff must be >= 0, got {self.b_coeff}")
        n = self.grid.ncells
        self.w_prev = np.asarray(self.w_prev, dtype=float)
        self.lam_new = np.asarray(self.lam_new, dtype=float)
        self.lam_prev = np.asarray(self.lam_prev, dtype=float)
        if self.w_prev.shape != (n,):
            raise ValueError(f"w_prev must have shape ({n},), got {self.w_prev.shape}")
        if self.lam_new.shape != self.lam_prev.shape or self.lam_new.shape[0] != n:
            raise ValueError("lam_new and lam_prev must share shape (ncells, d+1)")

    @property
    def rate(self) -> np.ndarray:
        return (self.lam_new - self.lam_prev) / self.tau


@dataclass
class HeatStepResult:
    """Converged step plus diagnostics; ``flux`` is the time-integrated intake."""

    w: np.ndarray
    iterations: int
    change: float
    weak_residual: float
    flux: float
    source_dissipation: float
    source_coupling: float


def _boundary_areas(grid: Grid) -> np.ndarray:
    """Total wall-face area per cell (0 in the interior), midpoint quadrature."""
    shape = grid.extents
    idx = np.arange(grid.ncells).reshape(shape)
    areas = np.zeros(grid.ncells)
    vol = grid.cell_volume
    for a in range(grid.dim):
        face = vol / grid.spacing[a]
        np.add.at(areas, np.take(idx, 0, axis=a).ravel(), face)
        np.add.at(areas, np.take(idx, shape[a] - 1, axis=a).ravel(), face)
    return areas


def _diffusion_matrix(grid: Grid, kap: np.ndarray) -> sp.csr_matrix:
    """No-flux five-point operator with arithmetic-mean face conductivity."""
    shape = grid.extents
    n = grid.ncells
    idx = np.arange(n).reshape(shape)
    vol = grid.cell_volume
    diag = np.zeros(n)
    rows, cols, vals = [], [], []
    for a in range(grid.dim):
        w = vol / grid.spacing[a] ** 2
        lo = np.take(idx, range(0, shape[a] - 1), axis=a).ravel()
        hi = np.take(idx, range(1, shape[a]), axis=a).ravel()
        kf = 0.5 * (kap[lo] + kap[hi]) * w
        rows.extend([lo, hi])
        cols.extend([hi, lo])
        vals.extend([-kf, -kf])
        np.add.at(diag, lo, kf)
        np.add.at(diag, hi, kf)
    rows.append(np.arange(n))
    cols.append(np.arange(n))
    vals.append(diag)
    M = sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(n, n),
    )
    M.sum_duplicates()
    return M


def _check_m_matrix(A: sp.csr_matrix) -> None:
    """Positive diagonal, nonpositive couplings, weak diagonal dominance."""
    d = A.diagonal()
    if np.any(d <= 0):
        raise RuntimeError("heat matrix lost its positive diagonal")
    off = A - sp.diags(d)
    if off.nnz and float(off.data.max()) > 1e-14 * float(d.max()):
        raise RuntimeError("heat matrix has positive off-diagonal couplings")
    row_off = np.asarray(np.abs(off).sum(axis=1)).ravel()
    if np.any(d + 1e-12 * (1.0 + np.abs(d)) < row_off):
        raise RuntimeError("heat matrix is not diagonally dominant")


def _assemble(prob: HeatStepProblem, w_lag: np.ndarray, xi: np.ndarray,
              coup: np.ndarray, areas: np.ndarray):
    """Lagged linear system (A, rhs) whose fixed point is the heat step.

    The coupling power coup * I(w) is semi-implicit: where coup <= 0 (a heat
    sink) the temperature is linearized around the lagged iterate and the
    derivative part joins the diagonal with a positive sign, so the M-matrix
    survives and the stiff sink cannot destabilize the fixed point; where
    coup > 0 the lagged value stays on the right-hand side. At the fixed
    point both reduce to coup * I(w) exactly.
    """
    grid, mat, tau = prob.grid, prob.mat, prob.tau
    vol = grid.cell_volume
    kap = np.asarray(prob.kappa_fn(prob.lam_new, w_lag, mat), dtype=float)
    if np.any(kap < mat.kappa0 - 1e-14) or not np.all(np.isfinite(kap)):
        raise RuntimeError("conductivity dropped below the ellipticity floor")
    theta_lag = np.asarray(theta_of_enthalpy(w_lag, mat))
    cv_lag = np.asarray(heat_capacity(theta_lag, mat))

    sink = np.minimum(coup, 0.0)
    rhs_coup = xi + coup * theta_lag - sink * w_lag / cv_lag
    A = _diffusion_matrix(grid, kap)
    A = A + sp.diags(vol / tau - vol * sink / cv_lag)
    rhs = (vol / tau) * prob.w_prev + vol * rhs_coup
    if prob.b_coeff > 0:
        robin = prob.b_coeff * areas
        A = A + sp.diags(robin / cv_lag)
        rhs = rhs + robin * (prob.theta_ext - theta_lag + w_lag / cv_lag)
    _check_m_matrix(A.tocsr())
    return A.tocsr(), rhs, theta_lag


def heat_step(prob: HeatStepProblem) -> HeatStepResult:
    """Solve one implicit enthalpy step by fixed-point lagging of I and K.

    Iterates sparse SPD solves until the successive-iterate change is below
    1e-10 relative (at most 200 iterations, else RuntimeError with the last
    change), then verifies the converged iterate against the nonlinear weak
    form to 1e-8 relative. The result is never clipped.
    """
    grid, mat, tau = prob.grid, prob.mat, prob.tau
    vol = grid.cell_volume
    rate = prob.rate
    xi = np.asarray(dissipation_rate(rate, mat), dtype=float)
    areas = _boundary_areas(grid)

    coup = mat.a0 * rate[:, -1]
    w_lag = prob.w_prev.copy()
    change = np.inf
    for it in range(1, _MAX_FIXED_POINT + 1):
        A, rhs, _ = _assemble(prob, w_lag, xi, coup, areas)
        w = spla.spsolve(A, rhs)
        change = float(np.linalg.norm(w - w_lag)) / (1.0 + float(np.linalg.norm(w)))
        w_lag = w
        if change <= _TOL_FIXED_POINT:
            break
    else:
        raise RuntimeError(
            f"heat fixed point stagnated after {_MAX_FIXED_POINT} iterations, "
            f"last relative change {change:.3e}"
        )

    # nonlinear weak-form residual at the converged iterate (lag == iterate,
    # so the Robin and coupling linearizations are exact there)
    theta = np.asarray(theta_of_enthalpy(w, mat))
    A, rhs, _ = _assemble(prob, w, xi, coup, areas)
    res = A @ w - rhs
    weak = float(np.linalg.norm(res)) / (1.0 + float(np.linalg.norm(rhs)))
    if weak > _TOL_WEAK:
        raise RuntimeError(f"heat step weak residual {weak:.3e} exceeds {_TOL_WEAK:.1e}")

    flux = tau * float(np.sum(prob.b_coeff * areas * (prob.theta_ext - theta)))
    return HeatStepResult(
        w=w,
        iterations=it,
        change=change,
        weak_residual=weak,
        flux=flux,
        source_dissipation=tau * vol * float(np.sum(xi)),
        source_coupling=tau * vol * float(np.sum(theta * mat.a0 * rate[:, -1])),
    )


def check_nonnegativity(w, tol: float = 1e-12):
    """Minimum of w and the flat indices of cells below -tol."""
    w = np.asarray(w, dtype=float)
    bad = np.flatnonzero(w < -tol)
    return float(w.min()), list(map(int, bad))
