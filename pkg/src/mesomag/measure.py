"""Atomic Young measures over the magnetization ball.

The relaxed state of a cell is not a single magnetization vector but a
probability measure over magnetization space; on the grid we carry one atomic
measure per cell. Two layouts are supported by the same class: a shared atom
dictionary (``atoms`` of shape ``(K, d)``, the workhorse of the solvers, where
only the ``(ncells, K)`` weight matrix varies from cell to cell) and per-cell
atoms (``atoms`` of shape ``(ncells, K, d)``, e.g. a Dirac embedding of a
classical magnetization field).

The solvers only ever need two integrals of a measure: the mean ``m = id . nu``
and the lifted moment ``L . nu`` with ``L(s) = (s, |s|^2)``, plus the p-th
absolute moment for the a-priori monitors. Jensen's inequality makes the last
component of ``L . nu`` dominate ``|m|^2`` cell by cell; the gap is zero
exactly for Dirac measures and is one of the audited invariants.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import Grid

__all__ = [
    "AtomicYoungMeasure",
    "MomentPair",
    "dirac",
    "moments",
    "pth_moment",
    "project_simplex",
    "atom_dictionary",
    "uniform_dictionary_measure",
    "measure_to_text",
]

#: weights below this are treated as numerically extinct and pruned
PRUNE_TOL = 1e-14
#: per-cell weight sums must stay within this of 1
SIMPLEX_TOL = 1e-12


@dataclass
class MomentPair:
    """First moment ``m`` (ncells, d) and lifted moment ``Lnu`` (ncells, d+1)."""

    m: np.ndarray
    Lnu: np.ndarray

    def jensen_gap(self) -> np.ndarray:
        """Per-cell gap ``(|.|^2 . nu) - |m|^2``; nonnegative up to roundoff."""
        return self.Lnu[:, -1] - np.sum(self.m**2, axis=1)


class AtomicYoungMeasure:
    """One atomic probability measure per grid cell.

    Parameters
    ----------
    grid : Grid
    atoms : ndarray
        ``(K, d)`` for a dictionary shared by all cells, or ``(ncells, K, d)``
        for per-cell atoms.
    weights : ndarray
        ``(ncells, K)``, nonnegative, rows summing to 1.
    r_max : float, optional
        When given, atoms outside the closed ball of this radius are rejected.
    """

    def __init__(
        self,
        grid: Grid,
        atoms: np.ndarray,
        weights: np.ndarray,
        r_max: float | None = None,
    ) -> None:
        atoms = np.asarray(atoms, dtype=float)
        weights = np.asarray(weights, dtype=float)
        if atoms.ndim not in (2, 3):
            raise ValueError("atoms must have shape (K, d) or (ncells, K, d)")
        if atoms.ndim == 3 and atoms.shape[0] != grid.ncells:
            raise ValueError(
                f"per-cell atoms need leading size {grid.ncells}, got {atoms.shape[0]}"
            )
        K = atoms.shape[-2]
        if weights.shape != (grid.ncells, K):
            raise ValueError(
                f"weights must have shape {(grid.ncells, K)}, got {weights.shape}"
            )
        if np.min(weights) < -SIMPLEX_TOL:
            raise ValueError(f"negative weight {np.min(weights):g}")
        sums = weights.sum(axis=1)
        if np.max(np.abs(sums - 1.0)) > 1e-9:
            raise ValueError(
                f"cell weights must sum to 1, worst defect {np.max(np.abs(sums - 1.0)):g}"
            )
        if r_max is not None:
            rad = np.linalg.norm(atoms, axis=-1)
            if np.max(rad) > r_max * (1 + 1e-12) + 1e-15:
                raise ValueError(
                    f"atom outside admissible ball: |s|={np.max(rad):g} > R_max={r_max:g}"
                )
        self.grid = grid
        self.atoms = atoms
        self.weights = weights

    # -- layout ------------------------------------------------------------

    @property
    def shared_atoms(self) -> bool:
        return self.atoms.ndim == 2

    @property
    def n_atoms(self) -> int:
        return self.atoms.shape[-2]

    def copy(self) -> "AtomicYoungMeasure":
        return AtomicYoungMeasure(self.grid, self.atoms.copy(), self.weights.copy())

    def with_weights(self, weights: np.ndarray) -> "AtomicYoungMeasure":
        """Same atoms, new weight matrix (shares the atom array)."""
        return AtomicYoungMeasure(self.grid, self.atoms, weights)

    # -- integrals ----------------------------------------------------------

    def moments(self) -> MomentPair:
        """Mean magnetization and lifted moment of every cell."""
        if self.shared_atoms:
            m = self.weights @ self.atoms
            sq = np.sum(self.atoms**2, axis=1)
            ell = self.weights @ sq
        else:
            m = np.einsum("ck,ckd->cd", self.weights, self.atoms)
            sq = np.sum(self.atoms**2, axis=2)
            ell = np.einsum("ck,ck->c", self.weights, sq)
        return MomentPair(m=m, Lnu=np.concatenate([m, ell[:, None]], axis=1))

    def pth_moment(self, p: float) -> np.ndarray:
        """Per-cell integral of ``|s|^p``; shape ``(ncells,)``."""
        if p < 0:
            raise ValueError(f"moment order must be >= 0, got {p}")
        rad = np.linalg.norm(self.atoms, axis=-1) ** p
        if self.shared_atoms:
            return self.weights @ rad
        return np.einsum("ck,ck->c", self.weights, rad)

    # -- maintenance ---------------------------------------------------------

    def prune(self, tol: float = PRUNE_TOL) -> "AtomicYoungMeasure":
        """Zero weights below ``tol`` and renormalize each cell's mass to 1."""
        w = np.where(self.weights < tol, 0.0, self.weights)
        sums = w.sum(axis=1, keepdims=True)
        if np.any(sums <= 0):
            raise ValueError("pruning removed all mass from a cell")
        return self.with_weights(w / sums)

    def max_simplex_defect(self) -> float:
        """max over cells of |sum(weights) - 1|, for invariant checks."""
        return float(np.max(np.abs(self.weights.sum(axis=1) - 1.0)))


def dirac(grid: Grid, m: np.ndarray, r_max: float | None = None) -> AtomicYoungMeasure:
    """Embed a classical magnetization field as one Dirac atom per cell.

    ``m`` has shape ``(ncells, d)``; every ``|m_x|`` must stay inside the
    admissible ball when ``r_max`` is given. Moments round-trip exactly and
    the Jensen gap of the result is identically zero.
    """
    m = np.asarray(m, dtype=float)
    if m.shape != (grid.ncells, grid.dim):
        raise ValueError(f"m must have shape {(grid.ncells, grid.dim)}, got {m.shape}")
    atoms = m[:, None, :]
    weights = np.ones((grid.ncells, 1))
    return AtomicYoungMeasure(grid, atoms, weights, r_max=r_max)


def moments(nu: AtomicYoungMeasure) -> MomentPair:
    return nu.moments()


def pth_moment(nu: AtomicYoungMeasure, p: float) -> np.ndarray:
    return nu.pth_moment(p)


def project_simplex(w: np.ndarray) -> np.ndarray:
    """Euclidean projection onto the probability simplex over the last axis.

    Accepts any shape ``(..., K)``. Idempotent; rows already on the simplex
    are returned unchanged up to roundoff. The standard sort-based algorithm,
    vectorized over the leading axes.
    """
    w = np.asarray(w, dtype=float)
    shape = w.shape
    K = shape[-1]
    W = w.reshape(-1, K)
    u = -np.sort(-W, axis=1)
    css = np.cumsum(u, axis=1) - 1.0
    j = np.arange(1, K + 1)
    cond = u - css / j > 0
    # last index where the condition holds; it holds at j=1 whenever the row
    # is not all equal and degenerate, so rho >= 1
    rho = K - 1 - np.argmax(cond[:, ::-1], axis=1)
    theta = css[np.arange(W.shape[0]), rho] / (rho + 1)
    out = np.maximum(W - theta[:, None], 0.0)
    return out.reshape(shape)


def atom_dictionary(dim: int, r_max: float) -> np.ndarray:
    """Fixed atom dictionary covering the admissible ball.

    1D: 33 uniformly spaced atoms on ``[-R, R]`` (origin included). 2D: the
    origin plus 12 equispaced angles times 9 uniformly spaced radii
    ``R/9 .. R`` (109 atoms). Shape ``(K, dim)``.
    """
    if r_max <= 0:
        raise ValueError(f"r_max must be > 0, got {r_max}")
    if dim == 1:
        return np.linspace(-r_max, r_max, 33)[:, None]
    if dim == 2:
        angles = 2.0 * np.pi * np.arange(12) / 12.0
        radii = r_max * np.arange(1, 10) / 9.0
        pts = [np.zeros((1, 2))]
        for r in radii:
            pts.append(np.stack([r * np.cos(angles), r * np.sin(angles)], axis=1))
        return np.concatenate(pts, axis=0)
    raise ValueError(f"only 1D and 2D dictionaries exist, got dim={dim}")


def uniform_dictionary_measure(grid: Grid, atoms: np.ndarray) -> AtomicYoungMeasure:
    """Equal weight on every dictionary atom in every cell (a neutral start)."""
    atoms = np.asarray(atoms, dtype=float)
    K = atoms.shape[0]
    return AtomicYoungMeasure(grid, atoms, np.full((grid.ncells, K), 1.0 / K))


def measure_to_text(nu: AtomicYoungMeasure, tol: float = 0.0) -> str:
    """Delimited-text snapshot of a measure.

    One row per (cell, atom) pair with weight > ``tol``, columns separated by
    a single space::

        cell  s_1 .. s_d  weight

    preceded by a ``#``-comment header naming the columns. Row order is cell
    index, then atom index, both ascending, so output is reproducible.
    """
    d = nu.grid.dim
    cols = " ".join([f"s_{a+1}" for a in range(d)])
    lines = [f"# cell {cols} weight"]
    W = nu.weights
    for c in range(nu.grid.ncells):
        atoms_c = nu.atoms if nu.shared_atoms else nu.atoms[c]
        for k in range(nu.n_atoms):
            w = W[c, k]
            if w > tol:
                coords = " ".join(format(x, ".17g") for x in atoms_c[k])
                lines.append(f"{c} {coords} {format(w, '.17g')}")
    return "\n".join(lines) + "\n"
