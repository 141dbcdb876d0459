"""Grids, fields, material data and load schedules.

Everything downstream lives on a uniform Cartesian grid of cells in one or
two space dimensions. Scalar and vector quantities are sampled at cell
centers; boundary data is sampled at face midpoints. Cells are enumerated in
row-major (C) order, so a scalar field is a plain ``(ncells,)`` array and a
vector field an ``(ncells, k)`` array. The dataclasses here carry the static
problem data: the grid geometry, the material constants of the magnet, and
the time-dependent loading (external field, ambient temperature, boundary
heat-transfer coefficient).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Sequence

import numpy as np

__all__ = [
    "Grid",
    "ScalarField",
    "VectorField",
    "Material",
    "Schedule",
    "validate_material",
    "sample_schedule",
]


# --------------------------------------------------------------------------
# grid
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Grid:
    """Uniform cell-centered Cartesian grid on a box.

    Parameters
    ----------
    extents : tuple of int
        Number of cells per axis, each >= 1. Length 1 or 2.
    spacing : tuple of float
        Cell size per axis, each > 0.
    origin : tuple of float, optional
        Coordinate of the lower-left corner of the box. Defaults to 0.

    Notes
    -----
    Cell ``(i, j)`` has its center at ``origin + ((i + 1/2) hx, (j + 1/2) hy)``
    and the flat index ``i * ny + j`` (row-major). Single-cell grids are
    allowed; they are the degenerate desk-scale case used by the single-cell
    solver checks.
    """

    extents: tuple[int, ...]
    spacing: tuple[float, ...]
    origin: tuple[float, ...] = ()

    def __post_init__(self) -> None:
        extents = tuple(int(n) for n in self.extents)
        spacing = tuple(float(h) for h in self.spacing)
        if len(extents) not in (1, 2):
            raise ValueError(f"only 1D and 2D grids are supported, got dim {len(extents)}")
        if len(spacing) != len(extents):
            raise ValueError("extents and spacing must have the same length")
        if any(n < 1 for n in extents):
            raise ValueError(f"all extents must be >= 1, got {extents}")
        if any(h <= 0 for h in spacing):
            raise ValueError(f"all spacings must be > 0, got {spacing}")
        origin = tuple(float(x) for x in self.origin) if self.origin else (0.0,) * len(extents)
        if len(origin) != len(extents):
            raise ValueError("origin must have one coordinate per axis")
        object.__setattr__(self, "extents", extents)
        object.__setattr__(self, "spacing", spacing)
        object.__setattr__(self, "origin", origin)
        ncells = 1
        vol = 1.0
        for n, h in zip(extents, spacing):
            ncells *= n
            vol *= h
        object.__setattr__(self, "_ncells", ncells)
        object.__setattr__(self, "_cell_volume", vol)

    @property
    def dim(self) -> int:
        return len(self.extents)

    @property
    def ncells(self) -> int:
        return self._ncells

    @property
    def cell_volume(self) -> float:
        return self._cell_volume

    @property
    def lengths(self) -> tuple[float, ...]:
        """Box side lengths."""
        return tuple(n * h for n, h in zip(self.extents, self.spacing))

    def centers(self) -> np.ndarray:
        """Cell-center coordinates, shape ``(ncells, dim)``."""
        axes = [
            self.origin[a] + (np.arange(self.extents[a]) + 0.5) * self.spacing[a]
            for a in range(self.dim)
        ]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    @lru_cache(maxsize=1)
    def boundary_faces(self) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """Boundary faces as ``(cells, axes, sides, areas)`` arrays.

        One entry per boundary face: the flat index of the cell owning the
        face, the axis normal to it, the side (0 = lower, 1 = upper) and the
        face area (the product of the spacings of the other axes; 1.0 in 1D).
        Quadrature on the boundary is one midpoint value per face.
        """
        cells, axes_l, sides = [], [], []
        shape = self.extents
        idx = np.arange(self.ncells).reshape(shape)
        for a in range(self.dim):
            lo = np.take(idx, 0, axis=a).ravel()
            hi = np.take(idx, shape[a] - 1, axis=a).ravel()
            cells.extend([lo, hi])
            axes_l.extend([np.full(lo.size, a), np.full(hi.size, a)])
            sides.extend([np.zeros(lo.size, dtype=int), np.ones(hi.size, dtype=int)])
        cells_arr = np.concatenate(cells)
        axes_arr = np.concatenate(axes_l)
        sides_arr = np.concatenate(sides)
        areas = np.array(
            [self.cell_volume / self.spacing[a] for a in axes_arr], dtype=float
        )
        return cells_arr, axes_arr, sides_arr, areas

    def padded(self, pad_factor: int) -> tuple["Grid", np.ndarray]:
        """Embed this grid in a box enlarged ``pad_factor``-fold per axis.

        Returns the padded grid (same spacing) and the flat indices of the
        original cells inside it. Used by the stray-field solver, which needs
        room around the magnet for the potential to decay.
        """
        if pad_factor < 2:
            raise ValueError("pad_factor must be >= 2")
        ext_pad = tuple(pad_factor * n for n in self.extents)
        offset = tuple((ep - e) // 2 for ep, e in zip(ext_pad, self.extents))
        origin_pad = tuple(
            o - off * h for o, off, h in zip(self.origin, offset, self.spacing)
        )
        padded = Grid(ext_pad, self.spacing, origin_pad)
        inner = np.ix_(
            *[np.arange(off, off + e) for off, e in zip(offset, self.extents)]
        )
        flat = np.arange(padded.ncells).reshape(ext_pad)[inner].ravel()
        return padded, flat


# --------------------------------------------------------------------------
# fields
# --------------------------------------------------------------------------


@dataclass
class ScalarField:
    """A scalar sampled at every cell center; ``values`` has shape ``(ncells,)``."""

    grid: Grid
    values: np.ndarray

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.grid.ncells,):
            raise ValueError(
                f"scalar field needs shape {(self.grid.ncells,)}, got {self.values.shape}"
            )

    def integral(self) -> float:
        return float(self.values.sum() * self.grid.cell_volume)


@dataclass
class VectorField:
    """A k-vector sampled at every cell center; ``values`` has shape ``(ncells, k)``."""

    grid: Grid
    values: np.ndarray

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 2 or self.values.shape[0] != self.grid.ncells:
            raise ValueError(
                f"vector field needs shape ({self.grid.ncells}, k), got {self.values.shape}"
            )

    @property
    def k(self) -> int:
        return self.values.shape[1]

    def integral(self) -> np.ndarray:
        return self.values.sum(axis=0) * self.grid.cell_volume


# --------------------------------------------------------------------------
# material
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Material:
    """Constants of the magnet.

    The anisotropy energy is ``phi(m) = beta_aniso * (|m|^2 - max_a (m.s_a)^2)
    + b0 |m|^4 + b_p |m|^p`` with unit easy axes ``s_a``; the exchange of
    stored for dissipated energy runs through the internal variable with
    threshold set ``S`` (a ball of radius ``rho_S`` or an axis-aligned box)
    plus the viscous term ``(eps_visc/q) |rate|^q``. Heat capacity is
    ``c_v(theta) = cv_c0 (1+theta)^(cv_omega-1)`` and conduction is clamped to
    ``[kappa0, C_K]``. ``kappa_pen`` is the penalty weight tying the internal
    variable to the measure moments; ``reg_weight`` scales the
    ``tau |lambda|^(2q)`` regularizer of the incremental problem (0 disables).

    ``A_proj``, when set, switches on the reduced-dissipation variant: an
    orthogonal projector matrix of size d+1 whose range carries the
    rate-dependent dissipation (radius ``rho_S2``) while its complement moves
    rate-independently (radius ``rho_S1``). Its kernel must annihilate the
    thermal coupling vector ``(0, ..., 0, a0)``.
    """

    easy_axes: tuple[tuple[float, ...], ...]
    a0: float = 2.0
    b0: float = 1.0
    theta_c: float = 1.0
    beta_aniso: float = 1.0
    p: float = 6.0
    b_p: float = 0.01
    eps_visc: float = 0.1
    q: float = 2.0
    rho_S: tuple[float, ...] | float = 0.1
    S_shape: str = "ball"
    kappa_pen: float = 10.0
    mu0: float = 1.0
    cv_c0: float = 1.0
    cv_omega: float = 2.0
    kappa0: float = 0.1
    C_K: float = 1.0
    A_proj: tuple[tuple[float, ...], ...] | None = None
    rho_S1: float | None = None
    rho_S2: float | None = None
    R_max: float | None = None
    reg_weight: float = 1.0

    def __post_init__(self) -> None:
        axes = np.asarray(self.easy_axes, dtype=float)
        if axes.ndim != 2:
            raise ValueError("easy_axes must be a sequence of direction vectors")
        object.__setattr__(self, "easy_axes", tuple(tuple(row) for row in axes))
        if self.A_proj is not None:
            a = np.asarray(self.A_proj, dtype=float)
            object.__setattr__(self, "A_proj", tuple(tuple(row) for row in a))

    @classmethod
    def uniaxial(cls, dim: int, axis: int = 0, **overrides) -> "Material":
        """A single easy axis along coordinate ``axis`` in ``dim`` dimensions."""
        e = [0.0] * dim
        e[axis] = 1.0
        return cls(easy_axes=(tuple(e),), **overrides)

    @property
    def dim(self) -> int:
        return len(self.easy_axes[0])

    @property
    def r_max(self) -> float:
        """Radius of the admissible magnetization ball (atom dictionary support)."""
        if self.R_max is not None:
            return self.R_max
        return 2.0 * math.sqrt(self.a0 * self.theta_c / (2.0 * self.b0))

    def a_flat(self) -> np.ndarray:
        """Thermal coupling vector ``(0, ..., 0, a0)`` in R^(d+1)."""
        v = np.zeros(self.dim + 1)
        v[-1] = self.a0
        return v

    def rho_vector(self) -> np.ndarray:
        """Threshold radii as a length-(d+1) array (same value everywhere for a ball)."""
        k = self.dim + 1
        rho = np.asarray(self.rho_S, dtype=float)
        if rho.ndim == 0:
            return np.full(k, float(rho))
        if rho.shape != (k,):
            raise ValueError(f"rho_S must be a scalar or length-{k} sequence")
        return rho

    def projector(self) -> np.ndarray | None:
        if self.A_proj is None:
            return None
        return np.asarray(self.A_proj, dtype=float)

    def split_radii(self) -> tuple[float, float]:
        """(rho_S1, rho_S2) for the reduced-dissipation variant; default rho_S both."""
        base = float(np.max(self.rho_vector()))
        r1 = self.rho_S1 if self.rho_S1 is not None else base
        r2 = self.rho_S2 if self.rho_S2 is not None else base
        return float(r1), float(r2)


def validate_material(mat: Material) -> list[str]:
    """Check the data qualifications; returns one message per violation.

    An empty list means the material satisfies everything the analysis needs:
    positive bulk constants, unit easy axes, coercive anisotropy growth
    (``p > 4`` whenever ``b_p > 0``), defect exponent ``q >= 2``, heat-capacity
    growth ``cv_omega >= q' = q/(q-1)``, ordered conduction bounds and, if a
    projector is configured, that it is an orthogonal projector fixing the
    thermal coupling vector.
    """
    bad: list[str] = []
    if mat.a0 <= 0:
        bad.append(f"a0 must be > 0, got {mat.a0}")
    if mat.b0 <= 0:
        bad.append(f"b0 must be > 0, got {mat.b0}")
    if mat.theta_c <= 0:
        bad.append(f"theta_c must be > 0, got {mat.theta_c}")
    if mat.beta_aniso < 0:
        bad.append(f"beta_aniso must be >= 0, got {mat.beta_aniso}")
    if mat.mu0 <= 0:
        bad.append(f"mu0 must be > 0, got {mat.mu0}")
    if mat.kappa_pen <= 0:
        bad.append(f"kappa_pen must be > 0, got {mat.kappa_pen}")
    if mat.cv_c0 <= 0:
        bad.append(f"cv_c0 must be > 0, got {mat.cv_c0}")
    if mat.b_p < 0:
        bad.append(f"b_p must be >= 0, got {mat.b_p}")
    if mat.b_p > 0 and mat.p <= 4:
        bad.append(f"p must be > 4 when b_p > 0, got p={mat.p}")
    if mat.q < 2:
        bad.append(f"q must be >= 2, got {mat.q}")
    if mat.eps_visc <= 0:
        bad.append(f"eps_visc must be > 0, got {mat.eps_visc}")
    q_conj = mat.q / (mat.q - 1.0) if mat.q > 1 else math.inf
    if mat.cv_omega < q_conj - 1e-12:
        bad.append(
            f"cv_omega must be >= q/(q-1) = {q_conj:.6g}, got {mat.cv_omega}"
        )
    if not (0 < mat.kappa0 <= mat.C_K):
        bad.append(
            f"conduction bounds need 0 < kappa0 <= C_K, got ({mat.kappa0}, {mat.C_K})"
        )
    try:
        rho = mat.rho_vector()
        if np.any(rho < 0):
            bad.append(f"rho_S components must be >= 0, got {rho.tolist()}")
    except ValueError as e:
        bad.append(str(e))
    if mat.S_shape not in ("ball", "box"):
        bad.append(f"S_shape must be 'ball' or 'box', got {mat.S_shape!r}")
    elif mat.S_shape == "ball":
        try:
            rho = mat.rho_vector()
            if np.ptp(rho) > 0:
                bad.append("ball S needs a single radius, got per-component rho_S")
        except ValueError:
            pass
    axes = np.asarray(mat.easy_axes, dtype=float)
    if axes.shape[1] not in (1, 2):
        bad.append(f"easy axes must live in 1 or 2 dimensions, got {axes.shape[1]}")
    norms = np.linalg.norm(axes, axis=1)
    if np.any(np.abs(norms - 1.0) > 1e-12):
        bad.append(f"easy axes must be unit length to 1e-12, got norms {norms.tolist()}")
    if mat.R_max is not None and mat.R_max <= 0:
        bad.append(f"R_max must be > 0, got {mat.R_max}")
    if mat.reg_weight < 0:
        bad.append(f"reg_weight must be >= 0, got {mat.reg_weight}")
    if mat.rho_S1 is not None and mat.rho_S1 < 0:
        bad.append(f"rho_S1 must be >= 0, got {mat.rho_S1}")
    if mat.rho_S2 is not None and mat.rho_S2 < 0:
        bad.append(f"rho_S2 must be >= 0, got {mat.rho_S2}")
    A = mat.projector()
    if A is not None:
        k = axes.shape[1] + 1
        if A.shape != (k, k):
            bad.append(f"A_proj must be {k}x{k}, got {A.shape}")
        else:
            if np.max(np.abs(A @ A - A)) > 1e-10:
                bad.append("A_proj must be idempotent (A @ A = A)")
            if np.max(np.abs(A - A.T)) > 1e-10:
                bad.append("A_proj must be symmetric (orthogonal projector)")
            af = mat.a_flat()
            if np.max(np.abs(A @ af - af)) > 1e-10 * max(1.0, mat.a0):
                bad.append(
                    "A_proj must fix the thermal coupling vector "
                    "(its kernel may not meet the a0 direction)"
                )
            if mat.S_shape == "box" and np.max(np.abs(A - np.diag(np.diag(A)))) > 1e-12:
                bad.append(
                    "box S with a projector needs an axis-aligned (diagonal) A_proj"
                )
    return bad


# --------------------------------------------------------------------------
# schedule
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Schedule:
    """Time grid and loading on ``[0, T_end]``.

    ``h_keyframes`` and ``theta_ext_keyframes`` are ``(time, value)`` pairs
    interpolated piecewise-linearly; outside the keyframed range the value is
    held constant. The external field value is a length-d vector applied
    uniformly in space. ``b_coeff`` is the (constant) boundary heat-transfer
    coefficient. The step count ``T_end / tau`` must be an integer.
    """

    T_end: float
    tau: float
    h_keyframes: tuple[tuple[float, tuple[float, ...]], ...]
    theta_ext_keyframes: tuple[tuple[float, float], ...] = ((0.0, 0.0),)
    b_coeff: float = 0.0

    def __post_init__(self) -> None:
        if self.T_end <= 0:
            raise ValueError(f"T_end must be > 0, got {self.T_end}")
        if not (0 < self.tau <= self.T_end):
            raise ValueError(f"tau must lie in (0, T_end], got {self.tau}")
        n = round(self.T_end / self.tau)
        if abs(n * self.tau - self.T_end) > 1e-9 * self.T_end:
            raise ValueError("T_end must be an integer multiple of tau")
        hk = tuple(
            (float(t), tuple(float(x) for x in np.atleast_1d(v))) for t, v in self.h_keyframes
        )
        if not hk:
            raise ValueError("h_keyframes must contain at least one keyframe")
        times = [t for t, _ in hk]
        if any(t2 <= t1 for t1, t2 in zip(times, times[1:])):
            raise ValueError("h keyframe times must be strictly increasing")
        dims = {len(v) for _, v in hk}
        if len(dims) != 1:
            raise ValueError("all h keyframe values must have the same dimension")
        tk = tuple((float(t), float(v)) for t, v in self.theta_ext_keyframes)
        ttimes = [t for t, _ in tk]
        if any(t2 <= t1 for t1, t2 in zip(ttimes, ttimes[1:])):
            raise ValueError("theta_ext keyframe times must be strictly increasing")
        if any(v < 0 for _, v in tk):
            raise ValueError("theta_ext must be >= 0 (absolute temperature scale)")
        if self.b_coeff < 0:
            raise ValueError(f"b_coeff must be >= 0, got {self.b_coeff}")
        object.__setattr__(self, "h_keyframes", hk)
        object.__setattr__(self, "theta_ext_keyframes", tk)

    @property
    def n_steps(self) -> int:
        return round(self.T_end / self.tau)

    @property
    def dim(self) -> int:
        return len(self.h_keyframes[0][1])


def _interp_keyframes(
    times: np.ndarray, values: np.ndarray, t: float
) -> tuple[np.ndarray, np.ndarray]:
    """Piecewise-linear value and right-continuous slope at ``t``; clamped outside."""
    if t < times[0]:
        return values[0].copy(), np.zeros_like(values[0])
    if len(times) == 1:
        return values[0].copy(), np.zeros_like(values[0])
    if t >= times[-1]:
        return values[-1].copy(), np.zeros_like(values[-1])
    j = int(np.searchsorted(times, t, side="right") - 1)
    dt = times[j + 1] - times[j]
    slope = (values[j + 1] - values[j]) / dt
    return values[j] + slope * (t - times[j]), slope


def sample_schedule(
    schedule: Schedule, t: float
) -> tuple[np.ndarray, np.ndarray, float, float]:
    """Evaluate the loading at time ``t``.

    Returns ``(h, dh_dt, theta_ext, b)`` where ``h`` and ``dh_dt`` are
    length-d arrays. ``dh_dt`` is the right-continuous slope of the keyframe
    interpolation (zero outside the keyframed range). Raises ``ValueError``
    for ``t`` outside ``[0, T_end]``.
    """
    if not (-1e-12 <= t <= schedule.T_end * (1 + 1e-12) + 1e-12):
        raise ValueError(f"t={t} outside [0, {schedule.T_end}]")
    ht = np.array([tt for tt, _ in schedule.h_keyframes])
    hv = np.array([v for _, v in schedule.h_keyframes], dtype=float)
    h, dh = _interp_keyframes(ht, hv, t)
    et = np.array([tt for tt, _ in schedule.theta_ext_keyframes])
    ev = np.array([[v] for _, v in schedule.theta_ext_keyframes], dtype=float)
    theta_ext, _ = _interp_keyframes(et, ev, t)
    return h, dh, float(theta_ext[0]), float(schedule.b_coeff)
