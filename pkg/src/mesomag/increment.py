"""Time-incremental minimization and the static penalized solver.

One time step minimizes, over the measure weights and the internal variable,

    Gibbs(nu, lam; theta = I(w_prev), h(k tau))
      + reg_weight * tau * int |lam|^(2q)
      + tau * int zeta((lam - lam_prev)/tau)

by Gauss-Seidel alternation: a weight step at fixed lam, then a proximal
internal-variable step at fixed nu. Both substeps are monotone descent
methods on a jointly convex objective, so the sweep trace must be
non-increasing; a violation raises (bug sentinel).

The weight step works on a fixed shared atom dictionary. Each iteration
computes the exact gradient, a Frank-Wolfe vertex direction and a
projected-gradient chord direction, takes the better exact-line-search step
(the objective is quadratic along any segment), and stops when the
Frank-Wolfe duality gap certifies the tolerance.

The internal-variable step is proximal gradient with backtracking; the prox
of the scaled dissipation reduces to :func:`mesomag.energy.prox_dissipation`
on the rate. The static problem (no dissipation, no regularization) uses the
same weight step but an exact closed-form internal-variable step.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from .core import Material, Schedule, sample_schedule
from .energy import (
    FieldSolvers,
    L_of,
    dissipation_potential,
    phi,
    prox_dissipation,
    theta_of_enthalpy,
)
from .measure import AtomicYoungMeasure, project_simplex

__all__ = [
    "IncrementProblem",
    "IncrementSolution",
    "StaticSolution",
    "nu_step",
    "lambda_step",
    "incremental_solve",
    "static_solve",
]


@dataclass
class IncrementProblem:
    """One time step's data: previous state, loading, material, solvers."""

    tau: float
    k: int
    nu_prev: AtomicYoungMeasure
    lam_prev: np.ndarray
    w_prev: np.ndarray
    mat: Material
    schedule: Schedule
    solvers: FieldSolvers

    def __post_init__(self) -> None:
        if self.tau <= 0:
            raise ValueError(f"tau must be > 0, got {self.tau}")
        if not self.nu_prev.shared_atoms:
            raise ValueError("the incremental solver needs a shared atom dictionary")
        g = self.nu_prev.grid
        self.lam_prev = np.asarray(self.lam_prev, dtype=float)
        self.w_prev = np.asarray(self.w_prev, dtype=float)
        d = self.nu_prev.atoms.shape[-1]
        if self.lam_prev.shape != (g.ncells, d + 1):
            raise ValueError(
                f"lam_prev must have shape ({g.ncells},{d + 1}), got {self.lam_prev.shape}"
            )
        if self.w_prev.shape != (g.ncells,):
            raise ValueError(
                f"w_prev must have shape ({g.ncells},), got {self.w_prev.shape}"
            )

    @property
    def theta_prev(self) -> np.ndarray:
        """Retarded temperature I(w_prev), frozen for the whole increment."""
        return np.asarray(theta_of_enthalpy(self.w_prev, self.mat))

    @property
    def h_now(self) -> np.ndarray:
        return sample_schedule(self.schedule, self.k * self.tau)[0]


@dataclass
class IncrementSolution:
    nu: AtomicYoungMeasure
    lam: np.ndarray
    objective: float
    trace: list[float]
    nu_gap: float
    lam_residual: float
    flow_residual: float
    warnings: list[str] = field(default_factory=list)


@dataclass
class StaticSolution:
    nu: AtomicYoungMeasure
    lam: np.ndarray
    potential: np.ndarray | None
    objective: float
    trace: list[float]
    nu_gap: float
    constraint_gap: float
    warnings: list[str] = field(default_factory=list)


# -- weight step -------------------------------------------------------------------


class _NuObjective:
    """The nu-dependent Gibbs parts on a fixed dictionary at fixed lam.

    obj(W) = int phi.nu - int h.m + E_ms(m) + (kappa/2)||lam - L.nu||^2_{H^-1};
    gradient and exact segment line search for the quadratic-in-moments parts.

    With lam=None the penalty is dropped (the static sweep eliminates lam
    exactly, leaving a constant) and lin_extra carries any additional linear
    coefficients per (cell, atom), e.g. the reduced thermal coupling.
    """

    def __init__(self, grid, atoms, lam, hh, mat, solvers, lin_extra=None):
        self.grid = grid
        self.atoms = atoms
        self.L_a = L_of(atoms)
        self.phi_a = phi(atoms, mat)
        self.lam = lam
        self.hh = hh
        self.mat = mat
        self.solvers = solvers
        self.vol = grid.cell_volume
        self.lin = self.phi_a[None, :] if lin_extra is None else self.phi_a[None, :] + lin_extra
        self._H = False  # dense Hessian: False = not built yet, None = too large

    def evaluate(self, W):
        """Returns (objective, gradient) at weights W."""
        m = W @ self.atoms
        vol, mat = self.vol, self.mat
        lin = vol * float(np.sum(W * self.lin))
        zee = -vol * float(np.sum(self.hh * m))
        if self.solvers.magneto is not None:
            ms = self.solvers.magneto.solve(m)
            h_dem, ems = ms.h_dem, ms.energy
        else:
            h_dem, ems = np.zeros_like(m), 0.0
        obj = lin + zee + ems
        G = vol * (self.lin + (h_dem - self.hh) @ self.atoms.T)
        if self.lam is not None:
            Lnu = W @ self.L_a
            f = self.lam - Lnu
            chi = self.solvers.poisson.solve(f)
            obj += max(-0.5 * mat.kappa_pen * vol * float(np.sum(chi * f)), 0.0)
            G += vol * mat.kappa_pen * chi @ self.L_a.T
        return obj, G

    def curvature(self, D):
        """Quadratic coefficient of obj(W + gamma D) in gamma."""
        if self._H is not False and self._H is not None:
            v = D.ravel()
            return max(0.5 * float(v @ (self._H @ v)), 0.0)
        dm = D @ self.atoms
        q = 0.0
        if self.solvers.magneto is not None:
            q += self.solvers.magneto.solve(dm).energy
        if self.lam is not None:
            dL = D @ self.L_a
            chi = self.solvers.poisson.solve(dL)
            q += max(-0.5 * self.mat.kappa_pen * self.vol * float(np.sum(chi * dL)), 0.0)
        return q

    def hessian_apply(self, D):
        """Apply the (constant) quadratic-part Hessian to a weight direction.

        The gradient is affine in W, so H D = grad(W + D) - grad(W) needs one
        demagnetization solve and one penalty solve.
        """
        dm = D @ self.atoms
        out = np.zeros_like(D)
        if self.solvers.magneto is not None:
            out += self.solvers.magneto.solve(dm).h_dem @ self.atoms.T
        if self.lam is not None:
            dL = D @ self.L_a
            out -= self.mat.kappa_pen * self.solvers.poisson.solve(dL) @ self.L_a.T
        return self.vol * out

    def dense_hessian(self):
        """The constant quadratic-part Hessian as a dense (nK, nK) matrix.

        Only assembled for small weight spaces; the response kernels are
        cached on the solver bundle since they depend on nothing but the
        dictionary and the grid operators. Returns None when too large.
        """
        if self._H is not False:
            return self._H
        n = self.grid.ncells
        K = self.atoms.shape[0]
        if n * K > _DENSE_H_LIMIT:
            self._H = None
            return None
        H_dem, H_pen = _response_kernels(self.solvers, self.atoms, self.L_a)
        H = H_dem.copy()
        if self.lam is not None:
            H += self.mat.kappa_pen * H_pen
        H *= self.vol
        self._H = H
        return H


def _fw_gap_and_vertex(G, W):
    """Global Frank-Wolfe gap and the per-cell best-vertex weight matrix."""
    jF = np.argmin(G, axis=1)  # ties break to the lowest index
    gap = float(np.sum(np.sum(G * W, axis=1) - G[np.arange(G.shape[0]), jF]))
    WF = np.zeros_like(W)
    WF[np.arange(G.shape[0]), jF] = 1.0
    return gap, WF


def nu_step(
    prob: IncrementProblem,
    lam_fixed: np.ndarray,
    nu_init: AtomicYoungMeasure | None = None,
    tol_rel: float = 1e-8,
    max_iter: int = 2000,
):
    """Minimize over per-cell simplex weights at fixed internal variable.

    Returns (nu, info) with info = dict(gap, objective, iterations, warning).
    """
    nu0 = prob.nu_prev if nu_init is None else nu_init
    grid = nu0.grid
    d = nu0.atoms.shape[-1]
    hh = np.broadcast_to(np.asarray(prob.h_now, dtype=float), (grid.ncells, d))
    fn = _NuObjective(grid, nu0.atoms, lam_fixed, hh, prob.mat, prob.solvers)
    W, info = _minimize_weights(fn, nu0.weights.copy(), tol_rel, max_iter)
    return nu0.with_weights(W), info


_DENSE_H_LIMIT = 2048  # max n_cells * n_atoms for assembling the dense Hessian


def _response_kernels(solvers, atoms, L_a):
    """Dense (H_dem, H_pen) weight-space kernels at unit volume, unit kappa.

    Cached on the solver bundle keyed by the dictionary: the kernels are the
    grid operators conjugated with the (constant) moment maps, so they are
    shared across all lam values, sweeps and time steps.
    """
    cache = getattr(solvers, "_kernel_cache", None)
    if cache is None:
        cache = {}
        solvers._kernel_cache = cache
    key = atoms.tobytes()
    if key in cache:
        return cache[key]
    n = solvers.grid.ncells
    K, d = atoms.shape
    H_dem = np.zeros((n * K, n * K))
    if solvers.magneto is not None:
        for a in range(d):
            resp = np.empty((n, n, d))  # resp[c, c2, b]: field at c2 from unit m_a at c
            E = np.zeros((n, d))
            for c in range(n):
                E[:] = 0.0
                E[c, a] = 1.0
                resp[c] = solvers.magneto.solve(E).h_dem
            for b in range(d):
                H_dem += np.kron(resp[:, :, b].T, np.outer(atoms[:, b], atoms[:, a]))
    Minv = -solvers.poisson.solve(np.eye(n))
    H_pen = np.kron(Minv, L_a @ L_a.T)
    cache[key] = (H_dem, H_pen)
    return cache[key]


def _kkt_face_step(H, g, face, n, K):
    """Newton step for the equality-restricted quadratic: one dense KKT solve.

    face is a flat bool mask; per-cell sums of the step are constrained to
    zero so the iterate stays on the affine hull of the simplices.
    """
    idx = np.flatnonzero(face)
    nnz = idx.size
    Hr = H[np.ix_(idx, idx)]
    mu = 1e-10 * (np.trace(Hr) / max(nnz, 1))
    A = np.zeros((n, nnz))
    A[idx // K, np.arange(nnz)] = 1.0
    kkt = np.block([[Hr + mu * np.eye(nnz), A.T], [A, np.zeros((n, n))]])
    rhs = np.concatenate([-g[idx], np.zeros(n)])
    try:
        sol = np.linalg.solve(kkt, rhs)
    except np.linalg.LinAlgError:
        sol = np.linalg.lstsq(kkt, rhs, rcond=None)[0]
    x = np.zeros(n * K)
    x[idx] = sol[:nnz]
    return x


def _face_active_set(H, W, G, mask, max_drops=30):
    """Minimize the exact quadratic model over the face, dropping blockers.

    Repeats: Newton step restricted to the face; if a nonnegativity bound
    blocks it, walk to the bound, remove the blocking atoms from the face and
    re-solve. The objective is exactly quadratic in the weights, so the
    returned decrease Gᵀd + ½dᵀHd is the true decrease and competes on equal
    terms with the line-searched candidates.
    """
    n, K = W.shape
    face = mask.copy().ravel()
    Wcur = W.ravel().copy()
    g = G.ravel().copy()
    delta = np.zeros(n * K)
    moved = False
    for _ in range(max_drops):
        x = _kkt_face_step(H, g, face, n, K)
        xmax = float(np.max(np.abs(x)))
        if not np.isfinite(xmax) or xmax <= 1e-14 * (1.0 + float(np.max(np.abs(Wcur)))):
            break
        neg = x < -1e-300
        if np.any(neg):
            caps = Wcur[neg] / -x[neg]
            cap = float(np.min(caps))
        else:
            cap = np.inf
        step = min(1.0, cap)
        if step > 0.0:
            Wcur += step * x
            delta += step * x
            g += step * (H @ x)
            moved = True
        if cap > 1.0:
            break  # full Newton point is feasible: face optimum reached
        hit = neg & (Wcur <= 1e-15 * (1.0 + np.abs(delta)))
        if not np.any(hit & face):
            break  # no blocker identified; avoid spinning
        Wcur[hit] = 0.0
        face &= ~hit
    if not moved:
        return None
    d = delta
    dec = float(G.ravel() @ d + 0.5 * d @ (H @ d))
    if not np.isfinite(dec) or dec >= 0.0:
        return None
    Wq = np.maximum((W.ravel() + d).reshape(W.shape), 0.0)
    return dec, Wq, 1.0


def _face_newton_cg(fn: _NuObjective, W, G, mask, ksup):
    """Matrix-free fallback: conjugate gradients on the face-projected Hessian."""

    def proj(D):
        D = np.where(mask, D, 0.0)
        mean = D.sum(axis=1, keepdims=True) / ksup
        return np.where(mask, D - mean, 0.0)

    b = -proj(G)
    x = np.zeros_like(W)
    r = b.copy()
    p = r.copy()
    rs = float(np.sum(r * r))
    floor = max(rs, 1e-30)
    dims = int(mask.sum() - W.shape[0])
    mu = 0.0  # Tikhonov against near-duplicate atoms, set from the first product
    for k in range(min(dims + 10, 80)):
        if rs <= 1e-10 * floor:
            break
        Hp = proj(fn.hessian_apply(p)) + mu * p
        pHp = float(np.sum(p * Hp))
        pp = float(np.sum(p * p))
        if k == 0 and pp > 0:
            mu = 1e-9 * max(pHp / pp, 0.0)
        if pHp <= mu * pp:
            break  # flat or rounding-negative curvature; leave it to Frank-Wolfe
        alpha = rs / pHp
        x += alpha * p
        r -= alpha * Hp
        rs_new = float(np.sum(r * r))
        p = r + (rs_new / rs) * p
        rs = rs_new
    return x


def _qp_candidate(fn: _NuObjective, W, G, WF, support_tol=1e-12):
    """Newton candidate on the active face: ((decrease, endpoint, gamma), widest).

    Restricts to the atoms carrying weight plus the Frank-Wolfe vertex and
    keeps per-cell sums fixed (stay on the affine hull of the simplices). On
    such minimal faces the moment map is injective for distinct atoms, so the
    restricted Hessian is positive definite. With the dense Hessian in hand
    the candidate is the exact face minimizer with active-set drops; the
    matrix-free fallback is a single capped segment along the CG direction.
    """
    mask = (W > support_tol) | (WF > 0)
    ksup = mask.sum(axis=1, keepdims=True)
    widest = int(np.max(ksup))
    if widest > 8:
        # fat faces carry large null spaces (the moment map is far from
        # injective); let the chord steps shed mass before polishing
        return None, widest
    H = fn.dense_hessian()
    if H is not None:
        return _face_active_set(H, W, G, mask), widest
    x = _face_newton_cg(fn, W, G, mask, ksup)
    # restore exact per-cell mass balance lost to rounding, then normalize:
    # only the ray matters to the line search
    x = np.where(mask, x, 0.0)
    x = np.where(mask, x - x.sum(axis=1, keepdims=True) / ksup, 0.0)
    scale = float(np.max(np.abs(x)))
    if not np.isfinite(scale) or scale <= 0.0:
        return None, widest
    D = x / max(scale, 1.0)
    neg = D < -1e-300
    gamma_cap = float(np.min(W[neg] / -D[neg])) if np.any(neg) else 1.0
    return _segment_candidate(fn, W, G, D, gamma_cap=gamma_cap), widest


def _segment_candidate(fn: _NuObjective, W, G, D, gamma_cap=1.0):
    """Exact line search on W + gamma D; returns (decrease, endpoint) or None."""
    slope = float(np.sum(G * D))
    if slope >= 0 or gamma_cap <= 0:
        return None
    qc = fn.curvature(D)
    gamma = gamma_cap if qc <= 0 else min(gamma_cap, -slope / (2.0 * qc))
    dec = slope * gamma + (qc * gamma * gamma if qc > 0 else 0.0)
    return dec, W + gamma * D, gamma


def _minimize_weights(fn: _NuObjective, W, tol_rel, max_iter):
    obj, G = fn.evaluate(W)
    sigma = 1.0 / max(np.max(np.abs(G)), 1e-30)
    warning = ""
    it = 0
    qp_every = 5
    for it in range(1, max_iter + 1):
        gap, WF = _fw_gap_and_vertex(G, W)
        noise = 64 * np.finfo(float).eps * max(1.0, float(np.sum(np.abs(G * W))))
        if gap <= tol_rel * abs(obj) + noise:
            break

        # candidate 1: Frank-Wolfe segment toward the vertex matrix
        best = None
        cand = _segment_candidate(fn, W, G, WF - W)
        if cand is not None:
            best = cand

        # candidate 2: projected-gradient chord
        for _ in range(4):
            Wp = project_simplex(W - sigma * G)
            D = Wp - W
            if float(np.sum(G * D)) < -noise:
                break
            sigma /= 4.0
        else:
            D = None
        if D is not None:
            cand = _segment_candidate(fn, W, G, D)
            if cand is not None:
                if best is None or cand[0] < best[0]:
                    best = cand
                if cand[2] >= 1.0:
                    sigma *= 2.0

        # candidate 3: Newton step on the active face with active-set drops;
        # this is what makes the tail fast. Skipped while supports are fat
        # (early mass shedding is the chords' job).
        if qp_every == 1 or it == 1 or it % qp_every == 0:
            cand, widest = _qp_candidate(fn, W, G, WF)
            qp_every = 1 if widest <= 6 else 5
            if cand is not None and (best is None or cand[0] < best[0]):
                best = cand

        if best is None:
            break  # no descent direction left; gap is at rounding level
        W = np.maximum(best[1], 0.0)  # clip the -0.0/eps dust from boundary steps
        obj, G = fn.evaluate(W)
    else:
        gap, _ = _fw_gap_and_vertex(G, W)
        warning = f"weight step hit max_iter={max_iter} with gap {gap:.3e}"

    return W, {"gap": gap, "objective": obj, "iterations": it, "warning": warning}


# -- internal-variable step -----------------------------------------------------------


class _LambdaObjective:
    """Smooth part of the lam-problem: coupling + penalty + tau|lam|^(2q) reg."""

    def __init__(self, grid, Lnu, theta, mat, solvers, tau, reg_weight):
        self.grid = grid
        self.Lnu = Lnu
        self.dtheta = np.asarray(theta, dtype=float) - mat.theta_c
        self.mat = mat
        self.solvers = solvers
        self.tau = tau
        self.reg_weight = reg_weight
        self.vol = grid.cell_volume
        self.a = mat.a_flat()

    def evaluate(self, lam):
        mat, vol = self.mat, self.vol
        f = lam - self.Lnu
        chi = self.solvers.poisson.solve(f)
        pen = max(-0.5 * mat.kappa_pen * vol * float(np.sum(chi * f)), 0.0)
        coup = vol * float(np.sum(self.dtheta * mat.a0 * lam[:, -1]))
        obj = coup + pen
        G = vol * (self.dtheta[:, None] * self.a[None, :] - mat.kappa_pen * chi)
        if self.reg_weight > 0:
            n2 = np.sum(lam * lam, axis=1)
            obj += self.reg_weight * self.tau * vol * float(np.sum(n2**mat.q))
            G = G + (
                self.reg_weight
                * self.tau
                * vol
                * 2.0
                * mat.q
                * n2 ** (mat.q - 1.0)
            )[:, None] * lam
        return obj, G


def lambda_step(
    prob: IncrementProblem,
    nu_fixed: AtomicYoungMeasure,
    lam_init: np.ndarray | None = None,
    tol_rel: float = 1e-9,
    max_iter: int = 500,
):
    """Proximal-gradient minimization of the lam-part at fixed measure.

    Accelerated (heavy-ball extrapolation) with a monotone safeguard: the
    iterate only moves when the full objective (smooth + dissipation) does
    not increase, and backtracking on the smooth quadratic bound guarantees
    every accepted prox step is a descent step of its own subproblem. The
    reported residual is the prox fixed-point map displacement at the
    extrapolated point, relative.

    Returns (lam, info) with info = dict(residual, objective, iterations, warning).
    """
    grid = nu_fixed.grid
    lam = np.array(prob.lam_prev if lam_init is None else lam_init, dtype=float)
    fn = _LambdaObjective(
        grid,
        nu_fixed.moments().Lnu,
        prob.theta_prev,
        prob.mat,
        prob.solvers,
        prob.tau,
        prob.mat.reg_weight,
    )
    vol = grid.cell_volume
    tau, mat = prob.tau, prob.mat

    def prox(z, sigma):
        rate = prox_dissipation((z - prob.lam_prev) / tau, sigma * vol / tau, mat)
        return prob.lam_prev + tau * rate

    def dissipation(l):
        return tau * vol * float(np.sum(dissipation_potential((l - prob.lam_prev) / tau, mat)))

    obj, G = fn.evaluate(lam)
    full = obj + dissipation(lam)
    lam_old = lam
    y, obj_y, Gy = lam, obj, G
    t_mom = 1.0
    sigma = 1.0 / max(np.max(np.abs(G)) / max(np.max(np.abs(lam)), 1.0), 1e-30)
    warning = ""
    residual = np.inf
    it = 0
    for it in range(1, max_iter + 1):
        stalled = False
        while True:
            z = prox(y - sigma * Gy, sigma)
            D = z - y
            obj_z, Gz = fn.evaluate(z)
            bound = obj_y + float(np.sum(Gy * D)) + float(np.sum(D * D)) / (2.0 * sigma)
            if obj_z <= bound + 1e-14 * (1.0 + abs(obj_y)):
                break
            if sigma < 1e-18:
                stalled = True  # rounding-limited; keep the current iterate
                break
            sigma /= 2.0
        if stalled:
            break
        residual = float(np.linalg.norm(z - y)) / (1.0 + float(np.linalg.norm(z)))
        full_z = obj_z + dissipation(z)
        t_new = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t_mom * t_mom))
        if full_z <= full:
            lam_old, lam = lam, z
            obj, full = obj_z, full_z
        else:
            lam_old = lam  # keep the iterate, restart the extrapolation
            t_mom, t_new = 1.0, 1.0
        if residual <= tol_rel:
            break
        y = lam + (t_mom / t_new) * (z - lam) + ((t_mom - 1.0) / t_new) * (lam - lam_old)
        t_mom = t_new
        obj_y, Gy = fn.evaluate(y)
        sigma *= 1.05
    else:
        warning = f"lam step hit max_iter={max_iter} with residual {residual:.3e}"

    if not np.isfinite(residual):
        residual = 0.0  # no iteration ran; the warm start was already optimal
    return lam, {
        "residual": residual,
        "objective": obj,
        "iterations": it,
        "warning": warning,
    }


# -- alternation ------------------------------------------------------------------------


def _full_objective(prob: IncrementProblem, nu, lam):
    """Joint incremental objective: Gibbs + regularization + dissipation."""
    from .energy import gibbs_energy

    ev = gibbs_energy(nu, lam, prob.theta_prev, prob.h_now, prob.mat, prob.solvers)
    vol = prob.nu_prev.grid.cell_volume
    mat, tau = prob.mat, prob.tau
    reg = 0.0
    if mat.reg_weight > 0:
        reg = mat.reg_weight * tau * vol * float(
            np.sum(np.sum(lam * lam, axis=1) ** mat.q)
        )
    disp = tau * vol * float(
        np.sum(dissipation_potential((lam - prob.lam_prev) / tau, mat))
    )
    return ev.total + reg + disp


def incremental_solve(
    prob: IncrementProblem,
    tol_alt: float = 1e-10,
    max_sweeps: int = 100,
    tol_nu: float = 1e-8,
    tol_lam: float = 1e-9,
) -> IncrementSolution:
    """Alternate weight and internal-variable steps to a joint minimizer."""
    nu = prob.nu_prev
    lam = np.array(prob.lam_prev, dtype=float)
    obj = _full_objective(prob, nu, lam)
    trace = [obj]
    warnings: list[str] = []
    info_nu = {"gap": np.inf}
    info_lam = {"residual": np.inf}
    for _ in range(max_sweeps):
        nu, info_nu = nu_step(prob, lam, nu_init=nu, tol_rel=tol_nu)
        lam, info_lam = lambda_step(prob, nu, lam_init=lam, tol_rel=tol_lam)
        for info in (info_nu, info_lam):
            if info["warning"]:
                warnings.append(info["warning"])
        obj_new = _full_objective(prob, nu, lam)
        if obj_new > obj + 1e-12 * (1.0 + abs(obj)):
            raise RuntimeError(
                f"alternation objective increased: {obj:.17g} -> {obj_new:.17g}"
            )
        done = obj - obj_new <= tol_alt * (1.0 + abs(obj))
        obj = obj_new
        trace.append(obj)
        if done:
            break
    else:
        warnings.append(f"alternation hit max_sweeps={max_sweeps}")

    from .audit import flowrule_residual

    flow = flowrule_residual(
        prob.lam_prev,
        lam,
        nu.moments().Lnu,
        prob.w_prev,
        prob.mat,
        prob.solvers,
        prob.tau,
    )
    return IncrementSolution(
        nu=nu,
        lam=lam,
        objective=obj,
        trace=trace,
        nu_gap=float(info_nu["gap"]),
        lam_residual=float(info_lam["residual"]),
        flow_residual=flow,
        warnings=warnings,
    )


# -- static problem -----------------------------------------------------------------------


def static_solve(
    nu_init: AtomicYoungMeasure,
    mat: Material,
    h,
    theta,
    solvers: FieldSolvers | None = None,
    kappa: float | None = None,
    tol_nu: float = 1e-8,
    tol_alt: float = 1e-10,
    max_sweeps: int = 100,
) -> StaticSolution:
    """Minimize the static penalized Gibbs energy over (nu, lam).

    No dissipation and no regularization: the internal-variable condition is
    linear and solved exactly, lam = L.nu - (1/kappa) (-Lap)((theta-theta_c) a).
    """
    from .energy import gibbs_energy

    if kappa is not None:
        mat = dataclasses.replace(mat, kappa_pen=kappa)
    grid = nu_init.grid
    if solvers is None:
        solvers = FieldSolvers(grid, mat)
    if not nu_init.shared_atoms:
        raise ValueError("static_solve needs a shared atom dictionary")
    d = nu_init.atoms.shape[-1]
    th = np.broadcast_to(np.asarray(theta, dtype=float), (grid.ncells,))
    hh = np.broadcast_to(np.asarray(h, dtype=float), (grid.ncells, d))

    # exact lam minimizer at fixed nu: kappa * chi = (theta - theta_c) a_flat;
    # the shift does not depend on nu, so the lam half-step can be substituted
    # into the nu half-step: the penalty collapses to a constant and the
    # coupling becomes the linear term (theta - theta_c) a0 (L.nu)_last. Each
    # sweep then minimizes the joint objective exactly, independent of kappa.
    g_field = np.zeros((grid.ncells, d + 1))
    g_field[:, -1] = (th - mat.theta_c) * mat.a0
    lam_shift = -(solvers.poisson.M @ g_field) / mat.kappa_pen
    lin_extra = np.outer(th - mat.theta_c, mat.a0 * L_of(nu_init.atoms)[:, -1])

    nu = nu_init
    lam = nu.moments().Lnu + lam_shift
    obj = gibbs_energy(nu, lam, th, hh, mat, solvers).total
    trace = [obj]
    warnings: list[str] = []
    info_nu = {"gap": np.inf}
    for _ in range(max_sweeps):
        fn = _NuObjective(grid, nu.atoms, None, hh, mat, solvers, lin_extra=lin_extra)
        W, info_nu = _minimize_weights(fn, nu.weights.copy(), tol_nu, 2000)
        nu = nu.with_weights(W)
        if info_nu["warning"]:
            warnings.append(info_nu["warning"])
        lam = nu.moments().Lnu + lam_shift
        obj_new = gibbs_energy(nu, lam, th, hh, mat, solvers).total
        if obj_new > obj + 1e-12 * (1.0 + abs(obj)):
            raise RuntimeError(
                f"static alternation objective increased: {obj:.17g} -> {obj_new:.17g}"
            )
        done = obj - obj_new <= tol_alt * (1.0 + abs(obj))
        obj = obj_new
        trace.append(obj)
        if done:
            break
    else:
        warnings.append(f"static alternation hit max_sweeps={max_sweeps}")

    gap = 0.0
    fdiff = lam - nu.moments().Lnu
    for j in range(fdiff.shape[1]):
        gap += solvers.poisson.hminus_norm(fdiff[:, j]) ** 2
    gap = float(np.sqrt(gap))
    potential = None
    if solvers.magneto is not None:
        potential = solvers.magneto.solve(nu.moments().m).u
    return StaticSolution(
        nu=nu,
        lam=lam,
        potential=potential,
        objective=obj,
        trace=trace,
        nu_gap=float(info_nu["gap"]),
        constraint_gap=gap,
        warnings=warnings,
    )
