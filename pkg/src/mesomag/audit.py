"""Trajectory audits: the discrete inequalities every accepted run must satisfy.

The auditors re-derive everything from a stored :class:`Trajectory`; they never
trust solver-side bookkeeping. Four families of checks:

* flow rule: the accepted internal-variable update solves its variational
  inequality against a seeded family of test rates (worst normalized
  violation, exactly 0 at ``v = rate``);
* energy balance: two slack quantities that are exact consequences of the
  incremental minimization, per step and cumulative. The cumulative slack
  books the stored magnetic energy plus threshold dissipation against the
  external work (retarded field work plus temperature-coupling work, plus
  regularizer bookkeeping). The per-step flow slack upgrades the viscous term
  to its full heat-production weight through the Euler identity
  ``<g, rate> = xi(rate)`` for ``g`` in the dissipation subdifferential, paid
  for by penalty and regularizer convexity. The literal cumulative balance
  with the full ``xi`` weight is also reported; it carries a sign-indefinite
  coupling defect of order ``tau`` per step for any alternation that converges
  jointly, so it is a monitoring column, not a pass/fail quantity;
* a-priori monitors: the p-th atom moment, the rate in L^q of space-time, the
  enthalpy in L^inf-L^1, a discrete gradient of the enthalpy in L^r, and the
  penalty value, all of which must stay bounded under time refinement;
* variant checks: semistability margins against perturbed competitor pairs
  and the rate-independent variation measure (additive over step intervals).

All random test directions come from a seeded generator so reports are
reproducible. Reports serialize to delimited text, one row per step.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import Grid, Material
from .energy import (
    FieldSolvers,
    dissipation_potential,
    dissipation_rate,
    gibbs_energy,
    support_S1_perp,
    theta_of_enthalpy,
)
from .energy import _split  # package-internal projector split
from .measure import AtomicYoungMeasure

__all__ = [
    "Trajectory",
    "EnergyBalanceReport",
    "AprioriMonitors",
    "AuditReport",
    "flowrule_residual",
    "energy_balance_report",
    "apriori_monitors",
    "semistability_residual",
    "variation_measure",
    "run_audit",
]


# -- trajectory container ---------------------------------------------------------


@dataclass
class Trajectory:
    """Per-step state of one run, enough to re-derive every audited quantity.

    Index 0 is the initial state. For step ``k >= 1``, ``theta_used[k]`` is
    the retarded temperature the increment actually saw (the enthalpy
    transform of ``w[k-1]``), and ``flux[k]`` is the time-integrated boundary
    heat intake booked by the heat step (0 for insulated or isothermal runs).
    """

    grid: Grid
    atoms: np.ndarray
    mat: Material
    tau: float
    t: list[float] = field(default_factory=list)
    h: list[np.ndarray] = field(default_factory=list)
    weights: list[np.ndarray] = field(default_factory=list)
    lam: list[np.ndarray] = field(default_factory=list)
    w: list[np.ndarray] = field(default_factory=list)
    theta_used: list[np.ndarray] = field(default_factory=list)
    flux: list[float] = field(default_factory=list)

    def append(self, t, h, weights, lam, w, theta_used, flux: float = 0.0) -> None:
        d = self.atoms.shape[-1]
        hh = np.broadcast_to(np.asarray(h, dtype=float), (self.grid.ncells, d))
        self.t.append(float(t))
        self.h.append(np.array(hh))
        self.weights.append(np.array(weights, dtype=float))
        self.lam.append(np.array(lam, dtype=float))
        self.w.append(np.array(w, dtype=float))
        self.theta_used.append(
            np.broadcast_to(np.asarray(theta_used, dtype=float), (self.grid.ncells,)).copy()
        )
        self.flux.append(float(flux))

    def begin(self, nu0: AtomicYoungMeasure, lam0, w0, h0, t0: float = 0.0) -> None:
        """Record the initial state; the retarded temperature is its own."""
        w0 = np.asarray(w0, dtype=float)
        self.append(t0, h0, nu0.weights, lam0, w0, theta_of_enthalpy(w0, self.mat))

    @property
    def nsteps(self) -> int:
        return len(self.t) - 1

    def measure(self, k: int) -> AtomicYoungMeasure:
        return AtomicYoungMeasure(self.grid, self.atoms, self.weights[k])


# -- small shared pieces ----------------------------------------------------------


def _penalty_value(lam, Lnu, mat: Material, solvers: FieldSolvers) -> float:
    """(kappa/2) ||lam - Lnu||^2 in the inverse-Laplacian inner product."""
    f = lam - Lnu
    chi = solvers.poisson.solve(f)
    vol = solvers.grid.cell_volume
    return max(-0.5 * mat.kappa_pen * vol * float(np.sum(chi * f)), 0.0)


def _reg_value(lam, mat: Material, tau: float, vol: float) -> float:
    if mat.reg_weight <= 0:
        return 0.0
    n2 = np.sum(lam * lam, axis=1)
    return mat.reg_weight * tau * vol * float(np.sum(n2**mat.q))


def _smooth_lambda_gradient(lam, Lnu, theta, mat: Material, solvers: FieldSolvers, tau):
    """Gradient of coupling + penalty + regularizer at fixed moments."""
    vol = solvers.grid.cell_volume
    chi = solvers.poisson.solve(lam - Lnu)
    dtheta = np.asarray(theta, dtype=float) - mat.theta_c
    G = vol * (dtheta[:, None] * mat.a_flat()[None, :] - mat.kappa_pen * chi)
    if mat.reg_weight > 0:
        n2 = np.sum(lam * lam, axis=1)
        G = G + (
            mat.reg_weight * tau * vol * 2.0 * mat.q * n2 ** (mat.q - 1.0)
        )[:, None] * lam
    return G


# -- flow rule ---------------------------------------------------------------------


def flowrule_residual(
    lam_prev,
    lam_new,
    Lnu,
    w_prev,
    mat: Material,
    solvers: FieldSolvers,
    tau: float,
    n_directions: int = 64,
    seed: int = 0,
    directions=None,
) -> float:
    """Worst normalized violation of the discrete flow-rule inequality.

    For every test rate v the accepted update must satisfy

        <G, v - rate> + int zeta(v) - int zeta(rate) >= 0,

    with G the gradient of the smooth (coupling + penalty + regularizer) part
    at the accepted state and rate = (lam_new - lam_prev)/tau. Each residual
    is normalized by the size of its own terms; the minimum over the test
    family is returned (0 exactly at v = rate).
    """
    lam_prev = np.asarray(lam_prev, dtype=float)
    lam_new = np.asarray(lam_new, dtype=float)
    rate = (lam_new - lam_prev) / tau
    theta = theta_of_enthalpy(np.asarray(w_prev, dtype=float), mat)
    G = _smooth_lambda_gradient(lam_new, Lnu, theta, mat, solvers, tau)
    vol = solvers.grid.cell_volume
    zeta_rate = vol * float(np.sum(dissipation_potential(rate, mat)))

    if directions is None:
        rng = np.random.default_rng(seed)
        scale_dir = 1.0 + float(np.max(np.abs(rate)))
        directions = list(
            rng.standard_normal((n_directions,) + rate.shape) * scale_dir
        )
        directions += [np.zeros_like(rate), rate, 2.0 * rate, 0.5 * rate, -rate]

    worst = np.inf
    for v in directions:
        lin = float(np.sum(G * (v - rate)))
        zeta_v = vol * float(np.sum(dissipation_potential(v, mat)))
        res = lin + zeta_v - zeta_rate
        norm = 1.0 + abs(lin) + abs(zeta_v) + abs(zeta_rate)
        worst = min(worst, res / norm)
    return float(worst)


# -- energy balance ----------------------------------------------------------------


@dataclass
class EnergyBalanceReport:
    """Energy bookkeeping per step; arrays indexed like the trajectory.

    ``slack_cum`` (minimality form, threshold dissipation) and
    ``flow_slack`` (per-step form, full heat-production weight) are the two
    guaranteed non-negative quantities; ``slack_cum_xi`` is the literal
    cumulative balance with the full viscous weight, reported for monitoring.
    ``min_slack`` is the audited worst value, already normalized by ``scale``.
    """

    t: np.ndarray
    gibbs: np.ndarray
    reg: np.ndarray
    work_field: np.ndarray
    work_coupling: np.ndarray
    diss_zeta: np.ndarray
    diss_xi: np.ndarray
    flow_slack: np.ndarray
    slack_cum: np.ndarray
    slack_cum_xi: np.ndarray
    scale: float

    @property
    def min_slack(self) -> float:
        worst = min(float(np.min(self.slack_cum)), float(np.min(self.flow_slack)))
        return worst / self.scale


def energy_balance_report(traj: Trajectory, solvers: FieldSolvers) -> EnergyBalanceReport:
    """Audit the discrete energy inequality along a stored trajectory.

    Work terms: field work sums -(h_l - h_{l-1}) . m^{l-1} (the left Riemann
    sum of -hdot . m with right-continuous slopes), coupling work sums
    -(theta_used_l - theta_c) a . (lam_l - lam_{l-1}). Both enter the stored
    side together with the regularizer difference. See the class docstring
    for which slacks are guaranteed.
    """
    K = traj.nsteps
    mat, tau = traj.mat, traj.tau
    vol = traj.grid.cell_volume
    a0 = mat.a0

    gibbs = np.zeros(K + 1)
    reg = np.zeros(K + 1)
    work_field = np.zeros(K + 1)
    work_coupling = np.zeros(K + 1)
    diss_zeta = np.zeros(K + 1)
    diss_xi = np.zeros(K + 1)
    flow_slack = np.zeros(K + 1)

    ev_prev = None
    pen_prev_lam = 0.0  # penalty(nu_l, lam_{l-1}), refreshed each step
    for k in range(K + 1):
        nu = traj.measure(k)
        ev = gibbs_energy(
            nu, traj.lam[k], traj.theta_used[k], traj.h[k], mat, solvers
        )
        gibbs[k] = ev.magnetic
        reg[k] = _reg_value(traj.lam[k], mat, tau, vol)
        if k > 0:
            dlam = traj.lam[k] - traj.lam[k - 1]
            rate = dlam / tau
            work_field[k] = -vol * float(
                np.sum((traj.h[k] - traj.h[k - 1]) * ev_prev.m)
            )
            work_coupling[k] = -vol * float(
                np.sum((traj.theta_used[k] - mat.theta_c) * a0 * dlam[:, -1])
            )
            diss_zeta[k] = tau * vol * float(np.sum(dissipation_potential(rate, mat)))
            diss_xi[k] = tau * vol * float(np.sum(dissipation_rate(rate, mat)))
            pen_prev_lam = _penalty_value(
                traj.lam[k - 1], nu.moments().Lnu, mat, solvers
            )
            flow_slack[k] = (
                work_coupling[k]
                + (pen_prev_lam - ev.penalty)
                + (reg[k - 1] - reg[k])
                - diss_xi[k]
            )
        ev_prev = ev

    stored_zeta = gibbs + reg + np.cumsum(diss_zeta)
    stored_xi = gibbs + reg + np.cumsum(diss_xi)
    supplied = gibbs[0] + reg[0] + np.cumsum(work_field + work_coupling)
    slack_cum = supplied - stored_zeta
    slack_cum_xi = supplied - stored_xi

    scale = (
        1.0
        + float(np.max(np.abs(gibbs)))
        + float(np.sum(np.abs(work_field)))
        + float(np.sum(np.abs(work_coupling)))
        + float(np.sum(diss_xi))
        + float(np.max(reg))
    )
    return EnergyBalanceReport(
        t=np.asarray(traj.t, dtype=float),
        gibbs=gibbs,
        reg=reg,
        work_field=work_field,
        work_coupling=work_coupling,
        diss_zeta=diss_zeta,
        diss_xi=diss_xi,
        flow_slack=flow_slack,
        slack_cum=slack_cum,
        slack_cum_xi=slack_cum_xi,
        scale=scale,
    )


# -- a-priori monitors -------------------------------------------------------------


def _grad_r_integral(w, grid: Grid, r: float) -> float:
    """int |grad w|^r by central differences on the cell-centered grid."""
    w2 = np.asarray(w, dtype=float).reshape(grid.extents)
    comps = []
    for a in range(grid.dim):
        if grid.extents[a] == 1:
            comps.append(np.zeros_like(w2))
        else:
            comps.append(np.gradient(w2, grid.spacing[a], axis=a))
    mag = np.sqrt(sum(c * c for c in comps))
    return grid.cell_volume * float(np.sum(mag**r))


@dataclass
class AprioriMonitors:
    """The boundedness monitors; each must stay tame under tau refinement."""

    t: np.ndarray
    p_moment: np.ndarray  # int of the p-th atom moment, per step
    rate_q_step: np.ndarray  # tau * int |rate|^q, per step (0 at step 0)
    w_l1: np.ndarray
    grad_w_r_step: np.ndarray  # tau * int |grad w|^r, per step (0 at step 0)
    penalty: np.ndarray
    exponent_r: float
    exponent_q: float

    @property
    def sup_p_moment(self) -> float:
        return float(np.max(self.p_moment))

    @property
    def rate_lq(self) -> float:
        """The L^q norm of the rate over space-time."""
        return float(np.sum(self.rate_q_step)) ** (1.0 / self.exponent_q)

    @property
    def w_l1_max(self) -> float:
        return float(np.max(self.w_l1))

    @property
    def grad_w_lr(self) -> float:
        return float(np.sum(self.grad_w_r_step)) ** (1.0 / self.exponent_r)

    @property
    def penalty_max(self) -> float:
        return float(np.max(self.penalty))

    def summary(self) -> dict[str, float]:
        return {
            "sup_p_moment": self.sup_p_moment,
            "rate_lq": self.rate_lq,
            "w_l1_max": self.w_l1_max,
            "grad_w_lr": self.grad_w_lr,
            "penalty_max": self.penalty_max,
        }


def apriori_monitors(traj: Trajectory, solvers: FieldSolvers) -> AprioriMonitors:
    """Per-step values of the boundedness monitors (see class docstring)."""
    K = traj.nsteps
    mat, tau = traj.mat, traj.tau
    grid = traj.grid
    vol = grid.cell_volume
    r = (grid.dim + 2.0) / (grid.dim + 1.0) - 0.1

    p_moment = np.zeros(K + 1)
    rate_q = np.zeros(K + 1)
    w_l1 = np.zeros(K + 1)
    grad_w_r = np.zeros(K + 1)
    penalty = np.zeros(K + 1)
    for k in range(K + 1):
        nu = traj.measure(k)
        p_moment[k] = vol * float(np.sum(nu.pth_moment(mat.p)))
        w_l1[k] = vol * float(np.sum(np.abs(traj.w[k])))
        penalty[k] = _penalty_value(traj.lam[k], nu.moments().Lnu, mat, solvers)
        if k > 0:
            rate = (traj.lam[k] - traj.lam[k - 1]) / tau
            rate_q[k] = tau * vol * float(
                np.sum(np.linalg.norm(rate, axis=1) ** mat.q)
            )
            grad_w_r[k] = tau * _grad_r_integral(traj.w[k], grid, r)

    return AprioriMonitors(
        t=np.asarray(traj.t, dtype=float),
        p_moment=p_moment,
        rate_q_step=rate_q,
        w_l1=w_l1,
        grad_w_r_step=grad_w_r,
        penalty=penalty,
        exponent_r=r,
        exponent_q=float(mat.q),
    )


# -- variant checks: semistability and variation ------------------------------------


def semistability_residual(
    nu: AtomicYoungMeasure,
    lam,
    w,
    h,
    mat: Material,
    solvers: FieldSolvers,
    tau: float,
    pairs=None,
    n_random: int = 8,
    seed: int = 0,
) -> float:
    """Worst normalized semistability margin of a state against competitors.

    A competitor keeps the viscous (projected) component of the internal
    variable and replaces the complement: lam_c = A lam + lam_tilde with
    A lam_tilde = 0, at any weights. The margin

        [Gibbs + reg](competitor) + int delta*_{S1}((I-A)(lam_c - lam))
            - [Gibbs + reg](state)

    must be >= 0 at every accepted step: the incremental minimality plus the
    triangle inequality for the threshold term guarantee it. The regularizer
    rides along because it is part of the incremental functional (it cancels
    exactly for the trivial pair). Returns the minimum over pairs of the
    margin normalized by the size of its own terms.
    """
    lam = np.asarray(lam, dtype=float)
    theta = theta_of_enthalpy(np.asarray(w, dtype=float), mat)
    vol = solvers.grid.cell_volume
    lam_a, lam_perp = _split(lam, mat)
    if lam_perp is None:
        lam_a, lam_perp = np.zeros_like(lam), lam

    base = gibbs_energy(nu, lam, theta, h, mat, solvers).total + _reg_value(
        lam, mat, tau, vol
    )

    if pairs is None:
        rng = np.random.default_rng(seed)
        rho1 = mat.split_radii()[0]
        K = nu.weights.shape[1]
        weight_sets = [
            nu.weights,
            np.full_like(nu.weights, 1.0 / K),
        ]
        onehot = np.zeros_like(nu.weights)
        onehot[np.arange(nu.weights.shape[0]), rng.integers(0, K, nu.weights.shape[0])] = 1.0
        weight_sets.append(onehot)
        tilde_sets = [lam_perp, np.zeros_like(lam)]
        for scale in (rho1, 0.1 * rho1 + 0.01):
            for _ in range(n_random):
                d = rng.standard_normal(lam.shape) * scale
                _, d_perp = _split(d, mat)
                tilde_sets.append(lam_perp + (d if d_perp is None else d_perp))
        pairs = [(wts, lt) for wts in weight_sets for lt in tilde_sets]

    worst = np.inf
    for wts, lam_tilde in pairs:
        lam_c = lam_a + lam_tilde
        comp = gibbs_energy(
            nu.with_weights(wts), lam_c, theta, h, mat, solvers
        ).total + _reg_value(lam_c, mat, tau, vol)
        hop = vol * float(np.sum(support_S1_perp(lam_c - lam, mat)))
        margin = comp + hop - base
        norm = 1.0 + abs(comp) + abs(hop) + abs(base)
        worst = min(worst, margin / norm)
    return float(worst)


def variation_measure(lams, mat: Material, grid: Grid, interval=None) -> float:
    """Rate-independent variation over a step interval (inclusive indices).

    Sums int delta*_{S1}((I-A)(lam_k - lam_{k-1})) over k in the interval;
    additive over a partition of the interval by construction.
    """
    lams = [np.asarray(l, dtype=float) for l in lams]
    k0, k1 = (0, len(lams) - 1) if interval is None else interval
    if not 0 <= k0 <= k1 <= len(lams) - 1:
        raise ValueError(f"bad interval {interval} for {len(lams)} stored states")
    vol = grid.cell_volume
    total = 0.0
    for k in range(k0 + 1, k1 + 1):
        total += vol * float(np.sum(support_S1_perp(lams[k] - lams[k - 1], mat)))
    return total


# -- assembled report ---------------------------------------------------------------


_TOL_DEFAULTS = {
    "flow": -1e-7,
    "energy": -1e-6,  # times the balance scale
    "semistability": -1e-6,
    "jensen": -1e-12,
    "simplex": 1e-12,
}


@dataclass
class AuditReport:
    """Everything audited about one run, serializable as delimited text."""

    columns: dict[str, np.ndarray]
    energy: EnergyBalanceReport
    monitors: AprioriMonitors
    variation: float
    tolerances: dict[str, float]
    failures: list[str]

    @property
    def passed(self) -> bool:
        return not self.failures

    def to_text(self) -> str:
        names = list(self.columns)
        lines = [
            "# audit report: one row per stored step; step-indexed quantities",
            "# (work, dissipation, slacks, residuals) are 0 at step 0",
            "# passed: %s" % ("yes" if self.passed else "no"),
        ]
        for msg in self.failures:
            lines.append("# failure: " + msg)
        lines.append(
            "# variation_measure: %.17g" % self.variation
        )
        lines.append("# balance_scale: %.17g" % self.energy.scale)
        lines.append("\t".join(names))
        n = len(self.columns[names[0]])
        for i in range(n):
            lines.append(
                "\t".join("%.17g" % float(self.columns[c][i]) for c in names)
            )
        return "\n".join(lines) + "\n"


def run_audit(
    traj: Trajectory,
    solvers: FieldSolvers,
    n_directions: int = 64,
    seed: int = 0,
    tolerances: dict[str, float] | None = None,
) -> AuditReport:
    """Full audit of a stored trajectory; collects failures, never raises."""
    tol = dict(_TOL_DEFAULTS)
    if tolerances:
        tol.update(tolerances)
    K = traj.nsteps
    mat = traj.mat
    vol = traj.grid.cell_volume

    balance = energy_balance_report(traj, solvers)
    monitors = apriori_monitors(traj, solvers)

    flow = np.zeros(K + 1)
    jensen = np.zeros(K + 1)
    simplex = np.zeros(K + 1)
    semistab = np.zeros(K + 1)
    heat_content = np.zeros(K + 1)
    check_semi = mat.projector() is not None
    for k in range(K + 1):
        nu = traj.measure(k)
        jensen[k] = float(np.min(nu.moments().jensen_gap()))
        simplex[k] = max(nu.max_simplex_defect(), -float(np.min(nu.weights)))
        heat_content[k] = vol * float(np.sum(traj.w[k]))
        if k > 0:
            flow[k] = flowrule_residual(
                traj.lam[k - 1],
                traj.lam[k],
                nu.moments().Lnu,
                traj.w[k - 1],
                mat,
                solvers,
                traj.tau,
                n_directions=n_directions,
                seed=seed,
            )
            if check_semi:
                semistab[k] = semistability_residual(
                    nu,
                    traj.lam[k],
                    traj.w[k - 1],
                    traj.h[k],
                    mat,
                    solvers,
                    traj.tau,
                    seed=seed,
                )

    failures: list[str] = []
    if K > 0:
        worst_flow = float(np.min(flow[1:]))
        if worst_flow < tol["flow"]:
            failures.append(f"flow-rule residual {worst_flow:.3e} < {tol['flow']:.1e}")
        if balance.min_slack < tol["energy"]:
            failures.append(
                f"energy slack {balance.min_slack:.3e} of scale < {tol['energy']:.1e}"
            )
        if check_semi:
            worst_semi = float(np.min(semistab[1:]))
            if worst_semi < tol["semistability"]:
                failures.append(
                    f"semistability margin {worst_semi:.3e} < {tol['semistability']:.1e}"
                )
    worst_jensen = float(np.min(jensen))
    if worst_jensen < tol["jensen"]:
        failures.append(f"Jensen gap {worst_jensen:.3e} < {tol['jensen']:.1e}")
    worst_simplex = float(np.max(simplex))
    if worst_simplex > tol["simplex"]:
        failures.append(f"simplex defect {worst_simplex:.3e} > {tol['simplex']:.1e}")
    for name, arr in (("flow", flow), ("energy gibbs", balance.gibbs)):
        if not np.all(np.isfinite(arr)):
            failures.append(f"non-finite values in {name}")

    columns = {
        "t": np.asarray(traj.t, dtype=float),
        "gibbs": balance.gibbs,
        "reg": balance.reg,
        "work_field": balance.work_field,
        "work_coupling": balance.work_coupling,
        "diss_zeta": balance.diss_zeta,
        "diss_xi": balance.diss_xi,
        "flow_slack": balance.flow_slack,
        "slack_cum": balance.slack_cum,
        "slack_cum_xi": balance.slack_cum_xi,
        "flow_residual": flow,
        "semistab_margin": semistab,
        "jensen_min": jensen,
        "simplex_defect": simplex,
        "heat_content": heat_content,
        "boundary_flux": np.asarray(traj.flux, dtype=float),
        "p_moment": monitors.p_moment,
        "rate_q_step": monitors.rate_q_step,
        "w_l1": monitors.w_l1,
        "grad_w_r_step": monitors.grad_w_r_step,
        "penalty": monitors.penalty,
    }
    return AuditReport(
        columns=columns,
        energy=balance,
        monitors=monitors,
        variation=variation_measure(traj.lam, mat, traj.grid),
        tolerances=tol,
        failures=failures,
    )
