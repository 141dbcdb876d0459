"""Scenario runner: evolution, static solves, sweeps, hysteresis, refinement.

Each subcommand loads a TOML run file (see config), executes its scenario and
writes delimited text tables plus plain-text field snapshots into the output
directory. Every evolutionary run ends with the full audit; the exit code is
0 when all audited inequalities hold, 1 on audit failure, 2 on configuration
or solver errors. All output is deterministic for a fixed config and seed.
"""

from __future__ import annotations

import argparse
import dataclasses
import os
import sys

import numpy as np

from .audit import Trajectory, apriori_monitors, run_audit, variation_measure
from .config import ConfigError, RunConfig, load_config
from .core import sample_schedule
from .energy import (
    FieldSolvers,
    conductivity,
    conductivity_state_dependent,
    dissipation_potential,
    dissipation_rate,
    enthalpy_of_theta,
    gibbs_energy,
    theta_of_enthalpy,
)
from .heat import HeatStepProblem, heat_step
from .increment import IncrementProblem, incremental_solve, static_solve
from .measure import atom_dictionary, uniform_dictionary_measure

__all__ = [
    "main",
    "run_evolve",
    "run_static",
    "run_kappa_sweep",
    "run_tau_study",
    "run_hysteresis",
    "run_curie_sweep",
]

_FMT = "%.17g"


# -- output helpers ------------------------------------------------------------------


def _write_table(path: str, header: list[str], rows: list[list[float]]) -> None:
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_FMT % float(x) for x in row) + "\n")


def _write_snapshot(path: str, name: str, t: float, grid, values: np.ndarray) -> None:
    arr = np.asarray(values, dtype=float)
    if arr.ndim == 1:
        arr = arr[:, None]
    with open(path, "w") as fh:
        fh.write(f"# field: {name}\n")
        fh.write("# t: " + _FMT % t + "\n")
        fh.write("# extents: " + " ".join(str(e) for e in grid.extents) + "\n")
        fh.write(f"# components: {arr.shape[1]}\n")
        for row in arr:
            fh.write(" ".join(_FMT % x for x in row) + "\n")


def _snapshot_state(out: str, grid, mat, k: int, t: float, nu, lam, w) -> None:
    mom = nu.moments()
    for name, vals in (
        ("m", mom.m),
        ("lam", lam),
        ("w", w),
        ("theta", np.asarray(theta_of_enthalpy(w, mat))),
    ):
        _write_snapshot(
            os.path.join(out, f"snap_{name}_{k:05d}.txt"), name, t, grid, vals
        )


# -- shared scenario pieces -----------------------------------------------------------


def _solvers(cfg: RunConfig) -> FieldSolvers:
    return FieldSolvers(
        cfg.grid,
        cfg.mat,
        magnetostatics=bool(cfg.run["magnetostatics"]),
        pad_factor=int(cfg.run["pad_factor"]),
    )


def _kappa_fn(cfg: RunConfig):
    return conductivity if cfg.run["conductivity"] == "constant" else conductivity_state_dependent


def _initial_state(cfg: RunConfig, solvers: FieldSolvers):
    """nu0 (uniform or static minimizer), compatible lam0 = L.nu0, w0 at t=0.

    The internal variable starts compatible with the measure (zero penalty);
    the static solver's own lam carries wall-concentrated H^-1 boundary
    layers that are not meaningful pointwise initial data for the flow.
    """
    grid, mat = cfg.grid, cfg.mat
    atoms = atom_dictionary(grid.dim, mat.r_max)
    nu0 = uniform_dictionary_measure(grid, atoms)
    h0 = sample_schedule(cfg.schedule, 0.0)[0]
    if cfg.nu0_mode == "static":
        nu0 = static_solve(nu0, mat, h0, cfg.theta0, solvers=solvers).nu
    lam0 = nu0.moments().Lnu
    w0 = np.asarray(enthalpy_of_theta(np.full(grid.ncells, cfg.theta0), mat))
    return nu0, lam0, w0, h0


def _evolve_trajectory(cfg: RunConfig, solvers: FieldSolvers, schedule=None):
    """March the coupled scheme over the schedule; returns (traj, series rows)."""
    if schedule is not None:
        cfg = dataclasses.replace(cfg, schedule=schedule)
    sched = cfg.schedule
    grid, mat = cfg.grid, cfg.mat
    tau = sched.tau
    vol = grid.cell_volume
    isothermal = bool(cfg.run["isothermal"])
    kfn = _kappa_fn(cfg)

    nu, lam, w, h0 = _initial_state(cfg, solvers)
    traj = Trajectory(grid=grid, atoms=nu.atoms, mat=mat, tau=tau)
    traj.begin(nu, lam, w, h0)

    rows = []
    d = grid.dim
    ev0 = gibbs_energy(nu, lam, theta_of_enthalpy(w, mat), traj.h[0], mat, solvers)
    mom0 = nu.moments()
    rows.append(
        [0.0]
        + [float(x) for x in np.mean(traj.h[0], axis=0)]
        + [float(x) for x in np.mean(mom0.m, axis=0)]
        + [
            float(np.mean(theta_of_enthalpy(w, mat))),
            vol * float(np.sum(w)),
            ev0.total,
            ev0.penalty,
            0.0,
            0.0,
            0.0,
        ]
    )
    for k in range(1, sched.n_steps + 1):
        prob = IncrementProblem(
            tau=tau, k=k, nu_prev=nu, lam_prev=lam, w_prev=w,
            mat=mat, schedule=sched, solvers=solvers,
        )
        sol = incremental_solve(prob)
        t = k * tau
        theta_ext = sample_schedule(sched, t)[2]
        if isothermal:
            w_new, flux = w, 0.0
        else:
            hres = heat_step(
                HeatStepProblem(
                    grid=grid, tau=tau, w_prev=w, lam_new=sol.lam, lam_prev=lam,
                    mat=mat, b_coeff=sched.b_coeff, theta_ext=float(theta_ext),
                    kappa_fn=kfn,
                )
            )
            w_new, flux = hres.w, hres.flux
        rate = (sol.lam - lam) / tau
        step_zeta = tau * vol * float(np.sum(dissipation_potential(rate, mat)))
        step_xi = tau * vol * float(np.sum(dissipation_rate(rate, mat)))
        traj.append(t, prob.h_now, sol.nu.weights, sol.lam, w_new, prob.theta_prev, flux)
        ev = gibbs_energy(sol.nu, sol.lam, prob.theta_prev, traj.h[k], mat, solvers)
        mom = sol.nu.moments()
        rows.append(
            [t]
            + [float(x) for x in np.mean(traj.h[k], axis=0)]
            + [float(x) for x in np.mean(mom.m, axis=0)]
            + [
                float(np.mean(theta_of_enthalpy(w_new, mat))),
                vol * float(np.sum(w_new)),
                ev.total,
                ev.penalty,
                step_zeta,
                step_xi,
                flux,
            ]
        )
        nu, lam, w = sol.nu, sol.lam, w_new
    header = (
        ["t"]
        + [f"h_{a}" for a in range(d)]
        + [f"m_{a}" for a in range(d)]
        + ["theta_mean", "w_total", "gibbs", "penalty", "step_zeta", "step_xi", "flux"]
    )
    return traj, header, rows


def _finish_audit(traj, solvers, cfg: RunConfig, out: str) -> int:
    report = run_audit(traj, solvers, seed=int(cfg.run["seed"]))
    with open(os.path.join(out, "audit.txt"), "w") as fh:
        fh.write(report.to_text())
    return 0 if report.passed else 1


# -- scenarios ------------------------------------------------------------------------


def run_evolve(cfg: RunConfig, out: str) -> int:
    solvers = _solvers(cfg)
    traj, header, rows = _evolve_trajectory(cfg, solvers)
    _write_table(os.path.join(out, "series.csv"), header, rows)
    every = int(cfg.run["snapshot_every"])
    for k in range(traj.nsteps + 1):
        if k == traj.nsteps or (every > 0 and k % every == 0):
            _snapshot_state(
                out, cfg.grid, cfg.mat, k, traj.t[k], traj.measure(k), traj.lam[k], traj.w[k]
            )
    return _finish_audit(traj, solvers, cfg, out)


def run_static(cfg: RunConfig, out: str) -> int:
    solvers = _solvers(cfg)
    nu0 = uniform_dictionary_measure(cfg.grid, atom_dictionary(cfg.grid.dim, cfg.mat.r_max))
    h0 = sample_schedule(cfg.schedule, 0.0)[0]
    stat = static_solve(nu0, cfg.mat, h0, cfg.theta0, solvers=solvers)
    w0 = np.asarray(enthalpy_of_theta(np.full(cfg.grid.ncells, cfg.theta0), cfg.mat))
    _snapshot_state(out, cfg.grid, cfg.mat, 0, 0.0, stat.nu, stat.lam, w0)
    mom = stat.nu.moments()
    _write_table(
        os.path.join(out, "static.csv"),
        ["objective", "constraint_gap", "nu_gap"]
        + [f"m_{a}" for a in range(cfg.grid.dim)],
        [
            [stat.objective, stat.constraint_gap, stat.nu_gap]
            + [float(x) for x in np.mean(mom.m, axis=0)]
        ],
    )
    traj = Trajectory(grid=cfg.grid, atoms=stat.nu.atoms, mat=cfg.mat, tau=cfg.schedule.tau)
    traj.begin(stat.nu, stat.lam, w0, h0)
    if stat.warnings:
        print("static solve warnings: " + "; ".join(stat.warnings), file=sys.stderr)
        return 2
    return _finish_audit(traj, solvers, cfg, out)


def run_kappa_sweep(cfg: RunConfig, out: str) -> int:
    opts = cfg.modes["kappa_sweep"]
    solvers = _solvers(cfg)
    nu0 = uniform_dictionary_measure(cfg.grid, atom_dictionary(cfg.grid.dim, cfg.mat.r_max))
    h0 = sample_schedule(cfg.schedule, 0.0)[0]
    rows = []
    gaps = []
    for i in range(int(opts["count"])):
        kappa = float(opts["base"]) * float(opts["factor"]) ** i
        stat = static_solve(nu0, cfg.mat, h0, cfg.theta0, solvers=solvers, kappa=kappa)
        mom = stat.nu.moments()
        gaps.append(stat.constraint_gap)
        rows.append(
            [kappa, stat.constraint_gap, kappa * stat.constraint_gap**2, stat.objective]
            + [float(x) for x in np.mean(mom.m, axis=0)]
        )
    _write_table(
        os.path.join(out, "kappa_sweep.csv"),
        ["kappa", "gap", "kappa_gap2", "objective"]
        + [f"m_{a}" for a in range(cfg.grid.dim)],
        rows,
    )
    ok = all(g2 <= g1 * (1.0 + 1e-6) for g1, g2 in zip(gaps, gaps[1:]))
    return 0 if ok else 1


def run_hysteresis(cfg: RunConfig, out: str) -> int:
    opts = cfg.modes["hysteresis"]
    tau = cfg.schedule.tau
    n_per = int(opts["steps_per_period"])
    periods = int(opts["periods"])
    if periods < 2:
        raise ConfigError("[hysteresis] needs periods >= 2 (first one is transient)")
    if n_per % 4 != 0:
        raise ConfigError("[hysteresis] steps_per_period must be divisible by 4")
    axis = int(opts["axis"])
    h_max = float(opts["h_max"])
    d = cfg.grid.dim
    if not 0 <= axis < d:
        raise ConfigError(f"[hysteresis] axis must lie in [0, {d})")
    P = n_per * tau

    def vec(x):
        v = [0.0] * d
        v[axis] = x
        return tuple(v)

    keys = []
    for p in range(periods):
        keys += [
            (p * P, vec(0.0)),
            (p * P + 0.25 * P, vec(h_max)),
            (p * P + 0.75 * P, vec(-h_max)),
        ]
    keys.append((periods * P, vec(0.0)))
    sched = dataclasses.replace(
        cfg.schedule, T_end=periods * P, h_keyframes=tuple(keys), b_coeff=0.0
    )
    iso_cfg = dataclasses.replace(cfg, run={**cfg.run, "isothermal": True})

    solvers = _solvers(cfg)
    traj, header, rows = _evolve_trajectory(iso_cfg, solvers, schedule=sched)
    _write_table(os.path.join(out, "series.csv"), header, rows)

    # second period, inclusive endpoints k in [n_per, 2 n_per]
    k0, k1 = n_per, 2 * n_per
    hcol, mcol = 1 + axis, 1 + d + axis
    hs = [rows[k][hcol] for k in range(k0, k1 + 1)]
    ms = [rows[k][mcol] for k in range(k0, k1 + 1)]
    area = abs(
        sum(
            0.5 * (ms[j] + ms[j + 1]) * (hs[j + 1] - hs[j])
            for j in range(len(hs) - 1)
        )
    )
    zeta_window = sum(rows[k][-3] for k in range(k0 + 1, k1 + 1))
    variation = variation_measure(traj.lam, cfg.mat, cfg.grid, interval=(k0, k1))
    vol = cfg.grid.cell_volume
    rho = float(np.max(cfg.mat.rho_vector()))
    path = vol * sum(
        float(np.sum(np.linalg.norm(traj.lam[k] - traj.lam[k - 1], axis=1)))
        for k in range(k0 + 1, k1 + 1)
    )
    _write_table(
        os.path.join(out, "loop.csv"),
        ["loop_area", "diss_zeta_period", "variation_period", "rho_pathlength"],
        [[area, zeta_window, variation, rho * path]],
    )
    return _finish_audit(traj, solvers, cfg, out)


def run_tau_study(cfg: RunConfig, out: str) -> int:
    levels = int(cfg.modes["tau_study"]["halvings"]) + 1
    solvers = _solvers(cfg)
    base = cfg.schedule
    n0 = base.n_steps
    vol = cfg.grid.cell_volume
    trajs = []
    for lvl in range(levels):
        sched = dataclasses.replace(base, tau=base.tau / 2**lvl)
        traj, _, _ = _evolve_trajectory(cfg, solvers, schedule=sched)
        trajs.append(traj)

    rows = []
    mon_rows = []
    for lvl, traj in enumerate(trajs):
        mons = apriori_monitors(traj, solvers).summary()
        if lvl == 0:
            mon_names = list(mons)
        mon_rows.append([mons[name] for name in mon_names])
        if lvl == 0:
            rows.append([lvl, traj.tau, 0.0, 0.0, 0.0])
            continue
        prev = trajs[lvl - 1]
        stride_prev, stride = 2 ** (lvl - 1), 2**lvl
        d_lam = d_w = d_m = 0.0
        for k in range(n0 + 1):
            la, lb = prev.lam[k * stride_prev], traj.lam[k * stride]
            wa, wb = prev.w[k * stride_prev], traj.w[k * stride]
            ma = np.mean(prev.measure(k * stride_prev).moments().m, axis=0)
            mb = np.mean(traj.measure(k * stride).moments().m, axis=0)
            d_lam = max(d_lam, float(np.sqrt(vol * np.sum((la - lb) ** 2))))
            d_w = max(d_w, vol * float(np.sum(np.abs(wa - wb))))
            d_m = max(d_m, float(np.linalg.norm(ma - mb)))
        rows.append([lvl, traj.tau, d_lam, d_w, d_m])
    _write_table(
        os.path.join(out, "tau_study.csv"),
        ["level", "tau", "dist_lambda", "dist_w", "dist_m"],
        rows,
    )
    _write_table(
        os.path.join(out, "tau_monitors.csv"),
        ["level"] + mon_names,
        [[lvl] + mon_rows[lvl] for lvl in range(levels)],
    )
    return _finish_audit(trajs[-1], solvers, cfg, out)


def run_curie_sweep(cfg: RunConfig, out: str) -> int:
    opts = cfg.modes["curie_sweep"]
    solvers = _solvers(cfg)
    nu0 = uniform_dictionary_measure(cfg.grid, atom_dictionary(cfg.grid.dim, cfg.mat.r_max))
    d = cfg.grid.dim
    h = np.zeros(d)
    h[0] = float(opts["h"])
    thetas = np.linspace(float(opts["theta_min"]), float(opts["theta_max"]), int(opts["count"]))
    rows = []
    for theta in thetas:
        stat = static_solve(nu0, cfg.mat, h, float(theta), solvers=solvers)
        mom = stat.nu.moments()
        mean_abs = float(np.mean(np.linalg.norm(mom.m, axis=1)))
        rows.append(
            [float(theta), mean_abs, stat.objective, stat.constraint_gap]
            + [float(x) for x in np.mean(mom.m, axis=0)]
        )
    _write_table(
        os.path.join(out, "curie_sweep.csv"),
        ["theta", "mean_abs_m", "objective", "gap"] + [f"m_{a}" for a in range(d)],
        rows,
    )
    return 0


# -- entry point ----------------------------------------------------------------------

_RUNNERS = {
    "evolve": run_evolve,
    "static": run_static,
    "kappa_sweep": run_kappa_sweep,
    "tau_study": run_tau_study,
    "hysteresis": run_hysteresis,
    "curie_sweep": run_curie_sweep,
}


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="mesomag",
        description="thermo-magnetic evolution scenarios on desk-scale grids",
    )
    sub = parser.add_subparsers(dest="mode", required=True)
    for name in _RUNNERS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="TOML run file")
        p.add_argument("--out", default="out", help="output directory")
        p.add_argument("--seed", type=int, default=None, help="audit seed override")
        p.add_argument("--tau", type=float, default=None, help="time step override")
        p.add_argument("--kappa", type=float, default=None, help="penalty weight override")
        p.add_argument("--steps", type=int, default=None, help="step count override")
    args = parser.parse_args(argv)

    try:
        cfg = load_config(
            args.config,
            overrides={
                "tau": args.tau,
                "kappa": args.kappa,
                "steps": args.steps,
                "seed": args.seed,
            },
        )
        os.makedirs(args.out, exist_ok=True)
        return _RUNNERS[args.mode](cfg, args.out)
    except ConfigError as bad:
        print(f"config error: {bad}", file=sys.stderr)
        return 2
    except (RuntimeError, ValueError, OSError) as bad:
        print(f"run failed: {bad}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
