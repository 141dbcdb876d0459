"""Run configuration: TOML schema, validation, construction of model objects.

A run file is TOML with the sections below; unknown keys are rejected so
typos fail loudly. All quantities are nondimensional.

::

    [grid]
    extents = [64]            # cells per axis (1 or 2 axes)
    spacing = [0.015625]      # cell size per axis

    [material]                # any Material field; dim is set by the grid
    theta_c = 1.0
    rho_S = 0.1
    kappa_pen = 10.0
    easy_axis = 0             # coordinate axis of the uniaxial easy direction
    projector = "thermal"     # optional: diag(0, ..., 0, 1) variant

    [schedule]
    T_end = 1.0
    tau = 0.02
    h = [[0.0, [0.0]], [1.0, [1.5]]]   # [time, vector] keyframes
    theta_ext = [[0.0, 0.5]]           # [time, value] keyframes
    b_coeff = 0.0

    [initial]
    theta = 0.5               # uniform initial temperature
    nu = "static"             # "static" (minimize at t=0) or "uniform"

    [run]
    magnetostatics = true
    pad_factor = 4
    conductivity = "constant" # or "state"
    isothermal = false        # skip the heat step, freeze w
    snapshot_every = 0        # 0: final state only
    seed = 0

    [kappa_sweep]             # mode sections, all optional with defaults
    base = 1.0
    factor = 4.0
    count = 8

    [hysteresis]
    h_max = 1.5
    periods = 2
    steps_per_period = 80
    axis = 0

    [tau_study]
    halvings = 4

    [curie_sweep]
    theta_min = 0.2
    theta_max = 2.0
    count = 10
    h = 0.0
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Any

import numpy as np

try:
    import tomllib as tomli
except ModuleNotFoundError:
    import tomli

from .core import Grid, Material, Schedule, validate_material

__all__ = ["ConfigError", "RunConfig", "load_config"]


class ConfigError(Exception):
    """Malformed or inconsistent run configuration."""


_MATERIAL_KEYS = {
    f.name for f in dataclasses.fields(Material) if f.name != "easy_axes"
}
_RUN_DEFAULTS = {
    "magnetostatics": True,
    "pad_factor": 4,
    "conductivity": "constant",
    "isothermal": False,
    "snapshot_every": 0,
    "seed": 0,
}
_MODE_DEFAULTS = {
    "kappa_sweep": {"base": 1.0, "factor": 4.0, "count": 8},
    "hysteresis": {"h_max": 1.5, "periods": 2, "steps_per_period": 80, "axis": 0},
    "tau_study": {"halvings": 4},
    "curie_sweep": {"theta_min": 0.2, "theta_max": 2.0, "count": 10, "h": 0.0},
}
_SECTIONS = {"grid", "material", "schedule", "initial", "run"} | set(_MODE_DEFAULTS)


@dataclass
class RunConfig:
    """Validated configuration with the model objects already constructed."""

    grid: Grid
    mat: Material
    schedule: Schedule
    theta0: float
    nu0_mode: str
    run: dict[str, Any] = field(default_factory=dict)
    modes: dict[str, dict[str, Any]] = field(default_factory=dict)


def _section(data: dict, name: str, allowed: set[str] | None = None) -> dict:
    sec = data.get(name, {})
    if not isinstance(sec, dict):
        raise ConfigError(f"[{name}] must be a table")
    if allowed is not None:
        extra = set(sec) - allowed
        if extra:
            raise ConfigError(f"unknown keys in [{name}]: {sorted(extra)}")
    return sec


def _build_grid(sec: dict) -> Grid:
    try:
        extents = tuple(int(x) for x in sec["extents"])
        spacing = tuple(float(x) for x in sec["spacing"])
    except KeyError as missing:
        raise ConfigError(f"[grid] needs {missing.args[0]}") from None
    if len(extents) != len(spacing):
        raise ConfigError("[grid] extents and spacing must have the same length")
    try:
        return Grid(extents, spacing)
    except ValueError as bad:
        raise ConfigError(f"[grid] {bad}") from None


def _build_material(sec: dict, dim: int) -> Material:
    sec = dict(sec)
    try:
        axis = int(sec.pop("easy_axis", 0))
    except (TypeError, ValueError):
        raise ConfigError("[material] easy_axis must be an integer axis index") from None
    projector = sec.pop("projector", None)
    extra = set(sec) - _MATERIAL_KEYS
    if extra:
        raise ConfigError(f"unknown keys in [material]: {sorted(extra)}")
    if not 0 <= axis < dim:
        raise ConfigError(f"[material] easy_axis must lie in [0, {dim})")
    if projector is not None:
        if projector != "thermal":
            raise ConfigError("[material] projector supports only \"thermal\"")
        A = np.zeros((dim + 1, dim + 1))
        A[-1, -1] = 1.0
        sec["A_proj"] = tuple(tuple(row) for row in A)
    if "rho_S" in sec and isinstance(sec["rho_S"], list):
        sec["rho_S"] = tuple(float(x) for x in sec["rho_S"])
    try:
        mat = Material.uniaxial(dim, axis=axis, **sec)
    except (TypeError, ValueError) as bad:
        raise ConfigError(f"[material] {bad}") from None
    bad_fields = validate_material(mat)
    if bad_fields:
        raise ConfigError("[material] " + "; ".join(bad_fields))
    return mat


def _keyframes(raw, name: str, dim: int | None):
    out = []
    for item in raw:
        try:
            t, v = item
        except (TypeError, ValueError):
            raise ConfigError(f"[schedule] {name} entries must be [time, value] pairs") from None
        if dim is None:
            out.append((float(t), float(v)))
        else:
            vv = tuple(float(x) for x in np.atleast_1d(v))
            if len(vv) != dim:
                raise ConfigError(f"[schedule] {name} values must have dimension {dim}")
            out.append((float(t), vv))
    return tuple(out)


def _build_schedule(sec: dict, dim: int) -> Schedule:
    try:
        T_end = float(sec["T_end"])
        tau = float(sec["tau"])
        h_raw = sec["h"]
    except KeyError as missing:
        raise ConfigError(f"[schedule] needs {missing.args[0]}") from None
    try:
        return Schedule(
            T_end=T_end,
            tau=tau,
            h_keyframes=_keyframes(h_raw, "h", dim),
            theta_ext_keyframes=_keyframes(sec.get("theta_ext", [[0.0, 0.0]]), "theta_ext", None),
            b_coeff=float(sec.get("b_coeff", 0.0)),
        )
    except ValueError as bad:
        raise ConfigError(f"[schedule] {bad}") from None


def load_config(path: str, overrides: dict[str, Any] | None = None) -> RunConfig:
    """Parse, validate and assemble a run configuration.

    ``overrides`` may carry ``tau``, ``kappa``, ``steps``, ``seed`` from the
    command line; ``tau``/``steps`` reshape the schedule keeping T_end (steps
    wins if both are given), ``kappa`` replaces the penalty weight.
    """
    try:
        with open(path, "rb") as fh:
            data = tomli.load(fh)
    except OSError as bad:
        raise ConfigError(f"cannot read config: {bad}") from None
    except tomli.TOMLDecodeError as bad:
        raise ConfigError(f"config parse error: {bad}") from None

    unknown = set(data) - _SECTIONS
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")

    grid = _build_grid(_section(data, "grid", {"extents", "spacing"}))
    mat = _build_material(_section(data, "material"), grid.dim)
    schedule = _build_schedule(
        _section(data, "schedule", {"T_end", "tau", "h", "theta_ext", "b_coeff"}),
        grid.dim,
    )

    initial = _section(data, "initial", {"theta", "nu"})
    theta0 = float(initial.get("theta", 0.5))
    if theta0 < 0:
        raise ConfigError("[initial] theta must be >= 0")
    nu0_mode = str(initial.get("nu", "static"))
    if nu0_mode not in ("static", "uniform"):
        raise ConfigError('[initial] nu must be "static" or "uniform"')

    run = dict(_RUN_DEFAULTS)
    run.update(_section(data, "run", set(_RUN_DEFAULTS)))
    if run["conductivity"] not in ("constant", "state"):
        raise ConfigError('[run] conductivity must be "constant" or "state"')
    if int(run["pad_factor"]) < 2:
        raise ConfigError("[run] pad_factor must be >= 2")

    modes = {}
    for name, defaults in _MODE_DEFAULTS.items():
        opts = dict(defaults)
        opts.update(_section(data, name, set(defaults)))
        modes[name] = opts

    overrides = overrides or {}
    if overrides.get("kappa") is not None:
        if float(overrides["kappa"]) <= 0:
            raise ConfigError("--kappa must be > 0")
        mat = dataclasses.replace(mat, kappa_pen=float(overrides["kappa"]))
    if overrides.get("seed") is not None:
        run["seed"] = int(overrides["seed"])
    steps = overrides.get("steps")
    tau = overrides.get("tau")
    if steps is not None:
        if int(steps) < 1:
            raise ConfigError("--steps must be >= 1")
        tau = schedule.T_end / int(steps)
    if tau is not None:
        try:
            schedule = dataclasses.replace(schedule, tau=float(tau))
        except ValueError as bad:
            raise ConfigError(f"--tau: {bad}") from None

    return RunConfig(
        grid=grid,
        mat=mat,
        schedule=schedule,
        theta0=theta0,
        nu0_mode=nu0_mode,
        run=run,
        modes=modes,
    )
