"""Mesoscopic thermo-magnetic evolution on desk-scale grids.

A small laboratory for a relaxed model of magnetization under temperature:
states are atomic Young measures over the magnetization ball plus an internal
variable tied to the measure moments by a negative-order penalty, driven by a
time-incremental minimization with activated (rate-independent plus viscous)
dissipation, and coupled to an enthalpy-form heat balance. An audit layer
checks the discrete inequalities the scheme is supposed to satisfy (energy
balance, flow rule, Jensen gaps, a-priori monitors) on every run.
"""

from .core import (
    Grid,
    Material,
    ScalarField,
    Schedule,
    VectorField,
    sample_schedule,
    validate_material,
)
from .measure import (
    AtomicYoungMeasure,
    MomentPair,
    atom_dictionary,
    dirac,
    measure_to_text,
    moments,
    project_simplex,
    pth_moment,
    uniform_dictionary_measure,
)
from .elliptic import DirichletPoisson, MagnetostaticResult, MagnetostaticSolver
from .energy import (
    FieldSolvers,
    GibbsEvaluation,
    L_of,
    conductivity,
    conductivity_state_dependent,
    dissipation_potential,
    dissipation_rate,
    enthalpy_of_theta,
    gibbs_energy,
    gibbs_lambda_gradient,
    gibbs_weight_gradient,
    heat_capacity,
    phi,
    prox_dissipation,
    psi,
    psi_minimizer_magnitude,
    support_S,
    support_S1_perp,
    theta_of_enthalpy,
)
from .increment import (
    IncrementProblem,
    IncrementSolution,
    StaticSolution,
    incremental_solve,
    lambda_step,
    nu_step,
    static_solve,
)
from .heat import (
    HeatStepProblem,
    HeatStepResult,
    check_nonnegativity,
    heat_step,
)
from .audit import (
    AprioriMonitors,
    AuditReport,
    EnergyBalanceReport,
    Trajectory,
    apriori_monitors,
    energy_balance_report,
    flowrule_residual,
    run_audit,
    semistability_residual,
    variation_measure,
)

__all__ = [
    "Grid",
    "ScalarField",
    "VectorField",
    "Material",
    "Schedule",
    "validate_material",
    "sample_schedule",
    "AtomicYoungMeasure",
    "MomentPair",
    "dirac",
    "moments",
    "pth_moment",
    "project_simplex",
    "atom_dictionary",
    "uniform_dictionary_measure",
    "measure_to_text",
    "DirichletPoisson",
    "MagnetostaticSolver",
    "MagnetostaticResult",
    "FieldSolvers",
    "GibbsEvaluation",
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
    "IncrementProblem",
    "IncrementSolution",
    "StaticSolution",
    "nu_step",
    "lambda_step",
    "incremental_solve",
    "static_solve",
    "HeatStepProblem",
    "HeatStepResult",
    "heat_step",
    "check_nonnegativity",
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

__version__ = "0.1.0"
