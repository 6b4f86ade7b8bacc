"""Insider trading equilibria under legal penalties in a large Kyle-type market."""

from .calibration import (
    EXPERIMENT_I,
    EXPERIMENT_II,
    CalibrationResult,
    CalibrationStats,
    calibrate,
    estimate_mu,
    replicate_tables,
    std_from_stderr,
)
from .equilibrium import (
    EquilibriumSolution,
    LimitingSolution,
    SolverOptions,
    certify_epsilon_equilibrium,
    convergence_report,
    solve_finite,
    solve_limiting,
    stealth_index,
)
from .market import expected_price, objective, price
from .model import HazardModel, ModelParams, PenaltyModel, Strategy, validate_assumptions
from .numerics import gauss_hermite_rule, lambert_w0

__version__ = "0.1.0"

__all__ = [
    "EXPERIMENT_I", "EXPERIMENT_II", "CalibrationResult", "CalibrationStats", "EquilibriumSolution",
    "HazardModel", "LimitingSolution", "ModelParams", "PenaltyModel", "SolverOptions", "Strategy",
    "calibrate", "certify_epsilon_equilibrium", "convergence_report", "estimate_mu", "expected_price",
    "gauss_hermite_rule", "lambert_w0", "objective", "price", "replicate_tables", "solve_finite",
    "solve_limiting", "stealth_index", "std_from_stderr", "validate_assumptions",
]
