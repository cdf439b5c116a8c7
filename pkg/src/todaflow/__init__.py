"""Entropy-monotone parabolic flow for Liouville and Toda type systems on the flat torus."""

from .coeffs import CoefficientMatrix, cartan, choose_beta, validate
from .flow import StepControl, TrajectoryRecord, evolve, residual, rhs, step_imex, twin_gap
from .functionals import (
    EntropyReport,
    FlowState,
    ProblemData,
    dissipation,
    entropy,
    entropy_gap,
    h_mass_lower_bound,
    mt_deficit,
)
from .steady import NewtonControl, certify, newton_refine
from .torusfield import Grid, ScalarField

__version__ = "0.1.0"

__all__ = [
    "CoefficientMatrix", "cartan", "choose_beta", "validate",
    "StepControl", "TrajectoryRecord", "evolve", "residual", "rhs", "step_imex", "twin_gap",
    "EntropyReport", "FlowState", "ProblemData", "dissipation", "entropy", "entropy_gap",
    "h_mass_lower_bound", "mt_deficit",
    "NewtonControl", "certify", "newton_refine",
    "Grid", "ScalarField",
]
