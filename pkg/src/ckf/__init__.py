"""Kalman filtering with equality and inequality state constraints."""

from .constraints import ConstraintSet, NonlinearConstraint, is_feasible, violation
from .equality import (
    eq_constrained_step,
    eq_constrained_update,
    project_estimate,
    restricted_gain,
    upsilon,
)
from .errors import (
    ConstrainedFilterError,
    CyclingError,
    DegenerateInnovationError,
    DimensionError,
    EvaluationError,
    InfeasibleError,
    RankError,
    SingularMatrixError,
)
from .experiments import ScenarioConfig, run_experiment1, run_experiment2, run_scenario
from .inequality import FilterOptions, ineq_constrained_step, ineq_constrained_update
from .kalman import GaussianState, LinearModelStep, NonlinearModel, kalman_step
from .qp import QpProblem, QpSolution
from .qp import solve as solve_qp

__version__ = "0.1.0"

__all__ = [
    "ConstraintSet",
    "NonlinearConstraint",
    "is_feasible",
    "violation",
    "eq_constrained_step",
    "eq_constrained_update",
    "project_estimate",
    "restricted_gain",
    "upsilon",
    "ConstrainedFilterError",
    "CyclingError",
    "DegenerateInnovationError",
    "DimensionError",
    "EvaluationError",
    "InfeasibleError",
    "RankError",
    "SingularMatrixError",
    "ScenarioConfig",
    "run_experiment1",
    "run_experiment2",
    "run_scenario",
    "FilterOptions",
    "ineq_constrained_step",
    "ineq_constrained_update",
    "GaussianState",
    "LinearModelStep",
    "NonlinearModel",
    "kalman_step",
    "QpProblem",
    "QpSolution",
    "solve_qp",
]
