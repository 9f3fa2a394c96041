"""Matrix-free time integrators for large stiff ODE systems, plus a benchmark harness."""

from .core import (IntegrationConfig, IntegrationResult, NonFiniteError, OdeProblem, SolverFailure,
                   WorkCounters, l2_error, weighted_error_norm)
from .integrators import adaptive_drive, fixed_drive, integrate, make_stepper
from .problems import get_problem
from .tableaus import MethodTableau, registry_get, verify_order_conditions

__version__ = "0.1.0"

__all__ = [
    "IntegrationConfig", "IntegrationResult", "MethodTableau", "NonFiniteError", "OdeProblem",
    "SolverFailure", "WorkCounters", "adaptive_drive", "fixed_drive", "get_problem", "integrate",
    "l2_error", "make_stepper", "registry_get", "verify_order_conditions", "weighted_error_norm",
]
