"""
Exception hierarchy shared by the services and the command layer
"""
from typing import List, Optional, Tuple

from src.utils.constants import (
    ERROR_MESH_PARSE,
    ERROR_MESH_TOPOLOGY,
    ERROR_MESH_PATCH,
    ERROR_FLOW_CONVERGENCE,
    ERROR_ADJOINT_CONVERGENCE,
    ERROR_LINEAR_SOLVER,
    ERROR_DESCENT,
    ERROR_STEP_SIZE,
    ERROR_GRID_DETERIORATION,
    ERROR_CASE_CONFIG,
)


class ShapeOptError(Exception):
    """Base class for all toolkit errors"""

    error_code = "SHAPE_OPT_ERROR"


class MeshParseError(ShapeOptError):
    error_code = ERROR_MESH_PARSE


class MeshTopologyError(ShapeOptError):
    error_code = ERROR_MESH_TOPOLOGY


class MeshPatchError(ShapeOptError):
    error_code = ERROR_MESH_PATCH


class LinearSolverError(ShapeOptError):
    error_code = ERROR_LINEAR_SOLVER


class FlowConvergenceError(ShapeOptError):
    """Raised when the pressure-velocity iteration does not reach its tolerance"""

    error_code = ERROR_FLOW_CONVERGENCE

    def __init__(self, message: str, residual_history: Optional[List[Tuple[int, float, float]]] = None):
        super().__init__(message)
        self.residual_history = residual_history or []


class AdjointConvergenceError(FlowConvergenceError):
    error_code = ERROR_ADJOINT_CONVERGENCE


class DescentError(ShapeOptError):
    error_code = ERROR_DESCENT


class StepSizeError(ShapeOptError):
    error_code = ERROR_STEP_SIZE


class GridDeteriorationError(ShapeOptError):
    """Raised when no backtracked step keeps every cell volume positive"""

    error_code = ERROR_GRID_DETERIORATION

    def __init__(self, message: str, report=None):
        super().__init__(message)
        self.report = report


class CaseConfigError(ShapeOptError):
    error_code = ERROR_CASE_CONFIG
