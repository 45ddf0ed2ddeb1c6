"""
Constants for the Shape Optimization Toolkit
Including exit codes, error codes, status tokens and patch kinds
"""

# Exit Codes
EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_CONFIG_ERROR = 2
EXIT_IO_ERROR = 3
EXIT_SOLVER_ERROR = 4
EXIT_CHECK_FAILED = 5

# Error Codes
ERROR_MESH_PARSE = "MESH_PARSE_ERROR"
ERROR_MESH_TOPOLOGY = "MESH_TOPOLOGY_ERROR"
ERROR_MESH_PATCH = "MESH_PATCH_ERROR"
ERROR_FLOW_CONVERGENCE = "FLOW_NOT_CONVERGED"
ERROR_ADJOINT_CONVERGENCE = "ADJOINT_NOT_CONVERGED"
ERROR_LINEAR_SOLVER = "LINEAR_SOLVER_ERROR"
ERROR_DESCENT = "DESCENT_ERROR"
ERROR_STEP_SIZE = "NO_ACCEPTABLE_STEP"
ERROR_GRID_DETERIORATION = "GRID_DETERIORATION"
ERROR_CASE_CONFIG = "INVALID_CASE_CONFIG"

# Error Messages
MSG_MESH_NOT_FOUND = "Mesh file not found"
MSG_CONFIG_NOT_FOUND = "Case file not found"
MSG_SENSITIVITY_NOT_FOUND = "Sensitivity file not found"

# Boundary patch kinds
PATCH_INLET = "inlet"
PATCH_OUTLET = "outlet"
PATCH_WALL = "wall"
PATCH_OBS_FIXED = "obsD"
PATCH_OBS_FREE = "obsN"
PATCH_KINDS = (PATCH_INLET, PATCH_OUTLET, PATCH_WALL, PATCH_OBS_FIXED, PATCH_OBS_FREE)
OBSTACLE_KINDS = (PATCH_OBS_FIXED, PATCH_OBS_FREE)
OUTER_KINDS = (PATCH_INLET, PATCH_OUTLET, PATCH_WALL)

# Deformation modes
MODE_FULL_HULL = "full_hull"
MODE_UNDERWATER_ONLY = "underwater_only"

# Run status tokens
STATUS_CONVERGED = "converged"
STATUS_MAX_ITER = "max_iter"
STATUS_GRID_DETERIORATION = "grid_deterioration"
STATUS_SOLVER_FAILURE = "solver_failure"
STATUS_STALLED = "stalled"
SUCCESS_STATUSES = (STATUS_CONVERGED, STATUS_MAX_ITER, STATUS_STALLED)

# Inlet profiles
PROFILE_UNIFORM = "uniform"
PROFILE_PARABOLIC = "parabolic"

# Multiplier metrics for the descent sub-problem
METRIC_IDENTITY = "identity"
METRIC_STIFFNESS = "stiffness"

# Output file names
HISTORY_CSV = "history.csv"
RESIDUALS_CSV = "residuals.csv"
ADJOINT_RESIDUALS_CSV = "adjoint_residuals.csv"
DESCENT_RESIDUALS_CSV = "descent_residuals.csv"
GRADIENT_CHECK_CSV = "gradient_check.csv"
STATUS_FILE = "status.txt"
FINAL_MESH_FILE = "final_mesh.msh"
