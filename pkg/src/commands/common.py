"""
Helpers shared by the command groups: case loading and exception translation
"""
import functools
import logging
import sys
from pathlib import Path
from typing import Callable

from src.services.mesh_service import Mesh, load_mesh, retag_obstacle
from src.utils.case_config import CaseConfig, load_case_config
from src.utils.constants import (
    EXIT_FAILURE,
    EXIT_CONFIG_ERROR,
    EXIT_IO_ERROR,
    EXIT_SOLVER_ERROR,
)
from src.utils.exceptions import (
    CaseConfigError,
    DescentError,
    FlowConvergenceError,
    LinearSolverError,
    MeshParseError,
    MeshPatchError,
    MeshTopologyError,
    ShapeOptError,
)

logger = logging.getLogger(__name__)


def load_case(args) -> CaseConfig:
    """Case file from --config with the --out and --seed overrides applied"""
    if not getattr(args, 'config', None):
        raise CaseConfigError("--config is required for this command")
    return load_case_config(args.config).with_overrides(args.out, args.seed)


def load_case_mesh(cfg: CaseConfig) -> Mesh:
    """Mesh of the case with the obstacle split of its deformation mode"""
    mesh = load_mesh(cfg.mesh.path)
    return retag_obstacle(mesh, cfg.optimizer.deformation_mode, cfg.flow.waterline)


def output_dir(cfg: CaseConfig) -> Path:
    out = Path(cfg.output.directory)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _fail(code: int, error: Exception) -> int:
    error_code = getattr(error, 'error_code', type(error).__name__)
    logger.error(f"{error_code}: {error}")
    print(f"error [{error_code}]: {error}", file=sys.stderr)
    return code


def handles_errors(command: Callable[..., int]) -> Callable[..., int]:
    """Translate toolkit exceptions raised by a command into exit codes"""

    @functools.wraps(command)
    def wrapper(args) -> int:
        try:
            return command(args)
        except CaseConfigError as e:
            return _fail(EXIT_CONFIG_ERROR, e)
        except (FileNotFoundError, MeshParseError, MeshTopologyError, MeshPatchError) as e:
            return _fail(EXIT_IO_ERROR, e)
        except OSError as e:
            return _fail(EXIT_IO_ERROR, e)
        except (FlowConvergenceError, LinearSolverError, DescentError) as e:
            return _fail(EXIT_SOLVER_ERROR, e)
        except ShapeOptError as e:
            return _fail(EXIT_FAILURE, e)

    return wrapper
