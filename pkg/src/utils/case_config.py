"""
Case files: INI sections parsed with configparser, validated with pydantic
"""
import configparser
import logging
from pathlib import Path
from typing import Optional, Tuple, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from src.config import (
    OUTPUT_DIR,
    FLOW_TOLERANCE,
    FLOW_MAX_ITERATIONS,
    FLOW_RELAX_VELOCITY,
    FLOW_RELAX_PRESSURE,
    OBJECTIVE_AVERAGE_WINDOW,
    DESCENT_P_SEQUENCE,
    DESCENT_TOLERANCE,
    DESCENT_TAU,
    DESCENT_RELAX,
    DESCENT_EPS_REG,
    DESCENT_MAX_PICARD_ITERS,
    OPT_MAX_OUTER_ITERATIONS,
    OPT_STEP_FRACTION,
    OPT_BACKTRACK_FACTOR,
    OPT_MAX_BACKTRACKS,
    OPT_CONSTRAINT_TOLERANCE,
)
from src.services.descent_service import DescentConfig
from src.services.flow_service import FlowConfig, FluidProps
from src.services.optimizer_service import OptimizerConfig
from src.utils.constants import (
    MSG_CONFIG_NOT_FOUND,
    MSG_MESH_NOT_FOUND,
    MODE_FULL_HULL,
    MODE_UNDERWATER_ONLY,
    PROFILE_UNIFORM,
    PROFILE_PARABOLIC,
    METRIC_IDENTITY,
    METRIC_STIFFNESS,
)
from src.utils.exceptions import CaseConfigError

logger = logging.getLogger(__name__)


def _split_floats(value):
    if isinstance(value, str):
        return tuple(float(v) for v in value.replace(';', ',').split(',') if v.strip())
    return value


class _Section(BaseModel):
    model_config = ConfigDict(extra='forbid', frozen=True)


class MeshSettings(_Section):
    path: Path


class FluidSettings(_Section):
    rho_water: float = Field(1.0, gt=0)
    rho_air: float = Field(1.0e-3, gt=0)
    mu_water: float = Field(1.0e-3, gt=0)
    mu_air: float = Field(1.8e-5, gt=0)
    gravity: Tuple[float, float] = (0.0, 0.0)
    body_force: Tuple[float, float] = (0.0, 0.0)

    _vectors = field_validator('gravity', 'body_force', mode='before')(_split_floats)

    @model_validator(mode='after')
    def check_densities(self):
        if self.rho_air > self.rho_water:
            raise ValueError("rho_air must not exceed rho_water")
        return self


class FlowSettings(_Section):
    v_infinity: Tuple[float, float] = (1.0, 0.0)
    c_infinity: float = Field(0.0, ge=0, le=1)
    waterline: Optional[float] = None
    smoothing: float = Field(0.0, ge=0)
    relax_velocity: float = Field(FLOW_RELAX_VELOCITY, gt=0, le=1)
    relax_pressure: float = Field(FLOW_RELAX_PRESSURE, gt=0, le=1)
    beta_conv: float = Field(0.0, ge=0, le=1)
    max_iterations: int = Field(FLOW_MAX_ITERATIONS, ge=1)
    tolerance: float = Field(FLOW_TOLERANCE, gt=0)
    inlet_profile: str = PROFILE_UNIFORM
    stokes: bool = False
    averaging_tolerance: float = Field(1e-4, gt=0)

    _vectors = field_validator('v_infinity', mode='before')(_split_floats)

    @field_validator('waterline', mode='before')
    @classmethod
    def empty_waterline(cls, value):
        if isinstance(value, str) and value.strip().lower() in ('', 'none'):
            return None
        return value

    @field_validator('inlet_profile')
    @classmethod
    def check_profile(cls, value):
        if value not in (PROFILE_UNIFORM, PROFILE_PARABOLIC):
            raise ValueError(f"inlet_profile must be one of {PROFILE_UNIFORM}, {PROFILE_PARABOLIC}")
        return value


class DescentSettings(_Section):
    p_sequence: Tuple[float, ...] = DESCENT_P_SEQUENCE
    relax: float = Field(DESCENT_RELAX, gt=0, lt=2)
    tol: float = Field(DESCENT_TOLERANCE, gt=0)
    tau: float = Field(DESCENT_TAU, gt=0)
    eps_reg: float = Field(DESCENT_EPS_REG, ge=0)
    max_picard_iters: int = Field(DESCENT_MAX_PICARD_ITERS, ge=1)
    multiplier_metric: str = METRIC_IDENTITY

    _vectors = field_validator('p_sequence', mode='before')(_split_floats)

    @field_validator('p_sequence')
    @classmethod
    def check_sequence(cls, value):
        if not value or value[0] != 2.0 or any(b <= a for a, b in zip(value, value[1:])):
            raise ValueError("p_sequence must start at 2 and increase strictly")
        return value

    @field_validator('multiplier_metric')
    @classmethod
    def check_metric(cls, value):
        if value not in (METRIC_IDENTITY, METRIC_STIFFNESS):
            raise ValueError(f"multiplier_metric must be one of {METRIC_IDENTITY}, {METRIC_STIFFNESS}")
        return value


class OptimizerSettings(_Section):
    max_outer_iterations: int = Field(OPT_MAX_OUTER_ITERATIONS, ge=0)
    deformation_mode: str = MODE_UNDERWATER_ONLY
    step_fraction: float = Field(OPT_STEP_FRACTION, gt=0)
    backtrack_factor: float = Field(OPT_BACKTRACK_FACTOR, gt=0, lt=1)
    max_backtracks: int = Field(OPT_MAX_BACKTRACKS, ge=0)
    constraint_tolerance: float = Field(OPT_CONSTRAINT_TOLERANCE, gt=0)
    average_window: int = Field(OBJECTIVE_AVERAGE_WINDOW, ge=0)

    @field_validator('deformation_mode')
    @classmethod
    def check_mode(cls, value):
        if value not in (MODE_FULL_HULL, MODE_UNDERWATER_ONLY):
            raise ValueError(f"deformation_mode must be one of {MODE_FULL_HULL}, {MODE_UNDERWATER_ONLY}")
        return value


class OutputSettings(_Section):
    directory: Path = OUTPUT_DIR
    seed: int = 0


class GradientCheckSettings(_Section):
    n_fields: int = Field(5, ge=0)
    eps_fd: float = Field(1e-4, gt=0)
    bound: float = Field(0.10, gt=0)
    modes: int = Field(4, ge=1)


class CaseConfig(BaseModel):
    model_config = ConfigDict(extra='forbid', frozen=True)

    mesh: MeshSettings
    fluid: FluidSettings = FluidSettings()
    flow: FlowSettings = FlowSettings()
    descent: DescentSettings = DescentSettings()
    optimizer: OptimizerSettings = OptimizerSettings()
    output: OutputSettings = OutputSettings()
    gradient_check: GradientCheckSettings = GradientCheckSettings()

    def fluid_props(self) -> FluidProps:
        return FluidProps(**self.fluid.model_dump())

    def flow_config(self) -> FlowConfig:
        return FlowConfig(average_window=self.optimizer.average_window, **self.flow.model_dump())

    def descent_config(self) -> DescentConfig:
        return DescentConfig(**self.descent.model_dump())

    def optimizer_config(self) -> OptimizerConfig:
        return OptimizerConfig(**self.optimizer.model_dump())

    def with_overrides(self, output_dir: Optional[Union[str, Path]] = None, seed: Optional[int] = None) -> "CaseConfig":
        """Copy with command-line overrides of the output directory and seed"""
        update = {}
        if output_dir is not None:
            update['directory'] = Path(output_dir)
        if seed is not None:
            update['seed'] = seed
        if not update:
            return self
        return self.model_copy(update={'output': self.output.model_copy(update=update)})


def load_case_config(path: Union[str, Path], check_mesh: bool = True) -> CaseConfig:
    """
    Read and validate a case file

    Args:
        path: INI case file; relative paths inside it are resolved against its directory
        check_mesh: Require the referenced mesh file to exist

    Returns:
        Validated CaseConfig
    """
    path = Path(path)
    if not path.is_file():
        raise CaseConfigError(f"{MSG_CONFIG_NOT_FOUND}: {path}")

    parser = configparser.ConfigParser(inline_comment_prefixes=('#', ';'))
    try:
        parser.read(path, encoding='utf-8')
    except configparser.Error as e:
        raise CaseConfigError(f"{path}: {e}") from e

    raw = {section: dict(parser.items(section)) for section in parser.sections()}
    base = path.parent
    if 'mesh' in raw and 'path' in raw['mesh']:
        mesh_path = Path(raw['mesh']['path'])
        raw['mesh']['path'] = mesh_path if mesh_path.is_absolute() else base / mesh_path
    if 'output' in raw and 'directory' in raw['output']:
        out = Path(raw['output']['directory'])
        raw['output']['directory'] = out if out.is_absolute() else base / out

    try:
        config = CaseConfig(**raw)
    except ValidationError as e:
        logger.error(f"Invalid case file {path}: {e}")
        raise CaseConfigError(f"Invalid case file {path}: {e}") from e

    if check_mesh and not config.mesh.path.is_file():
        raise CaseConfigError(f"{MSG_MESH_NOT_FOUND}: {config.mesh.path}")
    logger.info(f"Loaded case {path} (mesh {config.mesh.path})")
    return config
