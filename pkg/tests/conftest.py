"""
Shared fixtures: small meshes and solver configurations
"""
import numpy as np
import pytest

from src.data.mesh_generator import CylinderChannelSpec, channel_mesh, cylinder_channel_mesh, unit_square_mesh
from src.services.flow_service import FlowConfig, FluidProps
from src.utils.constants import PATCH_INLET


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: end-to-end solves that take more than a few seconds")


SMALL_CYLINDER = CylinderChannelSpec(
    cells_per_block_side=4,
    radial_layers=2,
    pad_left=2,
    pad_right=6,
    pad_bottom=2,
    pad_top=2,
)


@pytest.fixture
def unit_square():
    """Unit square split into 8 triangles, every side a wall"""
    return unit_square_mesh(2)


@pytest.fixture(scope='session')
def small_cylinder():
    """Coarse channel with a circular obstacle, whole obstacle deformable"""
    return cylinder_channel_mesh(SMALL_CYLINDER)


@pytest.fixture(scope='session')
def uniform_channel():
    """Empty channel whose lateral sides carry the inflow velocity"""
    return channel_mesh(1.0, 0.5, 8, 4, lateral_kind=PATCH_INLET)


@pytest.fixture
def stokes_props():
    return FluidProps(rho_water=1.0, rho_air=1.0, mu_water=1.0, mu_air=1.0)


@pytest.fixture
def stokes_config():
    return FlowConfig(stokes=True, tolerance=1e-7, max_iterations=3000, average_window=0)


@pytest.fixture
def low_re_props():
    return FluidProps(rho_water=1.0, rho_air=1.0, mu_water=0.05, mu_air=0.05)


@pytest.fixture
def low_re_config():
    return FlowConfig(tolerance=1e-6, max_iterations=3000, average_window=50)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
