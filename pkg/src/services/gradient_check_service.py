"""
Adjoint directional derivatives against central finite differences of the
reduced objective.
"""
from dataclasses import dataclass
from typing import List, Optional
import logging

import numpy as np

from src.services.adjoint_service import solve_adjoint
from src.services.descent_service import extend_boundary_field
from src.services.flow_service import (
    FlowConfig,
    FluidProps,
    PrimalState,
    build_extension_eta,
    compute_objective,
    solve_primal,
)
from src.services.mesh_service import Mesh, apply_deformation
from src.services.sensitivity_service import assemble_sensitivity, evaluate_form
from src.utils.constants import OBSTACLE_KINDS, PATCH_OBS_FREE

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class GradientCheckRow:
    field: int
    adjoint: float
    finite_difference: float
    relative_difference: float

    def passed(self, bound: float) -> bool:
        return bool(self.relative_difference <= bound)


def perturbation_fields(mesh: Mesh, n_fields: int, modes: int = 4, seed: int = 0) -> List[np.ndarray]:
    """
    Seeded smooth normal perturbations of the deformable obstacle

    Each field is a random Fourier series in the polar angle around the obstacle
    centre (coefficients decaying like 1/k^2) times the vertex normal, harmonically
    extended into the domain and scaled to a maximum vertex displacement of 1.
    """
    if n_fields <= 0:
        return []
    rng = np.random.default_rng(seed)
    vertices = mesh.patch_vertices(PATCH_OBS_FREE)
    if not vertices.size:
        return [np.zeros((mesh.n_vertices, 2)) for _ in range(n_fields)]

    normals = mesh.obstacle_vertex_normals()
    centre = mesh.vertices[mesh.patch_vertices(*OBSTACLE_KINDS)].mean(axis=0)
    rel = mesh.vertices[vertices] - centre
    theta = np.arctan2(rel[:, 1], rel[:, 0])
    k = np.arange(modes + 1)

    fields = []
    for _ in range(n_fields):
        a, b = rng.standard_normal((2, modes + 1)) / np.maximum(k, 1) ** 2
        amplitude = np.cos(np.outer(theta, k)) @ a + np.sin(np.outer(theta, k)) @ b
        values = np.zeros((mesh.n_vertices, 2))
        values[vertices] = amplitude[:, None] * normals[vertices]
        V = extend_boundary_field(mesh, values)
        peak = np.linalg.norm(V, axis=1).max()
        fields.append(V / peak if peak > 0 else V)
    return fields


def reduced_objective(mesh: Mesh, props: FluidProps, flow_cfg: FlowConfig,
                      initial: Optional[PrimalState] = None) -> float:
    """J after a fresh primal solve on the given mesh"""
    state = solve_primal(mesh, props, flow_cfg, initial=initial)
    return compute_objective(state, build_extension_eta(mesh), props, mesh)


def check_gradient(
    mesh: Mesh,
    props: FluidProps,
    flow_cfg: FlowConfig,
    fields: List[np.ndarray],
    eps_fd: float,
) -> List[GradientCheckRow]:
    """
    Compare J'(Omega) V from the adjoint with (J(+h V) - J(-h V)) / 2h

    Args:
        mesh: Mesh with its deformable obstacle tagged obsN
        props: Fluid properties
        flow_cfg: Flow configuration
        fields: Vertex fields V
        eps_fd: Finite difference step relative to the mesh diameter

    Returns:
        One GradientCheckRow per field
    """
    try:
        if not fields:
            return []

        state = solve_primal(mesh, props, flow_cfg)
        eta = build_extension_eta(mesh)
        adjoint = solve_adjoint(state, eta, props, mesh, flow_cfg)
        zeros = np.zeros(mesh.dim + 1)
        form = assemble_sensitivity(state, adjoint, mesh, state.c, zeros, 0.0, zeros)
        h = eps_fd * mesh.diameter

        rows = []
        for index, V in enumerate(fields):
            derivative = evaluate_form(form, V, mesh)
            J_plus = reduced_objective(apply_deformation(mesh, V, h), props, flow_cfg, initial=state)
            J_minus = reduced_objective(apply_deformation(mesh, V, -h), props, flow_cfg, initial=state)
            fd = (J_plus - J_minus) / (2.0 * h)
            scale = max(abs(fd), np.finfo(float).tiny)
            row = GradientCheckRow(index, derivative, fd, abs(derivative - fd) / scale)
            logger.info(f"Field {index}: adjoint {derivative:.6e}, finite difference {fd:.6e}, "
                        f"relative difference {row.relative_difference:.3e}")
            rows.append(row)
        return rows
    except Exception as e:
        logger.error(f"Gradient check failed: {e}")
        raise
