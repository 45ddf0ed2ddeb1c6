"""
Adjoint flow under frozen viscosity and the obstacle multiplier gamma.
"""
from dataclasses import dataclass, field
from typing import List, Optional, Tuple
import logging

import numpy as np

from src.services.flow_service import (
    FlowConfig,
    FluidProps,
    PrimalState,
    eta_boundary_values,
    obstacle_traction,
    residual_reference,
    velocity_gradient,
)
from src.services.mesh_service import Mesh
from src.services.simple_solver import SimpleSolver, fv_operators
from src.utils.exceptions import AdjointConvergenceError

logger = logging.getLogger(__name__)


@dataclass
class AdjointState:
    w: np.ndarray
    q: np.ndarray
    boundary_velocity: np.ndarray
    gamma: Optional[np.ndarray] = None
    residual_history: List[Tuple[int, float, float]] = field(default_factory=list)
    converged: bool = True
    averaged: bool = False
    iterations: int = 0


def solve_adjoint(
    primal: PrimalState,
    eta: np.ndarray,
    props: FluidProps,
    mesh: Mesh,
    cfg: FlowConfig,
    eta_boundary: Optional[np.ndarray] = None,
) -> AdjointState:
    """
    Solve the adjoint momentum/continuity system about a converged primal state

    -rho (v . grad) w - w div(rho v) + rho (grad v)^T w - div(mu (grad w + grad w^T)) + grad q = 0,
    div w = 0, with w = -eta on every non-outlet boundary face, zero normal
    gradient of w and q = 0 on the outlet. Convection uses the reversed primal
    mass flux, so the upwind side of the adjoint is the downwind side of the flow.

    Args:
        primal: Converged primal state
        eta: Drag extension (cell field)
        props: Fluid properties
        mesh: Mesh of the primal state
        cfg: Flow configuration (stokes disables all convective terms)
        eta_boundary: Boundary data of eta; defaults to -e1 on the obstacle, 0 elsewhere

    Returns:
        Converged AdjointState with gamma recovered on the obstacle faces
    """
    try:
        ops = fv_operators(mesh)
        data = eta_boundary_values(mesh) if eta_boundary is None else np.asarray(eta_boundary, dtype=float)
        w_boundary = -data

        frozen_flux = None
        source = None
        if not cfg.stokes:
            frozen_flux = -primal.mass_flux
            grad_v, _ = velocity_gradient(primal.v, primal.boundary_velocity, mesh)
            mass_divergence = ops.divergence(primal.mass_flux)
            rho_volume = ops.volume * primal.rho_cells

            def source(w: np.ndarray, grad_w: np.ndarray) -> np.ndarray:
                transposed = np.einsum('cji,cj->ci', grad_v, w)
                return mass_divergence[:, None] * w - rho_volume[:, None] * transposed

        speed = float(np.abs(w_boundary[mesh.boundary_faces]).max()) if mesh.boundary_faces.size else 0.0
        solver = SimpleSolver(mesh, primal.rho_cells, primal.rho_faces, primal.mu_faces, cfg.simple_settings())
        logger.info(f"Solving adjoint flow on {mesh.n_cells} cells")
        result = solver.solve(
            boundary_velocity=w_boundary,
            u0=np.zeros((mesh.n_cells, 2)),
            p0=np.zeros(mesh.n_cells),
            frozen_mass_flux=frozen_flux,
            explicit_source=source,
            residual_reference=residual_reference(mesh, props.rho_water, props.mu_water, speed),
            label="adjoint",
        )
        if not (result.converged or result.averaged):
            logger.error(f"Adjoint flow not converged after {result.iterations} iterations")
            raise AdjointConvergenceError(
                f"Adjoint flow did not reach tolerance {cfg.tolerance} in {cfg.max_iterations} iterations",
                result.residual_history,
            )

        state = AdjointState(
            w=result.u,
            q=result.p,
            boundary_velocity=result.boundary_velocity,
            residual_history=result.residual_history,
            converged=result.converged,
            averaged=result.averaged,
            iterations=result.iterations,
        )
        state.gamma = recover_gamma(state, primal, mesh)
        return state
    except Exception as e:
        logger.error(f"Adjoint solve failed: {e}")
        raise


def recover_gamma(adjoint: AdjointState, primal: PrimalState, mesh: Mesh) -> np.ndarray:
    """
    Boundary multiplier gamma = -mu (grad w + grad w^T) n + q n on every obstacle face

    The adjoint concentration is absent, so its contribution is zero.

    Returns:
        (n_obstacle_faces, 2) array ordered like mesh.patch_faces(obsD, obsN)
    """
    _, traction = obstacle_traction(adjoint.w, adjoint.q, adjoint.boundary_velocity, primal.mu_faces, mesh)
    return -traction
