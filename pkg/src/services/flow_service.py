"""
Primal flow: prescribed two-phase concentration, steady incompressible
solve, obstacle force, smooth drag extension and the volume-form objective.
"""
from dataclasses import dataclass, field
from typing import List, Optional, Tuple
import logging

import numpy as np
import scipy.sparse as sp

from src.config import (
    FLOW_TOLERANCE,
    FLOW_MAX_ITERATIONS,
    FLOW_RELAX_VELOCITY,
    FLOW_RELAX_PRESSURE,
    OBJECTIVE_AVERAGE_WINDOW,
)
from src.services.mesh_service import Mesh, quality_check
from src.services.simple_solver import SimpleSettings, SimpleSolver, factorize, fv_operators
from src.utils.constants import (
    OBSTACLE_KINDS,
    PATCH_INLET,
    PROFILE_UNIFORM,
    PROFILE_PARABOLIC,
)
from src.utils.exceptions import FlowConvergenceError, MeshTopologyError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class FluidProps:
    """Nondimensional material data of the water/air pair"""

    rho_water: float = 1.0
    rho_air: float = 1.0e-3
    mu_water: float = 1.0e-3
    mu_air: float = 1.8e-5
    gravity: Tuple[float, float] = (0.0, 0.0)
    body_force: Tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        for name in ('rho_water', 'rho_air', 'mu_water', 'mu_air'):
            if getattr(self, name) <= 0.0:
                raise ValueError(f"{name} must be strictly positive")
        if self.rho_air > self.rho_water:
            raise ValueError("rho_air must not exceed rho_water")


@dataclass(frozen=True)
class FlowConfig:
    v_infinity: Tuple[float, float] = (1.0, 0.0)
    c_infinity: float = 0.0
    waterline: Optional[float] = None
    smoothing: float = 0.0
    relax_velocity: float = FLOW_RELAX_VELOCITY
    relax_pressure: float = FLOW_RELAX_PRESSURE
    beta_conv: float = 0.0
    max_iterations: int = FLOW_MAX_ITERATIONS
    tolerance: float = FLOW_TOLERANCE
    inlet_profile: str = PROFILE_UNIFORM
    stokes: bool = False
    average_window: int = OBJECTIVE_AVERAGE_WINDOW
    averaging_tolerance: float = 1e-4

    def __post_init__(self):
        if not 0.0 < self.relax_velocity <= 1.0 or not 0.0 < self.relax_pressure <= 1.0:
            raise ValueError("Relaxation factors must lie in (0, 1]")
        if self.tolerance <= 0.0:
            raise ValueError("tolerance must be positive")
        if not 0.0 <= self.beta_conv <= 1.0:
            raise ValueError("beta_conv must lie in [0, 1]")
        if not 0.0 <= self.c_infinity <= 1.0:
            raise ValueError("c_infinity must lie in [0, 1]")
        if self.smoothing < 0.0:
            raise ValueError("smoothing half-width must be non-negative")
        if self.inlet_profile not in (PROFILE_UNIFORM, PROFILE_PARABOLIC):
            raise ValueError(f"Unknown inlet profile: {self.inlet_profile}")

    def simple_settings(self) -> SimpleSettings:
        return SimpleSettings(
            relax_velocity=self.relax_velocity,
            relax_pressure=self.relax_pressure,
            beta_conv=self.beta_conv,
            max_iterations=self.max_iterations,
            tolerance=self.tolerance,
            average_window=self.average_window,
            averaging_tolerance=self.averaging_tolerance,
            convection=not self.stokes,
        )


@dataclass(frozen=True)
class Concentration:
    """Air volume fraction at cell centroids and face centroids"""

    cells: np.ndarray
    faces: np.ndarray


@dataclass
class PrimalState:
    v: np.ndarray
    p: np.ndarray
    c: Concentration
    face_flux: np.ndarray
    boundary_velocity: np.ndarray
    rho_cells: np.ndarray
    mu_cells: np.ndarray
    rho_faces: np.ndarray
    mu_faces: np.ndarray
    residual_history: List[Tuple[int, float, float]] = field(default_factory=list)
    converged: bool = True
    averaged: bool = False
    iterations: int = 0
    convection: bool = True
    beta_conv: float = 0.0

    @property
    def mass_flux(self) -> np.ndarray:
        return self.rho_faces * self.face_flux

    def piezometric_pressure(self, mesh: Mesh, props: FluidProps) -> np.ndarray:
        """Reconstructed pressure p + rho g . x"""
        x = mesh.geometry.cell_centroid
        return self.p + self.rho_cells * (x @ np.asarray(props.gravity, dtype=float))


def concentration_at(points: np.ndarray, z_wl: Optional[float], delta: float, c_far: float = 0.0) -> np.ndarray:
    """c(x) = clamp((x_2 - z_wl) / (2 delta) + 1/2, 0, 1); a step for delta = 0, uniform c_far without a waterline"""
    points = np.asarray(points, dtype=float)
    if z_wl is None:
        return np.full(len(points), float(c_far))
    height = points[:, 1] - z_wl
    if delta == 0.0:
        return np.where(height > 0.0, 1.0, np.where(height < 0.0, 0.0, 0.5))
    return np.clip(height / (2.0 * delta) + 0.5, 0.0, 1.0)


def prescribe_concentration(mesh: Mesh, z_wl: Optional[float], delta: float, c_far: float = 0.0) -> Concentration:
    """
    Static air fraction replacing the concentration transport equation

    Args:
        mesh: Mesh
        z_wl: Waterline height, or None for single-phase water
        delta: Smoothing half-width (>= 0)
        c_far: Far-field air fraction used when there is no waterline

    Returns:
        Concentration sampled at cell and face centroids
    """
    if delta < 0.0:
        raise ValueError("delta must be non-negative")
    if not 0.0 <= c_far <= 1.0:
        raise ValueError("c_far must lie in [0, 1]")
    geo = mesh.geometry
    return Concentration(
        cells=concentration_at(geo.cell_centroid, z_wl, delta, c_far),
        faces=concentration_at(geo.face_centroid, z_wl, delta, c_far),
    )


def blend(water: float, air: float, c: np.ndarray) -> np.ndarray:
    """Linear equation of state"""
    return water * (1.0 - c) + air * c


def inlet_velocity(mesh: Mesh, cfg: FlowConfig) -> np.ndarray:
    """Dirichlet velocity on every boundary face: v_inf (or a parabola with mean v_inf) on inlets, zero elsewhere"""
    values = np.zeros((mesh.n_faces, 2))
    inlet = mesh.patch_faces(PATCH_INLET)
    v_inf = np.asarray(cfg.v_infinity, dtype=float)
    if cfg.inlet_profile == PROFILE_PARABOLIC and inlet.size:
        y = mesh.geometry.face_centroid[inlet, 1]
        y_min = mesh.vertices[mesh.face_vertices[inlet], 1].min()
        y_max = mesh.vertices[mesh.face_vertices[inlet], 1].max()
        s = (y - y_min) / (y_max - y_min)
        values[inlet] = 6.0 * s[:, None] * (1.0 - s[:, None]) * v_inf[None, :]
    else:
        values[inlet] = v_inf
    return values


def residual_reference(mesh: Mesh, rho: float, mu: float, speed: float) -> Tuple[float, float]:
    """Absolute floors for momentum and continuity residual normalisation"""
    if speed <= 0.0:
        return 1.0, 1.0
    length = mesh.diameter
    return rho * speed ** 2 * length + mu * speed, speed * length


def solve_primal(mesh: Mesh, props: FluidProps, cfg: FlowConfig,
                 initial: Optional[PrimalState] = None) -> PrimalState:
    """
    Solve the steady primal flow

    Args:
        mesh: Valid mesh with its boundary patches
        props: Fluid properties
        cfg: Flow configuration
        initial: Optional converged state on a mesh of the same topology (warm start)

    Returns:
        Converged (or pseudo-time averaged) PrimalState
    """
    try:
        report = quality_check(mesh)
        if not report.valid:
            raise MeshTopologyError(f"Cannot solve on an invalid mesh (min cell volume {report.min_cell_volume:.3e})")

        c = prescribe_concentration(mesh, cfg.waterline, cfg.smoothing, cfg.c_infinity)
        rho_cells = blend(props.rho_water, props.rho_air, c.cells)
        mu_cells = blend(props.mu_water, props.mu_air, c.cells)
        rho_faces = blend(props.rho_water, props.rho_air, c.faces)
        mu_faces = blend(props.mu_water, props.mu_air, c.faces)

        boundary = inlet_velocity(mesh, cfg)
        if initial is not None and initial.v.shape == (mesh.n_cells, 2):
            u0, p0 = initial.v, initial.p
        else:
            u0 = np.tile(np.asarray(cfg.v_infinity, dtype=float), (mesh.n_cells, 1))
            p0 = np.zeros(mesh.n_cells)

        speed = float(np.linalg.norm(cfg.v_infinity))
        solver = SimpleSolver(mesh, rho_cells, rho_faces, mu_faces, cfg.simple_settings())
        logger.info(f"Solving primal flow on {mesh.n_cells} cells (v_inf = {tuple(cfg.v_infinity)}, "
                    f"{'Stokes' if cfg.stokes else 'Navier-Stokes'})")
        result = solver.solve(
            boundary_velocity=boundary,
            u0=u0,
            p0=p0,
            body_force=np.asarray(props.body_force, dtype=float),
            residual_reference=residual_reference(mesh, props.rho_water, props.mu_water, speed),
            label="primal",
        )
        if not (result.converged or result.averaged):
            last = result.residual_history[-1] if result.residual_history else (0, np.nan, np.nan)
            logger.error(f"Primal flow not converged: momentum {last[1]:.3e}, continuity {last[2]:.3e}")
            raise FlowConvergenceError(
                f"Primal flow did not reach tolerance {cfg.tolerance} in {cfg.max_iterations} iterations",
                result.residual_history,
            )

        return PrimalState(
            v=result.u,
            p=result.p,
            c=c,
            face_flux=result.face_flux,
            boundary_velocity=result.boundary_velocity,
            rho_cells=rho_cells,
            mu_cells=mu_cells,
            rho_faces=rho_faces,
            mu_faces=mu_faces,
            residual_history=result.residual_history,
            converged=result.converged,
            averaged=result.averaged,
            iterations=result.iterations,
            convection=not cfg.stokes,
            beta_conv=cfg.beta_conv,
        )
    except Exception as e:
        logger.error(f"Primal solve failed: {e}")
        raise


def velocity_gradient(v: np.ndarray, boundary_velocity: np.ndarray, mesh: Mesh) -> Tuple[np.ndarray, np.ndarray]:
    """Cell velocity gradient with Dirichlet data on walls/inlet/obstacle and zero normal gradient at the outlet"""
    ops = fv_operators(mesh)
    fixed = ~ops.outlet
    fixed[ops.interior] = False
    return ops.gradient(v, boundary_velocity, fixed, tangential=True)


def pressure_gradient(p: np.ndarray, mesh: Mesh) -> Tuple[np.ndarray, np.ndarray]:
    """Cell pressure gradient with p = 0 on the outlet and linear extrapolation elsewhere"""
    ops = fv_operators(mesh)
    return ops.gradient(p, np.zeros(mesh.n_faces), ops.outlet.copy())


def obstacle_traction(v: np.ndarray, p: np.ndarray, boundary_velocity: np.ndarray, mu_faces: np.ndarray,
                      mesh: Mesh) -> Tuple[np.ndarray, np.ndarray]:
    """
    Per-face stress vector [mu (G + G^T) n - p n] on the obstacle faces

    Returns:
        Tuple of (obstacle face indices, (n_obs, 2) traction)
    """
    ops = fv_operators(mesh)
    faces = mesh.patch_faces(*OBSTACLE_KINDS)
    grad_v, _ = velocity_gradient(v, boundary_velocity, mesh)
    grad_p, p_b = pressure_gradient(p, mesh)
    G = ops.boundary_face_gradient(v, grad_v, boundary_velocity, faces)
    n = ops.normal[faces]
    strain = G + np.transpose(G, (0, 2, 1))
    traction = mu_faces[faces][:, None] * np.einsum('fij,fj->fi', strain, n) - p_b[faces][:, None] * n
    return faces, traction


def compute_force(state: PrimalState, mesh: Mesh) -> np.ndarray:
    """
    Force vector F = integral over the obstacle of [mu (grad v + grad v^T) n - p n]

    The drag is -F . e1.
    """
    faces, traction = obstacle_traction(state.v, state.p, state.boundary_velocity, state.mu_faces, mesh)
    area = mesh.geometry.face_area[faces]
    return (traction * area[:, None]).sum(axis=0)


def drag_coefficient(force: np.ndarray, rho_ref: float, u_ref: float, d_ref: float) -> float:
    """C_D = 2 (-F . e1) / (rho U^2 D)"""
    return float(2.0 * (-force[0]) / (rho_ref * u_ref ** 2 * d_ref))


def eta_boundary_values(mesh: Mesh) -> np.ndarray:
    """Boundary data of the drag extension: -e1 on the obstacle, zero on the outer boundary"""
    values = np.zeros((mesh.n_faces, 2))
    values[mesh.patch_faces(*OBSTACLE_KINDS), 0] = -1.0
    return values


def build_extension_eta(mesh: Mesh) -> np.ndarray:
    """
    Discrete harmonic extension of -e1 from the obstacle into the flow domain

    Two-point-flux Laplacian with Dirichlet data on every boundary face; the
    matrix is an M-matrix, so each component obeys the discrete maximum principle.

    Returns:
        (nc, 2) cell-centred field eta
    """
    ops = fv_operators(mesh)
    P, N, fi, fb = ops.owner, ops.neighbor, ops.interior, ops.boundary
    T = ops.T
    diag = ops.to_owner @ T + ops.to_neighbor @ T
    A = sp.csr_matrix(
        (np.concatenate([diag, -T[fi], -T[fi]]),
         (np.concatenate([np.arange(ops.n_cells), P[fi], N[fi]]),
          np.concatenate([np.arange(ops.n_cells), N[fi], P[fi]]))),
        shape=(ops.n_cells, ops.n_cells),
    )
    data = eta_boundary_values(mesh)
    rhs = np.zeros((ops.n_cells, 2))
    np.add.at(rhs, P[fb], T[fb][:, None] * data[fb])

    lu = factorize(A, "extension")
    eta = np.column_stack([lu.solve(rhs[:, j]) for j in range(2)])
    logger.debug(f"Drag extension built: eta_1 in [{eta[:, 0].min():.4f}, {eta[:, 0].max():.4f}]")
    return eta


def compute_objective(state: PrimalState, eta: np.ndarray, props: FluidProps, mesh: Mesh) -> float:
    """
    Volume form of the drag

    J = sum over cells of |K| [(rho (v . grad) v - f) . eta + mu (grad v + grad v^T) : grad eta - p div eta]

    The convective term is the momentum rows' own upwind operator and grad eta
    is the face-sum gradient, so sum_K |K| div eta vanishes on a closed
    obstacle and J does not see the pressure level.
    """
    ops = fv_operators(mesh)
    grad_v, _ = velocity_gradient(state.v, state.boundary_velocity, mesh)
    grad_eta = ops.green_gauss_gradient(eta, eta_boundary_values(mesh))

    force = np.asarray(props.body_force, dtype=float)
    strain = grad_v + np.transpose(grad_v, (0, 2, 1))
    div_eta = grad_eta[:, 0, 0] + grad_eta[:, 1, 1]
    density = (
        -(eta @ force)
        + state.mu_cells * np.einsum('cij,cij->c', strain, grad_eta)
        - state.p * div_eta
    )
    J = float(np.dot(ops.volume, density))

    if state.convection:
        solver = SimpleSolver(mesh, state.rho_cells, state.rho_faces, state.mu_faces,
                              SimpleSettings(beta_conv=state.beta_conv))
        convective = solver.convection(state.v, state.boundary_velocity, state.mass_flux)
        J += float(np.einsum('ci,ci->', convective, eta))
    return J
