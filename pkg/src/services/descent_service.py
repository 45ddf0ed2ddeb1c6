"""
Constrained descent direction from the p-Laplace relaxed steepest-descent
problem, solved by Picard iteration with p-continuation and an augmented
Lagrange multiplier update.
"""
from dataclasses import dataclass, field
from functools import lru_cache
from typing import List, Optional, Sequence, Tuple
import logging

import numpy as np
import scipy.sparse as sp

from src.config import (
    DESCENT_P_SEQUENCE,
    DESCENT_TOLERANCE,
    DESCENT_TAU,
    DESCENT_RELAX,
    DESCENT_EPS_REG,
    DESCENT_MAX_PICARD_ITERS,
)
from src.services.flow_service import Concentration
from src.services.mesh_service import Mesh
from src.services.sensitivity_service import SensitivityForm
from src.services.simple_solver import factorize
from src.utils.constants import METRIC_IDENTITY, METRIC_STIFFNESS
from src.utils.exceptions import DescentError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class DescentConfig:
    p_sequence: Tuple[float, ...] = DESCENT_P_SEQUENCE
    relax: float = DESCENT_RELAX
    tol: float = DESCENT_TOLERANCE
    tau: float = DESCENT_TAU
    eps_reg: float = DESCENT_EPS_REG
    max_picard_iters: int = DESCENT_MAX_PICARD_ITERS
    multiplier_metric: str = METRIC_IDENTITY

    def __post_init__(self):
        p = list(self.p_sequence)
        if not p or p[0] != 2.0:
            raise ValueError("p_sequence must start at 2")
        if any(b <= a for a, b in zip(p, p[1:])):
            raise ValueError("p_sequence must be strictly increasing")
        if not 0.0 < self.relax < 2.0:
            raise ValueError("relax must lie in (0, 2)")
        if self.tol <= 0.0 or self.tau <= 0.0:
            raise ValueError("tol and tau must be positive")
        if self.eps_reg < 0.0 or self.max_picard_iters < 1:
            raise ValueError("eps_reg must be non-negative and max_picard_iters at least 1")
        if self.multiplier_metric not in (METRIC_IDENTITY, METRIC_STIFFNESS):
            raise ValueError(f"Unknown multiplier metric: {self.multiplier_metric}")


@dataclass
class DescentResult:
    V: np.ndarray
    lam: np.ndarray
    residual_history: List[Tuple[float, int, float, float, float, float]] = field(default_factory=list)
    p_trace: List[float] = field(default_factory=list)
    converged: bool = True

    @property
    def iterations(self) -> int:
        return len(self.residual_history)


class DescentOperators:
    """P1 vertex operators of a mesh: basis gradients, normal-flux maps and the lumped mass"""

    def __init__(self, mesh: Mesh):
        self.mesh = mesh
        x = mesh.vertices
        cells = mesh.cells
        area = mesh.geometry.cell_volume
        self.area = area

        x0, x1, x2 = (x[cells[:, k]] for k in range(3))
        grads = np.stack([
            np.column_stack((x1[:, 1] - x2[:, 1], x2[:, 0] - x1[:, 0])),
            np.column_stack((x2[:, 1] - x0[:, 1], x0[:, 0] - x2[:, 0])),
            np.column_stack((x0[:, 1] - x1[:, 1], x1[:, 0] - x0[:, 0])),
        ], axis=1) / (2.0 * area)[:, None, None]
        self.basis_gradients = grads

        self.rows = np.repeat(cells, 3, axis=1).ravel()
        self.cols = np.tile(cells, (1, 3)).ravel()
        self.local = np.einsum('cik,cjk->cij', grads, grads).reshape(len(cells), 9)

        self.mass = np.zeros(mesh.n_vertices)
        np.add.at(self.mass, cells.ravel(), np.repeat(area / 3.0, 3))

        fixed = mesh.fixed_vertex_mask()
        self.free = np.flatnonzero(~fixed)
        self.fixed = np.flatnonzero(fixed)

        # Normal flux (V_f . n_f)|S_f| = sum over components of N_comp @ V[:, comp]
        geo = mesh.geometry
        nf = mesh.n_faces
        fv = mesh.face_vertices
        self.normal_flux_maps = []
        for comp in range(2):
            weight = 0.5 * geo.face_normal[:, comp] * geo.face_area
            self.normal_flux_maps.append(sp.csr_matrix(
                (np.concatenate([weight, weight]),
                 (np.concatenate([np.arange(nf), np.arange(nf)]), np.concatenate([fv[:, 0], fv[:, 1]]))),
                shape=(nf, mesh.n_vertices),
            ))

    def cell_gradient(self, V: np.ndarray) -> np.ndarray:
        """(nc, 2, 2) gradient of the P1 field, [cell, component, direction]"""
        return np.einsum('cij,cik->cjk', V[self.mesh.cells], self.basis_gradients)

    def stiffness(self, weight: np.ndarray) -> sp.csr_matrix:
        values = (self.area * weight)[:, None] * self.local
        n = self.mesh.n_vertices
        return sp.csr_matrix((values.ravel(), (self.rows, self.cols)), shape=(n, n))

    def load(self, density: np.ndarray) -> np.ndarray:
        """Vertex load of the negative linear form: -sum_f G_f n_f |S_f| / 2 on each face vertex"""
        return -np.column_stack([N.T @ density for N in self.normal_flux_maps])

    def constraint_rows(self, constraint_densities: np.ndarray) -> List[np.ndarray]:
        """Dense (d+1, nv) blocks B_comp with pairing(V) = sum_comp B_comp @ V[:, comp]"""
        return [np.asarray((N.T @ constraint_densities).T) for N in self.normal_flux_maps]

    def l2_squared(self, V: np.ndarray) -> float:
        return float(np.dot(self.mass, np.einsum('vi,vi->v', V, V)))


@lru_cache(maxsize=8)
def descent_operators(mesh: Mesh) -> DescentOperators:
    return DescentOperators(mesh)


def p_weight(grad: np.ndarray, p: float, eps_reg: float) -> np.ndarray:
    """Cell-wise Picard weight (grad V : grad V + eps_reg)^((p-2)/2)"""
    if p == 2.0:
        return np.ones(len(grad))
    return (np.einsum('cjk,cjk->c', grad, grad) + eps_reg) ** ((p - 2.0) / 2.0)


def _solve_reduced(ops: DescentOperators, K: sp.csr_matrix, rhs: np.ndarray) -> np.ndarray:
    free = ops.free
    V = np.zeros((ops.mesh.n_vertices, 2))
    if not free.size:
        return V
    lu = factorize(K[free][:, free], "descent")
    V[free] = np.column_stack([lu.solve(rhs[free, j]) for j in range(2)])
    return V


def picard_step(
    V_prev: np.ndarray,
    form: SensitivityForm,
    lam: np.ndarray,
    g: np.ndarray,
    mesh: Mesh,
    p: float,
    eps_reg: float,
) -> np.ndarray:
    """
    Linearised p-Laplace step

    Solves sum_K w_K |K| grad V : grad psi = -J'(psi) with the weight frozen at V_prev,
    V = 0 on the outer boundary and the fixed obstacle, natural on the deformable obstacle.

    Returns:
        (nv, 2) vertex field; exactly zero on constrained vertices
    """
    ops = descent_operators(mesh)
    weight = p_weight(ops.cell_gradient(V_prev), p, eps_reg)
    rhs = ops.load(form.density(lam, g))
    return _solve_reduced(ops, ops.stiffness(weight), rhs)


def direct_solve(form: SensitivityForm, mesh: Mesh, p: float = 2.0, eps_reg: float = DESCENT_EPS_REG) -> np.ndarray:
    """Single weighted-Laplace solve at V_prev = 0 with the form's own multipliers"""
    return picard_step(np.zeros((mesh.n_vertices, 2)), form, form.lam, form.g, mesh, p, eps_reg)


def update_multipliers(lam: np.ndarray, tau: float, pairing: np.ndarray,
                       metric: Optional[np.ndarray] = None) -> np.ndarray:
    """lam' = lam + tau * pairing, optionally preconditioned by a metric matrix"""
    step = np.asarray(pairing, dtype=float)
    if metric is not None:
        step = metric @ step
    return np.asarray(lam, dtype=float) + tau * step


def constraint_schur(ops: DescentOperators, weight: np.ndarray, constraint_densities: np.ndarray) -> np.ndarray:
    """M = B K^-1 B^T for the weighted Laplacian K restricted to the free vertices"""
    free = ops.free
    size = constraint_densities.shape[1]
    M = np.zeros((size, size))
    if not free.size:
        return M
    lu = factorize(ops.stiffness(weight)[free][:, free], "constraint Schur")
    for B in ops.constraint_rows(constraint_densities):
        Bf = B[:, free]
        M += Bf @ lu.solve(np.ascontiguousarray(Bf.T))
    return M


def multiplier_metric(ops: DescentOperators, weight: np.ndarray, constraint_densities: np.ndarray,
                      tau: float) -> np.ndarray:
    """
    Inverse of tau * M with M = B K^-1 B^T the constraint Schur matrix of the weighted Laplacian

    With this metric and p = 2 the multiplier update reaches the constrained
    optimum after a single Picard iteration.
    """
    return np.linalg.pinv(tau * constraint_schur(ops, weight, constraint_densities), hermitian=True)


@dataclass(frozen=True)
class ConstraintFrame:
    """
    Nondimensional constraint coordinates g_hat = T g

    Multipliers transform contragrediently, lam = T^T lam_hat, so the
    augmented form is the same in either set of coordinates.
    """

    transform: np.ndarray

    def to_frame(self, lam: np.ndarray) -> np.ndarray:
        return np.linalg.solve(self.transform.T, np.asarray(lam, dtype=float))

    def to_physical(self, lam_hat: np.ndarray) -> np.ndarray:
        return self.transform.T @ lam_hat

    def pairing(self, pairing: np.ndarray) -> np.ndarray:
        return self.transform @ np.asarray(pairing, dtype=float)


def constraint_frame(ops: DescentOperators, weight: np.ndarray, constraint_densities: np.ndarray,
                     tau: float) -> ConstraintFrame:
    """
    Centre the moments and scale every constraint by its own Schur energy

    The moments are taken about the centre of the volume response
    (x_i - M_iv / M_vv), which decouples them from the volume. Each row is then
    divided by sqrt(tau * gamma * M_ii), gamma the largest eigenvalue of the
    normalised Schur matrix, so tau * M_hat has its spectrum in (0, 1] and the
    plain update lam_hat + tau * pairing_hat contracts.
    """
    size = constraint_densities.shape[1]
    d = size - 1
    M = constraint_schur(ops, weight, constraint_densities)
    T = np.eye(size)
    if M[d, d] > 0.0:
        T[:d, d] = -M[:d, d] / M[d, d]
    M = T @ M @ T.T

    diag = np.diag(M).copy()
    active = diag > 1e-12 * max(diag.max(), 0.0)
    if not active.any():
        return ConstraintFrame(T)
    root = np.sqrt(diag[active])
    gamma = float(np.linalg.eigvalsh(M[np.ix_(active, active)] / np.outer(root, root)).max())
    scales = np.ones(size)
    scales[active] = np.sqrt(tau * gamma * diag[active])
    logger.debug(f"Constraint frame scales {np.array2string(scales, precision=3)} (gamma {gamma:.3f})")
    return ConstraintFrame(T / scales[:, None])


def solve_descent(
    form: SensitivityForm,
    mesh: Mesh,
    c: Concentration,
    cfg: DescentConfig,
    initial_lambda: Optional[Sequence[float]] = None,
) -> DescentResult:
    """
    Picard iteration for the augmented p-Laplace problem with continuation in p

    For each p: V~ = picard_step(V^{k-1}, lam^{k-1}); V^k = V^{k-1} + relax (V~ - V^{k-1});
    lam^k = lam^{k-1} + tau <g_u, V^k>; stop when
    R^k = |V^k - V^{k-1}|^2_L2 + |lam_bc^k - lam_bc^{k-1}|^2 + |lam_v^k - lam_v^{k-1}|^2 <= tol.
    The converged V of each p seeds the next.

    The multiplier update and its residuals live in the nondimensional
    constraint frame of each p stage (see constraint_frame); the stiffness
    metric option instead preconditions the physical update by (tau M)^-1.

    Args:
        form: Assembled sensitivity form (its constraint densities define <g_u, V>)
        mesh: Current mesh
        c: Concentration the form was assembled with
        cfg: Descent configuration
        initial_lambda: Starting multipliers (zero when omitted)

    Returns:
        DescentResult; converged is False (with the best iterate) if a p stage ran out of iterations
    """
    ops = descent_operators(mesh)
    d = mesh.dim
    lam = np.zeros(d + 1) if initial_lambda is None else np.asarray(initial_lambda, dtype=float).copy()
    V = np.zeros((mesh.n_vertices, 2))
    result = DescentResult(V=V, lam=lam)

    try:
        for p in cfg.p_sequence:
            weight = p_weight(ops.cell_gradient(V), p, cfg.eps_reg)
            metric = frame = None
            if cfg.multiplier_metric == METRIC_STIFFNESS:
                metric = multiplier_metric(ops, weight, form.constraint_densities, cfg.tau)
            else:
                frame = constraint_frame(ops, weight, form.constraint_densities, cfg.tau)

            best = (np.inf, V, lam)
            stage_converged = False
            for k in range(1, cfg.max_picard_iters + 1):
                V_tilde = picard_step(V, form, lam, form.g, mesh, p, cfg.eps_reg)
                if not np.all(np.isfinite(V_tilde)):
                    raise DescentError(f"Non-finite Picard iterate at p={p}, k={k}")
                V_new = V + cfg.relax * (V_tilde - V)
                pairing = form.pairing(V_new, mesh)
                if frame is None:
                    lam_new = update_multipliers(lam, cfg.tau, pairing, metric)
                    delta = lam_new - lam
                else:
                    lam_hat = frame.to_frame(lam)
                    lam_hat_new = update_multipliers(lam_hat, cfg.tau, frame.pairing(pairing))
                    lam_new = frame.to_physical(lam_hat_new)
                    delta = lam_hat_new - lam_hat

                res_V = ops.l2_squared(V_new - V)
                res_bc = float(np.sum(delta[:d] ** 2))
                res_v = float(delta[d] ** 2)
                R = res_V + res_bc + res_v
                result.residual_history.append((p, k, res_V, res_bc, res_v, R))
                result.p_trace.append(p)
                logger.debug(f"Picard p={p} k={k}: R={R:.3e} (V {res_V:.3e}, lam_bc {res_bc:.3e}, lam_v {res_v:.3e})")

                V, lam = V_new, lam_new
                if R < best[0]:
                    best = (R, V, lam)
                if R <= cfg.tol:
                    stage_converged = True
                    break

            if not stage_converged:
                logger.warning(f"Picard iteration for p={p} stopped after {cfg.max_picard_iters} iterations "
                               f"(best R = {best[0]:.3e})")
                result.V, result.lam = best[1], best[2]
                result.converged = False
                return result
            logger.info(f"Picard stage p={p} converged in {k} iterations")
    except Exception as e:
        logger.error(f"Descent solve failed: {e}")
        raise

    result.V, result.lam = V, lam
    return result


def extend_boundary_field(mesh: Mesh, values: np.ndarray) -> np.ndarray:
    """
    Harmonic (p = 2) extension of vertex values given on the deformable obstacle

    Args:
        mesh: Mesh
        values: (nv, 2) array; only entries on deformable-obstacle vertices are read

    Returns:
        (nv, 2) field equal to values on deformable-obstacle vertices, zero on
        every other boundary vertex and discrete-harmonic inside
    """
    ops = descent_operators(mesh)
    boundary = np.unique(mesh.face_vertices[mesh.boundary_faces])
    moving = np.setdiff1d(boundary, ops.fixed)
    interior = np.setdiff1d(np.arange(mesh.n_vertices), boundary)

    V = np.zeros((mesh.n_vertices, 2))
    V[moving] = values[moving]
    if interior.size:
        K = ops.stiffness(np.ones(mesh.n_cells))
        rhs = -(K[interior][:, moving] @ V[moving])
        lu = factorize(K[interior][:, interior], "extension")
        V[interior] = np.column_stack([lu.solve(rhs[:, j]) for j in range(2)])
    return V
