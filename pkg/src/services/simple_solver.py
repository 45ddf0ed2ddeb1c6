"""
Colocated cell-centred finite-volume operators and the SIMPLE-type
pressure-velocity iteration shared by the primal and adjoint solvers.

Conventions:
    * face arrays have length nf; boundary faces have neighbor == -1
    * S_f = n_f |S_f| points out of the owner
    * d_f = x_N - x_P on interior faces, x_f - x_P on boundary faces
    * vector gradients are stored as G[..., j, k] = d(phi_j)/d(x_k)
"""
from collections import deque
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, List, Optional, Tuple
import logging

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from src.services.mesh_service import Mesh
from src.utils.constants import PATCH_OUTLET
from src.utils.exceptions import LinearSolverError

logger = logging.getLogger(__name__)

# Lower bound on S.d / (|S||d|) used in the two-point diffusion coefficient
MIN_ORTHOGONALITY = 0.05


class FvOperators:
    """Per-mesh geometric coefficients for face interpolation, diffusion and least-squares gradients"""

    def __init__(self, mesh: Mesh):
        geo = mesh.geometry
        self.mesh = mesh
        self.n_cells = mesh.n_cells
        self.n_faces = mesh.n_faces
        self.volume = geo.cell_volume
        self.owner = mesh.face_owner
        self.neighbor = mesh.face_neighbor
        self.interior = mesh.interior_faces
        self.boundary = mesh.boundary_faces
        self.area = geo.face_area
        self.normal = geo.face_normal
        self.S = geo.face_normal * geo.face_area[:, None]

        xc = geo.cell_centroid
        P = self.owner
        N = self.neighbor
        d = geo.face_centroid - xc[P]
        d[self.interior] = xc[N[self.interior]] - xc[P[self.interior]]
        self.d = d

        d_norm = np.linalg.norm(d, axis=1)
        sd = np.einsum('fi,fi->f', self.S, d)
        sd = np.maximum(sd, MIN_ORTHOGONALITY * self.area * d_norm)
        self.sd = sd
        self.T = self.area ** 2 / sd
        self.k = self.S - d * self.T[:, None]

        # Owner weight for linear interpolation to interior faces
        w = np.ones(self.n_faces)
        fi = self.interior
        dist_P = np.linalg.norm(geo.face_centroid[fi] - xc[P[fi]], axis=1)
        dist_N = np.linalg.norm(geo.face_centroid[fi] - xc[N[fi]], axis=1)
        w[fi] = dist_N / (dist_P + dist_N)
        self.w_owner = w

        # Sparse scatter matrices: face -> owner, face -> neighbour
        faces = np.arange(self.n_faces)
        self.to_owner = sp.csr_matrix(
            (np.ones(self.n_faces), (P, faces)), shape=(self.n_cells, self.n_faces)
        )
        self.to_neighbor = sp.csr_matrix(
            (np.ones(fi.size), (N[fi], fi)), shape=(self.n_cells, self.n_faces)
        )
        self.divergence_matrix = (self.to_owner - self.to_neighbor).tocsr()
        self.to_both = (self.to_owner + self.to_neighbor).tocsr()
        self.interior_to_owner = self.to_owner[:, fi].tocsr()
        self.interior_to_neighbor = self.to_neighbor[:, fi].tocsr()

        # Least-squares normal matrices, weights 1/|d|^2
        self.lsq_weight = 1.0 / d_norm ** 2
        outer = self.lsq_weight[:, None, None] * d[:, :, None] * d[:, None, :]
        lhs = np.zeros((self.n_cells, 2, 2))
        for a in range(2):
            for b in range(2):
                lhs[:, a, b] = self.to_both @ outer[:, a, b]
        self.lsq_inverse = np.linalg.inv(lhs)

        self.outlet = mesh.face_kind == PATCH_OUTLET

    def divergence(self, face_flux: np.ndarray) -> np.ndarray:
        """Net outward face flux per cell"""
        return self.divergence_matrix @ face_flux

    def interpolate(self, cell_values: np.ndarray, boundary_values: Optional[np.ndarray] = None) -> np.ndarray:
        """Linear interpolation to faces; boundary faces take boundary_values (or the owner value)"""
        P, N, fi = self.owner, self.neighbor, self.interior
        w = self.w_owner.reshape((-1,) + (1,) * (cell_values.ndim - 1))
        faces = cell_values[P].copy() if boundary_values is None else np.array(boundary_values, dtype=float)
        faces[fi] = w[fi] * cell_values[P[fi]] + (1.0 - w[fi]) * cell_values[N[fi]]
        return faces

    def cell_gradient(self, phi: np.ndarray, phi_b: np.ndarray) -> np.ndarray:
        """
        Least-squares cell gradient

        Args:
            phi: (nc,) or (nc, m) cell values
            phi_b: (nf,) or (nf, m) face values; only boundary entries are read

        Returns:
            (nc, 2) or (nc, m, 2) gradient
        """
        scalar = phi.ndim == 1
        values = phi.reshape(self.n_cells, -1)
        bvalues = np.asarray(phi_b, dtype=float).reshape(self.n_faces, -1)
        P, N, fi, fb = self.owner, self.neighbor, self.interior, self.boundary

        delta = np.empty_like(bvalues)
        delta[fi] = values[N[fi]] - values[P[fi]]
        delta[fb] = bvalues[fb] - values[P[fb]]
        weighted = self.lsq_weight[:, None, None] * delta[:, :, None] * self.d[:, None, :]

        rhs = np.empty((self.n_cells,) + weighted.shape[1:])
        for m in range(weighted.shape[1]):
            for a in range(2):
                rhs[:, m, a] = self.to_both @ weighted[:, m, a]
        grad = np.einsum('cab,cmb->cma', self.lsq_inverse, rhs)
        return grad[:, 0, :] if scalar else grad

    def green_gauss_gradient(self, phi: np.ndarray, phi_b: np.ndarray) -> np.ndarray:
        """
        Face-sum cell gradient |K| G_K = sum_f phi_f S_f

        Summed over all cells the interior faces cancel, so sum_K |K| G_K is
        exactly the boundary integral of phi_b n.
        """
        scalar = phi.ndim == 1
        values = phi.reshape(self.n_cells, -1)
        bvalues = np.asarray(phi_b, dtype=float).reshape(self.n_faces, -1)
        faces = self.interpolate(values, bvalues)
        flux = faces[:, :, None] * self.S[:, None, :]
        grad = np.empty((self.n_cells,) + flux.shape[1:])
        for m in range(flux.shape[1]):
            for a in range(2):
                grad[:, m, a] = self.divergence_matrix @ flux[:, m, a]
        grad /= self.volume[:, None, None]
        return grad[:, 0, :] if scalar else grad

    def extrapolate(self, phi: np.ndarray, grad: np.ndarray, tangential: bool = False) -> np.ndarray:
        """Boundary-face values phi_P + G_P . d, optionally dropping the normal part of d"""
        P, fb = self.owner, self.boundary
        d = self.d[fb]
        if tangential:
            d = d - np.einsum('fi,fi->f', d, self.normal[fb])[:, None] * self.normal[fb]
        values = np.zeros((self.n_faces,) + phi.shape[1:])
        values[fb] = phi[P[fb]] + np.einsum('f...i,fi->f...', grad[P[fb]], d)
        return values

    def gradient(
        self,
        phi: np.ndarray,
        phi_b: np.ndarray,
        fixed: np.ndarray,
        tangential: bool = False,
        sweeps: int = 3,
    ) -> Tuple[np.ndarray, np.ndarray]:
        """
        Cell gradient with boundary values fixed on some faces and extrapolated on the rest

        Args:
            phi: Cell values
            phi_b: Face values used where fixed is True
            fixed: (nf,) mask of faces with prescribed boundary values
            tangential: Extrapolate along the face only (zero normal gradient)
            sweeps: Fixed-point sweeps for the extrapolated faces

        Returns:
            Tuple of (cell gradient, completed boundary values)
        """
        values = np.array(phi_b, dtype=float)
        free = ~fixed
        free[self.interior] = False
        values[free] = phi[self.owner[free]]
        grad = self.cell_gradient(phi, values)
        for _ in range(sweeps):
            values[free] = self.extrapolate(phi, grad, tangential)[free]
            grad = self.cell_gradient(phi, values)
        return grad, values

    def boundary_face_gradient(self, phi: np.ndarray, grad: np.ndarray, phi_b: np.ndarray, faces: np.ndarray) -> np.ndarray:
        """
        One-sided face gradient corrected to honour the boundary value

        G_f = G_P + ((phi_b - phi_P - G_P . d) outer n) / (d . n)
        """
        P = self.owner[faces]
        d = self.d[faces]
        n = self.normal[faces]
        dn = np.einsum('fi,fi->f', d, n)
        G = grad[P]
        jump = phi_b[faces] - phi[P] - np.einsum('f...i,fi->f...', G, d)
        jump = jump / dn.reshape((-1,) + (1,) * (jump.ndim - 1))
        return G + jump[..., None] * n.reshape((-1,) + (1,) * (jump.ndim - 1) + (2,))


@lru_cache(maxsize=8)
def fv_operators(mesh: Mesh) -> FvOperators:
    return FvOperators(mesh)


def factorize(matrix: sp.spmatrix, label: str):
    """Sparse LU factorisation with solver failures mapped to LinearSolverError"""
    try:
        return splu(matrix.tocsc())
    except RuntimeError as e:
        logger.error(f"Factorisation of the {label} matrix failed: {e}")
        raise LinearSolverError(f"{label} matrix is singular: {e}") from e


@dataclass
class SimpleSettings:
    relax_velocity: float = 0.7
    relax_pressure: float = 0.3
    beta_conv: float = 0.0
    max_iterations: int = 3000
    tolerance: float = 1e-8
    average_window: int = 50
    averaging_tolerance: float = 1e-4
    convection: bool = True


@dataclass
class SimpleResult:
    u: np.ndarray
    p: np.ndarray
    face_flux: np.ndarray
    boundary_velocity: np.ndarray
    residual_history: List[Tuple[int, float, float]] = field(default_factory=list)
    converged: bool = False
    averaged: bool = False
    iterations: int = 0


class SimpleSolver:
    """
    Steady incompressible momentum/continuity iteration on a fixed mesh.

    Momentum: rho (a . grad) u - div(mu (grad u + grad u^T)) + grad p = f + s,
    continuity: div u = 0. The convecting velocity a is the solver's own flux
    (primal) or a frozen flux passed in by the caller (adjoint).
    """

    def __init__(self, mesh: Mesh, rho_cells: np.ndarray, rho_faces: np.ndarray, mu_faces: np.ndarray,
                 settings: SimpleSettings):
        self.mesh = mesh
        self.ops = fv_operators(mesh)
        self.rho_cells = rho_cells
        self.rho_faces = rho_faces
        self.mu_faces = mu_faces
        self.settings = settings
        # Outlet faces: no viscous flux and p = 0, so the discrete traction vanishes there
        self.velocity_fixed = ~self.ops.outlet
        self.velocity_fixed[self.ops.interior] = False
        self.pressure_fixed = self.ops.outlet.copy()
        self.has_outlet = bool(self.ops.outlet.any())
        self.dirichlet_faces = np.flatnonzero(self.velocity_fixed)
        self.dirichlet_to_owner = self.ops.to_owner[:, self.dirichlet_faces].tocsr()

    def _assemble_momentum(
        self,
        u: np.ndarray,
        grad_u: np.ndarray,
        ub: np.ndarray,
        grad_p: np.ndarray,
        mass_flux: Optional[np.ndarray],
        source: np.ndarray,
    ) -> Tuple[sp.csr_matrix, np.ndarray, np.ndarray]:
        ops = self.ops
        P, N, fi = ops.owner, ops.neighbor, ops.interior
        fd = self.dirichlet_faces
        mu = self.mu_faces
        beta = self.settings.beta_conv

        D = mu * ops.T
        diag = np.zeros(ops.n_cells)
        b = source.copy()

        # Interior diffusion
        Di = D[fi]
        rows = [P[fi], N[fi]]
        cols = [N[fi], P[fi]]
        vals_PN = -Di.copy()
        vals_NP = -Di.copy()
        np.add.at(diag, P[fi], Di)
        np.add.at(diag, N[fi], Di)

        # Explicit non-orthogonal and transpose-viscous fluxes
        wP = ops.w_owner[fi][:, None, None]
        g_face = wP * grad_u[P[fi]] + (1.0 - wP) * grad_u[N[fi]]
        explicit = mu[fi][:, None] * (
            np.einsum('fjk,fk->fj', g_face, ops.k[fi]) + np.einsum('fji,fj->fi', g_face, ops.S[fi])
        )
        b += ops.interior_to_owner @ explicit - ops.interior_to_neighbor @ explicit

        if mass_flux is not None:
            m = mass_flux[fi]
            m_in_P = np.minimum(m, 0.0)
            m_in_N = np.minimum(-m, 0.0)
            vals_PN += m_in_P
            vals_NP += m_in_N
            np.add.at(diag, P[fi], -m_in_P)
            np.add.at(diag, N[fi], -m_in_N)
            if beta > 0.0:
                jump = u[N[fi]] - u[P[fi]]
                w1 = ops.w_owner[fi]
                corr_P = (m * (1.0 - w1) - m_in_P)[:, None] * jump
                corr_N = (m * w1 + m_in_N)[:, None] * jump
                b -= beta * (ops.interior_to_owner @ corr_P)
                b -= beta * (ops.interior_to_neighbor @ corr_N)

        # Dirichlet boundary faces
        Db = D[fd]
        coef = Db.copy()
        if mass_flux is not None:
            coef -= np.minimum(mass_flux[fd], 0.0)
        np.add.at(diag, P[fd], coef)
        grad_face = ops.boundary_face_gradient(u, grad_u, ub, fd)
        explicit_b = coef[:, None] * ub[fd] + mu[fd][:, None] * (
            np.einsum('fjk,fk->fj', grad_u[P[fd]], ops.k[fd]) + np.einsum('fji,fj->fi', grad_face, ops.S[fd])
        )
        b += self.dirichlet_to_owner @ explicit_b

        b -= ops.volume[:, None] * grad_p

        A = sp.csr_matrix(
            (np.concatenate([diag] + [vals_PN, vals_NP]),
             (np.concatenate([np.arange(ops.n_cells)] + rows), np.concatenate([np.arange(ops.n_cells)] + cols))),
            shape=(ops.n_cells, ops.n_cells),
        )
        return A, b, diag

    def convection(self, u: np.ndarray, ub: np.ndarray, mass_flux: np.ndarray) -> np.ndarray:
        """
        Volume-integrated convective term of the momentum rows, rho (a . grad) u |K|

        Same upwind/beta blending as the momentum assembly, evaluated explicitly.
        """
        ops = self.ops
        P, N, fi = ops.owner, ops.neighbor, ops.interior
        fd = self.dirichlet_faces
        m = mass_flux[fi]
        m_in_P = np.minimum(m, 0.0)
        m_in_N = np.minimum(-m, 0.0)
        jump = u[N[fi]] - u[P[fi]]
        term_P = m_in_P[:, None] * jump
        term_N = -m_in_N[:, None] * jump
        beta = self.settings.beta_conv
        if beta > 0.0:
            w1 = ops.w_owner[fi]
            term_P += beta * (m * (1.0 - w1) - m_in_P)[:, None] * jump
            term_N += beta * (m * w1 + m_in_N)[:, None] * jump

        inflow = -np.minimum(mass_flux[fd], 0.0)
        boundary = inflow[:, None] * (u[P[fd]] - ub[fd])
        return (ops.interior_to_owner @ term_P + ops.interior_to_neighbor @ term_N
                + self.dirichlet_to_owner @ boundary)

    def _face_flux(self, u: np.ndarray, ub: np.ndarray, p: np.ndarray, grad_p: np.ndarray,
                   dP: np.ndarray) -> np.ndarray:
        """Momentum-weighted (Rhie-Chow) volumetric face flux"""
        ops = self.ops
        P, N, fi = ops.owner, ops.neighbor, ops.interior
        flux = np.einsum('fi,fi->f', ub, ops.S)

        w = ops.w_owner[fi]
        u_face = w[:, None] * u[P[fi]] + (1.0 - w)[:, None] * u[N[fi]]
        g_face = w[:, None] * grad_p[P[fi]] + (1.0 - w)[:, None] * grad_p[N[fi]]
        d_face = w * dP[P[fi]] + (1.0 - w) * dP[N[fi]]
        jump = p[N[fi]] - p[P[fi]] - np.einsum('fi,fi->f', g_face, ops.d[fi])
        flux[fi] = np.einsum('fi,fi->f', u_face, ops.S[fi]) - d_face * ops.T[fi] * jump

        fo = np.flatnonzero(ops.outlet)
        if fo.size:
            Po = P[fo]
            jump_o = -p[Po] - np.einsum('fi,fi->f', grad_p[Po], ops.d[fo])
            flux[fo] = np.einsum('fi,fi->f', u[Po], ops.S[fo]) - dP[Po] * ops.T[fo] * jump_o
        return flux

    def _pressure_matrix(self, dP: np.ndarray) -> Tuple[sp.csr_matrix, np.ndarray]:
        ops = self.ops
        P, N, fi = ops.owner, ops.neighbor, ops.interior
        coef = np.zeros(ops.n_faces)
        w = ops.w_owner[fi]
        coef[fi] = (w * dP[P[fi]] + (1.0 - w) * dP[N[fi]]) * ops.T[fi]
        fo = np.flatnonzero(ops.outlet)
        coef[fo] = dP[P[fo]] * ops.T[fo]

        diag = ops.to_owner @ coef + ops.to_neighbor @ coef
        A = sp.csr_matrix(
            (np.concatenate([diag, -coef[fi], -coef[fi]]),
             (np.concatenate([np.arange(ops.n_cells), P[fi], N[fi]]),
              np.concatenate([np.arange(ops.n_cells), N[fi], P[fi]]))),
            shape=(ops.n_cells, ops.n_cells),
        ).tolil()
        if not self.has_outlet:
            A[0, :] = 0.0
            A[0, 0] = 1.0
        return A.tocsr(), coef

    def solve(
        self,
        boundary_velocity: np.ndarray,
        u0: np.ndarray,
        p0: np.ndarray,
        body_force: Optional[np.ndarray] = None,
        frozen_mass_flux: Optional[np.ndarray] = None,
        explicit_source: Optional[Callable[[np.ndarray, np.ndarray], np.ndarray]] = None,
        residual_reference: Tuple[float, float] = (1.0, 1.0),
        label: str = "flow",
    ) -> SimpleResult:
        """
        Run the pressure-velocity iteration to convergence

        Args:
            boundary_velocity: (nf, 2) Dirichlet data on non-outlet boundary faces
            u0: (nc, 2) initial velocity
            p0: (nc,) initial pressure
            body_force: Constant (2,) force density f
            frozen_mass_flux: Convecting mass flux; None convects with the solver's own flux
            explicit_source: Callable (u, grad_u) -> (nc, 2) extra right-hand side
            residual_reference: Floors (momentum, continuity) for residual normalisation
            label: Name used in log messages

        Returns:
            SimpleResult; converged is False when max_iterations ran out
        """
        cfg = self.settings
        ops = self.ops
        u = np.array(u0, dtype=float)
        p = np.array(p0, dtype=float)
        ub = np.array(boundary_velocity, dtype=float)
        pb = np.zeros(ops.n_faces)
        force = np.zeros(2) if body_force is None else np.asarray(body_force, dtype=float)
        force_source = ops.volume[:, None] * np.broadcast_to(force, (ops.n_cells, 2))

        grad_u, ub = ops.gradient(u, ub, self.velocity_fixed, tangential=True)
        grad_p, pb = ops.gradient(p, pb, self.pressure_fixed)
        flux = ops.interpolate(u, ub)
        flux = np.einsum('fi,fi->f', flux, ops.S)
        fo = np.flatnonzero(ops.outlet)
        flux[fo] = np.einsum('fi,fi->f', u[ops.owner[fo]], ops.S[fo])

        history: List[Tuple[int, float, float]] = []
        window = deque(maxlen=max(cfg.average_window, 1))
        norm_mom = norm_cont = None
        result = SimpleResult(u=u, p=p, face_flux=flux, boundary_velocity=ub)

        for it in range(1, cfg.max_iterations + 1):
            if not cfg.convection:
                mass_flux = None
            elif frozen_mass_flux is not None:
                mass_flux = frozen_mass_flux
            else:
                mass_flux = self.rho_faces * flux

            source = force_source.copy()
            if explicit_source is not None:
                source = source + explicit_source(u, grad_u)

            A, b, diag = self._assemble_momentum(u, grad_u, ub, grad_p, mass_flux, source)
            res_mom = float(np.abs(b - A @ u).sum())

            a_relaxed = diag / cfg.relax_velocity
            A_relaxed = A + sp.diags(a_relaxed - diag)
            b_relaxed = b + (a_relaxed - diag)[:, None] * u
            lu = factorize(A_relaxed, f"{label} momentum")
            u_star = np.column_stack([lu.solve(b_relaxed[:, j]) for j in range(2)])

            dP = ops.volume / a_relaxed
            flux_star = self._face_flux(u_star, ub, p, grad_p, dP)
            imbalance = ops.divergence(flux_star)
            res_cont = float(np.abs(imbalance).sum())

            if norm_mom is None:
                norm_mom = max(res_mom, residual_reference[0])
                norm_cont = max(res_cont, residual_reference[1])
            r_mom = res_mom / norm_mom
            r_cont = res_cont / norm_cont
            history.append((it, r_mom, r_cont))
            logger.debug(f"{label} iteration {it}: momentum {r_mom:.3e}, continuity {r_cont:.3e}")

            Ap, coef = self._pressure_matrix(dP)
            rhs = -imbalance
            if not self.has_outlet:
                rhs[0] = 0.0
            p_corr = factorize(Ap, f"{label} pressure").solve(rhs)

            grad_pc, _ = ops.gradient(p_corr, np.zeros(ops.n_faces), self.pressure_fixed)
            u = u_star - dP[:, None] * grad_pc
            p = p + cfg.relax_pressure * p_corr
            fi = ops.interior
            flux = flux_star.copy()
            flux[fi] -= coef[fi] * (p_corr[ops.neighbor[fi]] - p_corr[ops.owner[fi]])
            flux[fo] -= coef[fo] * (0.0 - p_corr[ops.owner[fo]])

            grad_u, ub = ops.gradient(u, ub, self.velocity_fixed, tangential=True, sweeps=1)
            grad_p, pb = ops.gradient(p, pb, self.pressure_fixed, sweeps=1)
            window.append((u.copy(), p.copy(), flux.copy()))

            result = SimpleResult(u=u, p=p, face_flux=flux, boundary_velocity=ub,
                                  residual_history=history, iterations=it)
            if r_mom <= cfg.tolerance and r_cont <= cfg.tolerance:
                result.converged = True
                logger.info(f"{label} converged in {it} iterations")
                return result

        tail = history[-cfg.average_window:] if cfg.average_window > 0 else []
        stagnated = (
            cfg.average_window > 0
            and len(tail) == cfg.average_window
            and max(max(r[1], r[2]) for r in tail) <= cfg.averaging_tolerance
        )
        if stagnated:
            result.u = np.mean([s[0] for s in window], axis=0)
            result.p = np.mean([s[1] for s in window], axis=0)
            result.face_flux = np.mean([s[2] for s in window], axis=0)
            _, result.boundary_velocity = ops.gradient(result.u, ub, self.velocity_fixed, tangential=True)
            result.averaged = True
            logger.warning(
                f"{label} residuals stagnated after {cfg.max_iterations} iterations; "
                f"returning the average of the last {cfg.average_window} iterates"
            )
        else:
            logger.warning(f"{label} did not converge in {cfg.max_iterations} iterations")
        return result
