"""
Surface shape sensitivity and the augmented linear form V -> J'(Omega) V.
"""
from dataclasses import dataclass
from typing import Optional
import logging

import numpy as np

from src.services.adjoint_service import AdjointState
from src.services.constraint_service import constraint_densities, normal_flux
from src.services.flow_service import Concentration, PrimalState, velocity_gradient
from src.services.mesh_service import Mesh
from src.services.simple_solver import fv_operators
from src.utils.constants import PATCH_OBS_FREE

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SensitivityForm:
    """
    Per-face densities of the augmented shape derivative

    drag_density: (nf,) mu (dw/dn) . (dv/dn), zero off the deformable obstacle
    constraint_densities: (nf, d+1) ((1-c) x_i, (1-c)), zero off the deformable obstacle
    """

    drag_density: np.ndarray
    constraint_densities: np.ndarray
    lam: np.ndarray
    tau: float
    g: np.ndarray

    def density(self, lam: Optional[np.ndarray] = None, g: Optional[np.ndarray] = None) -> np.ndarray:
        """G = drag_density + constraint_densities . (lam - tau g)"""
        lam = self.lam if lam is None else np.asarray(lam, dtype=float)
        g = self.g if g is None else np.asarray(g, dtype=float)
        return self.drag_density + self.constraint_densities @ (lam - self.tau * g)

    def pairing(self, V: np.ndarray, mesh: Mesh) -> np.ndarray:
        """Constraint pairing of V using the densities carried by the form"""
        return self.constraint_densities.T @ normal_flux(mesh, V)

    def scaled(self, factor: float) -> "SensitivityForm":
        return SensitivityForm(self.drag_density * factor, self.constraint_densities, self.lam, self.tau, self.g)


def zero_form(mesh: Mesh, tau: float = 0.0) -> SensitivityForm:
    size = mesh.dim + 1
    return SensitivityForm(
        drag_density=np.zeros(mesh.n_faces),
        constraint_densities=np.zeros((mesh.n_faces, size)),
        lam=np.zeros(size),
        tau=tau,
        g=np.zeros(size),
    )


def drag_density(primal: PrimalState, adjoint: AdjointState, mesh: Mesh) -> np.ndarray:
    """mu_f (dw/dn) . (dv/dn) on deformable obstacle faces from one-sided corrected face gradients"""
    ops = fv_operators(mesh)
    faces = mesh.patch_faces(PATCH_OBS_FREE)
    density = np.zeros(mesh.n_faces)
    if not faces.size:
        return density

    grad_v, _ = velocity_gradient(primal.v, primal.boundary_velocity, mesh)
    grad_w, _ = velocity_gradient(adjoint.w, adjoint.boundary_velocity, mesh)
    Gv = ops.boundary_face_gradient(primal.v, grad_v, primal.boundary_velocity, faces)
    Gw = ops.boundary_face_gradient(adjoint.w, grad_w, adjoint.boundary_velocity, faces)
    n = ops.normal[faces]
    dv_dn = np.einsum('fij,fj->fi', Gv, n)
    dw_dn = np.einsum('fij,fj->fi', Gw, n)
    density[faces] = primal.mu_faces[faces] * np.einsum('fi,fi->f', dw_dn, dv_dn)
    return density


def assemble_sensitivity(
    primal: PrimalState,
    adjoint: AdjointState,
    mesh: Mesh,
    c: Concentration,
    lam: np.ndarray,
    tau: float,
    g: np.ndarray,
) -> SensitivityForm:
    """
    Assemble the augmented shape derivative

    J'(Omega) V = sum over deformable obstacle faces of G (V . n) |S| with
    G = mu dw/dn . dv/dn + sum_i (lam_i - tau g_i)(1-c) x_i + (lam_v - tau g_v)(1-c).

    Returns:
        SensitivityForm
    """
    form = SensitivityForm(
        drag_density=drag_density(primal, adjoint, mesh),
        constraint_densities=constraint_densities(mesh, c),
        lam=np.asarray(lam, dtype=float).copy(),
        tau=float(tau),
        g=np.asarray(g, dtype=float).copy(),
    )
    logger.debug(f"Sensitivity assembled: |G|_max = {np.abs(form.density()).max():.3e}")
    return form


def evaluate_form(form: SensitivityForm, V: np.ndarray, mesh: Mesh) -> float:
    """Face-midpoint quadrature of the sum of G (V . n) |S| over the deformable obstacle"""
    return float(form.density() @ normal_flux(mesh, V))
