"""
Displacement and centre-of-buoyancy constraints.

Components 0..d-1 are the first moments of the wetted volume, component d is
the wetted volume itself; all are measured as deviations from the reference
domain.
"""
from dataclasses import dataclass
import logging

import numpy as np

from src.services.flow_service import Concentration
from src.services.mesh_service import Mesh
from src.utils.constants import PATCH_OBS_FREE

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ConstraintState:
    g: np.ndarray
    reference: np.ndarray


def _wet_integrals(mesh: Mesh, c: Concentration) -> np.ndarray:
    geo = mesh.geometry
    wet = geo.cell_volume * (1.0 - c.cells)
    moments = wet @ geo.cell_centroid
    return np.append(moments, wet.sum())


def capture_reference(mesh: Mesh, c: Concentration) -> np.ndarray:
    """Reference integrals (int (1-c) x_i dx, int (1-c) dx) on the initial domain by midpoint quadrature"""
    reference = _wet_integrals(mesh, c)
    logger.info(f"Constraint reference captured: volume {reference[-1]:.6e}, "
                f"moments {np.array2string(reference[:-1], precision=6)}")
    return reference


def evaluate_constraints(mesh: Mesh, c: Concentration, reference: np.ndarray) -> np.ndarray:
    """Current wetted integrals minus the reference"""
    return _wet_integrals(mesh, c) - reference


def constraint_state(mesh: Mesh, c: Concentration, reference: np.ndarray) -> ConstraintState:
    return ConstraintState(g=evaluate_constraints(mesh, c, reference), reference=np.asarray(reference))


def constraint_densities(mesh: Mesh, c: Concentration) -> np.ndarray:
    """
    Per-face constraint densities ((1-c) x_1, (1-c) x_2, (1-c))

    Returns:
        (nf, d+1) array, zero on every face that is not deformable obstacle
    """
    geo = mesh.geometry
    faces = mesh.patch_faces(PATCH_OBS_FREE)
    densities = np.zeros((mesh.n_faces, mesh.dim + 1))
    wet = 1.0 - c.faces[faces]
    densities[faces, :mesh.dim] = wet[:, None] * geo.face_centroid[faces]
    densities[faces, mesh.dim] = wet
    return densities


def normal_flux(mesh: Mesh, V: np.ndarray) -> np.ndarray:
    """(V_f . n_f) |S_f| per face with V_f the average of the face's vertex values"""
    geo = mesh.geometry
    V_face = mesh.vertex_to_face(V)
    return np.einsum('fi,fi->f', V_face, geo.face_normal) * geo.face_area


def constraint_pairing(mesh: Mesh, c: Concentration, V: np.ndarray) -> np.ndarray:
    """
    First-order change of the constraints along V

    Component i is the sum over deformable obstacle faces of density_i (V . n) |S|
    with n the outward normal of the flow domain, so that
    g(eps) = g(0) + eps * pairing + O(eps^2) for the mesh moved by eps V.
    """
    return constraint_densities(mesh, c).T @ normal_flux(mesh, V)


def constraint_scales(reference: np.ndarray, diameter: float) -> np.ndarray:
    """Normalisation for |g_i|: |volume| * diameter for the moments, |volume| for the volume"""
    volume = abs(float(reference[-1]))
    if volume == 0.0:
        volume = 1.0
    scales = np.full(len(reference), volume * diameter)
    scales[-1] = volume
    return scales
