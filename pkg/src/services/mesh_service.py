"""
Unstructured triangle meshes with tagged boundary patches.

A Mesh is an immutable snapshot: topology is built once by ``Mesh.from_arrays``
and shared by every mesh derived from it through ``apply_deformation``.
Faces are edges stored in the orientation of their owner cell, so the unit
normal (t_y, -t_x) always points out of the owner; on boundary faces that is
out of the flow domain, i.e. into the obstacle on obstacle patches.
"""
from dataclasses import dataclass, field, replace
from functools import cached_property
from pathlib import Path
from typing import Iterable, Optional, Sequence, Union
import logging

import numpy as np

from src.utils.constants import (
    PATCH_KINDS,
    OBSTACLE_KINDS,
    OUTER_KINDS,
    PATCH_OBS_FIXED,
    PATCH_OBS_FREE,
    MODE_FULL_HULL,
    MODE_UNDERWATER_ONLY,
    MSG_MESH_NOT_FOUND,
)
from src.utils.exceptions import MeshParseError, MeshTopologyError, MeshPatchError

logger = logging.getLogger(__name__)

INTERIOR = ""


def _frozen(array: np.ndarray) -> np.ndarray:
    array.setflags(write=False)
    return array


@dataclass(frozen=True)
class FaceGeometry:
    """Discrete geometry of a mesh: face lengths/normals/centroids, cell areas/centroids"""

    face_area: np.ndarray
    face_normal: np.ndarray
    face_centroid: np.ndarray
    cell_volume: np.ndarray
    cell_centroid: np.ndarray


@dataclass(frozen=True)
class QualityReport:
    min_cell_volume: float
    max_skewness: float
    valid: bool


@dataclass(frozen=True, eq=False)
class Mesh:
    """Simplicial 2D mesh with owner/neighbour face connectivity and patch tags"""

    vertices: np.ndarray
    cells: np.ndarray
    face_vertices: np.ndarray
    face_owner: np.ndarray
    face_neighbor: np.ndarray
    face_kind: np.ndarray
    dim: int = field(default=2)

    @classmethod
    def from_arrays(
        cls,
        vertices: np.ndarray,
        cells: np.ndarray,
        boundary_edges: np.ndarray,
        boundary_kinds: Sequence[str],
    ) -> "Mesh":
        """
        Build a mesh and its face topology from raw arrays

        Args:
            vertices: (nv, 2) coordinates
            cells: (nc, 3) counter-clockwise vertex indices
            boundary_edges: (nb, 2) vertex pairs of the tagged boundary faces
            boundary_kinds: patch kind of each boundary edge

        Returns:
            Mesh satisfying all topology and patch invariants
        """
        vertices = np.asarray(vertices, dtype=float)
        cells = np.asarray(cells, dtype=np.int64)
        boundary_edges = np.asarray(boundary_edges, dtype=np.int64).reshape(-1, 2)
        boundary_kinds = list(boundary_kinds)

        if vertices.ndim != 2 or vertices.shape[1] != 2:
            raise MeshTopologyError(f"Only 2D vertices are supported, got shape {vertices.shape}")
        if cells.ndim != 2 or cells.shape[1] != 3:
            raise MeshTopologyError(f"Cells must be vertex triples, got shape {cells.shape}")
        if cells.size and (cells.min() < 0 or cells.max() >= len(vertices)):
            raise MeshTopologyError("Cell references a vertex index out of range")
        if len(boundary_kinds) != len(boundary_edges):
            raise MeshPatchError("Every boundary face needs exactly one patch kind")

        unknown = sorted(set(boundary_kinds) - set(PATCH_KINDS))
        if unknown:
            raise MeshPatchError(f"Unknown patch kind(s): {unknown}")

        areas = _signed_areas(vertices, cells)
        bad = np.flatnonzero(areas <= 0.0)
        if bad.size:
            raise MeshTopologyError(
                f"{bad.size} cell(s) with non-positive signed area (first: cell {bad[0]}, area {areas[bad[0]]:.3e}); "
                "cells must be ordered counter-clockwise"
            )

        # Each cell contributes edges (a,b), (b,c), (c,a) in its own orientation
        local = cells[:, [0, 1, 1, 2, 2, 0]].reshape(-1, 2)
        keys = np.sort(local, axis=1)
        unique_keys, first_index, inverse, counts = np.unique(
            keys, axis=0, return_index=True, return_inverse=True, return_counts=True
        )
        inverse = inverse.reshape(-1)
        if np.any(counts > 2):
            raise MeshTopologyError("Non-manifold edge shared by more than two cells")

        order = np.argsort(inverse, kind="stable")
        starts = np.concatenate(([0], np.cumsum(counts)[:-1]))
        owner_slot = order[starts]
        face_vertices = local[owner_slot]
        face_owner = owner_slot // 3
        face_neighbor = np.full(len(unique_keys), -1, dtype=np.int64)
        shared = counts == 2
        face_neighbor[shared] = order[starts[shared] + 1] // 3

        face_kind = np.full(len(unique_keys), INTERIOR, dtype=object)
        lookup = {(int(a), int(b)): i for i, (a, b) in enumerate(unique_keys)}
        for (a, b), kind in zip(boundary_edges, boundary_kinds):
            key = (int(min(a, b)), int(max(a, b)))
            face = lookup.get(key)
            if face is None or face_neighbor[face] >= 0:
                raise MeshTopologyError(f"Dangling boundary face {key}: not a boundary edge of any cell")
            if face_kind[face] != INTERIOR:
                raise MeshPatchError(f"Boundary face {key} is tagged more than once")
            face_kind[face] = kind

        untagged = np.flatnonzero((face_neighbor < 0) & (face_kind == INTERIOR))
        if untagged.size:
            a, b = face_vertices[untagged[0]]
            raise MeshPatchError(f"{untagged.size} untagged boundary face(s), first between vertices {a} and {b}")

        return cls(
            vertices=_frozen(vertices.copy()),
            cells=_frozen(cells.copy()),
            face_vertices=_frozen(face_vertices),
            face_owner=_frozen(face_owner),
            face_neighbor=_frozen(face_neighbor),
            face_kind=_frozen(face_kind),
        )

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_cells(self) -> int:
        return len(self.cells)

    @property
    def n_faces(self) -> int:
        return len(self.face_vertices)

    @cached_property
    def geometry(self) -> FaceGeometry:
        return compute_geometry(self)

    @cached_property
    def interior_faces(self) -> np.ndarray:
        return np.flatnonzero(self.face_neighbor >= 0)

    @cached_property
    def boundary_faces(self) -> np.ndarray:
        return np.flatnonzero(self.face_neighbor < 0)

    def patch_faces(self, *kinds: str) -> np.ndarray:
        """Indices of the boundary faces tagged with any of the given kinds"""
        return np.flatnonzero(np.isin(self.face_kind, kinds))

    def patch_vertices(self, *kinds: str) -> np.ndarray:
        """Sorted unique vertex indices touched by faces of the given kinds"""
        return np.unique(self.face_vertices[self.patch_faces(*kinds)])

    def has_patch(self, kind: str) -> bool:
        return bool(np.any(self.face_kind == kind))

    @property
    def diameter(self) -> float:
        extent = self.vertices.max(axis=0) - self.vertices.min(axis=0)
        return float(np.linalg.norm(extent))

    def fixed_vertex_mask(self) -> np.ndarray:
        """Vertices that may not move: outer boundary and non-deformable obstacle"""
        mask = np.zeros(self.n_vertices, dtype=bool)
        mask[self.patch_vertices(*OUTER_KINDS, PATCH_OBS_FIXED)] = True
        return mask

    def obstacle_vertex_normals(self) -> np.ndarray:
        """Length-weighted unit normals at obstacle vertices (zero elsewhere)"""
        geo = self.geometry
        faces = self.patch_faces(*OBSTACLE_KINDS)
        normals = np.zeros((self.n_vertices, 2))
        weighted = geo.face_normal[faces] * geo.face_area[faces, None]
        for k in range(2):
            np.add.at(normals, self.face_vertices[faces, k], weighted)
        norm = np.linalg.norm(normals, axis=1)
        touched = norm > 0
        normals[touched] /= norm[touched, None]
        return normals

    def min_incident_edge_length(self) -> np.ndarray:
        lengths = self.geometry.face_area
        result = np.full(self.n_vertices, np.inf)
        for k in range(2):
            np.minimum.at(result, self.face_vertices[:, k], lengths)
        return result

    def vertex_to_face(self, values: np.ndarray) -> np.ndarray:
        """Arithmetic average of vertex values onto faces"""
        values = np.asarray(values)
        return 0.5 * (values[self.face_vertices[:, 0]] + values[self.face_vertices[:, 1]])


def _signed_areas(vertices: np.ndarray, cells: np.ndarray) -> np.ndarray:
    a, b, c = (vertices[cells[:, k]] for k in range(3))
    return 0.5 * ((b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1]) - (b[:, 1] - a[:, 1]) * (c[:, 0] - a[:, 0]))


def compute_geometry(mesh: Mesh) -> FaceGeometry:
    """
    Compute face and cell geometry

    Args:
        mesh: Mesh to measure

    Returns:
        FaceGeometry with per-face length, unit normal (out of the owner), centroid
        and per-cell signed area and centroid
    """
    x = mesh.vertices
    xa = x[mesh.face_vertices[:, 0]]
    xb = x[mesh.face_vertices[:, 1]]
    tangent = xb - xa
    length = np.linalg.norm(tangent, axis=1)
    safe = np.where(length > 0, length, 1.0)
    normal = np.column_stack((tangent[:, 1], -tangent[:, 0])) / safe[:, None]

    return FaceGeometry(
        face_area=_frozen(length),
        face_normal=_frozen(normal),
        face_centroid=_frozen(0.5 * (xa + xb)),
        cell_volume=_frozen(_signed_areas(x, mesh.cells)),
        cell_centroid=_frozen(x[mesh.cells].mean(axis=1)),
    )


def cell_closure(mesh: Mesh) -> np.ndarray:
    """Sum of outward n*|S| over the faces of every cell, (nc, 2); zero for closed cells"""
    geo = mesh.geometry
    flux = geo.face_normal * geo.face_area[:, None]
    closure = np.zeros((mesh.n_cells, 2))
    np.add.at(closure, mesh.face_owner, flux)
    interior = mesh.interior_faces
    np.add.at(closure, mesh.face_neighbor[interior], -flux[interior])
    return closure


def apply_deformation(mesh: Mesh, V: np.ndarray, eps: float) -> Mesh:
    """
    Perturbation of the identity: move every vertex x to x + eps * V(x)

    Args:
        mesh: Mesh to deform
        V: (nv, 2) vertex displacement field
        eps: Step scalar

    Returns:
        New Mesh sharing the connectivity of the input
    """
    V = np.asarray(V, dtype=float)
    if V.shape != mesh.vertices.shape:
        raise ValueError(f"Deformation field has shape {V.shape}, expected {mesh.vertices.shape}")
    moved = mesh.vertices + eps * V
    return replace(mesh, vertices=_frozen(moved))


def quality_check(mesh: Mesh) -> QualityReport:
    """Minimum signed cell area, maximum skewness and validity flag"""
    geo = mesh.geometry
    min_volume = float(geo.cell_volume.min()) if mesh.n_cells else 0.0

    def _skew(cells: np.ndarray, faces: np.ndarray, sign: float) -> np.ndarray:
        r = geo.face_centroid[faces] - geo.cell_centroid[cells]
        r_norm = np.linalg.norm(r, axis=1)
        r_norm = np.where(r_norm > 0, r_norm, 1.0)
        alignment = sign * np.einsum("ij,ij->i", r, geo.face_normal[faces]) / r_norm
        return 1.0 - alignment

    interior = mesh.interior_faces
    skew = np.concatenate((
        _skew(mesh.face_owner, np.arange(mesh.n_faces), 1.0),
        _skew(mesh.face_neighbor[interior], interior, -1.0),
    ))
    return QualityReport(
        min_cell_volume=min_volume,
        max_skewness=float(skew.max()) if skew.size else 0.0,
        valid=min_volume > 0.0,
    )


def retag_obstacle(mesh: Mesh, mode: str, z_wl: Optional[float]) -> Mesh:
    """
    Derive the deformable/fixed obstacle split for a deformation mode.

    full_hull keeps the tags as loaded. underwater_only turns every obsN face
    whose centroid lies above the waterline into obsD.
    """
    if mode == MODE_FULL_HULL or z_wl is None:
        return mesh
    if mode != MODE_UNDERWATER_ONLY:
        raise ValueError(f"Unknown deformation mode: {mode}")

    kinds = mesh.face_kind.copy()
    free = mesh.patch_faces(PATCH_OBS_FREE)
    above = free[mesh.geometry.face_centroid[free, 1] > z_wl]
    kinds[above] = PATCH_OBS_FIXED
    logger.info(f"Underwater-only mode: {above.size} obstacle face(s) above z = {z_wl} fixed")
    return replace(mesh, face_kind=_frozen(kinds))


def _tokens(text: str) -> Iterable[str]:
    for line in text.splitlines():
        content = line.split('#', 1)[0]
        yield from content.split()


def load_mesh(path: Union[str, Path]) -> Mesh:
    """
    Load a mesh from the toolkit's text format

    Format: header ``dim npoints ncells nbfaces``; then the points (dim floats
    each), the cells (3 vertex indices, 0-based) and the boundary faces
    (2 vertex indices + patch kind). Whitespace separated, '#' comments.

    Args:
        path: Mesh file path

    Returns:
        Validated Mesh
    """
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"{MSG_MESH_NOT_FOUND}: {path}")

    tokens = list(_tokens(path.read_text(encoding='utf-8')))
    try:
        dim, n_points, n_cells, n_bfaces = (int(t) for t in tokens[:4])
    except (ValueError, IndexError) as e:
        raise MeshParseError(f"{path}: malformed header ({e})") from e
    if dim != 2:
        raise MeshParseError(f"{path}: only dim = 2 is supported, got {dim}")

    expected = 4 + n_points * dim + n_cells * 3 + n_bfaces * 3
    if len(tokens) != expected:
        raise MeshParseError(f"{path}: expected {expected} tokens from the header counts, found {len(tokens)}")

    pos = 4
    try:
        points = np.array(tokens[pos:pos + n_points * dim], dtype=float).reshape(n_points, dim)
        pos += n_points * dim
        cells = np.array(tokens[pos:pos + n_cells * 3], dtype=np.int64).reshape(n_cells, 3)
        pos += n_cells * 3
        records = np.array(tokens[pos:], dtype=object).reshape(n_bfaces, 3)
        edges = records[:, :2].astype(np.int64)
    except ValueError as e:
        raise MeshParseError(f"{path}: {e}") from e
    kinds = [str(k) for k in records[:, 2]]

    mesh = Mesh.from_arrays(points, cells, edges, kinds)
    logger.info(f"Loaded mesh {path.name}: {mesh.n_vertices} vertices, {mesh.n_cells} cells, "
                f"{mesh.boundary_faces.size} boundary faces")
    return mesh


def write_mesh(mesh: Mesh, path: Union[str, Path]) -> Path:
    """Write a mesh in the text format read by load_mesh"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    boundary = mesh.boundary_faces

    lines = [
        "# dim npoints ncells nbfaces",
        f"{mesh.dim} {mesh.n_vertices} {mesh.n_cells} {boundary.size}",
        "# points",
    ]
    lines.extend(f"{x:.17g} {y:.17g}" for x, y in mesh.vertices)
    lines.append("# cells")
    lines.extend(f"{a} {b} {c}" for a, b, c in mesh.cells)
    lines.append("# boundary faces")
    lines.extend(
        f"{mesh.face_vertices[f, 0]} {mesh.face_vertices[f, 1]} {mesh.face_kind[f]}" for f in boundary
    )
    path.write_text("\n".join(lines) + "\n", encoding='utf-8')
    logger.info(f"Mesh written to {path}")
    return path
