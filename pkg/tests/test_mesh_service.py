"""
Unit tests for Mesh Service - topology, geometry, deformation and file format
"""
import numpy as np
import pytest

from src.data.mesh_generator import unit_square_mesh
from src.services.mesh_service import (
    Mesh,
    apply_deformation,
    cell_closure,
    load_mesh,
    quality_check,
    retag_obstacle,
    write_mesh,
)
from src.utils.constants import (
    MODE_FULL_HULL,
    MODE_UNDERWATER_ONLY,
    OBSTACLE_KINDS,
    PATCH_OBS_FIXED,
    PATCH_OBS_FREE,
    PATCH_WALL,
)
from src.utils.exceptions import MeshParseError, MeshPatchError, MeshTopologyError


TWO_TRIANGLES = """\
# dim npoints ncells nbfaces
2 4 2 4
0 0
1 0
1 1
0 1
0 1 2
0 2 3
0 1 wall
1 2 wall
2 3 inlet
3 0 outlet
"""


def _square_edges():
    return np.array([[0, 1], [1, 2], [2, 3], [3, 0]])


class TestMeshTopology:
    """Test suite for mesh construction and its invariants"""

    def test_unit_square_counts_and_area(self, unit_square):
        """Test 2 x 2 unit square: 8 cells of area 1/8"""
        geo = unit_square.geometry

        assert unit_square.n_cells == 8
        assert unit_square.n_vertices == 9
        assert geo.cell_volume.sum() == pytest.approx(1.0, abs=1e-14)
        assert np.all(geo.cell_volume > 0)

    def test_interior_faces_have_owner_and_neighbor(self, unit_square):
        """Test that every interior face has one owner and one neighbour and boundary faces are tagged"""
        interior = unit_square.interior_faces
        boundary = unit_square.boundary_faces

        assert np.all(unit_square.face_owner[interior] != unit_square.face_neighbor[interior])
        assert np.all(unit_square.face_kind[boundary] == PATCH_WALL)
        assert np.all(unit_square.face_kind[interior] == "")
        assert interior.size + boundary.size == unit_square.n_faces

    def test_boundary_normals_point_out_of_domain(self, unit_square):
        """Test that boundary normals point away from the square centre"""
        geo = unit_square.geometry
        faces = unit_square.boundary_faces
        outward = geo.face_centroid[faces] - 0.5

        assert np.all(np.einsum('fi,fi->f', outward, geo.face_normal[faces]) > 0)

    def test_obstacle_normals_point_into_obstacle(self, small_cylinder):
        """Test that obstacle face normals point towards the cylinder centre"""
        geo = small_cylinder.geometry
        faces = small_cylinder.patch_faces(*OBSTACLE_KINDS)
        towards_centre = np.array([0.2, 0.2]) - geo.face_centroid[faces]

        assert faces.size == 16
        assert np.all(np.einsum('fi,fi->f', towards_centre, geo.face_normal[faces]) > 0)

    def test_cells_are_closed(self, small_cylinder):
        """Test that the outward face vectors of every cell sum to zero"""
        assert np.abs(cell_closure(small_cylinder)).max() < 1e-14

    def test_obstacle_is_closed_curve(self, small_cylinder):
        """Test divergence theorem on the obstacle: sum of n |S| is zero"""
        geo = small_cylinder.geometry
        faces = small_cylinder.patch_faces(*OBSTACLE_KINDS)
        total = (geo.face_normal[faces] * geo.face_area[faces, None]).sum(axis=0)

        assert np.allclose(total, 0.0, atol=1e-12)

    def test_clockwise_cell_rejected(self):
        """Test that a clockwise cell raises a topology error"""
        vertices = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])
        cells = np.array([[0, 2, 1], [0, 2, 3]])

        with pytest.raises(MeshTopologyError):
            Mesh.from_arrays(vertices, cells, _square_edges(), [PATCH_WALL] * 4)

    def test_unknown_patch_kind_rejected(self):
        """Test that an unknown patch kind raises a patch error"""
        vertices = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])
        cells = np.array([[0, 1, 2], [0, 2, 3]])

        with pytest.raises(MeshPatchError):
            Mesh.from_arrays(vertices, cells, _square_edges(), [PATCH_WALL, PATCH_WALL, 'slip', PATCH_WALL])

    def test_untagged_boundary_face_rejected(self):
        """Test that a boundary face without a patch raises a patch error"""
        vertices = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])
        cells = np.array([[0, 1, 2], [0, 2, 3]])

        with pytest.raises(MeshPatchError):
            Mesh.from_arrays(vertices, cells, _square_edges()[:3], [PATCH_WALL] * 3)

    def test_tagged_interior_face_rejected(self):
        """Test that tagging the shared diagonal raises a topology error"""
        vertices = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])
        cells = np.array([[0, 1, 2], [0, 2, 3]])
        edges = np.vstack([_square_edges(), [[0, 2]]])

        with pytest.raises(MeshTopologyError):
            Mesh.from_arrays(vertices, cells, edges, [PATCH_WALL] * 5)


class TestMeshFiles:
    """Test suite for the text mesh format"""

    def test_load_two_triangle_square(self, tmp_path):
        """Test loading the two-triangle unit square"""
        path = tmp_path / "square.msh"
        path.write_text(TWO_TRIANGLES)

        mesh = load_mesh(path)

        assert mesh.n_vertices == 4
        assert mesh.n_cells == 2
        assert mesh.geometry.cell_volume.sum() == pytest.approx(1.0)
        assert set(mesh.face_kind[mesh.boundary_faces]) == {'wall', 'inlet', 'outlet'}

    def test_load_missing_file_names_path(self, tmp_path):
        """Test that a missing mesh file raises FileNotFoundError naming the path"""
        path = tmp_path / "absent.msh"

        with pytest.raises(FileNotFoundError, match="absent.msh"):
            load_mesh(path)

    def test_load_malformed_header(self, tmp_path):
        """Test that a malformed header raises a parse error"""
        path = tmp_path / "bad.msh"
        path.write_text("2 four 2 4\n")

        with pytest.raises(MeshParseError):
            load_mesh(path)

    def test_load_wrong_token_count(self, tmp_path):
        """Test that missing records raise a parse error"""
        path = tmp_path / "short.msh"
        path.write_text("\n".join(TWO_TRIANGLES.splitlines()[:-1]))

        with pytest.raises(MeshParseError):
            load_mesh(path)

    def test_written_mesh_reloads(self, small_cylinder, tmp_path):
        """Test that write_mesh output reloads to the same geometry and patches"""
        path = write_mesh(small_cylinder, tmp_path / "cylinder.msh")

        mesh = load_mesh(path)

        assert mesh.n_cells == small_cylinder.n_cells
        assert np.array_equal(mesh.vertices, small_cylinder.vertices)
        assert mesh.patch_faces(PATCH_OBS_FREE).size == small_cylinder.patch_faces(PATCH_OBS_FREE).size


class TestDeformation:
    """Test suite for perturbation of identity and mesh quality"""

    def test_zero_field_keeps_mesh(self, small_cylinder):
        """Test that V = 0 leaves every vertex in place"""
        moved = apply_deformation(small_cylinder, np.zeros_like(small_cylinder.vertices), 3.0)

        assert np.array_equal(moved.vertices, small_cylinder.vertices)
        assert moved.face_owner is small_cylinder.face_owner

    def test_translation_preserves_volumes(self, unit_square):
        """Test that a rigid translation keeps all cell volumes"""
        V = np.tile([0.3, -0.2], (unit_square.n_vertices, 1))

        moved = apply_deformation(unit_square, V, 0.5)

        assert np.allclose(moved.geometry.cell_volume, unit_square.geometry.cell_volume, atol=1e-15)

    def test_shape_mismatch_rejected(self, unit_square):
        with pytest.raises(ValueError):
            apply_deformation(unit_square, np.zeros((3, 2)), 1.0)

    def test_pristine_square_quality(self):
        """Test the two-triangle square: valid with minimum volume 1/2"""
        report = quality_check(unit_square_mesh(1))

        assert report.valid
        assert report.min_cell_volume == pytest.approx(0.5)

    def test_collapsing_vertex_invalidates_mesh(self, unit_square):
        """Test that shrinking steps decrease the minimum volume until the mesh is invalid"""
        centre = int(np.argmin(np.linalg.norm(unit_square.vertices - 0.5, axis=1)))
        V = np.zeros_like(unit_square.vertices)
        V[centre] = [1.0, 1.0]

        volumes = []
        valid = []
        for eps in (0.0, 0.2, 0.4, 0.5, 0.6):
            report = quality_check(apply_deformation(unit_square, V, eps))
            volumes.append(report.min_cell_volume)
            valid.append(report.valid)

        assert all(b < a for a, b in zip(volumes, volumes[1:]))
        assert valid[:3] == [True, True, True]
        assert valid[-1] is False

    def test_invalid_stays_invalid_along_the_field(self, unit_square):
        """Test that once a straight-line collapse invalidates the mesh no larger step is valid"""
        centre = int(np.argmin(np.linalg.norm(unit_square.vertices - 0.5, axis=1)))
        V = np.zeros_like(unit_square.vertices)
        V[centre] = [1.0, 0.4]

        reports = [quality_check(apply_deformation(unit_square, V, eps)) for eps in np.linspace(0.0, 1.5, 61)]
        valid = np.array([r.valid for r in reports])
        volumes = np.array([r.min_cell_volume for r in reports])
        first_invalid = int(np.argmin(valid))

        assert valid[0] and not valid[-1]
        assert not valid[first_invalid:].any()
        assert np.all(np.diff(volumes) <= 1e-15)


class TestRetagging:
    """Test suite for the deformable/fixed obstacle split"""

    def test_full_hull_keeps_tags(self, small_cylinder):
        assert retag_obstacle(small_cylinder, MODE_FULL_HULL, 0.2) is small_cylinder

    def test_underwater_only_fixes_upper_half(self, small_cylinder):
        """Test that obstacle faces above the waterline become fixed"""
        mesh = retag_obstacle(small_cylinder, MODE_UNDERWATER_ONLY, 0.2)
        geo = mesh.geometry

        fixed = mesh.patch_faces(PATCH_OBS_FIXED)
        free = mesh.patch_faces(PATCH_OBS_FREE)
        assert fixed.size == free.size == 8
        assert np.all(geo.face_centroid[fixed, 1] > 0.2)
        assert np.all(geo.face_centroid[free, 1] < 0.2)

    def test_no_waterline_keeps_tags(self, small_cylinder):
        assert retag_obstacle(small_cylinder, MODE_UNDERWATER_ONLY, None) is small_cylinder
