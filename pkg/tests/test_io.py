"""
Unit tests for result files: VTK, CSV tables, status and sensitivity files
"""
import meshio
import numpy as np
import pytest

from src.services.optimizer_service import IterationRecord, OptimizationHistory
from src.utils.constants import MSG_SENSITIVITY_NOT_FOUND, PATCH_OBS_FREE, STATUS_CONVERGED
from src.utils.exceptions import ShapeOptError
from src.utils.io import (
    export_vtk,
    read_csv,
    read_sensitivity_file,
    read_status,
    write_descent_residuals,
    write_gradient_check,
    write_history,
    write_residuals,
    write_sensitivity_file,
    write_status,
)


class TestVtkExport:
    """Test suite for legacy VTK snapshots"""

    def test_cell_and_point_data(self, unit_square, tmp_path):
        path = export_vtk(
            tmp_path / "square.vtk",
            unit_square,
            cell_data={'cell_volume': unit_square.geometry.cell_volume,
                       'velocity': np.ones((unit_square.n_cells, 2))},
            point_data={'descent_direction': np.zeros((unit_square.n_vertices, 2))},
        )

        mesh = meshio.read(path)
        assert mesh.points.shape == (9, 3)
        assert np.allclose(mesh.cell_data['cell_volume'][0], 0.125)
        assert mesh.cell_data['velocity'][0].shape == (8, 3)
        assert mesh.point_data['descent_direction'].shape == (9, 3)

    def test_face_data_on_boundary_lines(self, small_cylinder, tmp_path):
        """Test that face data lands on a line block holding the boundary faces"""
        density = np.zeros(small_cylinder.n_faces)
        obstacle = small_cylinder.patch_faces(PATCH_OBS_FREE)
        density[obstacle] = 1.0

        path = export_vtk(tmp_path / "faces.vtk", small_cylinder,
                          cell_data={'cell_volume': small_cylinder.geometry.cell_volume},
                          face_data={'sensitivity': density})

        mesh = meshio.read(path)
        triangles, lines = mesh.cell_data['sensitivity']
        assert np.all(triangles == 0.0)
        assert lines.size == small_cylinder.boundary_faces.size
        assert lines.sum() == pytest.approx(obstacle.size)


class TestCsvFiles:
    """Test suite for CSV tables"""

    def test_residual_headers(self, tmp_path):
        write_residuals(tmp_path / "residuals.csv", [(1, 1.0, 0.5), (2, 0.1, 0.05)])
        write_descent_residuals(tmp_path / "descent.csv", [(2.0, 1, 1e-3, 0.0, 0.0, 1e-3)])

        rows = read_csv(tmp_path / "residuals.csv")
        descent = read_csv(tmp_path / "descent.csv")

        assert list(rows[0]) == ['iteration', 'momentum_residual', 'continuity_residual']
        assert rows[1]['iteration'] == '2'
        assert float(rows[1]['momentum_residual']) == 0.1
        assert list(descent[0]) == ['p', 'iteration', 'res_V', 'res_lambda_bc', 'res_lambda_v', 'R']

    def test_history_rows(self, tmp_path):
        history = OptimizationHistory(reference=np.array([0.1, 0.2, 0.3]), status=STATUS_CONVERGED)
        history.records.append(IterationRecord(
            iteration=1, objective=0.9, drag=0.9, normalized_drag=0.9,
            g=np.array([1e-4, 0.0, -1e-4]), lam=np.array([0.1, 0.2, 0.3]),
            eps=0.01, min_cell_volume=1e-3, picard_iterations=4, backtracks=1, rejections=0,
        ))

        write_history(tmp_path / "history.csv", history)
        rows = read_csv(tmp_path / "history.csv")

        assert len(rows) == 1
        assert rows[0]['g2'] == repr(-1e-4)
        assert rows[0]['lambda1'] == '0.2'
        assert rows[0]['picard_iterations'] == '4'

    def test_empty_gradient_check(self, tmp_path):
        path = write_gradient_check(tmp_path / "gradient_check.csv", [])

        assert path.read_text().strip() == "field,adjoint,finite_difference,relative_difference"


class TestStatusFile:
    def test_status_with_message(self, tmp_path):
        path = write_status(tmp_path / "status.txt", "solver_failure", "flow diverged")

        assert read_status(path) == "solver_failure"
        assert "flow diverged" in path.read_text()


class TestSensitivityFile:
    """Test suite for plain-text face sensitivity files"""

    def test_density_and_constraints_reload(self, small_cylinder, tmp_path, rng):
        faces = small_cylinder.patch_faces(PATCH_OBS_FREE)
        density = np.zeros(small_cylinder.n_faces)
        density[faces] = rng.normal(size=faces.size)
        g = np.array([1e-3, -2e-3, 5e-4])

        path = write_sensitivity_file(tmp_path / "sensitivity.txt", density, faces, g)
        loaded, loaded_g = read_sensitivity_file(path, small_cylinder)

        assert np.array_equal(loaded, density)
        assert np.array_equal(loaded_g, g)

    def test_without_constraint_header(self, small_cylinder, tmp_path):
        path = tmp_path / "plain.txt"
        path.write_text("3 0.5\n\n7 -1.25\n")

        density, g = read_sensitivity_file(path, small_cylinder)

        assert g is None
        assert density[3] == 0.5 and density[7] == -1.25
        assert np.count_nonzero(density) == 2

    def test_missing_file(self, small_cylinder, tmp_path):
        with pytest.raises(FileNotFoundError, match=MSG_SENSITIVITY_NOT_FOUND):
            read_sensitivity_file(tmp_path / "absent.txt", small_cylinder)

    def test_malformed_line(self, small_cylinder, tmp_path):
        path = tmp_path / "bad.txt"
        path.write_text("3 0.5 extra\n")

        with pytest.raises(ShapeOptError, match="bad.txt:1"):
            read_sensitivity_file(path, small_cylinder)

    @pytest.mark.parametrize("header", ["# g 0.1 0.2", "# g 0.1 0.2 0.3 0.4"])
    def test_constraint_header_length_checked(self, small_cylinder, tmp_path, header):
        path = tmp_path / "short.txt"
        path.write_text(f"{header}\n3 0.5\n")

        with pytest.raises(ShapeOptError, match="expected 3"):
            read_sensitivity_file(path, small_cylinder)

    @pytest.mark.parametrize("face", ["-1", "100000"])
    def test_face_index_out_of_range(self, small_cylinder, tmp_path, face):
        path = tmp_path / "index.txt"
        path.write_text(f"{face} 0.5\n")

        with pytest.raises(ShapeOptError, match="outside"):
            read_sensitivity_file(path, small_cylinder)
