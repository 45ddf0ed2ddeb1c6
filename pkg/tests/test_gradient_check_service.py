"""
Unit tests for Gradient Check Service - perturbation fields and finite difference comparison
"""
from unittest.mock import Mock, patch

import numpy as np
import pytest

from src.data.mesh_generator import CylinderChannelSpec, cylinder_channel_mesh
from src.services.flow_service import FlowConfig, FluidProps
from src.services.gradient_check_service import GradientCheckRow, check_gradient, perturbation_fields
from src.utils.constants import PATCH_OBS_FREE
from src.utils.exceptions import FlowConvergenceError

GRADIENT_CHECK = 'src.services.gradient_check_service'


class TestPerturbationFields:
    """Test suite for seeded obstacle perturbations"""

    def test_no_fields(self, small_cylinder):
        assert perturbation_fields(small_cylinder, 0) == []

    def test_same_seed_same_fields(self, small_cylinder):
        first = perturbation_fields(small_cylinder, 2, seed=3)
        second = perturbation_fields(small_cylinder, 2, seed=3)

        assert all(np.array_equal(a, b) for a, b in zip(first, second))

    def test_different_seeds_differ(self, small_cylinder):
        first = perturbation_fields(small_cylinder, 1, seed=0)[0]
        second = perturbation_fields(small_cylinder, 1, seed=1)[0]

        assert not np.allclose(first, second)

    def test_fields_are_normalised_and_anchored(self, small_cylinder):
        """Test unit peak displacement and zero motion on the outer boundary"""
        for V in perturbation_fields(small_cylinder, 3):
            assert np.linalg.norm(V, axis=1).max() == pytest.approx(1.0)
            assert np.all(V[small_cylinder.fixed_vertex_mask()] == 0.0)

    def test_fields_move_obstacle_along_normal(self, small_cylinder):
        normals = small_cylinder.obstacle_vertex_normals()
        vertices = small_cylinder.patch_vertices(PATCH_OBS_FREE)
        V = perturbation_fields(small_cylinder, 1)[0]

        cross = V[vertices, 0] * normals[vertices, 1] - V[vertices, 1] * normals[vertices, 0]

        assert np.abs(cross).max() <= 1e-14

    def test_mesh_without_deformable_obstacle(self, unit_square):
        fields = perturbation_fields(unit_square, 2)

        assert len(fields) == 2
        assert all(np.all(V == 0.0) for V in fields)


class TestCheckGradient:
    """Test suite for the adjoint vs finite difference comparison"""

    def test_no_fields_skips_solves(self, small_cylinder):
        with patch(f'{GRADIENT_CHECK}.solve_primal') as solve_primal:
            assert check_gradient(small_cylinder, FluidProps(), FlowConfig(), [], 1e-4) == []

        solve_primal.assert_not_called()

    def test_central_difference_row(self, small_cylinder):
        """Test row assembly with mocked solves: fd = (J+ - J-) / 2h with h = eps_fd * diameter"""
        h = 1e-3 * small_cylinder.diameter
        with patch(f'{GRADIENT_CHECK}.solve_primal', return_value=Mock()), \
                patch(f'{GRADIENT_CHECK}.build_extension_eta'), \
                patch(f'{GRADIENT_CHECK}.solve_adjoint'), \
                patch(f'{GRADIENT_CHECK}.assemble_sensitivity'), \
                patch(f'{GRADIENT_CHECK}.evaluate_form', return_value=1.1), \
                patch(f'{GRADIENT_CHECK}.reduced_objective', side_effect=[1.0 + h, 1.0 - h]):
            rows = check_gradient(small_cylinder, FluidProps(), FlowConfig(),
                                  [np.zeros((small_cylinder.n_vertices, 2))], 1e-3)

        assert len(rows) == 1
        assert rows[0].finite_difference == pytest.approx(1.0)
        assert rows[0].relative_difference == pytest.approx(0.1)
        assert rows[0].passed(0.10 + 1e-9)
        assert not rows[0].passed(0.05)

    def test_zero_finite_difference_is_guarded(self):
        row = GradientCheckRow(0, 0.0, 0.0, 0.0)

        assert row.passed(0.1)

    def test_flow_failure_is_logged_and_raised(self, small_cylinder):
        with patch(f'{GRADIENT_CHECK}.solve_primal', side_effect=FlowConvergenceError("diverged")), \
                patch(f'{GRADIENT_CHECK}.logger') as logger:
            with pytest.raises(FlowConvergenceError):
                check_gradient(small_cylinder, FluidProps(), FlowConfig(), [np.zeros((small_cylinder.n_vertices, 2))], 1e-4)

        logger.error.assert_called_once()

    @pytest.mark.slow
    def test_adjoint_agrees_with_finite_differences(self):
        """Test both derivatives on the default cylinder mesh at Re = 20 for five seeded fields"""
        mesh = cylinder_channel_mesh(CylinderChannelSpec())
        props = FluidProps(rho_water=1.0, rho_air=1.0, mu_water=0.005, mu_air=0.005)
        cfg = FlowConfig(tolerance=1e-9, max_iterations=5000, average_window=0)

        rows = check_gradient(mesh, props, cfg, perturbation_fields(mesh, 5, seed=0), 1e-4)

        assert len(rows) == 5
        for row in rows:
            assert np.sign(row.adjoint) == np.sign(row.finite_difference)
            assert row.passed(0.10)
