"""
Unit tests for Constraint Service - displacement and centre of buoyancy
"""
import numpy as np
import pytest

from src.services.constraint_service import (
    capture_reference,
    constraint_densities,
    constraint_pairing,
    constraint_scales,
    constraint_state,
    evaluate_constraints,
    normal_flux,
)
from src.services.flow_service import Concentration, prescribe_concentration
from src.services.mesh_service import apply_deformation
from src.utils.constants import OBSTACLE_KINDS, PATCH_OBS_FREE


def _water(mesh):
    return prescribe_concentration(mesh, None, 0.0)


def _normal_field(mesh):
    """Unit normals on the obstacle vertices (pointing into the obstacle), zero elsewhere"""
    return mesh.obstacle_vertex_normals()


class TestReference:
    """Test suite for the reference integrals"""

    def test_unit_square_all_water(self, unit_square):
        reference = capture_reference(unit_square, _water(unit_square))

        assert np.allclose(reference, [0.5, 0.5, 1.0], atol=1e-14)

    def test_all_air(self, unit_square):
        ones = Concentration(cells=np.ones(unit_square.n_cells), faces=np.ones(unit_square.n_faces))

        assert np.array_equal(capture_reference(unit_square, ones), [0.0, 0.0, 0.0])

    def test_half_wet_square(self, unit_square):
        """Test a sharp waterline at x2 = 0.5"""
        c = prescribe_concentration(unit_square, 0.5, 0.0)

        assert np.allclose(capture_reference(unit_square, c), [0.25, 0.125, 0.5], atol=1e-14)

    def test_unchanged_mesh_has_zero_deviation(self, small_cylinder):
        c = _water(small_cylinder)
        reference = capture_reference(small_cylinder, c)

        state = constraint_state(small_cylinder, c, reference)

        assert np.array_equal(state.g, np.zeros(3))
        assert np.array_equal(state.reference, reference)


class TestDeviation:
    """Test suite for constraint deviations of deformed meshes"""

    def test_inflated_obstacle_loses_flow_area(self, small_cylinder):
        """Test that pushing the obstacle outwards by eps removes the exact polygon area gain"""
        eps = 0.004
        c = _water(small_cylinder)
        reference = capture_reference(small_cylinder, c)
        moved = apply_deformation(small_cylinder, -_normal_field(small_cylinder), eps)

        g = evaluate_constraints(moved, _water(moved), reference)

        n, r = 16, 0.05
        gained = 0.5 * n * np.sin(2.0 * np.pi / n) * ((r + eps) ** 2 - r ** 2)
        assert g[2] == pytest.approx(-gained, rel=1e-10)

    def test_volume_pairing_is_first_order_exact(self, small_cylinder):
        """Test g(eps) - eps * pairing = O(eps^2) for the volume component"""
        c = _water(small_cylinder)
        reference = capture_reference(small_cylinder, c)
        V = _normal_field(small_cylinder)
        V[:, 0] += 0.3 * V[:, 1]
        pairing = constraint_pairing(small_cylinder, c, V)

        errors = []
        for eps in (2e-3, 1e-3, 5e-4):
            moved = apply_deformation(small_cylinder, V, eps)
            g = evaluate_constraints(moved, _water(moved), reference)
            errors.append(abs(g[2] - eps * pairing[2]))

        slopes = np.log2(np.array(errors[:-1]) / np.array(errors[1:]))
        assert np.all(slopes >= 1.9)

    def test_moment_pairing_matches_deviation(self, small_cylinder):
        c = _water(small_cylinder)
        reference = capture_reference(small_cylinder, c)
        V = _normal_field(small_cylinder)
        pairing = constraint_pairing(small_cylinder, c, V)
        eps = 1e-4

        moved = apply_deformation(small_cylinder, V, eps)
        g = evaluate_constraints(moved, _water(moved), reference)

        assert g[:2] / eps == pytest.approx(pairing[:2], rel=1e-2)

    def test_every_component_is_first_order_exact(self, small_cylinder):
        """Test g(eps) - g(0) - eps * pairing = O(eps^2) for moments and volume"""
        c = _water(small_cylinder)
        reference = capture_reference(small_cylinder, c)
        V = _normal_field(small_cylinder)
        V[:, 0] += 0.3 * V[:, 1]
        pairing = constraint_pairing(small_cylinder, c, V)
        g0 = evaluate_constraints(small_cylinder, c, reference)

        errors = []
        for eps in (2e-3, 1e-3, 5e-4):
            moved = apply_deformation(small_cylinder, V, eps)
            g = evaluate_constraints(moved, _water(moved), reference)
            errors.append(np.abs(g - g0 - eps * pairing))

        errors = np.array(errors)
        slopes = np.log2(errors[:-1] / errors[1:])
        assert np.all(slopes >= 1.9)


class TestPairing:
    """Test suite for the first-order constraint pairing"""

    def test_zero_field(self, small_cylinder):
        pairing = constraint_pairing(small_cylinder, _water(small_cylinder), np.zeros_like(small_cylinder.vertices))

        assert np.array_equal(pairing, np.zeros(3))

    def test_uniform_translation_keeps_volume(self, small_cylinder):
        """Test divergence theorem: uniform V = e1 on a closed obstacle"""
        V = np.tile([1.0, 0.0], (small_cylinder.n_vertices, 1))

        pairing = constraint_pairing(small_cylinder, _water(small_cylinder), V)

        assert abs(pairing[2]) <= 1e-14

    def test_normal_motion_gives_perimeter(self, small_cylinder):
        """Test V = n: volume component equals the polygon perimeter times cos(pi / n)"""
        n, r = 16, 0.05
        perimeter = 2.0 * n * r * np.sin(np.pi / n)

        pairing = constraint_pairing(small_cylinder, _water(small_cylinder), _normal_field(small_cylinder))

        assert pairing[2] == pytest.approx(perimeter * np.cos(np.pi / n), rel=1e-12)
        assert pairing[2] == pytest.approx(2.0 * np.pi * r, rel=0.03)

    def test_densities_vanish_off_deformable_obstacle(self, small_cylinder):
        dens = constraint_densities(small_cylinder, _water(small_cylinder))
        others = np.setdiff1d(np.arange(small_cylinder.n_faces), small_cylinder.patch_faces(PATCH_OBS_FREE))

        assert np.all(dens[others] == 0.0)
        assert np.all(dens[small_cylinder.patch_faces(PATCH_OBS_FREE), 2] == 1.0)

    def test_normal_flux_of_tangential_field(self, small_cylinder):
        normals = _normal_field(small_cylinder)
        tangents = np.column_stack([-normals[:, 1], normals[:, 0]])
        faces = small_cylinder.patch_faces(*OBSTACLE_KINDS)

        assert np.abs(normal_flux(small_cylinder, tangents)[faces]).max() <= 1e-15


class TestScales:
    def test_scales_from_reference(self):
        assert np.allclose(constraint_scales(np.array([1.0, 2.0, 0.5]), 4.0), [2.0, 2.0, 0.5])

    def test_zero_volume_falls_back_to_one(self):
        assert np.allclose(constraint_scales(np.zeros(3), 2.0), [2.0, 2.0, 1.0])
