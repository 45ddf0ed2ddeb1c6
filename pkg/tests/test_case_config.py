"""
Unit tests for case file loading and validation
"""
from pathlib import Path

import pytest
from pydantic import ValidationError

from src.utils.case_config import CaseConfig, load_case_config
from src.utils.constants import METRIC_IDENTITY, MODE_UNDERWATER_ONLY, MSG_MESH_NOT_FOUND
from src.utils.exceptions import CaseConfigError


CASE = """\
[mesh]
path = square.msh

[fluid]
rho_water = 1.0
rho_air = 0.5
mu_water = 0.01
mu_air = 0.01
gravity = 0.0, -9.81

[flow]
v_infinity = 2.0, 0.0
waterline = 0.5
max_iterations = 400

[descent]
p_sequence = 2, 2.5
relax = 0.8
tau = 5

[optimizer]
max_outer_iterations = 3

[output]
directory = results

[gradient_check]
n_fields = 2
eps_fd = 1e-3
"""


@pytest.fixture
def case_dir(tmp_path):
    (tmp_path / "square.msh").write_text("placeholder\n")
    (tmp_path / "case.ini").write_text(CASE)
    return tmp_path


def _write(tmp_path, text, name="case.ini"):
    path = tmp_path / name
    path.write_text(text)
    return path


class TestLoadCaseConfig:
    """Test suite for INI case files"""

    def test_valid_case(self, case_dir):
        """Test that values are parsed and relative paths resolve against the case directory"""
        cfg = load_case_config(case_dir / "case.ini")

        assert cfg.mesh.path == case_dir / "square.msh"
        assert cfg.output.directory == case_dir / "results"
        assert cfg.fluid.gravity == (0.0, -9.81)
        assert cfg.flow.v_infinity == (2.0, 0.0)
        assert cfg.flow.waterline == 0.5
        assert cfg.descent.p_sequence == (2.0, 2.5)
        assert cfg.gradient_check.n_fields == 2

    def test_defaults_fill_missing_sections(self, tmp_path):
        (tmp_path / "m.msh").write_text("")
        cfg = load_case_config(_write(tmp_path, "[mesh]\npath = m.msh\n"))

        assert cfg.optimizer.deformation_mode == MODE_UNDERWATER_ONLY
        assert cfg.descent.multiplier_metric == METRIC_IDENTITY
        assert cfg.flow.waterline is None

    def test_missing_case_file(self, tmp_path):
        with pytest.raises(CaseConfigError):
            load_case_config(tmp_path / "absent.ini")

    def test_missing_mesh_names_path(self, case_dir):
        (case_dir / "square.msh").unlink()

        with pytest.raises(CaseConfigError, match=MSG_MESH_NOT_FOUND) as excinfo:
            load_case_config(case_dir / "case.ini")

        assert "square.msh" in str(excinfo.value)

    def test_missing_mesh_allowed_when_not_checked(self, case_dir):
        (case_dir / "square.msh").unlink()

        assert load_case_config(case_dir / "case.ini", check_mesh=False).mesh.path.name == "square.msh"

    @pytest.mark.parametrize("section, line", [
        ("descent", "relax = 2.5"),
        ("descent", "p_sequence = 2.3, 2.6"),
        ("descent", "multiplier_metric = newton"),
        ("flow", "inlet_profile = plug"),
        ("flow", "relax_velocity = 1.5"),
        ("flow", "c_infinity = 1.5"),
        ("fluid", "rho_air = 2.0"),
        ("optimizer", "deformation_mode = bow_only"),
        ("gradient_check", "eps_fd = 0"),
        ("gradient_check", "n_fields = -1"),
        ("output", "colour = blue"),
    ])
    def test_invalid_values_rejected(self, tmp_path, section, line):
        """Test that out-of-range or unknown values raise a config error"""
        (tmp_path / "m.msh").write_text("")
        path = _write(tmp_path, f"[mesh]\npath = m.msh\n\n[{section}]\n{line}\n")

        with pytest.raises(CaseConfigError):
            load_case_config(path)

    def test_duplicate_section_rejected(self, tmp_path):
        path = _write(tmp_path, "[mesh]\npath = a.msh\n[mesh]\npath = b.msh\n")

        with pytest.raises(CaseConfigError):
            load_case_config(path, check_mesh=False)

    def test_none_waterline(self, tmp_path):
        path = _write(tmp_path, "[mesh]\npath = m.msh\n[flow]\nwaterline = none\n")

        assert load_case_config(path, check_mesh=False).flow.waterline is None

    def test_far_field_fraction_reaches_flow_config(self, tmp_path):
        path = _write(tmp_path, "[mesh]\npath = m.msh\n[flow]\nc_infinity = 0.25\n")

        assert load_case_config(path, check_mesh=False).flow_config().c_infinity == 0.25


class TestCaseConfig:
    """Test suite for conversion into service configurations"""

    @pytest.fixture
    def cfg(self, case_dir):
        return load_case_config(case_dir / "case.ini")

    def test_converters(self, cfg):
        assert cfg.fluid_props().rho_air == 0.5
        assert cfg.flow_config().max_iterations == 400
        assert cfg.flow_config().average_window == cfg.optimizer.average_window
        assert cfg.descent_config().tau == 5.0
        assert cfg.optimizer_config().max_outer_iterations == 3

    def test_overrides(self, cfg, tmp_path):
        updated = cfg.with_overrides(output_dir=tmp_path / "elsewhere", seed=7)

        assert updated.output.directory == tmp_path / "elsewhere"
        assert updated.output.seed == 7
        assert cfg.output.seed == 0

    def test_no_overrides_returns_same_config(self, cfg):
        assert cfg.with_overrides() is cfg

    def test_mesh_section_required(self):
        with pytest.raises(ValidationError):
            CaseConfig()

    def test_shipped_cylinder_case_parses(self):
        path = Path(__file__).parent.parent / "cases" / "cylinder.ini"

        cfg = load_case_config(path, check_mesh=False)

        assert cfg.flow.waterline == 0.2
        assert cfg.optimizer.deformation_mode == MODE_UNDERWATER_ONLY
