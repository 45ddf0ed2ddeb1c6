"""
Case commands: optimisation run, single primal/adjoint solves, stand-alone
descent, export and mesh generation
"""
import logging
from pathlib import Path

import numpy as np

from src.commands.common import handles_errors, load_case, load_case_mesh, output_dir
from src.data.mesh_generator import MeshGenerator
from src.services.adjoint_service import solve_adjoint
from src.services.constraint_service import capture_reference, constraint_densities, evaluate_constraints
from src.services.descent_service import solve_descent
from src.services.flow_service import (
    build_extension_eta,
    compute_force,
    compute_objective,
    drag_coefficient,
    prescribe_concentration,
    solve_primal,
)
from src.services.mesh_service import load_mesh, quality_check, write_mesh
from src.services.optimizer_service import run_optimization
from src.services.sensitivity_service import SensitivityForm, assemble_sensitivity
from src.utils.constants import (
    EXIT_OK,
    EXIT_SOLVER_ERROR,
    ADJOINT_RESIDUALS_CSV,
    DESCENT_RESIDUALS_CSV,
    FINAL_MESH_FILE,
    HISTORY_CSV,
    OBSTACLE_KINDS,
    PATCH_KINDS,
    PATCH_OBS_FREE,
    RESIDUALS_CSV,
    STATUS_CONVERGED,
    STATUS_FILE,
    STATUS_MAX_ITER,
    STATUS_SOLVER_FAILURE,
    SUCCESS_STATUSES,
)
from src.utils.exceptions import FlowConvergenceError
from src.utils.io import (
    export_vtk,
    read_sensitivity_file,
    write_descent_residuals,
    write_history,
    write_residuals,
    write_sensitivity_file,
    write_status,
)

logger = logging.getLogger(__name__)

SENSITIVITY_FILE = "sensitivity.txt"


def flow_cell_data(state, mesh, props) -> dict:
    return {
        'velocity': state.v,
        'pressure': state.p,
        'piezometric_pressure': state.piezometric_pressure(mesh, props),
        'concentration': state.c.cells,
        'cell_volume': mesh.geometry.cell_volume,
    }


def _record_failed_flow(path: Path, error: FlowConvergenceError, status_path: Path) -> None:
    if error.residual_history:
        write_residuals(path, error.residual_history)
    write_status(status_path, STATUS_SOLVER_FAILURE, str(error))


@handles_errors
def cmd_run(args) -> int:
    """Full optimisation: history CSV, one VTK snapshot per accepted iteration, final mesh and status"""
    cfg = load_case(args)
    out = output_dir(cfg)
    mesh0 = load_mesh(cfg.mesh.path)
    props = cfg.fluid_props()

    def snapshot(record, mesh, state, form, descent):
        export_vtk(
            out / f"iteration_{record.iteration:04d}.vtk",
            mesh,
            cell_data=flow_cell_data(state, mesh, props),
            point_data={'descent_direction': descent.V},
            face_data={'sensitivity': form.density()},
        )

    history, mesh = run_optimization(
        mesh0, props, cfg.flow_config(), cfg.descent_config(), cfg.optimizer_config(),
        on_iteration=snapshot,
    )
    write_history(out / HISTORY_CSV, history)
    write_mesh(mesh, out / FINAL_MESH_FILE)
    write_status(out / STATUS_FILE, history.status, history.message)

    logger.info(f"Run finished: status {history.status}, {len(history.records)} accepted iteration(s), "
                f"max |g|/scale {history.max_scaled_violation():.2e}")
    print(history.status)
    return EXIT_OK if history.status in SUCCESS_STATUSES else EXIT_SOLVER_ERROR


@handles_errors
def cmd_primal(args) -> int:
    """Single primal solve with residual history, force and VTK output"""
    cfg = load_case(args)
    out = output_dir(cfg)
    mesh = load_case_mesh(cfg)
    props = cfg.fluid_props()

    try:
        state = solve_primal(mesh, props, cfg.flow_config())
    except FlowConvergenceError as e:
        _record_failed_flow(out / RESIDUALS_CSV, e, out / STATUS_FILE)
        raise

    write_residuals(out / RESIDUALS_CSV, state.residual_history)
    export_vtk(out / "primal.vtk", mesh, cell_data=flow_cell_data(state, mesh, props))
    eta = build_extension_eta(mesh)
    J = compute_objective(state, eta, props, mesh)
    force = compute_force(state, mesh)
    write_status(out / STATUS_FILE, STATUS_CONVERGED)

    speed = float(np.linalg.norm(cfg.flow.v_infinity))
    obstacle = mesh.patch_vertices(*OBSTACLE_KINDS)
    width = float(np.ptp(mesh.vertices[obstacle, 1])) if obstacle.size else 0.0
    logger.info(f"Primal solve: {state.iterations} iterations, J = {J:.6e}, force = {force}")
    print(f"objective {J!r}")
    print(f"force {force[0]!r} {force[1]!r}")
    if speed > 0 and width > 0:
        print(f"drag_coefficient {drag_coefficient(force, props.rho_water, speed, width)!r}")
    return EXIT_OK


@handles_errors
def cmd_adjoint(args) -> int:
    """Primal and adjoint solves; writes the drag sensitivity as a face data file"""
    cfg = load_case(args)
    out = output_dir(cfg)
    mesh = load_case_mesh(cfg)
    props = cfg.fluid_props()
    flow_cfg = cfg.flow_config()

    state = solve_primal(mesh, props, flow_cfg)
    eta = build_extension_eta(mesh)
    try:
        adjoint = solve_adjoint(state, eta, props, mesh, flow_cfg)
    except FlowConvergenceError as e:
        _record_failed_flow(out / ADJOINT_RESIDUALS_CSV, e, out / STATUS_FILE)
        raise

    write_residuals(out / RESIDUALS_CSV, state.residual_history)
    write_residuals(out / ADJOINT_RESIDUALS_CSV, adjoint.residual_history)

    c0 = prescribe_concentration(mesh, cfg.flow.waterline, cfg.flow.smoothing, cfg.flow.c_infinity)
    g = evaluate_constraints(mesh, state.c, capture_reference(mesh, c0))
    form = assemble_sensitivity(state, adjoint, mesh, state.c, np.zeros(mesh.dim + 1), 0.0, g)
    faces = mesh.patch_faces(PATCH_OBS_FREE)
    write_sensitivity_file(out / SENSITIVITY_FILE, form.drag_density, faces, g)

    export_vtk(
        out / "adjoint.vtk",
        mesh,
        cell_data={'adjoint_velocity': adjoint.w, 'adjoint_pressure': adjoint.q, 'eta': eta},
        face_data={'sensitivity': form.drag_density},
    )
    write_status(out / STATUS_FILE, STATUS_CONVERGED)
    logger.info(f"Adjoint solve: {adjoint.iterations} iterations, {faces.size} sensitivity faces")
    return EXIT_OK


@handles_errors
def cmd_descent_only(args) -> int:
    """Descent direction for a drag density read from a face data file"""
    cfg = load_case(args)
    out = output_dir(cfg)
    mesh = load_case_mesh(cfg)
    descent_cfg = cfg.descent_config()

    density, g = read_sensitivity_file(args.sensitivity, mesh)
    c = prescribe_concentration(mesh, cfg.flow.waterline, cfg.flow.smoothing, cfg.flow.c_infinity)
    deformable = np.zeros(mesh.n_faces, dtype=bool)
    deformable[mesh.patch_faces(PATCH_OBS_FREE)] = True
    size = mesh.dim + 1
    form = SensitivityForm(
        drag_density=np.where(deformable, density, 0.0),
        constraint_densities=constraint_densities(mesh, c),
        lam=np.zeros(size),
        tau=descent_cfg.tau,
        g=np.zeros(size) if g is None else g,
    )

    result = solve_descent(form, mesh, c, descent_cfg)
    write_descent_residuals(out / DESCENT_RESIDUALS_CSV, result.residual_history)
    export_vtk(out / "descent.vtk", mesh, point_data={'descent_direction': result.V})
    status = STATUS_CONVERGED if result.converged else STATUS_MAX_ITER
    write_status(out / STATUS_FILE, status)
    logger.info(f"Descent: {result.iterations} Picard iterations, lambda = {result.lam}")
    return EXIT_OK


@handles_errors
def cmd_export(args) -> int:
    """Export a mesh file (the case mesh unless --mesh is given) to VTK with quality fields"""
    cfg = load_case(args) if args.mesh is None else None
    mesh_path = Path(args.mesh) if args.mesh is not None else cfg.mesh.path
    if args.out is not None:
        out = Path(args.out)
    elif cfg is not None:
        out = output_dir(cfg)
    else:
        out = mesh_path.parent
    mesh = load_mesh(mesh_path)

    kinds = np.zeros(mesh.n_faces)
    for code, kind in enumerate(PATCH_KINDS, start=1):
        kinds[mesh.patch_faces(kind)] = code
    target = export_vtk(
        out / f"{mesh_path.stem}.vtk",
        mesh,
        cell_data={'cell_volume': mesh.geometry.cell_volume},
        face_data={'patch': kinds},
    )
    report = quality_check(mesh)
    logger.info(f"Exported {mesh_path} to {target}: min cell volume {report.min_cell_volume:.3e}, "
                f"max skewness {report.max_skewness:.3f}")
    print(target)
    return EXIT_OK


@handles_errors
def cmd_generate_mesh(args) -> int:
    out = Path(args.out) if args.out is not None else Path.cwd()
    path = MeshGenerator(out).generate(args.name, refine=args.refine, waterline=args.waterline)
    print(path)
    return EXIT_OK


def register(subparsers) -> None:
    """Register the case commands on an argparse subparsers object"""
    subparsers.add_parser('run', help='run the shape optimisation').set_defaults(handler=cmd_run)
    subparsers.add_parser('primal', help='solve the primal flow').set_defaults(handler=cmd_primal)
    subparsers.add_parser('adjoint', help='solve primal and adjoint flow').set_defaults(handler=cmd_adjoint)

    descent = subparsers.add_parser('descent-only', help='descent direction for a given sensitivity')
    descent.add_argument('--sensitivity', required=True, help='face data file: "face_index density" lines')
    descent.set_defaults(handler=cmd_descent_only)

    export = subparsers.add_parser('export', help='export a mesh to legacy VTK')
    export.add_argument('--mesh', default=None, help='mesh file (defaults to the case mesh)')
    export.set_defaults(handler=cmd_export)

    generate = subparsers.add_parser('generate-mesh', help='write a scripted mesh')
    generate.add_argument('--name', default='cylinder', choices=MeshGenerator.NAMES)
    generate.add_argument('--refine', type=int, default=1)
    generate.add_argument('--waterline', type=float, default=None)
    generate.set_defaults(handler=cmd_generate_mesh)
