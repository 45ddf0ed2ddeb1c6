"""
Outer augmented-Lagrange shape optimisation loop.
"""
from dataclasses import dataclass, field, replace
from typing import Callable, List, Optional, Tuple
import logging

import numpy as np

from src.config import (
    OPT_MAX_OUTER_ITERATIONS,
    OPT_STEP_FRACTION,
    OPT_BACKTRACK_FACTOR,
    OPT_MAX_BACKTRACKS,
    OPT_CONSTRAINT_TOLERANCE,
    OBJECTIVE_AVERAGE_WINDOW,
)
from src.services.adjoint_service import solve_adjoint
from src.services.constraint_service import capture_reference, constraint_scales, evaluate_constraints
from src.services.descent_service import DescentConfig, DescentResult, descent_operators, solve_descent
from src.services.flow_service import (
    FlowConfig,
    FluidProps,
    PrimalState,
    build_extension_eta,
    compute_force,
    compute_objective,
    prescribe_concentration,
    solve_primal,
)
from src.services.mesh_service import Mesh, QualityReport, apply_deformation, quality_check, retag_obstacle
from src.services.sensitivity_service import SensitivityForm, assemble_sensitivity
from src.utils.constants import (
    MODE_FULL_HULL,
    MODE_UNDERWATER_ONLY,
    STATUS_CONVERGED,
    STATUS_MAX_ITER,
    STATUS_GRID_DETERIORATION,
    STATUS_SOLVER_FAILURE,
    STATUS_STALLED,
)
from src.utils.exceptions import (
    FlowConvergenceError,
    GridDeteriorationError,
    LinearSolverError,
    DescentError,
    MeshTopologyError,
    StepSizeError,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class OptimizerConfig:
    max_outer_iterations: int = OPT_MAX_OUTER_ITERATIONS
    deformation_mode: str = MODE_UNDERWATER_ONLY
    step_fraction: float = OPT_STEP_FRACTION
    backtrack_factor: float = OPT_BACKTRACK_FACTOR
    max_backtracks: int = OPT_MAX_BACKTRACKS
    constraint_tolerance: float = OPT_CONSTRAINT_TOLERANCE
    average_window: int = OBJECTIVE_AVERAGE_WINDOW
    stop_threshold: float = 1e-8

    def __post_init__(self):
        if self.step_fraction <= 0.0:
            raise ValueError("step_fraction must be positive")
        if self.constraint_tolerance <= 0.0:
            raise ValueError("constraint_tolerance must be positive")
        if not 0.0 < self.backtrack_factor < 1.0:
            raise ValueError("backtrack_factor must lie in (0, 1)")
        if self.max_backtracks < 0 or self.max_outer_iterations < 0:
            raise ValueError("iteration limits must be non-negative")
        if self.deformation_mode not in (MODE_FULL_HULL, MODE_UNDERWATER_ONLY):
            raise ValueError(f"Unknown deformation mode: {self.deformation_mode}")


@dataclass
class TrialEvaluation:
    """Objective, constraints and flow state on a candidate mesh"""

    J: float
    g: np.ndarray
    force: np.ndarray
    state: PrimalState
    eta: np.ndarray


@dataclass
class StepChoice:
    eps: float
    mesh: Mesh
    evaluation: TrialEvaluation
    report: QualityReport
    backtracks: int = 0
    rejections: int = 0


@dataclass
class IterationRecord:
    iteration: int
    objective: float
    drag: float
    normalized_drag: float
    g: np.ndarray
    lam: np.ndarray
    eps: float
    min_cell_volume: float
    picard_iterations: int
    backtracks: int
    rejections: int


@dataclass
class OptimizationHistory:
    records: List[IterationRecord] = field(default_factory=list)
    status: str = STATUS_MAX_ITER
    initial_objective: float = float('nan')
    initial_drag: float = float('nan')
    reference: Optional[np.ndarray] = None
    scales: Optional[np.ndarray] = None
    final_report: Optional[QualityReport] = None
    message: str = ""

    def max_scaled_violation(self) -> float:
        if not self.records or self.scales is None:
            return 0.0
        return float(max(np.max(np.abs(r.g) / self.scales) for r in self.records))


SnapshotCallback = Callable[[IterationRecord, Mesh, PrimalState, SensitivityForm, DescentResult], None]


def initial_step(V: np.ndarray, mesh: Mesh, step_fraction: float) -> float:
    """eps such that no vertex moves more than step_fraction of its shortest incident edge"""
    magnitude = np.linalg.norm(V, axis=1)
    moving = magnitude > 0.0
    if not np.any(moving):
        raise StepSizeError("Descent direction vanishes; no step needed")
    return float(step_fraction * np.min(mesh.min_incident_edge_length()[moving] / magnitude[moving]))


def choose_step_size(
    V: np.ndarray,
    mesh: Mesh,
    J_current: float,
    evaluate: Callable[[Mesh], TrialEvaluation],
    cfg: OptimizerConfig,
    scales: Optional[np.ndarray] = None,
) -> StepChoice:
    """
    Backtracking step rule

    Starts from the step that moves each vertex at most step_fraction of its shortest
    incident edge and shrinks it by backtrack_factor while the deformed mesh is
    invalid, the objective increases, or a scaled constraint deviation exceeds the
    tolerance.

    Args:
        V: Descent direction on the vertices
        mesh: Current mesh
        J_current: Objective on the current mesh
        evaluate: Re-solve closure returning the TrialEvaluation of a candidate mesh
        cfg: Optimizer configuration
        scales: Constraint scales for the tolerance guard (guard skipped when None)

    Returns:
        StepChoice with the accepted eps and the evaluation of the new mesh

    Raises:
        GridDeteriorationError: Nothing was accepted and some candidate inverted cells
        StepSizeError: Every candidate was valid but rejected
    """
    eps = initial_step(V, mesh, cfg.step_fraction)
    rejections = 0
    worst = None

    for attempt in range(cfg.max_backtracks + 1):
        candidate = apply_deformation(mesh, V, eps)
        report = quality_check(candidate)
        if not report.valid:
            if worst is None or report.min_cell_volume < worst.min_cell_volume:
                worst = report
            logger.warning(f"Step eps={eps:.3e} inverts cells (min volume {report.min_cell_volume:.3e}); backtracking")
        else:
            try:
                evaluation = evaluate(candidate)
            except FlowConvergenceError as e:
                logger.warning(f"Flow failed on candidate eps={eps:.3e}: {e}; backtracking")
                evaluation = None
            if evaluation is not None:
                increase = evaluation.J > J_current
                violated = scales is not None and np.max(np.abs(evaluation.g) / scales) > cfg.constraint_tolerance
                if not increase and not violated:
                    logger.info(f"Accepted step eps={eps:.3e} after {attempt} backtrack(s): "
                                f"J {J_current:.6e} -> {evaluation.J:.6e}")
                    return StepChoice(eps, candidate, evaluation, report, attempt, rejections)
                logger.warning(f"Step eps={eps:.3e} rejected ({'objective increase' if increase else 'constraint violation'})")
            rejections += 1
        eps *= cfg.backtrack_factor

    if worst is not None:
        raise GridDeteriorationError(
            f"No acceptable step after {cfg.max_backtracks} backtracks and a candidate inverted cells "
            f"(min cell volume {worst.min_cell_volume:.3e})",
            worst,
        )
    raise StepSizeError(f"No acceptable step after {cfg.max_backtracks} backtracks ({rejections} rejected)")


def run_optimization(
    mesh0: Mesh,
    props: FluidProps,
    flow_cfg: FlowConfig,
    descent_cfg: DescentConfig,
    opt_cfg: OptimizerConfig,
    on_iteration: Optional[SnapshotCallback] = None,
) -> Tuple[OptimizationHistory, Mesh]:
    """
    Augmented-Lagrange shape optimisation

    Each iteration: primal solve, drag extension and objective, adjoint solve,
    sensitivity assembly with the previous multipliers, descent solve, step
    choice and mesh update.

    Args:
        mesh0: Initial mesh
        props: Fluid properties
        flow_cfg: Flow configuration (shared by primal and adjoint)
        descent_cfg: Descent configuration
        opt_cfg: Optimizer configuration
        on_iteration: Called after every accepted iteration

    Returns:
        Tuple of (OptimizationHistory, final Mesh)
    """
    try:
        flow_cfg = replace(flow_cfg, average_window=opt_cfg.average_window)
        mesh = retag_obstacle(mesh0, opt_cfg.deformation_mode, flow_cfg.waterline)
        c0 = prescribe_concentration(mesh, flow_cfg.waterline, flow_cfg.smoothing, flow_cfg.c_infinity)
        reference = capture_reference(mesh, c0)
        scales = constraint_scales(reference, mesh.diameter)
        history = OptimizationHistory(reference=reference, scales=scales, final_report=quality_check(mesh))
        lam = np.zeros(mesh.dim + 1)

        def evaluate(candidate: Mesh, initial: Optional[PrimalState] = None) -> TrialEvaluation:
            state = solve_primal(candidate, props, flow_cfg, initial=initial)
            eta = build_extension_eta(candidate)
            return TrialEvaluation(
                J=compute_objective(state, eta, props, candidate),
                g=evaluate_constraints(candidate, state.c, reference),
                force=compute_force(state, candidate),
                state=state,
                eta=eta,
            )

        try:
            current = evaluate(mesh)
        except (FlowConvergenceError, LinearSolverError, MeshTopologyError) as e:
            logger.error(f"Initial flow solve failed: {e}")
            history.status = STATUS_SOLVER_FAILURE
            history.message = str(e)
            return history, mesh
        history.initial_objective = current.J
        history.initial_drag = float(-current.force[0])
        logger.info(f"Initial objective {current.J:.6e}, drag {history.initial_drag:.6e}")

        for it in range(1, opt_cfg.max_outer_iterations + 1):
            try:
                adjoint = solve_adjoint(current.state, current.eta, props, mesh, flow_cfg)
                form = assemble_sensitivity(current.state, adjoint, mesh, current.state.c, lam, descent_cfg.tau, current.g)
                descent = solve_descent(form, mesh, current.state.c, descent_cfg, initial_lambda=lam)
            except (FlowConvergenceError, LinearSolverError, DescentError) as e:
                logger.error(f"Iteration {it}: solver failure: {e}")
                history.status = STATUS_SOLVER_FAILURE
                history.message = str(e)
                break
            lam = descent.lam

            size = np.sqrt(descent_operators(mesh).l2_squared(descent.V))
            if size <= opt_cfg.stop_threshold * mesh.diameter:
                logger.info(f"Iteration {it}: |V|_L2 = {size:.3e} below threshold; converged")
                history.status = STATUS_CONVERGED
                break

            warm = current.state
            try:
                step = choose_step_size(
                    descent.V, mesh, current.J,
                    lambda candidate: evaluate(candidate, initial=warm),
                    opt_cfg, scales,
                )
            except GridDeteriorationError as e:
                logger.error(f"Iteration {it}: grid deterioration: {e}")
                history.status = STATUS_GRID_DETERIORATION
                history.final_report = e.report
                history.message = str(e)
                break
            except StepSizeError as e:
                logger.warning(f"Iteration {it}: line search stalled: {e}")
                history.status = STATUS_STALLED
                history.message = str(e)
                break
            except (LinearSolverError, MeshTopologyError) as e:
                logger.error(f"Iteration {it}: solver failure during line search: {e}")
                history.status = STATUS_SOLVER_FAILURE
                history.message = str(e)
                break

            mesh = step.mesh
            current = step.evaluation
            drag = float(-current.force[0])
            record = IterationRecord(
                iteration=it,
                objective=current.J,
                drag=drag,
                normalized_drag=drag / history.initial_drag if history.initial_drag else float('nan'),
                g=current.g.copy(),
                lam=lam.copy(),
                eps=step.eps,
                min_cell_volume=step.report.min_cell_volume,
                picard_iterations=descent.iterations,
                backtracks=step.backtracks,
                rejections=step.rejections,
            )
            history.records.append(record)
            history.final_report = step.report
            logger.info(f"Iteration {it}: J = {current.J:.6e}, drag = {drag:.6e}, eps = {step.eps:.3e}, "
                        f"max |g|/scale = {np.max(np.abs(current.g) / scales):.2e}")
            if on_iteration is not None:
                on_iteration(record, mesh, current.state, form, descent)
        else:
            history.status = STATUS_MAX_ITER

        logger.info(f"Optimisation finished with status '{history.status}' after {len(history.records)} accepted iteration(s)")
        return history, mesh
    except Exception as e:
        logger.error(f"Optimisation failed: {e}")
        raise
