"""
Verification commands
"""
import logging

from src.commands.common import handles_errors, load_case, load_case_mesh, output_dir
from src.services.gradient_check_service import check_gradient, perturbation_fields
from src.utils.constants import EXIT_OK, EXIT_CHECK_FAILED, GRADIENT_CHECK_CSV
from src.utils.exceptions import CaseConfigError
from src.utils.io import write_gradient_check

logger = logging.getLogger(__name__)


@handles_errors
def cmd_check_gradient(args) -> int:
    """Adjoint vs central finite difference table; non-zero exit if any field exceeds the bound"""
    cfg = load_case(args)
    settings = cfg.gradient_check
    n_fields = settings.n_fields if args.n_fields is None else args.n_fields
    eps_fd = settings.eps_fd if args.eps_fd is None else args.eps_fd
    if n_fields < 0:
        raise CaseConfigError("n_fields must be non-negative")
    if eps_fd <= 0.0:
        raise CaseConfigError("eps_fd must be positive")

    out = output_dir(cfg)
    mesh = load_case_mesh(cfg)
    fields = perturbation_fields(mesh, n_fields, settings.modes, cfg.output.seed)
    rows = check_gradient(mesh, cfg.fluid_props(), cfg.flow_config(), fields, eps_fd)
    write_gradient_check(
        out / GRADIENT_CHECK_CSV,
        [(r.field, r.adjoint, r.finite_difference, r.relative_difference) for r in rows],
    )

    failed = [r.field for r in rows if not r.passed(settings.bound)]
    for r in rows:
        print(f"{r.field} {r.adjoint!r} {r.finite_difference!r} {r.relative_difference!r}")
    if failed:
        logger.error(f"Gradient check failed for field(s) {failed} (bound {settings.bound})")
        return EXIT_CHECK_FAILED
    logger.info(f"Gradient check passed for {len(rows)} field(s)")
    return EXIT_OK


def register(subparsers) -> None:
    check = subparsers.add_parser('check-gradient', help='compare adjoint and finite-difference derivatives')
    check.add_argument('--n-fields', type=int, default=None, help='number of seeded perturbation fields')
    check.add_argument('--eps-fd', type=float, default=None, help='finite difference step relative to the mesh diameter')
    check.set_defaults(handler=cmd_check_gradient)
