import argparse
import logging
from logging.handlers import RotatingFileHandler
from typing import List, Optional

from src.config import LOG_FILE, LOG_LEVEL
from src.utils.constants import EXIT_CONFIG_ERROR

logger = logging.getLogger('src')


def setup_logging(level: str = LOG_LEVEL):
    """Setup logging configuration"""
    level = getattr(logging, level.upper(), logging.INFO)
    if not any(isinstance(h, RotatingFileHandler) for h in logger.handlers):
        handler = RotatingFileHandler(LOG_FILE, maxBytes=10240000, backupCount=10)
        handler.setFormatter(logging.Formatter(
            '%(asctime)s - %(name)s [line:%(lineno)d]- %(levelname)s - %(message)s'
        ))
        logger.addHandler(handler)
    for handler in logger.handlers:
        handler.setLevel(level)
    logger.setLevel(level)
    logger.info('Shape optimisation toolkit startup')


def create_app() -> argparse.ArgumentParser:
    """Command-line application factory"""
    parser = argparse.ArgumentParser(
        prog='shapeopt',
        description='Adjoint drag minimisation with displacement and centre-of-buoyancy constraints',
    )
    parser.add_argument('--config', default=None, help='case file (INI sections)')
    parser.add_argument('--out', default=None, help='output directory (overrides the case file)')
    parser.add_argument('--seed', type=int, default=None, help='seed for perturbation fields')
    parser.add_argument('--log-level', default=LOG_LEVEL, choices=['DEBUG', 'INFO', 'WARNING', 'ERROR'])

    subparsers = parser.add_subparsers(dest='command', required=True)

    # Register command groups
    from src.commands import case_commands, verification_commands

    case_commands.register(subparsers)
    verification_commands.register(subparsers)

    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = create_app()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_CONFIG_ERROR if e.code else 0

    setup_logging(args.log_level)
    logging.getLogger().setLevel(getattr(logging, args.log_level))
    logger.info(f"Running '{args.command}'")
    return args.handler(args)
