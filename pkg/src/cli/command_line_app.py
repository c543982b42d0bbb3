"""
boseloc command-line tool.

Usage:
    python main.py spectrum --config config/recipes/three_particle_spectrum.yaml --out results/spectrum
    python main.py scan --config config/recipes/three_particle_fractions_uv.yaml --threads 8
    python main.py protocol --config config/recipes/protocol_correlated.yaml --format json

Exit codes: 0 success, 1 unexpected error, 2 configuration error,
3 numerical-contract violation, 4 basis capacity exceeded.
"""
import argparse
import logging
import os
import sys
from typing import List, Optional

from src.cli.commands import COMMANDS
from src.utils.config import OUTPUT_FORMATS, load_config
from src.utils.errors import BoselocError

logger = logging.getLogger(__name__)

LOG_FORMAT = "%(asctime)s %(levelname)s:%(name)s:%(message)s"
LOG_LEVELS = ("DEBUG", "INFO", "WARNING", "ERROR")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--config', metavar='PATH', help='Run configuration (YAML)')
    common.add_argument('--base-config', metavar='PATH', default=None,
                        help='Base configuration (default: config/config.yaml)')
    common.add_argument('--out', metavar='DIR', help='Output directory')
    common.add_argument('--format', choices=OUTPUT_FORMATS, help='Tabular output format')
    common.add_argument('--threads', type=int, metavar='N',
                        help='Worker threads (default: general.max_threads, set by BOSELOC_THREADS)')
    common.add_argument('--log-level', choices=LOG_LEVELS, type=str.upper, help='Logging level')

    parser = argparse.ArgumentParser(
        prog='boseloc',
        description='Self-localized states in Bose-Hubbard superlattices: spectra, detection, statistics and dynamics.'
    )
    subparsers = parser.add_subparsers(dest='command', required=True)

    spectrum = subparsers.add_parser('spectrum', parents=[common], help='Eigenvalues of the many-body Hamiltonian')
    spectrum.add_argument('--dump-matrix', action='store_true', default=None, help='Write nonzero matrix entries')
    spectrum.add_argument('--dump-eigenvectors', action='store_true', default=None, help='Write eigenvector amplitudes')

    subparsers.add_parser('classify', parents=[common], help='Classify every eigenstate')
    subparsers.add_parser('scan', parents=[common], help='Class fractions over a parameter grid')
    subparsers.add_parser('rstats', parents=[common], help='Level-spacing ratio statistics of effective Hamiltonians')
    subparsers.add_parser('bloch', parents=[common], help='Band structure and Bloch projections')

    protocol = subparsers.add_parser('protocol', parents=[common], help='Three-step preparation protocol')
    protocol.add_argument('--kind', choices=('correlated', 'independent'), help='Protocol kind')
    return parser


def configure_logging(level: Optional[str]) -> None:
    logging.basicConfig(level=level if level in LOG_LEVELS else "INFO", format=LOG_FORMAT, force=True)


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    configure_logging(args.log_level or os.environ.get("BOSELOC_LOG_LEVEL", "").upper() or None)

    try:
        config = load_config(args.config, args.base_config)
        config.set_value('general', 'output_dir', args.out)
        config.set_value('general', 'output_format', args.format)
        config.set_value('general', 'max_threads', args.threads)
        config.set_value('output', 'dump_matrix', getattr(args, 'dump_matrix', None))
        config.set_value('output', 'dump_eigenvectors', getattr(args, 'dump_eigenvectors', None))
        config.set_value('protocol', 'kind', getattr(args, 'kind', None))
        if not args.log_level and not os.environ.get("BOSELOC_LOG_LEVEL"):
            logging.getLogger().setLevel(config.get_log_level())

        written = COMMANDS[args.command](config)
        logger.info(f"{args.command} finished: {len(written)} files written")
        return 0
    except BoselocError as e:
        logger.error(f"{type(e).__name__}: {e}")
        return e.exit_code
    except Exception:
        logger.exception(f"{args.command} failed with an unexpected error")
        return 1


if __name__ == '__main__':
    sys.exit(main())
