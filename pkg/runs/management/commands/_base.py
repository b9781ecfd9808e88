"""
Shared base for the run commands: global flags, config loading and the
mapping from domain errors to exit codes.
"""

import logging

from django.conf import settings
from django.core.management.base import BaseCommand, CommandError

from curerec import const
from curerec.exceptions import (
    CircuitError,
    ConfigurationError,
    CorruptSampleError,
    DataError,
    NonFiniteGradientError,
    PatchingAlignmentError,
    PromptError,
    ReportInputError,
    SequenceTooLongError,
    TrainingDivergedError,
    UnknownEdgeError,
)
from runs.services.config import load_run_config, parse_options
from runs.services.pipeline import configure_threads

logger = logging.getLogger(__name__)

EXIT_CODES = (
    ((ConfigurationError, DataError, PromptError, SequenceTooLongError, UnknownEdgeError), const.EXIT_CONFIG),
    ((TrainingDivergedError, NonFiniteGradientError), const.EXIT_DIVERGENCE),
    ((CorruptSampleError, PatchingAlignmentError, CircuitError), const.EXIT_ATTRIBUTION),
    ((ReportInputError,), const.EXIT_REPORT_INPUT),
)


def exit_code(exc: Exception) -> int | None:
    for kinds, code in EXIT_CODES:
        if isinstance(exc, kinds):
            return code
    return None


class RunCommand(BaseCommand):
    """Adds --config --seed --threads --out --option to every subcommand."""

    def add_arguments(self, parser):
        parser.add_argument('--config', type=str, default=None, help='Flat key = value run config file')
        parser.add_argument('--seed', type=int, default=None)
        parser.add_argument('--threads', type=int, default=None, help='Torch worker cap; 1 is fully deterministic')
        parser.add_argument('--out', type=str, default=None, help='Run output directory')
        parser.add_argument(
            '--option',
            action='append',
            default=[],
            metavar='KEY=VALUE',
            help='Override one config key, e.g. --option unlearn.steps=50',
        )
        self.add_command_arguments(parser)

    def add_command_arguments(self, parser):
        pass

    def load_config(self, options):
        return load_run_config(
            options['config'] or settings.CURE_DEFAULT_CONFIG or None,
            parse_options(options['option']),
            seed=options['seed'],
            threads=options['threads'],
            out=options['out'],
        )

    def handle(self, *args, **options):
        try:
            config = self.load_config(options)
            configure_threads(config)
            return self.run(config, options)
        except CommandError:
            raise
        except Exception as exc:
            code = exit_code(exc)
            if code is None:
                raise
            logger.error("%s failed: %s", self.__module__.rsplit('.', 1)[-1], exc)
            raise CommandError(str(exc), returncode=code) from exc

    def run(self, config, options):
        raise NotImplementedError
