from django.core.management.base import CommandError

from curerec import const
from runs.management.commands._base import RunCommand
from runs.services.pipeline import run_unlearn


def parse_sweep(value):
    try:
        weights = [float(part) for part in value.split(',') if part.strip()]
    except ValueError:
        raise CommandError(f'--omega-sweep expects comma-separated floats, got {value!r}', returncode=const.EXIT_CONFIG)
    if not weights or any(not 0 < w < 1 for w in weights):
        raise CommandError('--omega-sweep values must lie in (0, 1)', returncode=const.EXIT_CONFIG)
    return weights


class Command(RunCommand):
    help = 'Unlearn the forget set with CURE or one of the baselines'

    def add_command_arguments(self, parser):
        parser.add_argument('--method', choices=const.UNLEARN_METHODS, default=const.METHOD_CURE)
        parser.add_argument('--omega-sweep', dest='omega_sweep', default='', help='e.g. 0.2,0.4,0.6,0.8')

    def run(self, config, options):
        weights = parse_sweep(options['omega_sweep']) if options['omega_sweep'] else [None]
        for omega_r in weights:
            label, result = run_unlearn(config, options['method'], omega_r)
            self.stdout.write(
                self.style.SUCCESS(
                    f'✓ {label}: {len(result.trace)} steps in {result.wall_seconds:.2f}s, '
                    f'conflict rate {result.trace.conflict_rate(config.unlearn.conflict_threshold):.3f}'
                )
            )
