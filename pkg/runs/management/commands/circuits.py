from runs.management.commands._base import RunCommand
from runs.services.pipeline import CIRCUIT_SETS, run_circuits


class Command(RunCommand):
    help = 'Attribute edges over the forget or retain set and extract its circuit'

    def add_command_arguments(self, parser):
        parser.add_argument('--set', dest='which', choices=CIRCUIT_SETS, default='forget')
        parser.add_argument(
            '--attribution',
            choices=('intervention', 'patching'),
            default=None,
            help='Overrides attribution.method',
        )

    def load_config(self, options):
        if options['attribution']:
            options['option'] = [*options['option'], f"attribution.method={options['attribution']}"]
        return super().load_config(options)

    def run(self, config, options):
        outcome = run_circuits(config, options['which'])
        self.stdout.write(
            self.style.SUCCESS(
                f"✓ {options['which']} circuit with {len(outcome.circuit)} edges "
                f"over {outcome.samples} samples written to {outcome.path}"
            )
        )
        if outcome.candidates:
            self.stdout.write(f'  Corrupt candidates per sample: max {max(outcome.candidates)}')
        if outcome.failures:
            self.stdout.write(self.style.WARNING(f'  {outcome.failures} samples without a corrupt prompt'))
