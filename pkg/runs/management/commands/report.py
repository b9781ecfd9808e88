from runs.management.commands._base import RunCommand
from runs.services.reporting import build_report


class Command(RunCommand):
    help = 'Render alignment and conflict plots and the summary table of a run'

    def run(self, config, options):
        for path in build_report(config.out_dir):
            self.stdout.write(f'  {path}')
        self.stdout.write(self.style.SUCCESS('✓ Report written'))
