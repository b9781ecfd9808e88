from runs.management.commands._base import RunCommand
from runs.services.pipeline import run_eval


class Command(RunCommand):
    help = 'Evaluate the original, the retrain oracle and every unlearned checkpoint'

    def add_command_arguments(self, parser):
        parser.add_argument('labels', nargs='*', help='Unlearned checkpoint labels; all of them by default')

    def run(self, config, options):
        reports = run_eval(config, options['labels'] or None)
        for report in reports:
            auc = '-' if report.auc is None else f'{report.auc:.4f}'
            self.stdout.write(
                f'{report.label:<24} AUC {auc}  ACC {report.acc:.4f}  '
                f'LogLoss {report.logloss:.4f}  JSD {report.jsd_forget:.5f}'
            )
        self.stdout.write(self.style.SUCCESS(f'✓ Evaluated {len(reports)} models'))
