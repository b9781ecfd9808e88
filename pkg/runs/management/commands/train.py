from runs.management.commands._base import RunCommand
from runs.services.pipeline import run_train


class Command(RunCommand):
    help = 'Train the recommender and write the checkpoint and split manifest'

    def run(self, config, options):
        path = run_train(config)
        self.stdout.write(self.style.SUCCESS(f'✓ Checkpoint written to {path}'))
