"""
Train a FuseNet or ReuseNet from a run configuration.

Usage:
    python manage.py train --config run.cfg --data data/ --out runs/low --seed 1
    python manage.py train --config run.cfg --out runs/low --full-tile-validation
"""
from training.services import load_run_settings, run_training
from utils.management import EngineCommand


class Command(EngineCommand):
    help = 'Train a network and write checkpoint, history and effective config'

    def add_arguments(self, parser):
        parser.add_argument('--config', required=True, help='Run configuration file')
        parser.add_argument('--data', help='Data directory (overrides [data] directory)')
        parser.add_argument('--out', required=True, help='Output directory')
        parser.add_argument('--seed', type=int, help='Run seed (overrides [run] seed)')
        parser.add_argument(
            '--full-tile-validation',
            action='store_true',
            help='Validate on every labeled pixel of the validation tiles',
        )

    def run(self, **options):
        run_settings = load_run_settings(
            options['config'],
            seed=options['seed'],
            data_dir=options['data'],
            full_tile_validation=options['full_tile_validation'],
        )
        outcome = run_training(run_settings, options['out'])
        result = outcome.result
        self.stdout.write(self.style.SUCCESS(
            f'✓ Trained {len(result.history)} epoch(s); kept epoch {result.best_epoch} '
            f'with validation OA {result.best_val_oa:.4f}'
        ))
        self.stdout.write(f'Checkpoint: {outcome.checkpoint_path}')
        self.stdout.write(f'History:    {outcome.history_path}')
