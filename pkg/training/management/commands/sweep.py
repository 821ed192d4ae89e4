"""
Sensitivity sweep: one training run per value of a single hyperparameter.

Usage:
    python manage.py sweep --config run.cfg --param bottleneck_hw --values 16 8 4 2 1 --out sweeps/b
    python manage.py sweep --config run.cfg --param patch_size --values "(32,8)" "(64,16)" --out sweeps/m
"""
from training.services import SWEEP_PARAMS, load_run_settings, run_sweep
from utils.management import EngineCommand


class Command(EngineCommand):
    help = 'Train once per hyperparameter value and report the best validation OA'

    def add_arguments(self, parser):
        parser.add_argument('--config', required=True, help='Run configuration file')
        parser.add_argument('--param', required=True, choices=SWEEP_PARAMS, help='Hyperparameter to vary')
        parser.add_argument('--values', required=True, nargs='+', help='Values to try')
        parser.add_argument('--data', help='Data directory (overrides [data] directory)')
        parser.add_argument('--out', required=True, help='Output directory; one sub-directory per value')
        parser.add_argument('--seed', type=int, help='Run seed (overrides [run] seed)')

    def run(self, **options):
        run_settings = load_run_settings(options['config'], seed=options['seed'], data_dir=options['data'])
        rows, best = run_sweep(run_settings, options['param'], options['values'], options['out'])

        self.stdout.write(f'\n{options["param"]:>20}  val OA')
        for row in rows:
            marker = '  ← best' if row is best else ''
            self.stdout.write(f'{row["value"]:>20}  {float(row["val_oa"]):.4f}{marker}')
        self.stdout.write(self.style.SUCCESS(f'\n✓ Best {options["param"]} = {best["value"]}'))
