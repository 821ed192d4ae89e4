"""
Score label rasters against reference rasters.

Usage:
    python manage.py evaluate --pred test1_pred.mras --ref data/test1_lbl.mras --classes 6
    python manage.py evaluate --pred a.mras --ref a_lbl.mras --pred b.mras --ref b_lbl.mras \
        --classes 6 --report report.csv --aa-denominator reference
"""
from evaluation.metrics import AA_DENOMINATORS, ConfusionMatrix
from evaluation.reports import build_report, render_table, write_csv
from utils.exceptions import ConfigError
from utils.management import EngineCommand
from utils.raster import read_raster


class Command(EngineCommand):
    help = 'Accumulate a confusion matrix over prediction/reference pairs and report OA, kappa, AA and F1'

    def add_arguments(self, parser):
        parser.add_argument('--pred', action='append', required=True, help='Predicted label raster (repeatable)')
        parser.add_argument('--ref', action='append', required=True, help='Reference label raster (repeatable)')
        parser.add_argument('--classes', type=int, required=True, help='Number of classes C')
        parser.add_argument('--report', help='Write the report as CSV to this path')
        parser.add_argument(
            '--aa-denominator',
            choices=AA_DENOMINATORS,
            default='prediction',
            help='Marginal AA divides by (default: prediction)',
        )

    def run(self, **options):
        if len(options['pred']) != len(options['ref']):
            raise ConfigError(
                f'got {len(options["pred"])} --pred but {len(options["ref"])} --ref rasters; give them in pairs'
            )
        if not 2 <= options['classes'] <= 254:
            raise ConfigError(f'--classes must be in 2..254, got {options["classes"]}')

        cm = ConfusionMatrix.empty(options['classes'])
        for pred_path, ref_path in zip(options['pred'], options['ref']):
            cm.accumulate(read_raster(pred_path), read_raster(ref_path))
            self.stdout.write(f'Accumulated {pred_path} against {ref_path}')

        report = build_report(cm, options['aa_denominator'])
        self.stdout.write('')
        self.stdout.write(render_table(report))
        if options['report']:
            write_csv(options['report'], report)
            self.stdout.write(self.style.SUCCESS(f'\n✓ Report written to {options["report"]}'))
