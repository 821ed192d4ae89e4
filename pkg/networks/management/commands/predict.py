"""
Apply a trained network to a full PAN/MS scene.

Usage:
    python manage.py predict --checkpoint runs/low/checkpoint.mckp --pan test1_pan.mras \
        --ms test1_ms.mras --out-scores scores.mras --out-labels labels.mras --preview map.png
    python manage.py predict --checkpoint runs/reuse/checkpoint.mckp --pan p.mras --ms m.mras \
        --out-scores scores.mras --per-instance
"""
from networks.inference import DEFAULT_WINDOW
from networks.services import predict_scene
from utils.exceptions import ConfigError
from utils.management import EngineCommand
from utils.preview import render_label_preview


class Command(EngineCommand):
    help = 'Predict class scores and a label map for a whole scene'

    def add_arguments(self, parser):
        parser.add_argument('--checkpoint', required=True, help='MCKP checkpoint written by train')
        parser.add_argument('--pan', required=True, help='PAN raster (1 band, H x W)')
        parser.add_argument('--ms', required=True, help='MS raster (4 bands, H/4 x W/4)')
        parser.add_argument('--out-scores', help='Score raster to write (C bands)')
        parser.add_argument('--out-labels', help='Label raster to write (uint8)')
        parser.add_argument(
            '--per-instance',
            action='store_true',
            help='Also write one score raster per ReuseNet instance (<scores>_r<k>)',
        )
        parser.add_argument('--window', type=int, default=DEFAULT_WINDOW, help='Window side in PAN pixels')
        parser.add_argument('--overlap', type=int, help='Discarded border per window side')
        parser.add_argument('--preview', help='Write a colour PNG of the label map')
        parser.add_argument('--config', help='Architecture config (default: effective.cfg next to the checkpoint)')

    def run(self, **options):
        if not (options['out_scores'] or options['out_labels'] or options['preview']):
            raise ConfigError('nothing to write: give --out-scores, --out-labels or --preview')
        if options['per_instance'] and not options['out_scores']:
            raise ConfigError('--per-instance needs --out-scores')

        outcome = predict_scene(
            options['checkpoint'],
            options['pan'],
            options['ms'],
            out_scores=options['out_scores'],
            out_labels=options['out_labels'],
            per_instance=options['per_instance'],
            window=options['window'],
            overlap=options['overlap'],
            config_path=options['config'],
        )
        if options['preview']:
            outcome['written'].append(render_label_preview(outcome['labels'], options['preview']))
        for path in outcome['written']:
            self.stdout.write(f'Wrote {path}')
        self.stdout.write(self.style.SUCCESS(f'✓ Predicted {outcome["labels"].shape[2]}x{outcome["labels"].shape[3]} tile'))
