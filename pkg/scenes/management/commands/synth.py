"""
Write a deterministic synthetic dataset: 2 train, 1 validation and 2 test tiles.

Usage:
    python manage.py synth --out-dir data/ --seed 7
    python manage.py synth --config run.cfg --out-dir data/
"""
from networks.architectures import ArchSpec
from networks.serializers import ArchSerializer
from scenes.dataset import save_dataset
from scenes.serializers import SyntheticSerializer
from scenes.synthetic import synth_dataset
from training.serializers import RunSerializer
from utils.config import ConfigFile, validate_section
from utils.management import EngineCommand


class Command(EngineCommand):
    help = 'Synthesize PAN/MS/label tiles and a manifest'

    def add_arguments(self, parser):
        parser.add_argument('--config', help='Config file with [synth] (and [arch] for the patch size)')
        parser.add_argument('--out-dir', required=True, help='Directory for the rasters and manifest.cfg')
        parser.add_argument('--seed', type=int, help='Dataset seed (overrides [run] seed)')

    def run(self, **options):
        config = ConfigFile.read(options['config']) if options['config'] else ConfigFile()
        arch = validate_section(config, 'arch', ArchSerializer) if config.has_section('arch') else ArchSpec()
        run = validate_section(config, 'run', RunSerializer)
        seed = options['seed'] if options['seed'] is not None else run.seed
        cfg = validate_section(config, 'synth', SyntheticSerializer, context={'patch_size': arch.patch_size})

        scenes = synth_dataset(cfg, seed)
        save_dataset(options['out_dir'], scenes)

        self.stdout.write(f'\n{"tile":<14} {"role":<11} {"size":>9} {"labeled":>9}')
        for scene in scenes:
            height, width = scene.shape
            self.stdout.write(f'{scene.name:<14} {scene.role:<11} {f"{height}x{width}":>9} {scene.labeled_count():>9}')
        self.stdout.write(self.style.SUCCESS(f'\n✓ Wrote {len(scenes)} tiles to {options["out_dir"]} (seed {seed})'))
