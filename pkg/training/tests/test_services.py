import csv
import tempfile
from dataclasses import replace
from io import StringIO
from pathlib import Path
from unittest import mock, skipUnless

from django.conf import settings
from django.core.management import CommandError, call_command
from django.test import SimpleTestCase, TestCase, override_settings
from threadpoolctl import threadpool_info

from networks.services import configured_threads, load_trained_network
from scenes.dataset import save_dataset
from scenes.synthetic import SyntheticConfig, synth_dataset
from training import services
from training.models import TrainingRun
from training.services import (
    CHECKPOINT_NAME, EFFECTIVE_CONFIG_NAME, HISTORY_FIELDS, HISTORY_NAME, SWEEP_NAME, apply_sweep_value,
    load_run_settings, parse_sweep_value, run_sweep, run_training,
)
from utils.config import ConfigFile
from utils.exceptions import ConfigError, DataError

TINY_CONFIG = """\
[run]
name = tiny
seed = 3

[arch]
patch_size = 4
num_classes = 4
bottleneck_hw = 1

[train]
max_epochs = 2
batch_size = 8
lr_step_epochs = 1

[data]
train_patches = 16
validation_patches = 8
"""

SYNTH = SyntheticConfig(tile_size=64, patch_size=4, num_classes=4, sites=8, label_fraction=0.2)


class RunDirectoryMixin:
    def setUp(self):
        super().setUp()
        self.tmp = tempfile.TemporaryDirectory()
        self.addCleanup(self.tmp.cleanup)
        self.root = Path(self.tmp.name)
        self.data_dir = self.root / 'data'
        save_dataset(self.data_dir, synth_dataset(SYNTH, seed=1))
        self.config_path = self.root / 'run.cfg'
        self.config_path.write_text(TINY_CONFIG, encoding='utf-8')

    def settings_for(self, text=TINY_CONFIG, **overrides):
        return load_run_settings(ConfigFile.parse(text), data_dir=self.data_dir, **overrides)


class RunSettingsTest(SimpleTestCase):
    def test_data_directory_is_required(self):
        with self.assertRaisesRegex(ConfigError, 'no data directory'):
            load_run_settings(ConfigFile.parse(TINY_CONFIG))

    def test_overrides(self):
        run_settings = load_run_settings(
            ConfigFile.parse(TINY_CONFIG), seed=9, data_dir='elsewhere', full_tile_validation=True,
        )
        self.assertEqual(run_settings.run.seed, 9)
        self.assertEqual(run_settings.train.seed, 9)
        self.assertEqual(run_settings.data.directory, 'elsewhere')
        self.assertTrue(run_settings.train.full_tile_validation)
        self.assertEqual(run_settings.train.lr_step_epochs, (1,))

    def test_reusenet_trains_without_early_stopping_by_default(self):
        text = TINY_CONFIG + '\n[reuse]\ninstances = 2\n'
        run_settings = load_run_settings(ConfigFile.parse(text), data_dir='d')
        self.assertEqual(run_settings.reuse.instances, 2)
        self.assertFalse(run_settings.train.early_stopping)
        self.assertNotIn('seed', run_settings.sections()['train'])


class SweepValueTest(SimpleTestCase):
    def test_patch_size_pairs(self):
        self.assertEqual(parse_sweep_value('patch_size', '(32, 8)'), (8, '8'))
        self.assertEqual(parse_sweep_value('patch_size', '16'), (16, '16'))
        with self.assertRaisesRegex(ConfigError, 'must be 4 x MS side'):
            parse_sweep_value('patch_size', '(30,8)')
        with self.assertRaises(ConfigError):
            parse_sweep_value('patch_size', '(a,b)')

    def test_other_parameters(self):
        self.assertEqual(parse_sweep_value('upsampler', 'nearest_then_conv3'), ('nearest_then_conv3', 'nearest_then_conv3'))
        self.assertEqual(parse_sweep_value('reuse_R', ' 3 '), (3, '3'))
        with self.assertRaisesRegex(ConfigError, 'must be an integer'):
            parse_sweep_value('bottleneck_hw', 'big')
        with self.assertRaisesRegex(ConfigError, 'cannot sweep'):
            parse_sweep_value('learning_rate', '0.1')

    def test_reuse_sweep_switches_early_stopping_off(self):
        base = load_run_settings(ConfigFile.parse(TINY_CONFIG), data_dir='d')
        swept = apply_sweep_value(base, 'reuse_R', 3)
        self.assertEqual(swept.reuse.instances, 3)
        self.assertFalse(swept.train.early_stopping)
        self.assertTrue(base.train.early_stopping)

    def test_patch_size_sweep_scales_the_bottleneck(self):
        base = load_run_settings(ConfigFile.parse(TINY_CONFIG), data_dir='d')
        for text, m in (('(32, 8)', 8), ('(64, 16)', 16), ('(96, 24)', 24), ('(128, 32)', 32)):
            with self.subTest(value=text):
                value, label = parse_sweep_value('patch_size', text)
                arch = apply_sweep_value(base, 'patch_size', value).arch
                self.assertEqual(label, str(m))
                self.assertEqual((arch.patch_size, arch.bottleneck_hw), (m, m // 4))

    def test_arch_sweep(self):
        base = load_run_settings(ConfigFile.parse(TINY_CONFIG), data_dir='d')
        self.assertEqual(apply_sweep_value(base, 'bottleneck_hw', 2).arch.bottleneck_hw, 2)


class RunTrainingTest(RunDirectoryMixin, TestCase):
    def test_writes_files_and_registers_the_run(self):
        outcome = run_training(self.settings_for(), self.root / 'out')

        out = self.root / 'out'
        self.assertTrue((out / CHECKPOINT_NAME).exists())
        with open(out / HISTORY_NAME, newline='', encoding='utf-8') as f:
            rows = list(csv.DictReader(f))
        self.assertEqual(list(rows[0]), HISTORY_FIELDS)
        self.assertEqual([row['epoch'] for row in rows], ['1', '2'])
        self.assertEqual(float(rows[1]['lr']), 0.001)

        run = TrainingRun.objects.get()
        self.assertEqual(run.status, 'finished')
        self.assertEqual(run.name, 'tiny')
        self.assertEqual(run.best_epoch, outcome.result.best_epoch)
        self.assertEqual(run.epochs.count(), 2)

    def test_effective_config_rebuilds_the_network(self):
        run_settings = self.settings_for()
        run_training(run_settings, self.root / 'out')

        reread = load_run_settings(self.root / 'out' / EFFECTIVE_CONFIG_NAME)
        self.assertEqual(reread.arch, run_settings.arch)
        self.assertEqual(reread.train, run_settings.train)
        network, checkpoint = load_trained_network(self.root / 'out' / CHECKPOINT_NAME)
        self.assertEqual(network.spec, run_settings.arch)
        self.assertEqual(checkpoint.meta('band_min').shape, (5,))

    @override_settings(MRCN_THREADS=None)
    def test_same_seed_same_files(self):
        run_settings = self.settings_for()
        run_training(run_settings, self.root / 'a')
        run_training(run_settings, self.root / 'b')
        for name in (HISTORY_NAME, CHECKPOINT_NAME):
            with self.subTest(file=name):
                self.assertEqual((self.root / 'a' / name).read_bytes(), (self.root / 'b' / name).read_bytes())

    @override_settings(MRCN_THREADS=None)
    def test_thread_limit_holds_while_fitting(self):
        seen = []
        real_fit = services.fit

        def fit_and_look(*args, **kwargs):
            seen.extend(pool['num_threads'] for pool in threadpool_info())
            return real_fit(*args, **kwargs)

        with mock.patch.object(services, 'fit', side_effect=fit_and_look):
            run_training(self.settings_for(), self.root / 'out')

        self.assertTrue(seen)
        self.assertEqual(set(seen), {1})

    @override_settings(MRCN_THREADS=3)
    def test_environment_threads_override_the_config(self):
        run_settings = self.settings_for()
        self.assertEqual(run_settings.run.threads, 3)
        with mock.patch.object(services, 'compute_threads', wraps=services.compute_threads) as limit:
            run_training(run_settings, self.root / 'out')
        limit.assert_called_once_with(3)
        self.assertIn('threads = 3', (self.root / 'out' / EFFECTIVE_CONFIG_NAME).read_text())

    @override_settings(MRCN_THREADS=None)
    def test_prediction_uses_the_trained_thread_count(self):
        text = TINY_CONFIG.replace('seed = 3', 'seed = 3\nthreads = 2')
        run_training(self.settings_for(text), self.root / 'out')
        self.assertEqual(configured_threads(self.root / 'out' / CHECKPOINT_NAME), 2)
        with override_settings(MRCN_THREADS=4):
            self.assertEqual(configured_threads(self.root / 'out' / CHECKPOINT_NAME), 4)

    def test_missing_data_directory(self):
        run_settings = load_run_settings(ConfigFile.parse(TINY_CONFIG), data_dir=self.root / 'nowhere')
        with self.assertRaises(DataError):
            run_training(run_settings, self.root / 'out')

    def test_sweep(self):
        run_settings = self.settings_for()
        run_settings = replace(run_settings, train=replace(run_settings.train, max_epochs=1))

        rows, best = run_sweep(run_settings, 'bottleneck_hw', ['1', '2'], self.root / 'sweep')

        self.assertEqual([row['value'] for row in rows], ['1', '2'])
        self.assertTrue((self.root / 'sweep' / 'bottleneck_hw=2' / CHECKPOINT_NAME).exists())
        with open(self.root / 'sweep' / SWEEP_NAME, newline='', encoding='utf-8') as f:
            table = list(csv.DictReader(f))
        self.assertEqual([row['best'] for row in table].count('yes'), 1)
        self.assertIn(best, rows)
        self.assertEqual(
            set(TrainingRun.objects.values_list('sweep_value', flat=True)), {'1', '2'},
        )


class CommandPipelineTest(RunDirectoryMixin, TestCase):
    def test_train_predict_evaluate(self):
        out = StringIO()
        call_command('train', '--config', str(self.config_path), '--data', str(self.data_dir),
                     '--out', str(self.root / 'run'), stdout=out)
        self.assertIn('Trained 2 epoch(s)', out.getvalue())

        labels_path = self.root / 'test1_pred.mras'
        call_command(
            'predict', '--checkpoint', str(self.root / 'run' / CHECKPOINT_NAME),
            '--pan', str(self.data_dir / 'test1_pan.mras'), '--ms', str(self.data_dir / 'test1_ms.mras'),
            '--out-labels', str(labels_path), '--preview', str(self.root / 'test1.png'),
            stdout=StringIO(),
        )
        self.assertTrue(labels_path.exists())
        self.assertTrue((self.root / 'test1.png').exists())

        out = StringIO()
        call_command('evaluate', '--pred', str(labels_path), '--ref', str(self.data_dir / 'test1_lbl.mras'),
                     '--classes', '4', '--report', str(self.root / 'report.csv'), stdout=out)
        self.assertIn('Kappa', out.getvalue())
        self.assertTrue((self.root / 'report.csv').exists())

    def test_train_without_data_directory(self):
        with self.assertRaises(CommandError) as ctx:
            call_command('train', '--config', str(self.config_path), '--out', str(self.root / 'run'),
                         stdout=StringIO())
        self.assertEqual(ctx.exception.returncode, 2)

    def test_predict_needs_an_output(self):
        with self.assertRaises(CommandError) as ctx:
            call_command('predict', '--checkpoint', 'x.mckp', '--pan', 'p.mras', '--ms', 'm.mras',
                         stdout=StringIO())
        self.assertEqual(ctx.exception.returncode, 2)

    def test_sweep_command(self):
        config = TINY_CONFIG.replace('max_epochs = 2', 'max_epochs = 1')
        self.config_path.write_text(config, encoding='utf-8')
        out = StringIO()
        call_command('sweep', '--config', str(self.config_path), '--param', 'reuse_R', '--values', '1', '2',
                     '--data', str(self.data_dir), '--out', str(self.root / 'sweep'), stdout=out)
        self.assertTrue((self.root / 'sweep' / 'reuse_R=2' / CHECKPOINT_NAME).exists())
        self.assertTrue((self.root / 'sweep' / SWEEP_NAME).exists())


@skipUnless(settings.MRCN_SLOW_TESTS, 'set MRCN_SLOW_TESTS=true to train at the default patch size')
class DefaultSizeTrainingTest(RunDirectoryMixin, TestCase):
    def test_default_architecture_learns_the_synthetic_classes(self):
        save_dataset(self.data_dir, synth_dataset(SyntheticConfig(num_classes=4), seed=1))
        text = '[run]\nseed = 1\n\n[arch]\nnum_classes = 4\n\n[train]\nmax_epochs = 20\nlr_step_epochs = 15\n'
        outcome = run_training(self.settings_for(text), self.root / 'slow')
        self.assertGreater(outcome.result.best_val_oa, 0.4)
