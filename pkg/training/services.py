"""
Training runs end to end: config -> data -> network -> fit -> files.

Files written to the output directory are the source of truth
(``checkpoint.mckp``, ``history.csv``, ``effective.cfg``); the run registry
in the database is a best-effort index over them.
"""
import csv
import logging
from dataclasses import asdict, dataclass, replace
from pathlib import Path

from django.conf import settings
from django.db import DatabaseError

from networks.architectures import ReuseNetConfig, build_network, glorot_init, init_from_pretrained
from networks.serializers import ArchSerializer, ReuseSerializer
from scenes.dataset import band_statistics, load_dataset, normalize_scene
from scenes.patches import PatchSampler
from scenes.serializers import DataSerializer
from training.checkpoints import network_tensors, save_checkpoint
from training.serializers import RunSerializer, TrainSerializer
from training.trainer import fit
from utils.config import ConfigFile, render_config, validate_section
from utils.exceptions import ConfigError, DataError
from utils.tensors import Rng, compute_threads

logger = logging.getLogger(__name__)

CHECKPOINT_NAME = 'checkpoint.mckp'
HISTORY_NAME = 'history.csv'
EFFECTIVE_CONFIG_NAME = 'effective.cfg'
SWEEP_NAME = 'sweep.csv'
HISTORY_FIELDS = ['epoch', 'lr', 'train_loss', 'train_oa', 'val_oa']
SWEEP_PARAMS = ('bottleneck_hw', 'extra_conv_layers', 'patch_size', 'upsampler', 'reuse_R')


@dataclass(frozen=True)
class RunSettings:
    """Every validated section a training run needs."""
    run: object
    arch: object
    train: object
    data: object
    reuse: object = None

    def sections(self):
        """Effective configuration, defaults merged, in config-file form."""
        train = asdict(self.train)
        train.pop('seed')
        train.pop('threads')
        sections = {
            'run': asdict(self.run),
            'arch': asdict(self.arch),
            'train': train,
            'data': asdict(self.data),
        }
        if self.reuse is not None:
            sections['reuse'] = asdict(self.reuse)
        return sections


@dataclass
class PreparedData:
    train_patches: object
    val_patches: object
    val_scenes: list
    normalization: dict


@dataclass
class TrainingOutcome:
    settings: RunSettings
    result: object
    output_dir: Path
    checkpoint_path: Path
    history_path: Path


def load_run_settings(config, seed=None, data_dir=None, full_tile_validation=None):
    """
    Validate a run configuration.

    Args:
        config: path of the config file or a parsed ``ConfigFile``
        seed, data_dir, full_tile_validation: command-line overrides
    """
    if not isinstance(config, ConfigFile):
        config = ConfigFile.read(config)
    run = validate_section(config, 'run', RunSerializer)
    if seed is not None:
        run = replace(run, seed=seed)
    if settings.MRCN_THREADS:
        run = replace(run, threads=settings.MRCN_THREADS)

    arch = validate_section(config, 'arch', ArchSerializer)
    reuse = validate_section(config, 'reuse', ReuseSerializer) if config.has_section('reuse') else None
    train = validate_section(
        config, 'train', TrainSerializer,
        list_fields=('lr_step_epochs',),
        context={'recurrent': reuse is not None, 'seed': run.seed, 'threads': run.threads},
    )
    if full_tile_validation:
        train = replace(train, full_tile_validation=True)
    data = validate_section(config, 'data', DataSerializer)
    if data_dir:
        data = replace(data, directory=str(data_dir))
    if not data.directory:
        raise ConfigError('no data directory: set [data] directory or pass --data')
    return RunSettings(run=run, arch=arch, train=train, data=data, reuse=reuse)


def prepare_data(run_settings, rng):
    """Load train/validation tiles, normalize them and draw the fixed patch sets."""
    arch, data = run_settings.arch, run_settings.data
    dataset = load_dataset(data.directory, roles=('train', 'validation'))
    if not dataset['train']:
        raise DataError(f'{data.directory}: manifest lists no train tiles')
    if not dataset['validation']:
        raise DataError(f'{data.directory}: manifest lists no validation tiles')

    normalization = {}
    if data.normalize:
        lows, highs = band_statistics(dataset['train'])
        normalization = {'band_min': lows, 'band_max': highs}
        for role in ('train', 'validation'):
            dataset[role] = [normalize_scene(scene, lows, highs) for scene in dataset[role]]

    train_rng, val_rng = rng.spawn(2)
    train_sampler = PatchSampler(dataset['train'], arch.patch_size, arch.num_classes)
    val_sampler = PatchSampler(dataset['validation'], arch.patch_size, arch.num_classes)
    train_patches = train_sampler.batch(train_sampler.draw(data.train_patches, train_rng))
    val_patches = val_sampler.batch(val_sampler.draw(data.validation_patches, val_rng))
    logger.info(
        f'Drew {len(train_patches)} training patches from {train_sampler.total} eligible centres '
        f'and {len(val_patches)} validation patches from {val_sampler.total}'
    )
    return PreparedData(
        train_patches=train_patches,
        val_patches=val_patches,
        val_scenes=dataset['validation'],
        normalization=normalization,
    )


def build_initialized_network(run_settings, rng):
    network = build_network(run_settings.arch, run_settings.reuse)
    glorot_init(network.store, rng)
    reuse = run_settings.reuse
    if reuse is not None and reuse.init_mode != 'plain':
        init_from_pretrained(network, reuse.pretrained_checkpoint)
    logger.info(
        f'Built {run_settings.arch.variant}'
        f'{f" x{network.instances} (ReuseNet)" if network.recurrent else ""} '
        f'with {network.store.count()} parameters'
    )
    return network


def write_history(path, history):
    with open(path, 'w', newline='', encoding='utf-8') as f:
        writer = csv.DictWriter(f, fieldnames=HISTORY_FIELDS)
        writer.writeheader()
        for stats in history:
            writer.writerow({
                'epoch': stats.epoch,
                'lr': f'{stats.lr:.8g}',
                'train_loss': f'{stats.loss:.8f}',
                'train_oa': f'{stats.train_oa:.6f}',
                'val_oa': f'{stats.val_oa:.6f}',
            })
    return path


def write_effective_config(directory, run_settings):
    path = Path(directory) / EFFECTIVE_CONFIG_NAME
    path.write_text(render_config(run_settings.sections()), encoding='utf-8')
    return path


# run registry (best effort)

def _register_run(run_settings, output_dir, network, sweep):
    from training.models import TrainingRun

    try:
        return TrainingRun.objects.create(
            name=run_settings.run.name,
            output_dir=str(output_dir),
            variant=run_settings.arch.variant,
            instances=network.instances,
            arch_hash=f'{network.arch_hash():08x}',
            seed=run_settings.run.seed,
            sweep_param=sweep[0] if sweep else '',
            sweep_value=sweep[1] if sweep else '',
        )
    except DatabaseError as e:
        logger.warning(f'Run registry unavailable, continuing without it: {e}')
        return None


def _record_epoch(record, stats):
    if record is None:
        return
    from training.models import EpochRecord

    try:
        EpochRecord.objects.create(
            run=record,
            epoch=stats.epoch,
            lr=stats.lr,
            loss=stats.loss,
            train_oa=stats.train_oa,
            val_oa=stats.val_oa,
        )
    except DatabaseError as e:
        logger.warning(f'Could not record epoch {stats.epoch} in the run registry: {e}')


def _finish_run(record, status, result=None):
    if record is None:
        return
    try:
        record.status = status
        if result is not None:
            record.best_epoch = result.best_epoch
            record.best_val_oa = result.best_val_oa
        record.save()
    except DatabaseError as e:
        logger.warning(f'Could not update run {record.pk} in the registry: {e}')


def run_training(run_settings, output_dir, sweep=None):
    """
    Train one network and write its checkpoint, history and effective config.

    Args:
        run_settings: validated ``RunSettings``
        output_dir: directory for the run's files (created)
        sweep: optional (param, value label) recorded in the registry

    Returns:
        TrainingOutcome
    """
    output_dir = Path(output_dir)
    try:
        output_dir.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise DataError(f'cannot create output directory {output_dir}: {e}') from e

    with compute_threads(run_settings.run.threads):
        init_rng, data_rng = Rng(run_settings.run.seed).spawn(2)
        data = prepare_data(run_settings, data_rng)
        network = build_initialized_network(run_settings, init_rng)
        record = _register_run(run_settings, output_dir, network, sweep)

        logger.info(
            f'Training run {run_settings.run.name} (seed {run_settings.run.seed}, '
            f'{run_settings.run.threads} thread(s)) into {output_dir}'
        )
        try:
            result = fit(
                network,
                data.train_patches,
                data.val_patches,
                run_settings.train,
                val_scenes=data.val_scenes,
                on_epoch=lambda stats: _record_epoch(record, stats),
            )
        except Exception:
            _finish_run(record, 'failed')
            logger.error(f'Training run {run_settings.run.name} failed', exc_info=True)
            raise

    checkpoint_path = save_checkpoint(
        output_dir / CHECKPOINT_NAME,
        network_tensors(network, data.normalization),
        network.arch_hash(),
        epoch=result.best_epoch,
        val_oa=result.best_val_oa,
    )
    history_path = write_history(output_dir / HISTORY_NAME, result.history)
    write_effective_config(output_dir, run_settings)
    _finish_run(record, 'finished', result)
    return TrainingOutcome(
        settings=run_settings,
        result=result,
        output_dir=output_dir,
        checkpoint_path=checkpoint_path,
        history_path=history_path,
    )


# sweeps

def parse_sweep_value(param, text):
    """
    Returns:
        tuple: (value, label). Patch sizes may be given as "(4M, M)" or "M".
    """
    text = str(text).strip()
    if param not in SWEEP_PARAMS:
        raise ConfigError(f'cannot sweep {param!r}; use one of {", ".join(SWEEP_PARAMS)}')
    if param == 'upsampler':
        return text, text
    if param == 'patch_size' and text.startswith('('):
        parts = [part.strip() for part in text.strip('()').split(',')]
        try:
            pan, ms = (int(part) for part in parts)
        except ValueError:
            raise ConfigError(f'patch size {text!r} must look like "(4M, M)"') from None
        if pan != 4 * ms:
            raise ConfigError(f'patch size {text}: PAN side {pan} must be 4 x MS side {ms}')
        return ms, str(ms)
    try:
        value = int(text)
    except ValueError:
        raise ConfigError(f'{param} value {text!r} must be an integer') from None
    return value, str(value)


def apply_sweep_value(run_settings, param, value):
    if param == 'reuse_R':
        reuse = run_settings.reuse or ReuseNetConfig()
        reuse = ReuseNetConfig(
            instances=value, init_mode=reuse.init_mode, pretrained_checkpoint=reuse.pretrained_checkpoint,
        )
        train = run_settings.train
        if run_settings.reuse is None:
            # a FuseNet config swept into ReuseNets follows the ReuseNet default
            train = replace(train, early_stopping=False)
        return replace(run_settings, reuse=reuse, train=train)
    if param == 'patch_size':
        return replace(run_settings, arch=run_settings.arch.with_patch_size(value))
    return replace(run_settings, arch=replace(run_settings.arch, **{param: value}))


def run_sweep(run_settings, param, values, output_dir):
    """
    Train once per value; every run keeps the same seed.

    Returns:
        tuple: (rows, best row) where a row is a dict of the sweep CSV
    """
    output_dir = Path(output_dir)
    parsed = [parse_sweep_value(param, text) for text in values]
    if not parsed:
        raise ConfigError('sweep needs at least one value')
    rows = []
    for value, label in parsed:
        swept = apply_sweep_value(run_settings, param, value)
        outcome = run_training(swept, output_dir / f'{param}={label}', sweep=(param, label))
        rows.append({
            'param': param,
            'value': label,
            'best_epoch': outcome.result.best_epoch,
            'val_oa': f'{outcome.result.best_val_oa:.6f}',
        })
        logger.info(f'Sweep {param}={label}: val OA {outcome.result.best_val_oa:.4f}')

    best = max(rows, key=lambda row: float(row['val_oa']))
    output_dir.mkdir(parents=True, exist_ok=True)
    with open(output_dir / SWEEP_NAME, 'w', newline='', encoding='utf-8') as f:
        writer = csv.DictWriter(f, fieldnames=['param', 'value', 'best_epoch', 'val_oa', 'best'])
        writer.writeheader()
        for row in rows:
            writer.writerow({**row, 'best': 'yes' if row is best else ''})
    return rows, best
