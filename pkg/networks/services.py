"""
Trained networks as filters over whole scenes.

A checkpoint is rebuilt from the ``effective.cfg`` written next to it by the
training run; band normalization stored in the checkpoint is applied to the
input rasters before prediction.
"""
import logging
from pathlib import Path

from django.conf import settings

from networks.architectures import build_network
from networks.inference import DEFAULT_WINDOW, predict_tile
from networks.serializers import ArchSerializer, ReuseSerializer
from scenes.dataset import Scene, normalize_scene
from training.checkpoints import load_checkpoint, load_into
from training.serializers import RunSerializer
from utils.config import ConfigFile, validate_section
from utils.exceptions import ConfigError
from utils.raster import read_raster, write_raster
from utils.tensors import compute_threads

logger = logging.getLogger(__name__)

EFFECTIVE_CONFIG_NAME = 'effective.cfg'


def run_config(checkpoint_path, config_path=None):
    """The config a checkpoint was trained with: ``effective.cfg`` beside it unless given."""
    checkpoint_path = Path(checkpoint_path)
    config_path = Path(config_path) if config_path else checkpoint_path.parent / EFFECTIVE_CONFIG_NAME
    if not config_path.exists():
        raise ConfigError(
            f'no architecture config for {checkpoint_path}: expected {config_path} '
            f'(written by train) or pass --config'
        )
    return ConfigFile.read(config_path)


def configured_threads(checkpoint_path, config_path=None):
    """``MRCN_THREADS`` if set, else the run's ``threads`` key."""
    if settings.MRCN_THREADS:
        return settings.MRCN_THREADS
    return validate_section(run_config(checkpoint_path, config_path), 'run', RunSerializer).threads


def load_trained_network(checkpoint_path, config_path=None):
    """
    Returns:
        tuple: (Network with the checkpoint loaded, Checkpoint)
    """
    checkpoint_path = Path(checkpoint_path)
    config = run_config(checkpoint_path, config_path)
    arch = validate_section(config, 'arch', ArchSerializer)
    reuse = validate_section(config, 'reuse', ReuseSerializer) if config.has_section('reuse') else None

    network = build_network(arch, reuse)
    checkpoint = load_into(network, load_checkpoint(checkpoint_path))
    logger.info(
        f'Loaded {arch.variant}{f" x{network.instances}" if network.recurrent else ""} '
        f'from {checkpoint_path} (epoch {checkpoint.epoch}, val OA {checkpoint.val_oa:.4f})'
    )
    return network, checkpoint


def normalized_inputs(checkpoint, pan, ms):
    """Apply the checkpoint's band statistics, if it carries any."""
    lows, highs = checkpoint.meta('band_min'), checkpoint.meta('band_max')
    scene = Scene(name='input', pan=pan, ms=ms)
    if lows is not None and highs is not None:
        scene = normalize_scene(scene, lows, highs)
    return scene.pan, scene.ms


def instance_path(path, instance):
    path = Path(path)
    return path.with_name(f'{path.stem}_r{instance}{path.suffix}')


def predict_scene(checkpoint_path, pan_path, ms_path, out_scores=None, out_labels=None,
                  per_instance=False, window=DEFAULT_WINDOW, overlap=None, config_path=None):
    """
    Predict a PAN/MS raster pair and write the requested outputs.

    Returns:
        dict: ``scores`` (final scores), ``labels``, ``instance_scores`` (list, per-instance
        mode only) and ``written`` (paths)
    """
    network, checkpoint = load_trained_network(checkpoint_path, config_path)
    pan, ms = normalized_inputs(checkpoint, read_raster(pan_path), read_raster(ms_path))
    with compute_threads(configured_threads(checkpoint_path, config_path)):
        scores, labels = predict_tile(
            network, pan, ms, window=window, overlap=overlap, per_instance=per_instance,
        )

    instance_scores = scores if per_instance else None
    final = scores[-1] if per_instance else scores
    written = []
    if out_scores:
        written.append(write_raster(out_scores, final))
        for r, instance in enumerate(instance_scores or [], start=1):
            written.append(write_raster(instance_path(out_scores, r), instance))
    if out_labels:
        written.append(write_raster(out_labels, labels))
    return {'scores': final, 'labels': labels, 'instance_scores': instance_scores, 'written': written}
