"""
Scenes: co-registered PAN / MS / label rasters of one tile.

On disk a scene is a triple of MRAS files ``<name>_pan.mras``,
``<name>_ms.mras`` and ``<name>_lbl.mras``; a data directory lists its tiles
by role in ``manifest.cfg``.
"""
import logging
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from networks.architectures import MS_BANDS, RESOLUTION_RATIO
from utils.config import ConfigFile, parse_list, render_config
from utils.exceptions import ConfigError, DataError
from utils.raster import UNLABELED, read_raster, write_raster

logger = logging.getLogger(__name__)

ROLES = ('train', 'validation', 'test')
MANIFEST_NAME = 'manifest.cfg'
BANDS = 1 + MS_BANDS


@dataclass(frozen=True)
class DataConfig:
    """Where the tiles live and how many patches are drawn from them once per run."""
    directory: str = ''
    train_patches: int = 2048
    validation_patches: int = 512
    normalize: bool = True

    def __post_init__(self):
        if self.train_patches < 1 or self.validation_patches < 1:
            raise ConfigError('train_patches and validation_patches must be >= 1')


@dataclass
class Scene:
    name: str
    pan: np.ndarray
    ms: np.ndarray
    labels: np.ndarray = None
    role: str = 'test'

    def __post_init__(self):
        if self.pan.ndim != 4 or self.pan.shape[:2] != (1, 1):
            raise DataError(f'{self.name}: PAN must be (1, 1, H, W), got {self.pan.shape}')
        if self.ms.ndim != 4 or self.ms.shape[:2] != (1, MS_BANDS):
            raise DataError(f'{self.name}: MS must be (1, {MS_BANDS}, h, w), got {self.ms.shape}')
        height, width = self.pan.shape[2:]
        if (height, width) != (RESOLUTION_RATIO * self.ms.shape[2], RESOLUTION_RATIO * self.ms.shape[3]):
            raise DataError(
                f'{self.name}: PAN {height}x{width} must be exactly 4x MS {self.ms.shape[2]}x{self.ms.shape[3]}'
            )
        if self.labels is not None and self.labels.shape != (1, 1, height, width):
            raise DataError(f'{self.name}: labels {self.labels.shape} do not match PAN {self.pan.shape}')
        if self.role not in ROLES:
            raise DataError(f'{self.name}: unknown role {self.role!r}')

    @property
    def shape(self):
        return self.pan.shape[2:]

    def labeled_count(self):
        if self.labels is None:
            return 0
        return int(np.count_nonzero(self.labels != UNLABELED))


def band_statistics(scenes):
    """Per-band (PAN, MS1..MS4) minimum and maximum over the given scenes."""
    if not scenes:
        raise DataError('band statistics need at least one scene')
    lows = np.full(BANDS, np.inf)
    highs = np.full(BANDS, -np.inf)
    for scene in scenes:
        bands = [scene.pan[0, 0]] + [scene.ms[0, b] for b in range(MS_BANDS)]
        for b, band in enumerate(bands):
            lows[b] = min(lows[b], float(band.min()))
            highs[b] = max(highs[b], float(band.max()))
    return lows, highs


def normalize_scene(raw, per_band_min, per_band_max):
    """(v - min) / (max - min) per band, clamped to [0, 1]."""
    lows = np.asarray(per_band_min, dtype=np.float64)
    highs = np.asarray(per_band_max, dtype=np.float64)
    if lows.shape != (BANDS,) or highs.shape != (BANDS,):
        raise DataError(f'normalization needs {BANDS} band limits (PAN + {MS_BANDS} MS)')
    degenerate = np.flatnonzero(highs <= lows)
    if degenerate.size:
        raise DataError(f'{raw.name}: degenerate band {int(degenerate[0])} (max <= min)')

    def scale(values, lo, hi):
        return np.clip((values.astype(np.float64) - lo) / (hi - lo), 0.0, 1.0).astype(np.float32)

    pan = scale(raw.pan, lows[0], highs[0])
    ms = scale(raw.ms, lows[1:].reshape(1, -1, 1, 1), highs[1:].reshape(1, -1, 1, 1))
    return replace(raw, pan=pan, ms=ms)


def scene_paths(directory, name):
    directory = Path(directory)
    return {
        'pan': directory / f'{name}_pan.mras',
        'ms': directory / f'{name}_ms.mras',
        'labels': directory / f'{name}_lbl.mras',
    }


def save_scene(directory, scene):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = scene_paths(directory, scene.name)
    write_raster(paths['pan'], scene.pan.astype(np.float32))
    write_raster(paths['ms'], scene.ms.astype(np.float32))
    if scene.labels is not None:
        write_raster(paths['labels'], scene.labels.astype(np.uint8))
    return paths


def load_scene(directory, name, role='test', require_labels=True):
    paths = scene_paths(directory, name)
    for key in ('pan', 'ms') + (('labels',) if require_labels else ()):
        if not paths[key].exists():
            raise DataError(f'missing data file {paths[key]}')
    labels = read_raster(paths['labels']) if paths['labels'].exists() else None
    if labels is not None and labels.dtype != np.uint8:
        raise DataError(f'{paths["labels"]}: label rasters must be uint8')
    return Scene(
        name=name,
        pan=read_raster(paths['pan']).astype(np.float32),
        ms=read_raster(paths['ms']).astype(np.float32),
        labels=labels,
        role=role,
    )


def write_manifest(directory, tiles):
    """``tiles``: dict role -> list of scene names."""
    path = Path(directory) / MANIFEST_NAME
    path.write_text(render_config({'data': {role: tiles.get(role, []) for role in ROLES}}), encoding='utf-8')
    return path


def read_manifest(directory):
    path = Path(directory) / MANIFEST_NAME
    if not path.exists():
        raise DataError(f'missing data file {path}')
    section = ConfigFile.read(path).section('data')
    return {role: parse_list(section.get(role, '')) for role in ROLES}


def load_dataset(directory, roles=ROLES):
    """Scenes of a data directory grouped by role, as listed in its manifest."""
    manifest = read_manifest(directory)
    dataset = {}
    for role in roles:
        dataset[role] = [load_scene(directory, name, role) for name in manifest[role]]
        logger.info(f'Loaded {len(dataset[role])} {role} tile(s) from {directory}')
    return dataset


def save_dataset(directory, scenes):
    """Write every scene and a manifest grouping them by role."""
    directory = Path(directory)
    try:
        directory.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise DataError(f'cannot create data directory {directory}: {e}') from e
    tiles = {role: [] for role in ROLES}
    for scene in scenes:
        save_scene(directory, scene)
        tiles[scene.role].append(scene.name)
    write_manifest(directory, tiles)
    logger.info(f'Wrote {len(scenes)} scene(s) and {MANIFEST_NAME} to {directory}')
    return directory
