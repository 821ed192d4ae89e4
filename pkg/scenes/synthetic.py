"""
Deterministic synthetic multiresolution scenes.

Classes come in pairs with nearly identical spectral signatures; what tells
the two apart is the spatial frequency of their PAN texture. A classifier
therefore has to combine MS colour with PAN context. Optional speckle swaps
single pixels to another class's signature so labels also need spatial
regularization.
"""
import logging
from dataclasses import dataclass

import numpy as np

from networks.architectures import MS_BANDS, RESOLUTION_RATIO
from scenes.dataset import Scene
from utils.exceptions import ConfigError
from utils.raster import UNLABELED
from utils.tensors import Rng

logger = logging.getLogger(__name__)

MAX_CLASSES = 8
TILE_ROLES = ('train', 'train', 'validation', 'test', 'test')
# fixed positive mix of the four MS bands that forms the PAN band
PAN_WEIGHTS = np.array([0.2, 0.3, 0.3, 0.2])


@dataclass(frozen=True)
class SyntheticConfig:
    tile_size: int = 256
    patch_size: int = 16
    num_classes: int = 6
    label_fraction: float = 0.05
    sites: int = 24
    ms_noise: float = 0.03
    pan_noise: float = 0.02
    texture_strength: float = 0.15
    signature_spread: float = 0.04
    speckle: float = 0.0

    def __post_init__(self):
        if self.tile_size % RESOLUTION_RATIO:
            raise ConfigError(f'tile_size {self.tile_size} must be divisible by {RESOLUTION_RATIO}')
        if self.tile_size < 8 * self.patch_size:
            raise ConfigError(f'tile_size {self.tile_size} must be at least 8M = {8 * self.patch_size}')
        if not 2 <= self.num_classes <= MAX_CLASSES:
            raise ConfigError(f'num_classes must be in 2..{MAX_CLASSES}, got {self.num_classes}')
        if not 0 < self.label_fraction <= 1:
            raise ConfigError(f'label_fraction must be in (0, 1], got {self.label_fraction}')
        if not 0 <= self.speckle < 1:
            raise ConfigError(f'speckle must be in [0, 1), got {self.speckle}')
        if self.sites < self.num_classes:
            raise ConfigError(f'sites ({self.sites}) must be at least num_classes ({self.num_classes})')
        if min(self.ms_noise, self.pan_noise, self.texture_strength, self.signature_spread) < 0:
            raise ConfigError('noise, texture and spread levels must be >= 0')


@dataclass
class ClassModel:
    """Per-class spectral signatures and PAN texture, shared by every tile of a dataset."""
    signatures: np.ndarray
    frequencies: np.ndarray
    orientations: np.ndarray

    @classmethod
    def draw(cls, cfg, rng):
        gen = rng.generator
        C = cfg.num_classes
        signatures = np.empty((C, MS_BANDS))
        for c in range(0, C, 2):
            base = gen.uniform(0.25, 0.75, MS_BANDS)
            signatures[c] = base
            if c + 1 < C:
                # the pair partner differs only slightly in colour
                signatures[c + 1] = base + gen.uniform(-cfg.signature_spread, cfg.signature_spread, MS_BANDS)
        frequencies = np.empty(C)
        for c in range(0, C, 2):
            frequencies[c] = gen.uniform(0.04, 0.08)
            if c + 1 < C:
                frequencies[c + 1] = gen.uniform(0.22, 0.3)
        orientations = gen.uniform(0, np.pi, C)
        return cls(signatures=signatures, frequencies=frequencies, orientations=orientations)

    def textures(self, height, width):
        rows, cols = np.mgrid[0:height, 0:width]
        out = np.empty((len(self.frequencies), height, width))
        for c, (f, theta) in enumerate(zip(self.frequencies, self.orientations)):
            out[c] = np.sin(2 * np.pi * f * (cols * np.cos(theta) + rows * np.sin(theta)))
        return out


def voronoi_labels(cfg, rng):
    """Nearest-site partition of the tile; every class owns at least one site."""
    gen = rng.generator
    size = cfg.tile_size
    sites = gen.uniform(0, size, (cfg.sites, 2))
    classes = np.arange(cfg.sites) % cfg.num_classes
    gen.shuffle(classes)
    rows, cols = np.mgrid[0:size, 0:size]
    nearest = np.full((size, size), np.inf)
    labels = np.zeros((size, size), dtype=np.uint8)
    for (sy, sx), c in zip(sites, classes):
        distance = (rows - sy) ** 2 + (cols - sx) ** 2
        closer = distance < nearest
        nearest[closer] = distance[closer]
        labels[closer] = c
    return labels


def synth_scene(cfg, rng, classes=None, name='synthetic', role='train'):
    """
    One synthetic tile.

    Args:
        cfg: SyntheticConfig
        rng: Rng for this tile
        classes: ClassModel shared across tiles (drawn from ``rng`` when omitted)
    """
    gen = rng.generator
    classes = classes or ClassModel.draw(cfg, rng)
    size = cfg.tile_size
    truth = voronoi_labels(cfg, rng)

    appearance = truth.copy()
    if cfg.speckle > 0:
        swapped = gen.random(truth.shape) < cfg.speckle
        shift = gen.integers(1, cfg.num_classes, truth.shape)
        appearance[swapped] = (truth[swapped] + shift[swapped]) % cfg.num_classes

    signature = classes.signatures[appearance].transpose(2, 0, 1)
    ms_full = signature + gen.normal(0, cfg.ms_noise, signature.shape)
    small = size // RESOLUTION_RATIO
    ms = ms_full.reshape(MS_BANDS, small, RESOLUTION_RATIO, small, RESOLUTION_RATIO).mean(axis=(2, 4))

    texture = np.take_along_axis(classes.textures(size, size), appearance[None].astype(np.int64), axis=0)[0]
    pan = np.tensordot(PAN_WEIGHTS, signature, axes=1)
    pan = pan + cfg.texture_strength * texture + gen.normal(0, cfg.pan_noise, pan.shape)

    labels = np.full(size * size, UNLABELED, dtype=np.uint8)
    keep = gen.choice(size * size, size=int(round(cfg.label_fraction * size * size)), replace=False)
    labels[keep] = truth.ravel()[keep]

    return Scene(
        name=name,
        pan=np.clip(pan, 0, 1).astype(np.float32)[None, None],
        ms=np.clip(ms, 0, 1).astype(np.float32)[None],
        labels=labels.reshape(1, 1, size, size),
        role=role,
    )


def synth_dataset(cfg, seed):
    """Five tiles (2 train, 1 validation, 2 test) sharing one class model."""
    root = Rng(seed)
    streams = root.spawn(1 + len(TILE_ROLES))
    classes = ClassModel.draw(cfg, streams[0])
    scenes = []
    counters = {}
    for stream, role in zip(streams[1:], TILE_ROLES):
        counters[role] = counters.get(role, 0) + 1
        name = f'{role}{counters[role]}'
        scenes.append(synth_scene(cfg, stream, classes, name=name, role=role))
        logger.debug(f'Synthesized {name}: {scenes[-1].labeled_count()} labeled pixels')
    return scenes
