"""
Training patches.

A patch pairs a 4M x 4M PAN window with the M x M MS window under it. Centres
are drawn uniformly among eligible pixels: labeled, with the whole window
inside the tile. The PAN window origin is snapped down to the MS grid so both
windows cover exactly the same ground; the centre then sits up to three
pixels past the middle of the window.
"""
import logging
from dataclasses import dataclass

import numpy as np

from networks.architectures import RESOLUTION_RATIO
from utils.exceptions import DataError
from utils.raster import UNLABELED

logger = logging.getLogger(__name__)


@dataclass
class PatchBatch:
    pan: np.ndarray
    ms: np.ndarray
    target: np.ndarray
    mask: np.ndarray
    labels: np.ndarray

    def __len__(self):
        return self.pan.shape[0]

    def subset(self, index):
        return PatchBatch(
            pan=self.pan[index],
            ms=self.ms[index],
            target=self.target[index],
            mask=self.mask[index],
            labels=self.labels[index],
        )


def one_hot_encode(labels, num_classes):
    """
    Returns:
        tuple: (target (n, C, h, w) float32, mask (n, 1, h, w) float32)
    """
    labels = np.asarray(labels)
    labeled = labels != UNLABELED
    bad = labeled & (labels >= num_classes)
    if bad.any():
        value = int(labels[bad].flat[0])
        raise DataError(f'label value {value} out of range for {num_classes} classes')
    classes = np.arange(num_classes, dtype=labels.dtype).reshape(1, -1, 1, 1)
    target = (labels == classes).astype(np.float32)
    return target, labeled.astype(np.float32)


def eligible_centers(labels, patch_size):
    """(k, 2) array of (row, col) PAN centres, in row-major order."""
    half = 2 * patch_size
    height, width = labels.shape[-2:]
    plane = labels.reshape(height, width)
    ok = plane != UNLABELED
    rows = np.arange(height)
    cols = np.arange(width)
    row_ok = (rows >= half) & (rows + half <= height)
    col_ok = (cols >= half) & (cols + half <= width)
    ok &= row_ok[:, None] & col_ok[None, :]
    return np.argwhere(ok)


def window_origin(row, col, patch_size):
    """PAN origin of the window around a centre, on the MS grid."""
    half = 2 * patch_size
    return (
        RESOLUTION_RATIO * ((row - half) // RESOLUTION_RATIO),
        RESOLUTION_RATIO * ((col - half) // RESOLUTION_RATIO),
    )


class PatchSampler:
    """Uniform centre sampling over the union of several scenes' eligible pixels."""

    def __init__(self, scenes, patch_size, num_classes):
        self.scenes = list(scenes)
        self.patch_size = patch_size
        self.num_classes = num_classes
        self.centers = []
        for scene in self.scenes:
            if scene.labels is None:
                raise DataError(f'scene {scene.name} has no labels to sample from')
            self.centers.append(eligible_centers(scene.labels, patch_size))
        self.offsets = np.cumsum([0] + [len(c) for c in self.centers])
        if self.total == 0:
            names = ', '.join(scene.name for scene in self.scenes)
            raise DataError(
                f'no eligible patch centres for M={patch_size} in {names}: every centre needs '
                f'a labeled pixel with a full {4 * patch_size}x{4 * patch_size} window'
            )

    @property
    def total(self):
        return int(self.offsets[-1])

    def draw(self, count, rng):
        """(count, 3) array of (scene index, row, col)."""
        picks = rng.generator.integers(0, self.total, size=count)
        scene_index = np.searchsorted(self.offsets, picks, side='right') - 1
        refs = np.empty((count, 3), dtype=np.int64)
        for k, (s, p) in enumerate(zip(scene_index, picks)):
            refs[k, 0] = s
            refs[k, 1:] = self.centers[s][p - self.offsets[s]]
        return refs

    def batch(self, refs):
        M = self.patch_size
        size = RESOLUTION_RATIO * M
        count = len(refs)
        pan = np.empty((count, 1, size, size), dtype=np.float32)
        ms = np.empty((count, 4, M, M), dtype=np.float32)
        labels = np.empty((count, 1, size, size), dtype=np.uint8)
        for k, (s, cy, cx) in enumerate(refs):
            scene = self.scenes[s]
            y0, x0 = window_origin(cy, cx, M)
            pan[k] = scene.pan[0, :, y0:y0 + size, x0:x0 + size]
            labels[k] = scene.labels[0, :, y0:y0 + size, x0:x0 + size]
            my, mx = y0 // RESOLUTION_RATIO, x0 // RESOLUTION_RATIO
            ms[k] = scene.ms[0, :, my:my + M, mx:mx + M]
        target, mask = one_hot_encode(labels, self.num_classes)
        return PatchBatch(pan=pan, ms=ms, target=target, mask=mask, labels=labels)


def sample_patches(scene, patch_size, count, rng, num_classes=None):
    """Draw ``count`` patches from one scene."""
    if num_classes is None:
        labeled = scene.labels[scene.labels != UNLABELED]
        num_classes = int(labeled.max()) + 1 if labeled.size else 1
    sampler = PatchSampler([scene], patch_size, num_classes)
    return sampler.batch(sampler.draw(count, rng))
