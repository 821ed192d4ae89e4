"""
Colour previews of label rasters, rendered with Pillow.
"""
import logging
from pathlib import Path

import numpy as np
from PIL import Image

from utils.raster import UNLABELED
from utils.exceptions import ShapeError

logger = logging.getLogger(__name__)

# One colour per class; classes beyond the table wrap around.
CLASS_PALETTE = (
    (31, 119, 180),
    (255, 127, 14),
    (44, 160, 44),
    (214, 39, 40),
    (148, 103, 189),
    (140, 86, 75),
    (227, 119, 194),
    (188, 189, 34),
)
UNLABELED_COLOUR = (0, 0, 0)


def label_palette():
    """Flat 768-entry palette for a Pillow ``P`` image."""
    flat = []
    for index in range(256):
        if index == UNLABELED:
            flat.extend(UNLABELED_COLOUR)
        else:
            flat.extend(CLASS_PALETTE[index % len(CLASS_PALETTE)])
    return flat


def render_label_preview(labels, path):
    """
    Save a label raster as a paletted PNG.

    Args:
        labels: uint8 array shaped (h, w), (1, h, w) or (1, 1, h, w)
        path: destination file

    Returns:
        Path: the written file
    """
    array = np.asarray(labels)
    while array.ndim > 2 and array.shape[0] == 1:
        array = array[0]
    if array.ndim != 2:
        raise ShapeError(f'preview needs a single-channel label raster, got {np.shape(labels)}')

    # an 'L' image becomes 'P' once a palette is attached
    image = Image.fromarray(np.ascontiguousarray(array, dtype=np.uint8))
    image.putpalette(label_palette())
    path = Path(path)
    image.save(path, format='PNG')
    logger.info(f'Saved label preview {path} ({array.shape[1]}x{array.shape[0]})')
    return path
