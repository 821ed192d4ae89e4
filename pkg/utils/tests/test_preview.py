import tempfile
from pathlib import Path

import numpy as np
from django.test import SimpleTestCase
from PIL import Image

from utils.exceptions import ShapeError
from utils.preview import CLASS_PALETTE, UNLABELED_COLOUR, render_label_preview
from utils.raster import UNLABELED


class LabelPreviewTest(SimpleTestCase):
    def test_palette_colours(self):
        labels = np.array([[0, 1], [2, UNLABELED]], dtype=np.uint8).reshape(1, 1, 2, 2)
        with tempfile.TemporaryDirectory() as tmp:
            path = render_label_preview(labels, Path(tmp) / 'map.png')
            with Image.open(path) as image:
                self.assertEqual(image.size, (2, 2))
                rgb = image.convert('RGB')
                self.assertEqual(rgb.getpixel((0, 0)), CLASS_PALETTE[0])
                self.assertEqual(rgb.getpixel((1, 0)), CLASS_PALETTE[1])
                self.assertEqual(rgb.getpixel((0, 1)), CLASS_PALETTE[2])
                self.assertEqual(rgb.getpixel((1, 1)), UNLABELED_COLOUR)

    def test_multi_channel_rejected(self):
        with self.assertRaises(ShapeError):
            render_label_preview(np.zeros((1, 3, 2, 2), dtype=np.uint8), 'unused.png')
