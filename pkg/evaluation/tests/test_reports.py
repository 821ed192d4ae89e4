import csv
import tempfile
from io import StringIO
from pathlib import Path

import numpy as np
from django.core.management import CommandError, call_command
from django.test import SimpleTestCase

from evaluation.metrics import ConfusionMatrix
from evaluation.reports import CLASS_FIELDS, build_report, render_table, write_csv
from utils.raster import UNLABELED, write_raster


class ReportTest(SimpleTestCase):
    def setUp(self):
        self.cm = ConfusionMatrix(np.array([[2, 1], [0, 3]], dtype=np.int64))

    def test_build_report(self):
        report = build_report(self.cm)
        self.assertEqual(report['total'], 6)
        self.assertEqual(report['classes'][0]['reference_pixels'], 3)
        self.assertEqual(report['classes'][1]['predicted_pixels'], 4)
        self.assertAlmostEqual(report['summary']['aa'], 0.875)
        self.assertAlmostEqual(build_report(self.cm, 'reference')['summary']['aa'], 5 / 6)

    def test_table(self):
        table = render_table(build_report(self.cm))
        self.assertIn('0.8333', table)
        self.assertIn('Kappa   0.6667', table)
        self.assertIn('6 labeled pixels (AA over prediction marginal)', table)

    def test_csv(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / 'report.csv'
            write_csv(path, build_report(self.cm))
            with open(path, newline='', encoding='utf-8') as f:
                rows = list(csv.reader(f))
        self.assertEqual(rows[0], CLASS_FIELDS)
        self.assertEqual(rows[1][:2], ['0', '1.000000'])
        self.assertEqual(rows[3:], [['OA', '0.833333'], ['Kappa', '0.666667'], ['AA', '0.875000'], ['F1', '0.828571']])


class EvaluateCommandTest(SimpleTestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.addCleanup(self.tmp.cleanup)
        self.root = Path(self.tmp.name)

    def raster(self, name, values):
        return str(write_raster(self.root / name, np.array(values, dtype=np.uint8).reshape(1, 1, 1, -1)))

    def test_pairs_are_accumulated(self):
        ref_a = self.raster('a_ref.mras', [0, 0, 1, UNLABELED])
        pred_a = self.raster('a_pred.mras', [0, 1, 1, 1])
        ref_b = self.raster('b_ref.mras', [0, 1, 1])
        pred_b = self.raster('b_pred.mras', [0, 1, 1])
        out = StringIO()

        call_command('evaluate', '--pred', pred_a, '--ref', ref_a, '--pred', pred_b, '--ref', ref_b,
                     '--classes', '2', '--report', str(self.root / 'r.csv'), stdout=out)

        # counts [[2, 1], [0, 3]]
        self.assertIn('OA   0.8333', out.getvalue())
        self.assertTrue((self.root / 'r.csv').exists())

    def test_unpaired_rasters(self):
        ref = self.raster('ref.mras', [0, 1])
        with self.assertRaises(CommandError) as ctx:
            call_command('evaluate', '--pred', ref, '--pred', ref, '--ref', ref, '--classes', '2', stdout=StringIO())
        self.assertEqual(ctx.exception.returncode, 2)

    def test_class_count_range(self):
        ref = self.raster('ref.mras', [0, 1])
        with self.assertRaises(CommandError) as ctx:
            call_command('evaluate', '--pred', ref, '--ref', ref, '--classes', '1', stdout=StringIO())
        self.assertEqual(ctx.exception.returncode, 2)

    def test_no_labeled_pixels(self):
        ref = self.raster('ref.mras', [UNLABELED, UNLABELED])
        pred = self.raster('pred.mras', [0, 1])
        with self.assertRaises(CommandError) as ctx:
            call_command('evaluate', '--pred', pred, '--ref', ref, '--classes', '2', stdout=StringIO())
        self.assertEqual(ctx.exception.returncode, 3)
        self.assertIn('empty evaluation', str(ctx.exception))

    def test_missing_raster(self):
        with self.assertRaises(CommandError) as ctx:
            call_command('evaluate', '--pred', str(self.root / 'p.mras'), '--ref', str(self.root / 'r.mras'),
                         '--classes', '2', stdout=StringIO())
        self.assertEqual(ctx.exception.returncode, 3)
