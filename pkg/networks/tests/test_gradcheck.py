from io import StringIO

import numpy as np
from django.core.management import CommandError, call_command
from django.test import SimpleTestCase

from networks import graph as g
from networks.gradcheck import (
    DEFAULT_TOLERANCE, GradCheckReport, GradCheckResult, OP_CASES, build_mini_fusenet, build_mini_reusenet,
    grad_check, relative_error, run_suite,
)
from utils.exceptions import GraphError
from utils.tensors import Rng


def result(case, rel_error, param='w'):
    return GradCheckResult(
        case=case, node_id='n', op_kind='conv2d', param=param, index=(0,),
        analytic=1.0, numeric=1.0, rel_error=rel_error, checked=1,
    )


class RelativeErrorTest(SimpleTestCase):
    def test_tiny_pairs_are_skipped(self):
        self.assertIsNone(relative_error(1e-9, -1e-9))

    def test_relative_to_the_larger_magnitude(self):
        self.assertAlmostEqual(relative_error(1.0, 0.9), 0.1)
        self.assertAlmostEqual(relative_error(-2.0, 2.0), 2.0)


class ReportTest(SimpleTestCase):
    def test_worst_by_case(self):
        report = GradCheckReport(1e-4, [result('a', 1e-6), result('a', 1e-3, 'b'), result('c', 1e-7)])
        worst = report.worst_by_case()
        self.assertEqual(list(worst), ['a', 'c'])
        self.assertEqual(worst['a'].param, 'b')
        self.assertFalse(report.passed)
        self.assertEqual(len(report.failures()), 1)
        self.assertEqual(report.worst().rel_error, 1e-3)


class GradCheckTest(SimpleTestCase):
    def test_op_cases_pass(self):
        for name, build in OP_CASES.items():
            with self.subTest(case=name):
                rng = Rng(1)
                graph, inputs = build(rng)
                report = grad_check(graph, inputs, rng=rng, samples=10, case=name)
                self.assertTrue(report.results)
                self.assertTrue(report.passed, report.worst())

    def test_mini_fusenet_passes(self):
        rng = Rng(0)
        graph, inputs = build_mini_fusenet(rng)
        report = grad_check(graph, inputs, rng=rng, samples=3)
        self.assertTrue(report.passed, report.worst())

    def test_mini_reusenet_passes(self):
        rng = Rng(2)
        graph, inputs = build_mini_reusenet(rng)
        report = grad_check(graph, inputs, rng=rng, samples=2)
        self.assertTrue(report.passed, report.worst())

    def test_broken_backward_is_caught(self):
        rng = Rng(0)
        graph, inputs = build_mini_fusenet(rng, corrupt=True)
        report = grad_check(graph, inputs, rng=rng, samples=3)
        self.assertFalse(report.passed)
        self.assertEqual(report.worst().param, 'enc.c1.w')
        self.assertEqual(report.worst().node_id, 'enc.c1/conv')

    def test_needs_float64(self):
        graph = g.Graph(g.ParamStore(np.float32), check_finite=False)
        with self.assertRaisesRegex(GraphError, 'float64'):
            grad_check(graph, {})

    def test_suite_covers_requested_cases(self):
        report = run_suite(samples=2, cases=['conv2d', 'elu'], include_network=False)
        self.assertEqual(set(report.worst_by_case()), {'conv2d', 'elu'})
        self.assertEqual(report.tolerance, DEFAULT_TOLERANCE)


class GradCheckCommandTest(SimpleTestCase):
    def test_passing_run(self):
        out = StringIO()
        call_command('gradcheck', '--skip-network', '--case', 'conv2d', '--case', 'maxpool2',
                     '--samples', '5', stdout=out)
        self.assertIn('All gradients within', out.getvalue())
        self.assertIn('maxpool2', out.getvalue())

    def test_corrupted_backward_fails_with_its_exit_code(self):
        with self.assertRaises(CommandError) as ctx:
            call_command('gradcheck', '--corrupt', '--case', 'conv2d', '--samples', '3', stdout=StringIO())
        self.assertEqual(ctx.exception.returncode, 5)
        self.assertIn('enc.c1', str(ctx.exception))
