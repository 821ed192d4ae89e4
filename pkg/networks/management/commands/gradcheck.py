"""
Finite-difference gradient checks in float64.

Usage:
    python manage.py gradcheck
    python manage.py gradcheck --arch net_bilinear --tolerance 1e-5
    python manage.py gradcheck --corrupt        # must fail: broken conv backward
"""
from dataclasses import replace

from networks.architectures import VARIANTS
from networks.gradcheck import DEFAULT_SAMPLES, DEFAULT_TOLERANCE, MINI_SPEC, OP_CASES, run_suite
from utils.exceptions import GradCheckFailure
from utils.management import EngineCommand


class Command(EngineCommand):
    help = 'Check analytic gradients of every op kind and a miniature network against finite differences'

    def add_arguments(self, parser):
        parser.add_argument(
            '--arch',
            choices=VARIANTS,
            default=MINI_SPEC.variant,
            help=f'Variant of the miniature network (M={MINI_SPEC.patch_size}, C={MINI_SPEC.num_classes})',
        )
        parser.add_argument('--tolerance', type=float, default=DEFAULT_TOLERANCE, help='Maximum relative error')
        parser.add_argument('--samples', type=int, default=DEFAULT_SAMPLES, help='Elements checked per tensor')
        parser.add_argument('--seed', type=int, default=0)
        parser.add_argument('--case', action='append', choices=list(OP_CASES), help='Only these op cases')
        parser.add_argument('--skip-network', action='store_true', help='Check op cases only')
        parser.add_argument(
            '--corrupt',
            action='store_true',
            help='Break one convolution backward on purpose; the check must fail',
        )

    def run(self, **options):
        report = run_suite(
            tolerance=options['tolerance'],
            seed=options['seed'],
            samples=options['samples'],
            cases=options['case'],
            include_network=not options['skip_network'],
            corrupt=options['corrupt'],
            spec=replace(MINI_SPEC, variant=options['arch']),
        )

        self.stdout.write(f'\n{"case":<32} {"worst node":<28} {"param":<22} {"rel. error":>10}')
        for case, result in report.worst_by_case().items():
            style = self.style.SUCCESS if result.rel_error <= report.tolerance else self.style.ERROR
            self.stdout.write(style(
                f'{case:<32} {result.node_id:<28} {result.param:<22} {result.rel_error:>10.2e}'
            ))

        worst = report.worst()
        if not report.passed:
            raise GradCheckFailure(
                f'{len(report.failures())} parameter tensor(s) above tolerance {report.tolerance:g}; '
                f'worst {worst.op_kind} at {worst.label} ({worst.param}{list(worst.index)}): '
                f'analytic {worst.analytic:.6g} vs numeric {worst.numeric:.6g}, rel. error {worst.rel_error:.2e}'
            )
        self.stdout.write(self.style.SUCCESS(
            f'\n✓ All gradients within {report.tolerance:g} (worst {worst.op_kind} at {worst.label}, '
            f'{worst.rel_error:.2e})'
        ))
