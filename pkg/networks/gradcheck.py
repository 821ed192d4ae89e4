"""
Central finite-difference gradient checks in float64.

For each parameter tensor of a graph, up to ``samples`` elements are nudged
by +-h and the loss difference compared with the analytic gradient from
``Graph.backward``. Elements where |analytic| + |numeric| < 1e-8 are skipped.
"""
import logging
from dataclasses import dataclass, field

import numpy as np

from networks import graph as g
from networks import ops
from networks.architectures import ArchSpec, ReuseNetConfig, build_fusenet, build_reusenet, glorot_init
from utils.exceptions import GraphError
from utils.tensors import Rng, rng_uniform

logger = logging.getLogger(__name__)

STEP = 1e-5
SKIP_BELOW = 1e-8
DEFAULT_TOLERANCE = 1e-4
DEFAULT_SAMPLES = 100


@dataclass
class GradCheckResult:
    case: str
    node_id: str
    op_kind: str
    param: str
    index: tuple
    analytic: float
    numeric: float
    rel_error: float
    checked: int

    @property
    def label(self):
        return f'{self.case}:{self.node_id}'


@dataclass
class GradCheckReport:
    tolerance: float
    results: list = field(default_factory=list)

    @property
    def passed(self):
        return all(result.rel_error <= self.tolerance for result in self.results)

    def failures(self):
        return [result for result in self.results if result.rel_error > self.tolerance]

    def worst_by_case(self):
        """Worst parameter result per checked case, in check order."""
        worst = {}
        for result in self.results:
            current = worst.get(result.case)
            if current is None or result.rel_error > current.rel_error:
                worst[result.case] = result
        return worst

    def worst(self):
        return max(self.results, key=lambda result: result.rel_error, default=None)


def relative_error(analytic, numeric):
    if abs(analytic) + abs(numeric) < SKIP_BELOW:
        return None
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric))


def _loss(graph, inputs, loss_output, training):
    return float(graph.forward(inputs, outputs=[loss_output], training=training)[loss_output])


def grad_check(graph, inputs, loss_output='loss', tolerance=DEFAULT_TOLERANCE, rng=None,
               samples=DEFAULT_SAMPLES, step=STEP, training=True, case='graph'):
    """
    Compare analytic and central-difference gradients of every parameter.

    Returns:
        GradCheckReport: one result per parameter tensor (its worst element)
    """
    store = graph.store
    if store.dtype != np.float64:
        raise GraphError('gradient checks need a float64 parameter store')
    rng = rng or Rng(0)

    store.zero_grad()
    graph.forward(inputs, outputs=[loss_output], training=training)
    graph.backward(loss_output)
    analytic = {name: param.grad.copy() for name, param in store.params.items()}
    store.zero_grad()

    usage = graph.param_nodes()
    report = GradCheckReport(tolerance)
    for name, param in store.params.items():
        if name not in usage:
            continue
        flat = param.value.reshape(-1)
        if flat.size <= samples:
            picks = np.arange(flat.size)
        else:
            picks = np.sort(rng.generator.choice(flat.size, size=samples, replace=False))

        worst = None
        checked = 0
        for flat_index in picks:
            original = flat[flat_index]
            flat[flat_index] = original + step
            plus = _loss(graph, inputs, loss_output, training)
            flat[flat_index] = original - step
            minus = _loss(graph, inputs, loss_output, training)
            flat[flat_index] = original
            numeric = (plus - minus) / (2 * step)
            a = float(analytic[name].reshape(-1)[flat_index])
            error = relative_error(a, numeric)
            if error is None:
                continue
            checked += 1
            if worst is None or error > worst[0]:
                worst = (error, flat_index, a, numeric)

        node_id = usage[name][0]
        op_kind = graph.nodes[node_id].op.kind
        if worst is None:
            worst = (0.0, 0, 0.0, 0.0)
        error, flat_index, a, numeric = worst
        report.results.append(GradCheckResult(
            case=case,
            node_id=node_id,
            op_kind=op_kind,
            param=name,
            index=tuple(int(i) for i in np.unravel_index(flat_index, param.value.shape)),
            analytic=a,
            numeric=numeric,
            rel_error=error,
            checked=checked,
        ))
    return report


class _OffByOneConv2d(g.Conv2d):
    """Conv whose weight gradient is shifted one column: a deliberately broken backward."""

    kind = 'conv2d'

    def backward(self, gy, cache, xs, ws):
        input_grads, (gw, gb) = super().backward(gy, cache, xs, ws)
        return input_grads, [np.roll(gw, 1, axis=3), gb]


# check cases

CLASSES = 3


def _random_labels(rng, n, h, w, classes=CLASSES, unlabeled_fraction=0.25):
    from scenes.patches import one_hot_encode

    labels = rng.generator.integers(0, classes, size=(n, 1, h, w)).astype(np.uint8)
    unlabeled = rng.generator.random((n, 1, h, w)) < unlabeled_fraction
    labels[unlabeled] = 255
    # keep at least one labeled pixel
    labels[0, 0, 0, 0] = 0
    return one_hot_encode(labels, classes)


class _CaseBuilder:
    def __init__(self, rng):
        self.rng = rng
        self.graph = g.Graph(g.ParamStore(np.float64), check_finite=True)
        self.graph.add_input('x')
        self.graph.add_input('target')
        self.graph.add_input('mask')

    def conv(self, name, src, in_ch, out_ch, kernel, stride=1, padding=None, op_class=g.Conv2d):
        store = self.graph.store
        store.declare(f'{name}.w', (out_ch, in_ch, kernel, kernel), 'conv_weight')
        store.declare(f'{name}.b', (out_ch,), 'bias')
        return self.graph.add(name, op_class(kernel, stride, padding), [src], [f'{name}.w', f'{name}.b'])

    def tconv(self, name, src, in_ch, out_ch, factor):
        kernel = ops.TCONV_GEOMETRY[factor][0]
        store = self.graph.store
        store.declare(f'{name}.w', (in_ch, out_ch, kernel, kernel), 'conv_weight')
        store.declare(f'{name}.b', (out_ch,), 'bias')
        return self.graph.add(name, g.TransposedConv2d(factor), [src], [f'{name}.w', f'{name}.b'])

    def batch_norm(self, name, src, channels):
        store = self.graph.store
        store.declare(f'{name}.gamma', (channels,), 'bn_gamma', fill=1.0)
        store.declare(f'{name}.beta', (channels,), 'bn_beta')
        store.declare_buffer(f'{name}.running_mean', np.zeros(channels))
        store.declare_buffer(f'{name}.running_var', np.ones(channels))
        return self.graph.add(
            name, g.BatchNorm(f'{name}.running_mean', f'{name}.running_var'), [src],
            [f'{name}.gamma', f'{name}.beta'],
        )

    def head(self, src, in_ch):
        logits = self.conv('head', src, in_ch, CLASSES, 1)
        scores = self.graph.add('softmax', g.Softmax(), [logits])
        self.graph.mark_output('scores', scores)
        self.graph.mark_output('loss', self.graph.add('loss', g.MaskedCrossEntropy(), [scores, 'target', 'mask']))

    def finish(self, x_shape, out_hw):
        glorot_init(self.graph.store, self.rng)
        # non-trivial biases and batch norm affine parameters
        ranges = {'bn_gamma': (0.5, 1.5), 'bn_beta': (-0.5, 0.5), 'bias': (-0.5, 0.5)}
        for param in self.graph.store.params.values():
            if param.kind in ranges:
                lo, hi = ranges[param.kind]
                param.value[...] = rng_uniform(self.rng, lo, hi, param.value.shape, np.float64)
        x = rng_uniform(self.rng, -1.0, 1.0, x_shape, np.float64)
        target, mask = _random_labels(self.rng, x_shape[0], *out_hw)
        inputs = {'x': x, 'target': target.astype(np.float64), 'mask': mask.astype(np.float64)}
        return self.graph, inputs


def _case_conv2d(rng):
    b = _CaseBuilder(rng)
    x = b.conv('conv_same', 'x', 2, 4, 3)
    x = b.conv('conv_strided', x, 4, 4, 3, stride=2, padding=1)
    b.head(x, 4)
    return b.finish((2, 2, 6, 6), (3, 3))


def _case_transposed_conv(rng):
    b = _CaseBuilder(rng)
    x = b.tconv('tconv2', 'x', 3, 4, 2)
    x = b.tconv('tconv4', x, 4, 2, 4)
    b.head(x, 2)
    return b.finish((2, 3, 2, 2), (16, 16))


def _case_maxpool2(rng):
    b = _CaseBuilder(rng)
    x = b.conv('conv', 'x', 2, 3, 3)
    x = b.graph.add('pool', g.MaxPool2(), [x])
    b.head(x, 3)
    return b.finish((2, 2, 6, 6), (3, 3))


def _case_fixed_upsample(mode):
    def build(rng):
        b = _CaseBuilder(rng)
        x = b.graph.add('up', g.FixedUpsample(2, mode), ['x'])
        x = b.conv('conv3', x, 2, 3, 3)
        b.head(x, 3)
        return b.finish((2, 2, 3, 3), (6, 6))
    return build


def _case_batch_norm(rng):
    b = _CaseBuilder(rng)
    x = b.conv('conv', 'x', 2, 3, 3)
    x = b.batch_norm('bn', x, 3)
    b.head(x, 3)
    return b.finish((2, 2, 4, 4), (4, 4))


def _case_activation(op_class):
    def build(rng):
        b = _CaseBuilder(rng)
        x = b.conv('conv', 'x', 2, 3, 3)
        x = b.graph.add('act', op_class(), [x])
        b.head(x, 3)
        return b.finish((2, 2, 4, 4), (4, 4))
    return build


def _case_softmax_cross_entropy(rng):
    b = _CaseBuilder(rng)
    b.head('x', 3)
    return b.finish((2, 3, 4, 4), (4, 4))


MINI_SPEC = ArchSpec(variant='fusenet_skip', patch_size=4, num_classes=CLASSES, bottleneck_hw=1)
MINI_BATCH = 2


def mini_network_inputs(spec, rng, batch=MINI_BATCH, recurrent=False):
    pan_size = spec.pan_size
    target, mask = _random_labels(rng, batch, pan_size, pan_size, spec.num_classes)
    inputs = {
        'x_pan': rng_uniform(rng, 0.0, 1.0, (batch, 1, pan_size, pan_size), np.float64),
        'x_ms': rng_uniform(rng, 0.0, 1.0, (batch, 4, spec.patch_size, spec.patch_size), np.float64),
        'target': target.astype(np.float64),
        'mask': mask.astype(np.float64),
    }
    if recurrent:
        inputs['y_prev'] = np.zeros((batch, spec.num_classes, pan_size, pan_size))
    return inputs


def build_mini_fusenet(rng, spec=MINI_SPEC, corrupt=False):
    graph = build_fusenet(spec, g.ParamStore(np.float64), check_finite=True)
    glorot_init(graph.store, rng)
    if corrupt:
        node = graph.node('enc.c1/conv')
        node.op = _OffByOneConv2d(node.op.kernel, node.op.stride, node.op.padding)
    return graph, mini_network_inputs(spec, rng)


def build_mini_reusenet(rng, spec=MINI_SPEC, instances=2):
    graph = build_reusenet(spec, ReuseNetConfig(instances=instances), g.ParamStore(np.float64), check_finite=True)
    glorot_init(graph.store, rng)
    return graph, mini_network_inputs(spec, rng, recurrent=True)


OP_CASES = {
    'conv2d': _case_conv2d,
    'transposed_conv': _case_transposed_conv,
    'maxpool2': _case_maxpool2,
    'fixed_upsample_nearest': _case_fixed_upsample('nearest'),
    'fixed_upsample_bilinear': _case_fixed_upsample('bilinear'),
    'batch_norm': _case_batch_norm,
    'elu': _case_activation(g.ELU),
    'rectifier': _case_activation(g.Rectifier),
    'softmax_cross_entropy': _case_softmax_cross_entropy,
}


def run_suite(tolerance=DEFAULT_TOLERANCE, seed=0, samples=DEFAULT_SAMPLES, cases=None,
              include_network=True, corrupt=False, spec=MINI_SPEC):
    """Check every op-kind case and the miniature FuseNet; returns one merged report."""
    rng = Rng(seed)
    report = GradCheckReport(tolerance)
    for name, build in OP_CASES.items():
        if cases is not None and name not in cases:
            continue
        graph, inputs = build(rng)
        sub = grad_check(graph, inputs, tolerance=tolerance, rng=rng, samples=samples, case=name)
        report.results.extend(sub.results)
        logger.info(f'gradcheck {name}: worst {max(r.rel_error for r in sub.results):.2e}')
    if include_network:
        graph, inputs = build_mini_fusenet(rng, spec, corrupt=corrupt)
        case = f'{spec.variant}_mini'
        sub = grad_check(graph, inputs, tolerance=tolerance, rng=rng, samples=samples, case=case)
        report.results.extend(sub.results)
        logger.info(f'gradcheck {case}: worst {max(r.rel_error for r in sub.results):.2e}')
    return report
