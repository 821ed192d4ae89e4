"""
Static data-flow graphs with reverse-mode gradients.

A ``Graph`` is an ordered list of nodes; each node applies one ``Op`` to the
outputs of earlier nodes and to named parameters held in a ``ParamStore``.
Parameters are shared by name, so a recurrent network is built by adding the
same parameter names at several positions; their gradients add up.
"""
import logging
from dataclasses import dataclass, field

import numpy as np
from django.conf import settings

from networks import ops
from utils.exceptions import CheckpointError, GraphError, ShapeError
from utils.tensors import check_finite

logger = logging.getLogger(__name__)

PARAM_KINDS = ('conv_weight', 'bias', 'bn_gamma', 'bn_beta')


@dataclass
class Parameter:
    value: np.ndarray
    grad: np.ndarray
    momentum: np.ndarray
    kind: str


class ParamStore:
    """Named learnable tensors (value, gradient, momentum) plus non-learned buffers."""

    def __init__(self, dtype=np.float32):
        self.dtype = np.dtype(dtype)
        self.params = {}
        self.buffers = {}

    def declare(self, name, shape, kind, fill=0.0):
        """Create a parameter, or return the existing one when the name is reused."""
        shape = tuple(int(d) for d in shape)
        if kind not in PARAM_KINDS:
            raise GraphError(f'unknown parameter kind {kind!r} for {name}')
        existing = self.params.get(name)
        if existing is not None:
            if existing.value.shape != shape:
                raise GraphError(
                    f'parameter {name} redeclared with dims {shape}, has {existing.value.shape}'
                )
            return existing
        param = Parameter(
            value=np.full(shape, fill, dtype=self.dtype),
            grad=np.zeros(shape, dtype=self.dtype),
            momentum=np.zeros(shape, dtype=self.dtype),
            kind=kind,
        )
        self.params[name] = param
        return param

    def declare_buffer(self, name, initial):
        if name not in self.buffers:
            self.buffers[name] = np.array(initial, dtype=self.dtype)
        return self.buffers[name]

    def __getitem__(self, name):
        try:
            return self.params[name]
        except KeyError:
            raise GraphError(f'parameter {name} is not in the store') from None

    def __contains__(self, name):
        return name in self.params

    def names(self):
        return list(self.params)

    def zero_grad(self):
        for param in self.params.values():
            param.grad[...] = 0

    def count(self):
        return int(sum(param.value.size for param in self.params.values()))

    def astype(self, dtype):
        """Copy of the store in another float dtype (used by gradient checks)."""
        clone = ParamStore(dtype)
        for name, param in self.params.items():
            clone.params[name] = Parameter(
                value=param.value.astype(dtype),
                grad=np.zeros(param.value.shape, dtype=dtype),
                momentum=param.momentum.astype(dtype),
                kind=param.kind,
            )
        clone.buffers = {name: buf.astype(dtype) for name, buf in self.buffers.items()}
        return clone

    def tensors(self):
        """Every parameter value and buffer by name, copied."""
        out = {name: param.value.copy() for name, param in self.params.items()}
        out.update({name: buf.copy() for name, buf in self.buffers.items()})
        return out

    def snapshot(self):
        return self.tensors()

    def restore(self, snapshot):
        self.load_tensors(snapshot)

    def load_tensors(self, tensors):
        """Overwrite values and buffers; names and dims must match exactly."""
        expected = set(self.params) | set(self.buffers)
        given = set(tensors)
        missing = sorted(expected - given)
        extra = sorted(given - expected)
        if missing or extra:
            parts = []
            if missing:
                parts.append(f'missing parameter(s) {", ".join(missing)}')
            if extra:
                parts.append(f'extra parameter(s) {", ".join(extra)}')
            raise CheckpointError('; '.join(parts))
        for name, value in tensors.items():
            target = self.params[name].value if name in self.params else self.buffers[name]
            if target.shape != np.shape(value):
                raise CheckpointError(
                    f'parameter {name} has dims {np.shape(value)}, expected {target.shape}'
                )
            target[...] = value


@dataclass
class ExecContext:
    training: bool = False
    buffers: dict = field(default_factory=dict)


class Op:
    kind = 'op'
    differentiable = True

    def forward(self, xs, ws, ctx):
        raise NotImplementedError

    def backward(self, gy, cache, xs, ws):
        raise NotImplementedError

    def __repr__(self):
        return self.kind


class Placeholder(Op):
    kind = 'input'

    def __init__(self, name):
        self.name = name


class Identity(Op):
    kind = 'identity'

    def forward(self, xs, ws, ctx):
        return xs[0], None

    def backward(self, gy, cache, xs, ws):
        return [gy], []


class Conv2d(Op):
    kind = 'conv2d'

    def __init__(self, kernel, stride=1, padding=None):
        self.kernel = kernel
        self.stride = stride
        self.padding = ops.same_padding(kernel) if padding is None else padding

    def forward(self, xs, ws, ctx):
        return ops.conv2d_forward(xs[0], ws[0], ws[1], self.stride, self.padding)

    def backward(self, gy, cache, xs, ws):
        gx, gw, gb = ops.conv2d_backward(gy, cache, ws[0], self.stride, self.padding)
        return [gx], [gw, gb]


class TransposedConv2d(Op):
    kind = 'transposed_conv'

    def __init__(self, factor):
        if factor not in ops.TCONV_GEOMETRY:
            raise ShapeError(f'unsupported upsampling factor {factor}')
        self.factor = factor
        self.kernel, self.stride, self.padding = ops.TCONV_GEOMETRY[factor]

    def forward(self, xs, ws, ctx):
        return ops.tconv_forward(xs[0], ws[0], ws[1], self.stride, self.padding)

    def backward(self, gy, cache, xs, ws):
        gx, gw, gb = ops.tconv_backward(gy, cache, ws[0], self.stride, self.padding)
        return [gx], [gw, gb]


class MaxPool2(Op):
    kind = 'maxpool2'

    def forward(self, xs, ws, ctx):
        return ops.maxpool2_forward(xs[0])

    def backward(self, gy, cache, xs, ws):
        return [ops.maxpool2_backward(gy, cache)], []


class FixedUpsample(Op):
    kind = 'fixed_upsample'

    def __init__(self, factor, mode='nearest'):
        if factor < 2:
            raise ShapeError(f'upsampling factor must be >= 2, got {factor}')
        self.factor = factor
        self.mode = mode

    def forward(self, xs, ws, ctx):
        return ops.fixed_upsample_forward(xs[0], self.factor, self.mode)

    def backward(self, gy, cache, xs, ws):
        return [ops.fixed_upsample_backward(gy, cache, self.factor, self.mode)], []


class ELU(Op):
    kind = 'elu'

    def forward(self, xs, ws, ctx):
        return ops.elu(xs[0]), None

    def backward(self, gy, cache, xs, ws):
        return [ops.elu_backward(gy, xs[0])], []


class Rectifier(Op):
    kind = 'rectifier'

    def forward(self, xs, ws, ctx):
        return ops.rectifier(xs[0]), None

    def backward(self, gy, cache, xs, ws):
        return [ops.rectifier_backward(gy, xs[0])], []


class BatchNorm(Op):
    kind = 'batch_norm'

    def __init__(self, mean_buffer, var_buffer):
        self.mean_buffer = mean_buffer
        self.var_buffer = var_buffer

    def forward(self, xs, ws, ctx):
        params = ops.BatchNormParams(
            gamma=ws[0],
            beta=ws[1],
            running_mean=ctx.buffers[self.mean_buffer],
            running_var=ctx.buffers[self.var_buffer],
            training=ctx.training,
        )
        return ops.batch_norm_forward(xs[0], params)

    def backward(self, gy, cache, xs, ws):
        gx, g_gamma, g_beta = ops.batch_norm_backward(gy, cache, ws[0])
        return [gx], [g_gamma, g_beta]


class Concat(Op):
    kind = 'concat'

    def forward(self, xs, ws, ctx):
        base = xs[0].shape
        for x in xs[1:]:
            if (x.shape[0], x.shape[2], x.shape[3]) != (base[0], base[2], base[3]):
                raise ShapeError(f'cannot concatenate channels of {base} and {x.shape}')
        return np.concatenate(xs, axis=1), [x.shape[1] for x in xs]

    def backward(self, gy, cache, xs, ws):
        bounds = np.cumsum(cache)[:-1]
        return list(np.split(gy, bounds, axis=1)), []


class Add(Op):
    kind = 'add'

    def forward(self, xs, ws, ctx):
        for x in xs[1:]:
            if x.shape != xs[0].shape:
                raise ShapeError(f'cannot add tensors of dims {xs[0].shape} and {x.shape}')
        total = xs[0].copy()
        for x in xs[1:]:
            total += x
        return total, None

    def backward(self, gy, cache, xs, ws):
        return [gy] * len(xs), []


class Softmax(Op):
    kind = 'softmax'

    def forward(self, xs, ws, ctx):
        out = ops.softmax_channels(xs[0])
        return out, out

    def backward(self, gy, cache, xs, ws):
        return [ops.softmax_backward(gy, cache)], []


class MaskedCrossEntropy(Op):
    """Inputs: scores, one-hot targets, mask. Only the scores receive a gradient."""

    kind = 'masked_cross_entropy'

    def forward(self, xs, ws, ctx):
        loss, labeled = ops.masked_cross_entropy_forward(*xs)
        return np.asarray(loss), labeled

    def backward(self, gy, cache, xs, ws):
        grad = ops.masked_cross_entropy_backward(gy, cache, *xs)
        return [grad, None, None], []


class Mean(Op):
    kind = 'mean'

    def forward(self, xs, ws, ctx):
        total = xs[0].copy()
        for x in xs[1:]:
            total = total + x
        return np.asarray(total / len(xs)), None

    def backward(self, gy, cache, xs, ws):
        return [gy / len(xs) for _ in xs], []


class Sum(Op):
    """Sum of every element, as a scalar."""

    kind = 'sum'

    def forward(self, xs, ws, ctx):
        return np.asarray(xs[0].sum(), dtype=xs[0].dtype), xs[0].shape

    def backward(self, gy, cache, xs, ws):
        return [np.full(cache, gy, dtype=xs[0].dtype)], []


@dataclass
class Node:
    node_id: str
    op: Op
    inputs: list
    params: list


class Graph:
    def __init__(self, store=None, check_finite=None):
        self.store = store if store is not None else ParamStore()
        self.nodes = {}
        self.inputs = []
        self.outputs = {}
        self.tags = {}
        if check_finite is None:
            check_finite = getattr(settings, 'MRCN_CHECK_FINITE', False)
        self.check_finite = check_finite
        self._values = {}
        self._caches = {}
        self._executed = None

    # construction

    def add_input(self, name):
        self.add(name, Placeholder(name), [])
        self.inputs.append(name)
        return name

    def add(self, node_id, op, inputs=(), params=()):
        if node_id in self.nodes:
            raise GraphError(f'duplicate node id {node_id}')
        for source in inputs:
            if source not in self.nodes:
                raise GraphError(f'node {node_id} reads {source}, which is not defined before it')
        for name in params:
            if name not in self.store:
                raise GraphError(f'node {node_id} uses parameter {name}, missing from the store')
        self.nodes[node_id] = Node(node_id, op, list(inputs), list(params))
        return node_id

    def mark_output(self, name, node_id=None):
        node_id = node_id or name
        if node_id not in self.nodes:
            raise GraphError(f'output {name} refers to unknown node {node_id}')
        self.outputs[name] = node_id

    def tag(self, label, node_id):
        self.tags[label] = node_id

    def node(self, node_id):
        try:
            return self.nodes[node_id]
        except KeyError:
            raise GraphError(f'unknown node {node_id}') from None

    def value(self, node_id):
        """Cached output of the last forward pass."""
        node_id = self.tags.get(node_id, node_id)
        if node_id not in self._values:
            raise GraphError(f'node {node_id} was not computed by the last forward pass')
        return self._values[node_id]

    # execution

    def _ancestors(self, targets):
        needed = set()
        stack = list(targets)
        while stack:
            node_id = stack.pop()
            if node_id in needed:
                continue
            needed.add(node_id)
            stack.extend(self.nodes[node_id].inputs)
        return needed

    def forward(self, named_inputs, outputs=None, training=False):
        """
        Run every node the requested outputs depend on.

        Args:
            named_inputs: dict input name -> array
            outputs: output names to compute (default: all)
            training: batch norm uses batch statistics and updates running stats

        Returns:
            dict: output name -> array
        """
        requested = list(self.outputs) if outputs is None else list(outputs)
        for name in requested:
            if name not in self.outputs:
                raise GraphError(f'unknown output {name}')
        needed = self._ancestors(self.outputs[name] for name in requested)
        ctx = ExecContext(training=training, buffers=self.store.buffers)

        values, caches = {}, {}
        for node_id, node in self.nodes.items():
            if node_id not in needed:
                continue
            if isinstance(node.op, Placeholder):
                if node.op.name not in named_inputs:
                    raise GraphError(f'unbound input {node.op.name}')
                values[node_id] = np.asarray(named_inputs[node.op.name], dtype=self.store.dtype)
                continue
            xs = [values[source] for source in node.inputs]
            ws = [self.store.params[name].value for name in node.params]
            try:
                out, cache = node.op.forward(xs, ws, ctx)
            except ShapeError as e:
                raise ShapeError(f'node {node_id} ({node.op.kind}): {e}') from e
            if self.check_finite:
                check_finite(np.asarray(out), f'node {node_id}')
            values[node_id] = out
            caches[node_id] = cache

        self._values = values
        self._caches = caches
        self._executed = needed
        return {name: values[self.outputs[name]] for name in requested}

    def backward(self, loss_output='loss'):
        """Accumulate d(loss)/d(param) into the store; gradients of shared names sum."""
        if self._executed is None:
            raise GraphError('backward called before forward')
        loss_id = self.outputs.get(loss_output)
        if loss_id is None or loss_id not in self._values:
            raise GraphError(f'backward needs output {loss_output} from the last forward pass')

        grads = {loss_id: np.ones_like(self._values[loss_id])}
        relevant = self._ancestors([loss_id])
        for node_id in reversed(list(self.nodes)):
            if node_id not in relevant or node_id not in grads:
                continue
            node = self.nodes[node_id]
            if isinstance(node.op, Placeholder):
                continue
            gy = grads.pop(node_id)
            xs = [self._values[source] for source in node.inputs]
            ws = [self.store.params[name].value for name in node.params]
            input_grads, param_grads = node.op.backward(gy, self._caches[node_id], xs, ws)
            for source, grad in zip(node.inputs, input_grads):
                if grad is None:
                    continue
                if source in grads:
                    grads[source] = grads[source] + grad
                else:
                    grads[source] = grad
            for name, grad in zip(node.params, param_grads):
                self.store.params[name].grad += grad

        self._executed = None
        return self.store

    def param_nodes(self):
        """Map parameter name -> node ids that use it."""
        usage = {}
        for node_id, node in self.nodes.items():
            for name in node.params:
                usage.setdefault(name, []).append(node_id)
        return usage
