"""
FuseNet variants and the unrolled ReuseNet.

Builders are declarative: an ``ArchSpec`` fixes every layer, and the graph
they produce consumes a PAN patch (n, 1, 4M, 4M) and an MS patch
(n, 4, M, M). Parameter names are independent of node names, which is how
the R unrolled ReuseNet instances share weights.

Node naming follows the layer tables: ``pan.*`` PAN stream, ``ms.*`` MS
stream, ``enc.*`` post-fusion encoder, ``dec.*`` decoder, ``skip.*`` skip
branches. Intermediate feature maps are tagged IFM1.. and BFM.
"""
import json
import logging
import math
import zlib
from dataclasses import asdict, dataclass, replace

import numpy as np

from networks import graph as g
from networks import ops
from utils.exceptions import CheckpointError, ConfigError, GraphError, ShapeError
from utils.tensors import rng_uniform

logger = logging.getLogger(__name__)

VARIANTS = ('fusenet_low', 'fusenet_high', 'fusenet_skip', 'net_bilinear')
UPSAMPLERS = ('transposed', 'nearest_then_conv3', 'bilinear_then_conv3')
EXTRA_CONV_LAYERS = (0, 2, 4, 6)
INIT_MODES = ('plain', 'map_init', 'map_weights_init')

PAN_BANDS = 1
MS_BANDS = 4
RESOLUTION_RATIO = 4
FIRST_LAYER = 'pan.c1'


@dataclass(frozen=True)
class ArchSpec:
    variant: str = 'fusenet_low'
    patch_size: int = 16
    num_classes: int = 6
    bottleneck_hw: int = 4
    extra_conv_layers: int = 0
    upsampler: str = 'transposed'

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f'unknown variant {self.variant!r}; use one of {", ".join(VARIANTS)}')
        if self.upsampler not in UPSAMPLERS:
            raise ConfigError(f'unknown upsampler {self.upsampler!r}; use one of {", ".join(UPSAMPLERS)}')
        if self.bottleneck_hw < 1:
            raise ConfigError(f'bottleneck_hw must be >= 1, got {self.bottleneck_hw}')
        if self.extra_conv_layers not in EXTRA_CONV_LAYERS:
            raise ConfigError(
                f'extra_conv_layers must be one of {EXTRA_CONV_LAYERS}, got {self.extra_conv_layers}'
            )
        if not 2 <= self.num_classes <= 254:
            raise ConfigError(f'num_classes must be in 2..254, got {self.num_classes}')
        ratio = self.patch_size / self.bottleneck_hw
        if self.patch_size < 1 or ratio < 1 or ratio != int(ratio) or int(ratio) & (int(ratio) - 1):
            raise ConfigError(
                f'bottleneck {self.bottleneck_hw}x{self.bottleneck_hw} is incompatible with patch size '
                f'M={self.patch_size}: M / bottleneck must be a power of two'
            )

    def with_patch_size(self, patch_size):
        """Same depth at another patch size; the bottleneck scales with M."""
        scale = 2 ** self.pool_stages
        if patch_size < 1 or patch_size % scale:
            raise ConfigError(
                f'patch size M={patch_size} is not a multiple of {scale} '
                f'({self.pool_stages} pooling stage(s) after fusion)'
            )
        return replace(self, patch_size=patch_size, bottleneck_hw=patch_size // scale)

    @property
    def pool_stages(self):
        """Pooling stages after fusion (MS scale down to the bottleneck)."""
        return int(round(math.log2(self.patch_size // self.bottleneck_hw)))

    @property
    def divisor(self):
        """PAN extent must be a multiple of this for every pooling grid to line up."""
        return RESOLUTION_RATIO * 2 ** self.pool_stages

    @property
    def pan_size(self):
        return RESOLUTION_RATIO * self.patch_size

    def as_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class ReuseNetConfig:
    instances: int = 1
    init_mode: str = 'plain'
    pretrained_checkpoint: str = ''

    def __post_init__(self):
        if self.instances < 1:
            raise ConfigError(f'ReuseNet needs at least one instance, got {self.instances}')
        if self.init_mode not in INIT_MODES:
            raise ConfigError(f'unknown init_mode {self.init_mode!r}; use one of {", ".join(INIT_MODES)}')
        if self.init_mode != 'plain' and not self.pretrained_checkpoint:
            raise ConfigError(f'init_mode {self.init_mode} needs pretrained_checkpoint')


def arch_hash(spec, recurrent=False):
    """CRC-32 of the canonical JSON form; stored in checkpoints."""
    canonical = json.dumps({**spec.as_dict(), 'recurrent': bool(recurrent)}, sort_keys=True)
    return zlib.crc32(canonical.encode('utf-8')) & 0xFFFFFFFF


class FuseNetBuilder:
    """
    Writes one FuseNet instance into a graph.

    ``prefix`` scopes node ids (``r2/enc.c1/conv``); parameter names are never
    prefixed, so several instances in one graph share them.
    """

    def __init__(self, spec, graph, prefix='', score_channels=0):
        self.spec = spec
        self.graph = graph
        self.store = graph.store
        self.prefix = prefix
        self.score_channels = score_channels

    def node(self, name):
        return f'{self.prefix}{name}'

    def tag(self, label, node_id):
        self.graph.tag(f'{self.prefix}{label}', node_id)

    # layer helpers

    def conv(self, name, src, in_ch, out_ch, kernel, activate=True):
        w, b = f'{name}.w', f'{name}.b'
        self.store.declare(w, (out_ch, in_ch, kernel, kernel), 'conv_weight')
        self.store.declare(b, (out_ch,), 'bias')
        out = self.graph.add(self.node(f'{name}/conv'), g.Conv2d(kernel), [src], [w, b])
        return self.norm_act(name, out, out_ch) if activate else out

    def norm_act(self, name, src, channels):
        gamma, beta = f'{name}.bn.gamma', f'{name}.bn.beta'
        mean, var = f'{name}.bn.running_mean', f'{name}.bn.running_var'
        self.store.declare(gamma, (channels,), 'bn_gamma', fill=1.0)
        self.store.declare(beta, (channels,), 'bn_beta')
        self.store.declare_buffer(mean, np.zeros(channels))
        self.store.declare_buffer(var, np.ones(channels))
        out = self.graph.add(self.node(f'{name}/bn'), g.BatchNorm(mean, var), [src], [gamma, beta])
        return self.graph.add(self.node(f'{name}/elu'), g.ELU(), [out])

    def pool(self, name, src):
        return self.graph.add(self.node(name), g.MaxPool2(), [src])

    def ups(self, name, src, in_ch, out_ch, factor, activate=True):
        """An ``ups<K>-<factor>`` row: learned or fixed upsampling, chosen by ``ArchSpec.upsampler``."""
        if self.spec.upsampler == 'transposed':
            kernel = ops.TCONV_GEOMETRY[factor][0]
            w, b = f'{name}.w', f'{name}.b'
            self.store.declare(w, (in_ch, out_ch, kernel, kernel), 'conv_weight')
            self.store.declare(b, (out_ch,), 'bias')
            out = self.graph.add(self.node(f'{name}/tconv'), g.TransposedConv2d(factor), [src], [w, b])
            return self.norm_act(name, out, out_ch) if activate else out
        mode = 'nearest' if self.spec.upsampler == 'nearest_then_conv3' else 'bilinear'
        up = self.graph.add(self.node(f'{name}/up'), g.FixedUpsample(factor, mode), [src])
        # skip branches stay linear: fixed upsampling then a 1x1 projection
        return self.conv(name, up, in_ch, out_ch, 3 if activate else 1, activate=activate)

    # streams

    def pan_input(self, x_pan, y_prev):
        if y_prev is None:
            return x_pan
        return self.graph.add(self.node('pan_in'), g.Concat(), [x_pan, y_prev])

    def build(self, x_pan, x_ms, y_prev=None):
        """Wire the instance and return the softmax node id."""
        spec = self.spec
        pan_in = self.pan_input(x_pan, y_prev)
        pan_channels = PAN_BANDS + self.score_channels

        if spec.variant in ('fusenet_low', 'fusenet_skip'):
            x = self.conv('pan.c1', pan_in, pan_channels, 16, 13)
            x = self.pool('pan.p1', x)
            x = self.conv('pan.c2', x, 16, 32, 7)
            ifm1 = self.pool('pan.p2', x)
            ifm2 = self.conv('ms.proj', x_ms, MS_BANDS, 32, 1, activate=False)
            self.tag('IFM1', ifm1)
            self.tag('IFM2', ifm2)
            fused = self.graph.add(self.node('fuse'), g.Concat(), [ifm1, ifm2])
            fused_channels = 64
        else:
            if spec.variant == 'fusenet_high':
                m = self.ups('ms.u1', x_ms, MS_BANDS, 16, 2)
                m = self.ups('ms.u2', m, 16, 8, 2)
                ms_up = self.conv('ms.proj', m, 8, MS_BANDS, 1, activate=False)
            else:
                ms_up = self.graph.add(self.node('ms.bilinear'), g.FixedUpsample(RESOLUTION_RATIO, 'bilinear'), [x_ms])
            self.tag('IFM1', ms_up)
            stacked = self.graph.add(self.node('stack'), g.Concat(), [pan_in, ms_up])
            self.tag('IFM3', stacked)
            x = self.conv('pan.c1', stacked, pan_channels + MS_BANDS, 16, 13)
            x = self.pool('pan.p1', x)
            x = self.conv('pan.c2', x, 16, 32, 7)
            fused = self.pool('pan.p2', x)
            ifm1 = None
            fused_channels = 32
        if spec.variant in ('fusenet_low', 'fusenet_skip'):
            self.tag('IFM3', fused)

        bottleneck, channels, ifm5, ifm5_channels = self.encoder(fused, fused_channels)
        self.tag('BFM', bottleneck)

        x = bottleneck
        stages = 2 + spec.pool_stages
        for k in range(stages):
            out_ch = min(128, 16 * 2 ** (stages - 1 - k))
            x = self.ups(f'dec.u{k + 1}', x, channels, out_ch, 2)
            channels = out_ch
        logits = self.conv('dec.proj', x, channels, spec.num_classes, 1, activate=False)
        self.tag('IFM4', logits)

        if spec.variant == 'fusenet_skip':
            self.tag('IFM6', logits)
            ifm7 = self.ups('skip.u1', ifm1, 32, spec.num_classes, RESOLUTION_RATIO, activate=False)
            factor5 = RESOLUTION_RATIO * (2 if spec.pool_stages > 0 else 1)
            ifm8 = self.ups('skip.u5', ifm5, ifm5_channels, spec.num_classes, factor5, activate=False)
            self.tag('IFM7', ifm7)
            self.tag('IFM8', ifm8)
            logits = self.graph.add(self.node('skip.add'), g.Add(), [logits, ifm7, ifm8])
            self.tag('IFM4', logits)

        return self.graph.add(self.node('softmax'), g.Softmax(), [logits])

    def encoder(self, x, channels):
        """
        conv3 blocks after fusion: max(2, p) blocks with a pool after each of the
        first p, extra conv3 layers just before the last pool.
        """
        spec = self.spec
        p = spec.pool_stages
        blocks = max(2, p)
        last_pool_block = p - 1 if p > 0 else blocks - 1
        ifm5, ifm5_channels = x, channels
        for k in range(blocks):
            out_ch = 64 if k == 0 else 128
            x = self.conv(f'enc.c{k + 1}', x, channels, out_ch, 3)
            channels = out_ch
            if k == last_pool_block:
                for e in range(spec.extra_conv_layers):
                    x = self.conv(f'enc.x{e + 1}', x, channels, channels, 3)
            if k < p:
                x = self.pool(f'enc.p{k + 1}', x)
                if k == 0:
                    ifm5, ifm5_channels = x, channels
                    self.tag('IFM5', x)
        if p == 0:
            self.tag('IFM5', ifm5)
        return x, channels, ifm5, ifm5_channels


def _add_loss(graph, scores, prefix=''):
    return graph.add(f'{prefix}loss', g.MaskedCrossEntropy(), [scores, 'target', 'mask'])


def build_fusenet(spec, store=None, check_finite=None):
    """FuseNet graph with inputs x_pan, x_ms, target, mask and outputs scores, loss."""
    graph = g.Graph(store, check_finite=check_finite)
    for name in ('x_pan', 'x_ms', 'target', 'mask'):
        graph.add_input(name)
    scores = FuseNetBuilder(spec, graph).build('x_pan', 'x_ms')
    graph.mark_output('scores', scores)
    graph.mark_output('loss', _add_loss(graph, scores))
    logger.debug(f'Built {spec.variant} with {graph.store.count()} parameters')
    return graph


def build_reusenet(spec, rconfig, store=None, check_finite=None):
    """
    R unrolled FuseNet instances sharing every parameter name.

    Instance r reads concat(x_pan, y_{r-1}); y_0 is the ``y_prev`` input.
    Outputs: scores_r and loss_r per instance, ``scores`` (last instance) and
    ``loss`` (mean of the instance losses).
    """
    graph = g.Graph(store, check_finite=check_finite)
    for name in ('x_pan', 'x_ms', 'y_prev', 'target', 'mask'):
        graph.add_input(name)
    y_prev = 'y_prev'
    losses = []
    for r in range(1, rconfig.instances + 1):
        prefix = f'r{r}/'
        builder = FuseNetBuilder(spec, graph, prefix=prefix, score_channels=spec.num_classes)
        scores = builder.build('x_pan', 'x_ms', y_prev)
        loss = _add_loss(graph, scores, prefix)
        graph.mark_output(f'scores_{r}', scores)
        graph.mark_output(f'loss_{r}', loss)
        losses.append(loss)
        y_prev = scores
    graph.mark_output('scores', y_prev)
    graph.mark_output('loss', graph.add('loss', g.Mean(), losses))
    return graph


def glorot_init(store, rng):
    """Uniform(+-sqrt(6 / (fan_in + fan_out))) conv weights, zero biases, identity batch norm."""
    for name, param in store.params.items():
        if param.kind == 'conv_weight':
            a, b, kh, kw = param.value.shape
            bound = math.sqrt(6.0 / ((a + b) * kh * kw))
            param.value[...] = rng_uniform(rng, -bound, bound, param.value.shape, store.dtype)
        elif param.kind == 'bn_gamma':
            param.value[...] = 1
        else:
            param.value[...] = 0
        param.momentum[...] = 0
        param.grad[...] = 0
    for name, buf in store.buffers.items():
        buf[...] = 1 if name.endswith('running_var') else 0
    return store


class Network:
    """A built graph plus what is needed to feed it."""

    def __init__(self, spec, graph, reuse=None, prior=None):
        self.spec = spec
        self.graph = graph
        self.reuse = reuse
        self.prior = prior

    @property
    def recurrent(self):
        return self.reuse is not None

    @property
    def store(self):
        return self.graph.store

    @property
    def instances(self):
        return self.reuse.instances if self.recurrent else 1

    def arch_hash(self):
        return arch_hash(self.spec, recurrent=self.recurrent)

    def initial_scores(self, pan, ms):
        """y_0: zeros in plain mode, the frozen pretrained FuseNet's scores otherwise."""
        shape = (pan.shape[0], self.spec.num_classes) + pan.shape[2:]
        if self.prior is None:
            return np.zeros(shape, dtype=self.store.dtype)
        return self.prior.predict_scores(pan, ms)

    def feed(self, pan, ms, target=None, mask=None):
        inputs = {'x_pan': pan, 'x_ms': ms}
        if pan.shape[2] != RESOLUTION_RATIO * ms.shape[2] or pan.shape[3] != RESOLUTION_RATIO * ms.shape[3]:
            raise ShapeError(f'PAN {pan.shape[2:]} must be exactly 4x MS {ms.shape[2:]}')
        if target is not None:
            inputs['target'] = target
            inputs['mask'] = mask
        if self.recurrent:
            inputs['y_prev'] = self.initial_scores(pan, ms)
        return inputs

    def run(self, pan, ms, target, mask, training=False):
        """Forward pass with the loss; returns the output dict."""
        return self.graph.forward(self.feed(pan, ms, target, mask), training=training)

    def predict_scores(self, pan, ms, per_instance=False):
        if per_instance:
            if not self.recurrent:
                raise GraphError('per-instance scores need a ReuseNet')
            names = [f'scores_{r}' for r in range(1, self.instances + 1)]
            out = self.graph.forward(self.feed(pan, ms), outputs=names, training=False)
            return [out[name] for name in names]
        return self.graph.forward(self.feed(pan, ms), outputs=['scores'], training=False)['scores']


def build_network(spec, reuse=None, dtype=np.float32, check_finite=None):
    store = g.ParamStore(dtype)
    if reuse is None:
        return Network(spec, build_fusenet(spec, store, check_finite))
    return Network(spec, build_reusenet(spec, reuse, store, check_finite), reuse=reuse)


def init_from_pretrained(network, checkpoint, mode=None):
    """
    Prepare a ReuseNet from a trained FuseNet checkpoint.

    map_init keeps the fresh weights and attaches the frozen FuseNet that
    computes y_0. map_weights_init also copies every shared weight; the first
    layer's extra score-map input slices are zeroed so instance 1 starts out
    reproducing the pretrained FuseNet.
    """
    from training.checkpoints import load_checkpoint

    mode = mode or network.reuse.init_mode
    if not network.recurrent:
        raise GraphError('init_from_pretrained needs a ReuseNet')
    if mode == 'plain':
        network.prior = None
        return network

    if isinstance(checkpoint, str) or hasattr(checkpoint, '__fspath__'):
        checkpoint = load_checkpoint(checkpoint)
    expected = arch_hash(network.spec, recurrent=False)
    if checkpoint.arch_hash != expected:
        raise CheckpointError(
            f'pretrained checkpoint arch hash {checkpoint.arch_hash:08x} does not match '
            f'FuseNet {network.spec.variant} ({expected:08x}); check num_classes and [arch]'
        )

    prior = build_network(network.spec, dtype=network.store.dtype)
    prior.store.load_tensors(checkpoint.params())
    network.prior = prior

    if mode == 'map_weights_init':
        C = network.spec.num_classes
        for name, value in prior.store.tensors().items():
            if name == f'{FIRST_LAYER}.w':
                target = network.store[name].value
                target[...] = 0
                target[:, :PAN_BANDS] = value[:, :PAN_BANDS]
                target[:, PAN_BANDS + C:] = value[:, PAN_BANDS:]
            elif name in network.store.params:
                network.store[name].value[...] = value
            else:
                network.store.buffers[name][...] = value
    logger.info(f'Initialized ReuseNet-{network.instances} with mode {mode}')
    return network
