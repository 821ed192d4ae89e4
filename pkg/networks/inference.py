"""
Full-tile prediction: the trained network applied as an image filter.

Tiles are cut into overlapping windows whose origins lie on multiples of the
architecture divisor, so every window sees the same pooling grid as a single
pass over the whole tile. Each window contributes only its interior (at least
``overlap`` pixels from its borders, except along tile edges), and the kept
regions are disjoint and cover the tile.
"""
import logging
import math

import numpy as np

from networks import graph as g
from networks import ops
from networks.architectures import MS_BANDS, RESOLUTION_RATIO, ArchSpec, build_fusenet
from utils.exceptions import ConfigError, GraphError, ShapeError

logger = logging.getLogger(__name__)

DEFAULT_WINDOW = 256

# (radius, jump) of each graph input, in PAN pixels
_INPUT_FOOTPRINTS = {
    'x_pan': (0.0, 1),
    # an MS pixel covers a 4x4 PAN block
    'x_ms': ((RESOLUTION_RATIO - 1) / 2, RESOLUTION_RATIO),
    'y_prev': (0.0, 1),
}


def graph_receptive_field(graph, output='scores', input_radius=None):
    """
    One-sided receptive-field radius of ``output`` in PAN pixels, composed
    layer by layer along the longest path and rounded up.
    """
    footprints = dict(_INPUT_FOOTPRINTS)
    for name, radius in (input_radius or {}).items():
        footprints[name] = (radius, footprints.get(name, (0.0, 1))[1])
    needed = graph._ancestors([graph.outputs[output]])

    fields = {}
    for node_id, node in graph.nodes.items():
        if node_id not in needed:
            continue
        op = node.op
        if isinstance(op, g.Placeholder):
            fields[node_id] = footprints.get(op.name, (0.0, 1))
            continue
        r = max(fields[source][0] for source in node.inputs)
        jump = fields[node.inputs[0]][1]
        if isinstance(op, g.Conv2d):
            r += (op.kernel - 1) / 2 * jump
            jump *= op.stride
        elif isinstance(op, g.MaxPool2):
            r += 0.5 * jump
            jump *= 2
        elif isinstance(op, g.TransposedConv2d):
            r += jump
            jump /= op.factor
        elif isinstance(op, g.FixedUpsample):
            r += 0.5 * jump if op.mode == 'nearest' else jump
            jump /= op.factor
        fields[node_id] = (r, jump)
    return int(math.ceil(fields[graph.outputs[output]][0]))


def receptive_field(target):
    """Radius for an ``ArchSpec``, a ``Graph`` or a built ``Network``."""
    if isinstance(target, ArchSpec):
        return graph_receptive_field(build_fusenet(target, check_finite=False))
    if isinstance(target, g.Graph):
        return graph_receptive_field(target)
    radius = {}
    if getattr(target, 'prior', None) is not None:
        radius['y_prev'] = graph_receptive_field(target.prior.graph)
    return graph_receptive_field(target.graph, input_radius=radius)


def default_overlap(radius):
    """Receptive-field radius rounded up to a multiple of 4."""
    return int(math.ceil(radius / RESOLUTION_RATIO) * RESOLUTION_RATIO)


def window_layout(length, window, overlap, divisor):
    """
    Window origins along one axis and the [start, stop) region each keeps.

    Origins are multiples of ``divisor``; kept regions are disjoint,
    contiguous and cover [0, length).
    """
    if length <= window:
        return [(0, 0, length)]
    step = (window - 2 * overlap) // divisor * divisor
    if step < divisor:
        raise ConfigError(
            f'window {window} is too small for overlap {overlap}: it must be at least '
            f'{2 * overlap + divisor} PAN pixels (receptive field plus one divisor step)'
        )
    origins = []
    origin = 0
    while origin + window < length:
        origins.append(origin)
        origin += step
    origins.append(length - window)

    starts = [0] + [o + overlap for o in origins[1:]]
    stops = starts[1:] + [length]
    return list(zip(origins, starts, stops))


def _pad_to(x, height, width):
    pad_h, pad_w = height - x.shape[2], width - x.shape[3]
    if pad_h == 0 and pad_w == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (0, pad_h), (0, pad_w)))


def predict_tile(network, pan, ms, window=DEFAULT_WINDOW, overlap=None, per_instance=False):
    """
    Predict every pixel of a scene.

    Args:
        network: built ``Network`` with trained parameters
        pan: (1, 1, H, W) PAN raster, H and W multiples of 4
        ms: (1, 4, H/4, W/4) MS raster
        window: window side in PAN pixels, a multiple of the divisor
        overlap: discarded border per window side (default: radius rounded up to 4)
        per_instance: stitch every ReuseNet instance's scores

    Returns:
        tuple: (scores (1, C, H, W) float32 or a list of them, labels (1, 1, H, W) uint8)
    """
    spec = network.spec
    divisor = spec.divisor
    if pan.ndim != 4 or pan.shape[:2] != (1, 1):
        raise ShapeError(f'PAN raster must be (1, 1, H, W), got {pan.shape}')
    if ms.shape[:2] != (1, MS_BANDS):
        raise ShapeError(f'MS raster must be (1, {MS_BANDS}, h, w), got {ms.shape}')
    height, width = pan.shape[2:]
    if (height, width) != (RESOLUTION_RATIO * ms.shape[2], RESOLUTION_RATIO * ms.shape[3]):
        raise ShapeError(f'PAN {height}x{width} is not 4x MS {ms.shape[2]}x{ms.shape[3]}')
    if window % divisor:
        raise ConfigError(f'window {window} must be a multiple of the architecture divisor {divisor}')
    if per_instance and not network.recurrent:
        raise GraphError('per-instance scores need a ReuseNet')

    radius = receptive_field(network)
    overlap = default_overlap(radius) if overlap is None else overlap
    if overlap < radius:
        raise ConfigError(f'overlap {overlap} is smaller than the receptive-field radius {radius}')

    padded_h = math.ceil(height / divisor) * divisor
    padded_w = math.ceil(width / divisor) * divisor
    pan_p = _pad_to(pan, padded_h, padded_w)
    ms_p = _pad_to(ms, padded_h // RESOLUTION_RATIO, padded_w // RESOLUTION_RATIO)
    win_h, win_w = min(window, padded_h), min(window, padded_w)
    rows = window_layout(padded_h, win_h, overlap, divisor)
    cols = window_layout(padded_w, win_w, overlap, divisor)

    count = network.instances if per_instance else 1
    C = spec.num_classes
    stitched = [np.zeros((1, C, padded_h, padded_w), dtype=np.float32) for _ in range(count)]
    for oy, y0, y1 in rows:
        for ox, x0, x1 in cols:
            pan_w = pan_p[:, :, oy:oy + win_h, ox:ox + win_w]
            ms_w = ms_p[:, :, oy // 4:(oy + win_h) // 4, ox // 4:(ox + win_w) // 4]
            scores = network.predict_scores(pan_w, ms_w, per_instance=per_instance)
            if not per_instance:
                scores = [scores]
            for target, window_scores in zip(stitched, scores):
                target[:, :, y0:y1, x0:x1] = window_scores[:, :, y0 - oy:y1 - oy, x0 - ox:x1 - ox]
    logger.debug(f'Predicted {height}x{width} tile with {len(rows) * len(cols)} windows')

    stitched = [s[:, :, :height, :width] for s in stitched]
    labels = ops.argmax_map(stitched[-1])
    return (stitched if per_instance else stitched[0]), labels


def per_instance_scores(network, pan, ms):
    """Softmax output of every unrolled ReuseNet instance, in order."""
    if not network.recurrent:
        raise GraphError('per_instance_scores called on a non-recurrent network')
    return network.predict_scores(pan, ms, per_instance=True)
