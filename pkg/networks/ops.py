"""
Layer kernels with their backward rules.

Every kernel works on (n, c, h, w) arrays and keeps the input dtype, so the
same code runs float32 training and float64 gradient checks. Forward
functions return ``(output, cache)``; the matching ``*_backward`` takes the
upstream gradient and that cache.
"""
import logging
from dataclasses import dataclass

import numpy as np

from utils.exceptions import ShapeError

logger = logging.getLogger(__name__)

ELU_ALPHA = 1.0
BN_EPSILON = 1e-5
BN_MOMENTUM = 0.1
LOG_CLAMP = 1e-12

# factor -> (kernel G, stride S, padding Z); output is exactly factor x input
TCONV_GEOMETRY = {
    2: (4, 2, 1),
    4: (8, 4, 2),
    8: (16, 8, 4),
}


def same_padding(kernel):
    """Padding that keeps spatial dims for an odd kernel at stride 1."""
    if kernel % 2 == 0:
        raise ShapeError(f'same-size convolution needs an odd kernel, got {kernel}')
    return (kernel - 1) // 2


@dataclass
class ConvParams:
    weights: np.ndarray
    bias: np.ndarray
    stride: int = 1
    padding: int = 0

    def __post_init__(self):
        if self.weights.ndim != 4 or self.weights.shape[2] != self.weights.shape[3]:
            raise ShapeError(f'conv weights must be (K_out, K_in, G, G), got {self.weights.shape}')
        if self.stride < 1 or self.padding < 0:
            raise ShapeError(f'invalid stride {self.stride} / padding {self.padding}')

    @property
    def kernel(self):
        return self.weights.shape[2]


@dataclass
class BatchNormParams:
    gamma: np.ndarray
    beta: np.ndarray
    running_mean: np.ndarray
    running_var: np.ndarray
    epsilon: float = BN_EPSILON
    momentum: float = BN_MOMENTUM
    training: bool = True

    @classmethod
    def fresh(cls, channels, dtype=np.float32):
        return cls(
            gamma=np.ones(channels, dtype=dtype),
            beta=np.zeros(channels, dtype=dtype),
            running_mean=np.zeros(channels, dtype=dtype),
            running_var=np.ones(channels, dtype=dtype),
        )


def conv_out_dims(H, W, G, Z, S):
    if S < 1 or min(H, W, G, Z) < 0:
        raise ShapeError(f'invalid conv geometry H={H} W={W} G={G} Z={Z} S={S}')
    if H - G + 2 * Z < 0 or W - G + 2 * Z < 0:
        raise ShapeError(f'kernel {G} larger than padded input {H + 2 * Z}x{W + 2 * Z}')
    return (H - G + 2 * Z) // S + 1, (W - G + 2 * Z) // S + 1


def _pad(x, pad):
    if pad == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))


def _window(xp, i, j, stride, out_h, out_w):
    return xp[:, :, i:i + stride * (out_h - 1) + 1:stride, j:j + stride * (out_w - 1) + 1:stride]


def _correlate(xp, w, stride, out_h, out_w):
    """Strided cross-correlation of a padded input: (n, c, ., .) -> (n, k, out_h, out_w)."""
    k, _, g, _ = w.shape
    out = np.zeros((k, xp.shape[0], out_h, out_w), dtype=np.result_type(xp, w))
    for i in range(g):
        for j in range(g):
            out += np.tensordot(w[:, :, i, j], _window(xp, i, j, stride, out_h, out_w), axes=([1], [1]))
    return out.transpose(1, 0, 2, 3)


def _scatter_adjoint(y, w, stride, padded_h, padded_w):
    """Adjoint of ``_correlate``: (n, k, h, w) -> (n, c, padded_h, padded_w)."""
    _, c, g, _ = w.shape
    n, _, out_h, out_w = y.shape
    out = np.zeros((n, c, padded_h, padded_w), dtype=np.result_type(y, w))
    for i in range(g):
        for j in range(g):
            contribution = np.tensordot(y, w[:, :, i, j], axes=([1], [0])).transpose(0, 3, 1, 2)
            out[:, :, i:i + stride * (out_h - 1) + 1:stride, j:j + stride * (out_w - 1) + 1:stride] += contribution
    return out


def _kernel_gradient(xp, gy, g, stride):
    """Sum over n, h, w of gy[k] * shifted xp[c]: the (k, c, g, g) weight gradient."""
    _, _, out_h, out_w = gy.shape
    grad = np.zeros((gy.shape[1], xp.shape[1], g, g), dtype=np.result_type(xp, gy))
    for i in range(g):
        for j in range(g):
            grad[:, :, i, j] = np.tensordot(
                gy, _window(xp, i, j, stride, out_h, out_w), axes=([0, 2, 3], [0, 2, 3])
            )
    return grad


# Convolution

def conv2d(x, params):
    """Zero-padded strided convolution with bias."""
    out, _ = conv2d_forward(x, params.weights, params.bias, params.stride, params.padding)
    return out


def conv2d_forward(x, w, b, stride=1, pad=0):
    if x.shape[1] != w.shape[1]:
        raise ShapeError(f'conv expects {w.shape[1]} input channels, got {x.shape[1]}')
    g = w.shape[2]
    out_h, out_w = conv_out_dims(x.shape[2], x.shape[3], g, pad, stride)
    xp = _pad(x, pad)
    out = _correlate(xp, w, stride, out_h, out_w)
    out += b.reshape(1, -1, 1, 1)
    return out, (xp, x.shape)


def conv2d_backward(gy, cache, w, stride=1, pad=0):
    xp, x_shape = cache
    g = w.shape[2]
    grad_w = _kernel_gradient(xp, gy, g, stride)
    grad_b = gy.sum(axis=(0, 2, 3))
    grad_xp = _scatter_adjoint(gy, w, stride, xp.shape[2], xp.shape[3])
    grad_x = grad_xp[:, :, pad:pad + x_shape[2], pad:pad + x_shape[3]]
    return np.ascontiguousarray(grad_x), grad_w, grad_b


# Transposed convolution. Weights are stored (C_in, C_out, G, G), the layout of
# the strided convolution whose adjoint this is.

def tconv_out_dims(H, W, G, Z, S):
    out_h, out_w = (H - 1) * S - 2 * Z + G, (W - 1) * S - 2 * Z + G
    if out_h < 1 or out_w < 1:
        raise ShapeError(f'transposed conv G={G} S={S} Z={Z} gives empty output for {H}x{W}')
    return out_h, out_w


def transposed_conv(x, params, factor):
    """Learned upsampling by ``factor``; ``params`` must use the standard geometry."""
    if factor not in TCONV_GEOMETRY:
        raise ShapeError(f'unsupported upsampling factor {factor}; use one of {sorted(TCONV_GEOMETRY)}')
    g, s, z = TCONV_GEOMETRY[factor]
    if (params.kernel, params.stride, params.padding) != (g, s, z):
        raise ShapeError(f'factor {factor} needs G={g} S={s} Z={z}')
    out, _ = tconv_forward(x, params.weights, params.bias, s, z)
    return out


def tconv_forward(x, w, b, stride, pad):
    if x.shape[1] != w.shape[0]:
        raise ShapeError(f'transposed conv expects {w.shape[0]} input channels, got {x.shape[1]}')
    g = w.shape[2]
    out_h, out_w = tconv_out_dims(x.shape[2], x.shape[3], g, pad, stride)
    padded_h, padded_w = (x.shape[2] - 1) * stride + g, (x.shape[3] - 1) * stride + g
    full = _scatter_adjoint(x, w, stride, padded_h, padded_w)
    out = np.ascontiguousarray(full[:, :, pad:pad + out_h, pad:pad + out_w])
    out += b.reshape(1, -1, 1, 1)
    return out, x


def tconv_backward(gy, cache, w, stride, pad):
    x = cache
    g = w.shape[2]
    # padding gy by Z restores the full (H - 1)S + G scatter extent
    gy_p = _pad(gy, pad)
    grad_x = _correlate(gy_p, w, stride, x.shape[2], x.shape[3])
    # indexed (x channel, gy channel), which is already the (C_in, C_out) storage
    grad_w = _kernel_gradient(gy_p, x, g, stride)
    grad_b = gy.sum(axis=(0, 2, 3))
    return grad_x, grad_w, grad_b


# Pooling and fixed upsampling

def _pool_windows(x):
    n, c, h, w = x.shape
    return x.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h // 2, w // 2, 4)


def maxpool2(x):
    out, _ = maxpool2_forward(x)
    return out


def maxpool2_forward(x):
    if x.shape[2] % 2 or x.shape[3] % 2:
        raise ShapeError(f'maxpool2 needs even spatial dims, got {x.shape[2]}x{x.shape[3]}')
    windows = _pool_windows(x)
    # argmax returns the first maximum in scan order
    index = np.argmax(windows, axis=-1)
    out = np.take_along_axis(windows, index[..., None], axis=-1)[..., 0]
    return out, (index, x.shape)


def maxpool2_backward(gy, cache):
    index, (n, c, h, w) = cache
    routed = np.zeros((n, c, h // 2, w // 2, 4), dtype=gy.dtype)
    np.put_along_axis(routed, index[..., None], gy[..., None], axis=-1)
    return routed.reshape(n, c, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h, w)


def bilinear_matrix(size, factor, dtype=np.float64):
    """Half-pixel-centre interpolation weights, shape (size * factor, size)."""
    out_size = size * factor
    matrix = np.zeros((out_size, size), dtype=dtype)
    for o in range(out_size):
        src = max((o + 0.5) / factor - 0.5, 0.0)
        lo = min(int(np.floor(src)), size - 1)
        hi = min(lo + 1, size - 1)
        frac = src - lo
        matrix[o, lo] += 1.0 - frac
        matrix[o, hi] += frac
    return matrix


def fixed_upsample(x, factor, mode='nearest'):
    out, _ = fixed_upsample_forward(x, factor, mode)
    return out


def fixed_upsample_forward(x, factor, mode='nearest'):
    if factor < 2:
        raise ShapeError(f'upsampling factor must be >= 2, got {factor}')
    if mode == 'nearest':
        return x.repeat(factor, axis=2).repeat(factor, axis=3), None
    if mode == 'bilinear':
        mh = bilinear_matrix(x.shape[2], factor, x.dtype)
        mw = bilinear_matrix(x.shape[3], factor, x.dtype)
        return mh @ x @ mw.T, (mh, mw)
    raise ShapeError(f'unknown upsampling mode {mode!r}')


def fixed_upsample_backward(gy, cache, factor, mode='nearest'):
    if mode == 'nearest':
        n, c, h, w = gy.shape
        return gy.reshape(n, c, h // factor, factor, w // factor, factor).sum(axis=(3, 5))
    mh, mw = cache
    return mh.T @ gy @ mw


# Activations

def elu(x):
    return np.where(x > 0, x, ELU_ALPHA * np.expm1(np.minimum(x, 0))).astype(x.dtype, copy=False)


def elu_backward(gy, x):
    # slope at 0 is 1 from either side with alpha 1
    return gy * np.where(x > 0, 1, ELU_ALPHA * np.exp(np.minimum(x, 0))).astype(x.dtype, copy=False)


def rectifier(x):
    return np.maximum(x, 0)


def rectifier_backward(gy, x):
    return gy * (x > 0)


# Batch normalization

def batch_norm(x, params):
    out, _ = batch_norm_forward(x, params)
    return out


def batch_norm_forward(x, params):
    """Normalize per channel. Train mode also updates the running stats in place."""
    if params.epsilon <= 0:
        raise ShapeError('batch norm epsilon must be > 0')
    if x.shape[1] != params.gamma.shape[0]:
        raise ShapeError(f'batch norm over {params.gamma.shape[0]} channels got {x.shape[1]}')
    shape = (1, -1, 1, 1)
    if params.training:
        count = x.shape[0] * x.shape[2] * x.shape[3]
        if count < 2:
            raise ShapeError('batch norm in train mode needs at least 2 values per channel')
        mean = x.mean(axis=(0, 2, 3))
        var = x.var(axis=(0, 2, 3))
        m = params.momentum
        params.running_mean[...] = (1 - m) * params.running_mean + m * mean
        params.running_var[...] = (1 - m) * params.running_var + m * var * count / (count - 1)
    else:
        mean, var = params.running_mean, params.running_var
    inv_std = 1.0 / np.sqrt(var + params.epsilon)
    xhat = (x - mean.reshape(shape)) * inv_std.reshape(shape)
    out = params.gamma.reshape(shape) * xhat + params.beta.reshape(shape)
    return out.astype(x.dtype, copy=False), (xhat, inv_std, params.training)


def batch_norm_backward(gy, cache, gamma):
    xhat, inv_std, training = cache
    shape = (1, -1, 1, 1)
    grad_gamma = (gy * xhat).sum(axis=(0, 2, 3))
    grad_beta = gy.sum(axis=(0, 2, 3))
    dxhat = gy * gamma.reshape(shape)
    if not training:
        return dxhat * inv_std.reshape(shape), grad_gamma, grad_beta
    count = gy.shape[0] * gy.shape[2] * gy.shape[3]
    grad_x = (inv_std.reshape(shape) / count) * (
        count * dxhat
        - dxhat.sum(axis=(0, 2, 3), keepdims=True)
        - xhat * (dxhat * xhat).sum(axis=(0, 2, 3), keepdims=True)
    )
    return grad_x, grad_gamma, grad_beta


# Output layers

def softmax_channels(x):
    shifted = x - x.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def softmax_backward(gy, s):
    return s * (gy - (gy * s).sum(axis=1, keepdims=True))


def masked_cross_entropy(scores, targets, mask):
    """Mean of -log(score at the true class) over labeled pixels; 0 when none are labeled."""
    loss, _ = masked_cross_entropy_forward(scores, targets, mask)
    return loss


def masked_cross_entropy_forward(scores, targets, mask):
    if scores.shape != targets.shape:
        raise ShapeError(f'scores {scores.shape} and targets {targets.shape} differ')
    if mask.shape != (scores.shape[0], 1) + scores.shape[2:]:
        raise ShapeError(f'mask {mask.shape} does not match scores {scores.shape}')
    labeled = float(mask.sum())
    if labeled == 0:
        return scores.dtype.type(0), 0.0
    clamped = np.maximum(scores, LOG_CLAMP)
    loss = -(mask * targets * np.log(clamped)).sum() / labeled
    return scores.dtype.type(loss), labeled


def masked_cross_entropy_backward(gy, cache, scores, targets, mask):
    labeled = cache
    if labeled == 0:
        return np.zeros_like(scores)
    grad = -(mask * targets) / np.maximum(scores, LOG_CLAMP)
    grad = np.where(scores > LOG_CLAMP, grad, 0)
    return (gy * grad / labeled).astype(scores.dtype, copy=False)


def argmax_map(scores):
    """Per-pixel winning class, lowest index on ties, as uint8 (n, 1, h, w)."""
    return np.argmax(scores, axis=1)[:, None].astype(np.uint8)
