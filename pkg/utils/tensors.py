"""
Rank-4 tensor helpers.

Tensors are plain ``numpy.ndarray`` objects laid out (n, c, h, w), n-major
and row-major, which is the layout every kernel in the repo assumes.
Randomness comes from numpy's PCG64 bit generator; a given seed produces the
same stream on every platform.
"""
import logging
from contextlib import contextmanager

import numpy as np
from threadpoolctl import threadpool_limits

from utils.exceptions import NumericError, ShapeError

logger = logging.getLogger(__name__)

FLOAT_DTYPES = (np.float32, np.float64)
SUPPORTED_DTYPES = (np.uint8, np.float32, np.float64)

# Largest element count we are willing to allocate in one tensor.
MAX_ELEMENTS = 2 ** 31 - 1


class Rng:
    """Seeded PCG64 stream. ``spawn`` derives independent child streams."""

    def __init__(self, seed, _sequence=None):
        if seed < 0 or seed >= 2 ** 64:
            raise ValueError(f'seed must be an unsigned 64-bit integer, got {seed}')
        self.seed = int(seed)
        self._seq = _sequence if _sequence is not None else np.random.SeedSequence(self.seed)
        self.generator = np.random.Generator(np.random.PCG64(self._seq))

    def spawn(self, count):
        return [Rng(self.seed, _sequence=child) for child in self._seq.spawn(count)]

    def __repr__(self):
        return f'Rng(seed={self.seed}, spawn_key={self._seq.spawn_key})'


def _check_dims(dims):
    dims = tuple(int(d) for d in dims)
    if any(d < 1 for d in dims):
        raise ShapeError(f'all dims must be >= 1, got {dims}')
    total = 1
    for d in dims:
        total *= d
    if total > MAX_ELEMENTS:
        raise ShapeError(f'dimension overflow: {dims} holds {total} elements')
    return dims


def zeros(dims, dtype=np.float32):
    return np.zeros(_check_dims(dims), dtype=dtype)


def as_tensor(value, dtype=None):
    """Coerce to a rank-4 array, raising ShapeError for anything else."""
    array = np.asarray(value, dtype=dtype)
    if array.ndim != 4:
        raise ShapeError(f'expected a rank-4 tensor (n, c, h, w), got shape {array.shape}')
    if array.dtype.type not in SUPPORTED_DTYPES:
        raise ShapeError(f'unsupported tensor dtype {array.dtype}')
    _check_dims(array.shape)
    return array


def concat_channels(a, b):
    if a.ndim != 4 or b.ndim != 4:
        raise ShapeError(f'concat needs rank-4 tensors, got {a.shape} and {b.shape}')
    if (a.shape[0], a.shape[2], a.shape[3]) != (b.shape[0], b.shape[2], b.shape[3]):
        raise ShapeError(f'cannot concatenate channels of {a.shape} and {b.shape}')
    return np.concatenate([a, b], axis=1)


def slice_channels(x, start, stop):
    if not 0 <= start < stop <= x.shape[1]:
        raise ShapeError(f'channel slice [{start}:{stop}) outside {x.shape[1]} channels')
    return x[:, start:stop]


def add_elementwise(*tensors):
    """Sum tensors of identical dims, left to right."""
    if not tensors:
        raise ShapeError('add needs at least one tensor')
    first = tensors[0]
    for other in tensors[1:]:
        if other.shape != first.shape:
            raise ShapeError(f'cannot add tensors of dims {first.shape} and {other.shape}')
    total = first.copy()
    for other in tensors[1:]:
        total += other
    return total


def rng_uniform(rng, lo, hi, dims, dtype=np.float32):
    """Uniform samples in [lo, hi)."""
    if not lo < hi:
        raise ValueError(f'rng_uniform needs lo < hi, got lo={lo} hi={hi}')
    dims = _check_dims(dims)
    scalar = np.dtype(dtype).type
    values = rng.generator.uniform(lo, hi, size=dims).astype(scalar)
    # rounding to float32 can land exactly on hi
    return np.minimum(values, np.nextafter(scalar(hi), scalar(lo)))


def check_finite(x, where):
    if x.dtype.type in FLOAT_DTYPES and not np.all(np.isfinite(x)):
        bad = int(np.size(x) - np.count_nonzero(np.isfinite(x)))
        raise NumericError(f'{bad} non-finite values produced at {where}')
    return x


@contextmanager
def compute_threads(threads):
    """Cap numpy's BLAS/OpenMP pools at ``threads`` inside the block; 1 is bit-reproducible."""
    if threads < 1:
        raise ValueError(f'threads must be >= 1, got {threads}')
    with threadpool_limits(limits=threads):
        logger.debug(f'Compute pools limited to {threads} thread(s)')
        yield threads
