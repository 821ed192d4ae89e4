"""
MRAS raster files.

Layout (little-endian): ``MRAS`` magic, u8 version (1), u8 dtype code,
u8 rank (3: c, h, w), u8 reserved (0), rank x u32 dims, raw row-major
payload. Label rasters are uint8 with 255 marking unlabeled pixels.
"""
import logging
import struct
from pathlib import Path

import numpy as np

from utils.exceptions import DataError, RasterFormatError, ShapeError

logger = logging.getLogger(__name__)

MAGIC = b'MRAS'
VERSION = 1
UNLABELED = 255

DTYPE_CODES = {
    0: np.dtype('<u1'),
    1: np.dtype('<f4'),
    2: np.dtype('<f8'),
}
CODES_BY_DTYPE = {dtype.type: code for code, dtype in DTYPE_CODES.items()}

_HEADER = struct.Struct('<4sBBBB')


def write_raster(path, tensor):
    """Write a (c, h, w) array, or a rank-4 tensor with n == 1."""
    array = np.asarray(tensor)
    if array.ndim == 4:
        if array.shape[0] != 1:
            raise ShapeError(f'a raster holds one image, got batch of {array.shape[0]}')
        array = array[0]
    if array.ndim != 3:
        raise ShapeError(f'raster must be (c, h, w), got shape {array.shape}')
    code = CODES_BY_DTYPE.get(array.dtype.type)
    if code is None:
        raise RasterFormatError(f'unsupported raster dtype {array.dtype}')

    payload = np.ascontiguousarray(array, dtype=DTYPE_CODES[code])
    path = Path(path)
    with open(path, 'wb') as handle:
        handle.write(_HEADER.pack(MAGIC, VERSION, code, 3, 0))
        handle.write(struct.pack('<3I', *payload.shape))
        handle.write(payload.tobytes(order='C'))
    logger.debug(f'Wrote raster {path} {payload.shape} {payload.dtype}')
    return path


def read_raster(path):
    """Read an MRAS file as a rank-4 tensor of shape (1, c, h, w)."""
    path = Path(path)
    if not path.exists():
        raise DataError(f'missing data file {path}')
    data = path.read_bytes()
    if len(data) < _HEADER.size:
        raise RasterFormatError(f'{path}: truncated header')

    magic, version, code, rank, _reserved = _HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise RasterFormatError(f'{path}: bad magic {magic!r}')
    if version != VERSION:
        raise RasterFormatError(f'{path}: unsupported version {version}')
    if code not in DTYPE_CODES:
        raise RasterFormatError(f'{path}: unsupported dtype code {code}')
    if rank != 3:
        raise RasterFormatError(f'{path}: raster rank must be 3, got {rank}')

    offset = _HEADER.size
    if len(data) < offset + 4 * rank:
        raise RasterFormatError(f'{path}: truncated dims')
    dims = struct.unpack_from(f'<{rank}I', data, offset)
    offset += 4 * rank

    dtype = DTYPE_CODES[code]
    expected = int(np.prod(dims)) * dtype.itemsize
    if len(data) - offset < expected:
        raise RasterFormatError(
            f'{path}: truncated payload ({len(data) - offset} of {expected} bytes)'
        )
    array = np.frombuffer(data, dtype=dtype, count=int(np.prod(dims)), offset=offset)
    return array.reshape((1,) + tuple(dims)).astype(dtype.newbyteorder('='), copy=True)
