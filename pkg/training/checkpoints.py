"""
MCKP checkpoint files.

Layout (little-endian): ``MCKP`` magic, u8 version (1), u32 arch hash,
u32 tensor count; per tensor u16 name length, UTF-8 name, u8 rank,
rank x u32 dims, float32 payload; then a trailing u32 epoch and f32 best
validation OA.

Besides the network parameters a checkpoint may carry ``prior/<name>``
tensors (the frozen FuseNet behind a map-initialized ReuseNet) and
``meta/<name>`` tensors (band normalization statistics).
"""
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from utils.exceptions import CheckpointError

logger = logging.getLogger(__name__)

MAGIC = b'MCKP'
VERSION = 1
PRIOR_PREFIX = 'prior/'
META_PREFIX = 'meta/'


@dataclass
class Checkpoint:
    arch_hash: int
    tensors: dict = field(default_factory=dict)
    epoch: int = 0
    val_oa: float = 0.0

    def params(self):
        return {
            name: value for name, value in self.tensors.items()
            if not name.startswith((PRIOR_PREFIX, META_PREFIX))
        }

    def prior(self):
        return {
            name[len(PRIOR_PREFIX):]: value for name, value in self.tensors.items()
            if name.startswith(PRIOR_PREFIX)
        }

    def meta(self, name, default=None):
        return self.tensors.get(f'{META_PREFIX}{name}', default)


def save_checkpoint(path, tensors, arch_hash, epoch=0, val_oa=0.0):
    path = Path(path)
    chunks = [MAGIC, struct.pack('<BII', VERSION, arch_hash & 0xFFFFFFFF, len(tensors))]
    for name, value in tensors.items():
        encoded = name.encode('utf-8')
        array = np.ascontiguousarray(value, dtype='<f4')
        chunks.append(struct.pack('<H', len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack('<B', array.ndim))
        chunks.append(struct.pack(f'<{array.ndim}I', *array.shape))
        chunks.append(array.tobytes(order='C'))
    chunks.append(struct.pack('<If', int(epoch), float(val_oa)))
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(b''.join(chunks))
    logger.info(f'Saved checkpoint {path} ({len(tensors)} tensors, epoch {epoch}, val OA {val_oa:.4f})')
    return path


class _Reader:
    def __init__(self, data, path):
        self.data = data
        self.offset = 0
        self.path = path

    def take(self, fmt):
        size = struct.calcsize(fmt)
        if self.offset + size > len(self.data):
            raise CheckpointError(f'{self.path}: truncated checkpoint')
        values = struct.unpack_from(fmt, self.data, self.offset)
        self.offset += size
        return values

    def raw(self, size):
        if self.offset + size > len(self.data):
            raise CheckpointError(f'{self.path}: truncated checkpoint')
        chunk = self.data[self.offset:self.offset + size]
        self.offset += size
        return chunk


def load_checkpoint(path):
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f'checkpoint not found: {path}')
    reader = _Reader(path.read_bytes(), path)
    if reader.raw(4) != MAGIC:
        raise CheckpointError(f'{path}: bad magic, not an MCKP checkpoint')
    version, arch_hash, count = reader.take('<BII')
    if version != VERSION:
        raise CheckpointError(f'{path}: unsupported checkpoint version {version}')

    tensors = {}
    for _ in range(count):
        (name_len,) = reader.take('<H')
        name = reader.raw(name_len).decode('utf-8')
        (rank,) = reader.take('<B')
        dims = reader.take(f'<{rank}I')
        size = int(np.prod(dims)) if rank else 1
        payload = reader.raw(4 * size)
        tensors[name] = np.frombuffer(payload, dtype='<f4').reshape(dims).astype(np.float32)
    epoch, val_oa = reader.take('<If')
    return Checkpoint(arch_hash=arch_hash, tensors=tensors, epoch=epoch, val_oa=float(val_oa))


def network_tensors(network, normalization=None):
    """Everything a checkpoint of ``network`` should hold."""
    tensors = network.store.tensors()
    if network.prior is not None:
        tensors.update({f'{PRIOR_PREFIX}{name}': value for name, value in network.prior.store.tensors().items()})
    for name, value in (normalization or {}).items():
        tensors[f'{META_PREFIX}{name}'] = np.asarray(value, dtype=np.float32)
    return tensors


def load_into(network, checkpoint):
    """Load a checkpoint into a built network, checking the architecture hash."""
    if isinstance(checkpoint, (str, Path)):
        checkpoint = load_checkpoint(checkpoint)
    expected = network.arch_hash()
    if checkpoint.arch_hash != expected:
        raise CheckpointError(
            f'architecture hash mismatch: checkpoint {checkpoint.arch_hash:08x}, '
            f'network {expected:08x}'
        )
    network.store.load_tensors(checkpoint.params())
    prior = checkpoint.prior()
    if prior:
        from networks.architectures import build_network

        network.prior = build_network(network.spec, dtype=network.store.dtype)
        network.prior.store.load_tensors(prior)
    return checkpoint
