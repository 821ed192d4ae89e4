import struct
import tempfile
from pathlib import Path

import numpy as np
from django.test import SimpleTestCase

from networks.architectures import ArchSpec, ReuseNetConfig, build_network, glorot_init
from training.checkpoints import MAGIC, load_checkpoint, load_into, network_tensors, save_checkpoint
from utils.exceptions import CheckpointError
from utils.tensors import Rng

SPEC = ArchSpec(patch_size=4, num_classes=3, bottleneck_hw=1)


class CheckpointFileTest(SimpleTestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.addCleanup(self.tmp.cleanup)
        self.path = Path(self.tmp.name) / 'run' / 'checkpoint.mckp'

    def test_round_trip(self):
        tensors = {'a.w': np.arange(6, dtype=np.float32).reshape(2, 3), 'scalar': np.float32(2.5)}
        save_checkpoint(self.path, tensors, arch_hash=0xDEADBEEF, epoch=7, val_oa=0.8125)

        checkpoint = load_checkpoint(self.path)

        self.assertEqual(checkpoint.arch_hash, 0xDEADBEEF)
        self.assertEqual((checkpoint.epoch, checkpoint.val_oa), (7, 0.8125))
        np.testing.assert_array_equal(checkpoint.tensors['a.w'], tensors['a.w'])
        self.assertEqual(checkpoint.tensors['scalar'].shape, ())
        self.assertEqual(list(checkpoint.tensors), ['a.w', 'scalar'])

    def test_header_layout(self):
        save_checkpoint(self.path, {}, arch_hash=5)
        data = self.path.read_bytes()
        self.assertEqual(data[:4], MAGIC)
        self.assertEqual(struct.unpack('<BII', data[4:13]), (1, 5, 0))
        self.assertEqual(len(data), 13 + 8)

    def test_missing_file(self):
        with self.assertRaisesRegex(CheckpointError, 'not found'):
            load_checkpoint(self.path)

    def test_bad_magic(self):
        self.path.parent.mkdir(parents=True)
        self.path.write_bytes(b'MRAS' + bytes(20))
        with self.assertRaisesRegex(CheckpointError, 'bad magic'):
            load_checkpoint(self.path)

    def test_truncated(self):
        save_checkpoint(self.path, {'a': np.ones((4, 4), dtype=np.float32)}, arch_hash=1)
        self.path.write_bytes(self.path.read_bytes()[:-20])
        with self.assertRaisesRegex(CheckpointError, 'truncated'):
            load_checkpoint(self.path)

    def test_unsupported_version(self):
        self.path.parent.mkdir(parents=True)
        self.path.write_bytes(MAGIC + struct.pack('<BII', 2, 0, 0) + struct.pack('<If', 0, 0.0))
        with self.assertRaisesRegex(CheckpointError, 'version 2'):
            load_checkpoint(self.path)


class LoadIntoTest(SimpleTestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.addCleanup(self.tmp.cleanup)
        self.path = Path(self.tmp.name) / 'checkpoint.mckp'

    def trained(self, reuse=None):
        network = build_network(SPEC, reuse=reuse, check_finite=False)
        glorot_init(network.store, Rng(3))
        return network

    def test_parameters_come_back(self):
        source = self.trained()
        save_checkpoint(self.path, network_tensors(source), source.arch_hash(), epoch=4, val_oa=0.5)
        target = build_network(SPEC, check_finite=False)

        checkpoint = load_into(target, self.path)

        self.assertEqual(checkpoint.epoch, 4)
        for name, value in source.store.tensors().items():
            np.testing.assert_array_equal(target.store.tensors()[name], value, err_msg=name)

    def test_architecture_mismatch(self):
        source = self.trained()
        save_checkpoint(self.path, network_tensors(source), source.arch_hash())
        with self.assertRaisesRegex(CheckpointError, 'architecture hash mismatch'):
            load_into(build_network(SPEC, reuse=ReuseNetConfig(instances=2)), self.path)

    def test_missing_parameter(self):
        source = self.trained()
        tensors = network_tensors(source)
        del tensors['dec.proj.b']
        save_checkpoint(self.path, tensors, source.arch_hash())
        with self.assertRaisesRegex(CheckpointError, 'missing parameter\\(s\\) dec.proj.b'):
            load_into(build_network(SPEC), self.path)

    def test_extra_parameter(self):
        source = self.trained()
        tensors = {**network_tensors(source), 'stray.w': np.zeros(2, dtype=np.float32)}
        save_checkpoint(self.path, tensors, source.arch_hash())
        with self.assertRaisesRegex(CheckpointError, 'extra parameter\\(s\\) stray.w'):
            load_into(build_network(SPEC), self.path)

    def test_normalization_and_prior_travel_with_the_network(self):
        reusenet = self.trained(ReuseNetConfig(instances=2))
        reusenet.prior = self.trained()
        tensors = network_tensors(reusenet, {'band_min': np.zeros(5), 'band_max': np.ones(5)})
        save_checkpoint(self.path, tensors, reusenet.arch_hash())

        target = build_network(SPEC, reuse=ReuseNetConfig(instances=2))
        checkpoint = load_into(target, self.path)

        np.testing.assert_array_equal(checkpoint.meta('band_max'), np.ones(5, dtype=np.float32))
        self.assertIsNotNone(target.prior)
        np.testing.assert_array_equal(
            target.prior.store['pan.c1.w'].value, reusenet.prior.store['pan.c1.w'].value,
        )
