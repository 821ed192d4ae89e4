import math

import numpy as np
from django.test import SimpleTestCase

from networks.architectures import (
    ArchSpec, FIRST_LAYER, ReuseNetConfig, arch_hash, build_network, glorot_init, init_from_pretrained,
)
from networks.graph import ParamStore
from scenes.patches import one_hot_encode
from training.checkpoints import Checkpoint
from utils.exceptions import CheckpointError, ConfigError, GraphError, ShapeError
from utils.raster import UNLABELED
from utils.tensors import Rng

SMALL = ArchSpec(patch_size=4, num_classes=3, bottleneck_hw=1)


def random_inputs(spec, seed=0, batch=1):
    gen = np.random.default_rng(seed)
    pan = gen.standard_normal((batch, 1, spec.pan_size, spec.pan_size)).astype(np.float32)
    ms = gen.standard_normal((batch, 4, spec.patch_size, spec.patch_size)).astype(np.float32)
    return pan, ms


def initialized(spec, reuse=None, seed=0):
    network = build_network(spec, reuse=reuse, check_finite=False)
    glorot_init(network.store, Rng(seed))
    return network


def feature_dims(spec, labels):
    network = initialized(spec)
    network.predict_scores(*random_inputs(spec))
    return {label: network.graph.value(label).shape[1:] for label in labels}


class ArchSpecTest(SimpleTestCase):
    def test_defaults(self):
        spec = ArchSpec()
        self.assertEqual((spec.patch_size, spec.num_classes, spec.bottleneck_hw), (16, 6, 4))
        self.assertEqual(spec.pool_stages, 2)
        self.assertEqual(spec.divisor, 16)
        self.assertEqual(spec.pan_size, 64)

    def test_incompatible_bottleneck(self):
        with self.assertRaisesRegex(ConfigError, 'incompatible with patch size'):
            ArchSpec(patch_size=4, bottleneck_hw=8)
        with self.assertRaisesRegex(ConfigError, 'incompatible with patch size'):
            ArchSpec(patch_size=12, bottleneck_hw=8)

    def test_patch_size_keeps_the_pooling_depth(self):
        for m in (8, 16, 24, 32):
            with self.subTest(patch_size=m):
                spec = ArchSpec().with_patch_size(m)
                self.assertEqual((spec.patch_size, spec.bottleneck_hw, spec.pool_stages), (m, m // 4, 2))
        with self.assertRaisesRegex(ConfigError, 'not a multiple of 4'):
            ArchSpec().with_patch_size(10)

    def test_rejected_values(self):
        for kwargs in ({'variant': 'unet'}, {'upsampler': 'cubic'}, {'extra_conv_layers': 3},
                       {'num_classes': 1}, {'num_classes': 255}):
            with self.subTest(kwargs=kwargs), self.assertRaises(ConfigError):
                ArchSpec(**kwargs)

    def test_reuse_config_needs_checkpoint_for_pretrained_modes(self):
        with self.assertRaisesRegex(ConfigError, 'needs pretrained_checkpoint'):
            ReuseNetConfig(instances=2, init_mode='map_init')
        with self.assertRaises(ConfigError):
            ReuseNetConfig(instances=0)

    def test_arch_hash(self):
        self.assertEqual(arch_hash(ArchSpec()), arch_hash(ArchSpec()))
        self.assertNotEqual(arch_hash(ArchSpec()), arch_hash(ArchSpec(), recurrent=True))
        self.assertNotEqual(arch_hash(ArchSpec()), arch_hash(ArchSpec(num_classes=5)))
        self.assertLess(arch_hash(ArchSpec()), 2 ** 32)


class FeatureMapTest(SimpleTestCase):
    def test_fusenet_low(self):
        dims = feature_dims(ArchSpec(variant='fusenet_low'), ['IFM1', 'IFM2', 'IFM3', 'BFM', 'IFM4'])
        self.assertEqual(dims, {
            'IFM1': (32, 16, 16),
            'IFM2': (32, 16, 16),
            'IFM3': (64, 16, 16),
            'BFM': (128, 4, 4),
            'IFM4': (6, 64, 64),
        })

    def test_fusenet_high(self):
        dims = feature_dims(ArchSpec(variant='fusenet_high'), ['IFM1', 'IFM3', 'BFM', 'IFM4'])
        self.assertEqual(dims, {
            'IFM1': (4, 64, 64),
            'IFM3': (5, 64, 64),
            'BFM': (128, 4, 4),
            'IFM4': (6, 64, 64),
        })

    def test_net_bilinear(self):
        dims = feature_dims(ArchSpec(variant='net_bilinear'), ['IFM1', 'IFM3', 'IFM4'])
        self.assertEqual(dims, {'IFM1': (4, 64, 64), 'IFM3': (5, 64, 64), 'IFM4': (6, 64, 64)})

    def test_fusenet_skip(self):
        dims = feature_dims(ArchSpec(variant='fusenet_skip'), ['IFM5', 'IFM6', 'IFM7', 'IFM8', 'IFM4'])
        self.assertEqual(dims, {
            'IFM5': (64, 8, 8),
            'IFM6': (6, 64, 64),
            'IFM7': (6, 64, 64),
            'IFM8': (6, 64, 64),
            'IFM4': (6, 64, 64),
        })

    def test_bottleneck_sizes(self):
        for hw in (16, 8, 4, 2, 1):
            with self.subTest(bottleneck=hw):
                dims = feature_dims(ArchSpec(bottleneck_hw=hw), ['BFM', 'IFM4'])
                self.assertEqual(dims['BFM'], (128, hw, hw))
                self.assertEqual(dims['IFM4'], (6, 64, 64))

    def test_twenty_four_pixel_patches(self):
        dims = feature_dims(ArchSpec().with_patch_size(24), ['BFM', 'IFM4'])
        self.assertEqual(dims['BFM'], (128, 6, 6))
        self.assertEqual(dims['IFM4'], (6, 96, 96))

    def test_fixed_upsamplers_keep_output_dims(self):
        for upsampler in ('nearest_then_conv3', 'bilinear_then_conv3'):
            with self.subTest(upsampler=upsampler):
                spec = ArchSpec(variant='fusenet_skip', upsampler=upsampler)
                self.assertEqual(feature_dims(spec, ['IFM4'])['IFM4'], (6, 64, 64))

    def test_scores_are_distributions(self):
        network = initialized(SMALL)
        scores = network.predict_scores(*random_inputs(SMALL, batch=2))
        self.assertEqual(scores.shape, (2, 3, 16, 16))
        np.testing.assert_allclose(scores.sum(axis=1), 1.0, rtol=1e-5)

    def test_pan_must_be_four_times_ms(self):
        network = initialized(SMALL)
        pan, ms = random_inputs(SMALL)
        with self.assertRaises(ShapeError):
            network.predict_scores(pan[:, :, :12, :12], ms)


class ParameterTest(SimpleTestCase):
    def test_extra_conv_layers_add_parameters(self):
        base = build_network(ArchSpec()).store.count()
        extra = build_network(ArchSpec(extra_conv_layers=2)).store.count()
        per_layer = 128 * 128 * 9 + 128 + 2 * 128
        self.assertEqual(extra - base, 2 * per_layer)

    def test_reusenet_adds_score_inputs_to_the_first_layer(self):
        fusenet = build_network(ArchSpec())
        for instances in (1, 2, 3, 4):
            reusenet = build_network(ArchSpec(), reuse=ReuseNetConfig(instances=instances))
            self.assertEqual(reusenet.store.count(), fusenet.store.count() + 16 * 6 * 13 * 13)
        self.assertEqual(16 * 6 * 13 * 13, 16224)

    def test_instances_share_parameters(self):
        network = build_network(SMALL, reuse=ReuseNetConfig(instances=3))
        users = network.graph.param_nodes()[f'{FIRST_LAYER}.w']
        self.assertEqual(users, ['r1/pan.c1/conv', 'r2/pan.c1/conv', 'r3/pan.c1/conv'])

    def test_glorot_bounds(self):
        store = initialized(ArchSpec()).store
        weights = store[f'{FIRST_LAYER}.w'].value
        bound = math.sqrt(6.0 / ((16 + 1) * 13 * 13))
        self.assertLessEqual(float(np.abs(weights).max()), bound)
        self.assertGreater(float(np.abs(weights).max()), 0.5 * bound)
        for name, param in store.params.items():
            if param.kind == 'bias':
                self.assertFalse(param.value.any(), name)
            elif param.kind == 'bn_gamma':
                self.assertTrue((param.value == 1).all(), name)

    def test_glorot_fills_a_float64_store(self):
        store = ParamStore(np.float64)
        store.declare('c.w', (2, 3, 3, 3), 'conv_weight')
        glorot_init(store, Rng(0))
        weights = store['c.w'].value
        self.assertEqual(weights.dtype, np.float64)
        self.assertTrue(weights.any())
        self.assertLess(float(np.abs(weights).max()), math.sqrt(6.0 / ((2 + 3) * 9)))

    def test_glorot_is_seeded(self):
        a = initialized(SMALL, seed=4).store.tensors()
        b = initialized(SMALL, seed=4).store.tensors()
        for name in a:
            np.testing.assert_array_equal(a[name], b[name])


class ReuseNetTest(SimpleTestCase):
    def test_total_loss_is_the_mean_of_instance_losses(self):
        network = initialized(SMALL, reuse=ReuseNetConfig(instances=3))
        pan, ms = random_inputs(SMALL, batch=2)
        labels = np.random.default_rng(1).integers(0, 3, (2, 1, 16, 16)).astype(np.uint8)
        labels[0, 0, :4] = UNLABELED
        target, mask = one_hot_encode(labels, 3)

        out = network.run(pan, ms, target, mask)

        per_instance = [float(out[f'loss_{r}']) for r in (1, 2, 3)]
        self.assertEqual(len(set(per_instance)), 3)
        self.assertAlmostEqual(float(out['loss']), sum(per_instance) / 3, places=6)

    def test_per_instance_scores(self):
        network = initialized(SMALL, reuse=ReuseNetConfig(instances=2))
        pan, ms = random_inputs(SMALL)
        per_instance = network.predict_scores(pan, ms, per_instance=True)
        self.assertEqual(len(per_instance), 2)
        np.testing.assert_allclose(per_instance[-1], network.predict_scores(pan, ms))

    def test_fusenet_has_no_instances(self):
        network = initialized(SMALL)
        with self.assertRaises(GraphError):
            network.predict_scores(*random_inputs(SMALL), per_instance=True)

    def test_plain_mode_starts_from_zero_scores(self):
        network = initialized(SMALL, reuse=ReuseNetConfig(instances=1))
        pan, ms = random_inputs(SMALL)
        self.assertFalse(network.initial_scores(pan, ms).any())

    def test_map_weights_init_reproduces_the_pretrained_fusenet(self):
        fusenet = initialized(SMALL, seed=1)
        checkpoint = Checkpoint(arch_hash=arch_hash(SMALL), tensors=fusenet.store.tensors())
        reuse = ReuseNetConfig(instances=2, init_mode='map_weights_init', pretrained_checkpoint='x.mckp')
        network = initialized(SMALL, reuse=reuse, seed=2)

        init_from_pretrained(network, checkpoint)

        pan, ms = random_inputs(SMALL, seed=3)
        first = network.predict_scores(pan, ms, per_instance=True)[0]
        np.testing.assert_allclose(first, fusenet.predict_scores(pan, ms), rtol=1e-4, atol=1e-6)
        first_layer = network.store[f'{FIRST_LAYER}.w'].value
        self.assertFalse(first_layer[:, 1:4].any())

    def test_map_init_keeps_fresh_weights(self):
        fusenet = initialized(SMALL, seed=1)
        checkpoint = Checkpoint(arch_hash=arch_hash(SMALL), tensors=fusenet.store.tensors())
        reuse = ReuseNetConfig(instances=2, init_mode='map_init', pretrained_checkpoint='x.mckp')
        network = initialized(SMALL, reuse=reuse, seed=2)
        before = network.store.tensors()

        init_from_pretrained(network, checkpoint)

        pan, ms = random_inputs(SMALL)
        np.testing.assert_allclose(network.initial_scores(pan, ms), fusenet.predict_scores(pan, ms))
        for name, value in before.items():
            np.testing.assert_array_equal(network.store.tensors()[name], value)

    def test_pretrained_hash_must_match(self):
        checkpoint = Checkpoint(arch_hash=arch_hash(ArchSpec()), tensors={})
        reuse = ReuseNetConfig(instances=2, init_mode='map_init', pretrained_checkpoint='x.mckp')
        network = initialized(SMALL, reuse=reuse)
        with self.assertRaisesRegex(CheckpointError, 'arch hash'):
            init_from_pretrained(network, checkpoint)

    def test_pretrained_init_needs_a_reusenet(self):
        with self.assertRaises(GraphError):
            init_from_pretrained(initialized(SMALL), None, mode='map_init')
