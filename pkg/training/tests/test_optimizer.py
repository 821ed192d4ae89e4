import numpy as np
from django.test import SimpleTestCase

from networks.graph import ParamStore
from training.optimizer import TrainConfig, lr_at_epoch, sgd_momentum_step
from utils.exceptions import ConfigError, MrcnError


def store_with(kind, value=1.0):
    store = ParamStore(np.float64)
    store.declare('p', (1,), kind, fill=value)
    return store


class ScheduleTest(SimpleTestCase):
    def test_default_steps(self):
        config = TrainConfig()
        self.assertAlmostEqual(lr_at_epoch(config, 0), 0.01)
        self.assertAlmostEqual(lr_at_epoch(config, 59), 0.01)
        self.assertAlmostEqual(lr_at_epoch(config, 60), 0.001)
        self.assertAlmostEqual(lr_at_epoch(config, 179), 0.001)
        self.assertAlmostEqual(lr_at_epoch(config, 180), 0.0001)

    def test_steps_are_sorted(self):
        config = TrainConfig(lr_step_epochs=[20, 5], lr_factor=0.5)
        self.assertEqual(config.lr_step_epochs, (5, 20))
        self.assertAlmostEqual(lr_at_epoch(config, 10), 0.005)


class TrainConfigTest(SimpleTestCase):
    def test_rejected_values(self):
        for kwargs in ({'learning_rate': 0}, {'momentum': 1.0}, {'batch_size': 0}, {'max_epochs': 0},
                       {'weight_decay': -1}, {'lr_factor': 1.0}, {'lr_step_epochs': [0]},
                       {'patience': -1}, {'threads': 0}):
            with self.subTest(kwargs=kwargs), self.assertRaises(ConfigError):
                TrainConfig(**kwargs)


class SgdMomentumTest(SimpleTestCase):
    def test_weight_decay_on_convolution_weights(self):
        store = store_with('conv_weight')
        sgd_momentum_step(store, 1.0, TrainConfig(weight_decay=0.001))
        self.assertAlmostEqual(float(store['p'].value[0]), 0.998)

    def test_no_decay_on_biases_and_batch_norm(self):
        for kind in ('bias', 'bn_gamma', 'bn_beta'):
            store = store_with(kind)
            sgd_momentum_step(store, 1.0, TrainConfig(weight_decay=0.001))
            self.assertEqual(float(store['p'].value[0]), 1.0, kind)

    def test_momentum_accumulates(self):
        store = store_with('bias', 0.0)
        config = TrainConfig(momentum=0.9, weight_decay=0)
        for _ in range(2):
            store['p'].grad[...] = 1.0
            sgd_momentum_step(store, 0.1, config)
        # 0.1 * (1 + 1.9)
        self.assertAlmostEqual(float(store['p'].value[0]), -0.29)
        self.assertAlmostEqual(float(store['p'].momentum[0]), -0.19)

    def test_gradients_cleared(self):
        store = store_with('conv_weight')
        store['p'].grad[...] = 3.0
        sgd_momentum_step(store, 0.1, TrainConfig())
        self.assertEqual(float(store['p'].grad[0]), 0.0)

    def test_rate_must_be_positive(self):
        for rate in (0.0, -0.1):
            with self.assertRaises(MrcnError):
                sgd_momentum_step(store_with('bias'), rate, TrainConfig())
