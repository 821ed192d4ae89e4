"""
Mini-batch SGD with classical momentum, L2 weight decay and a stepwise
learning-rate schedule.
"""
import logging
from dataclasses import dataclass, field

import numpy as np

from utils.exceptions import ConfigError, MrcnError

logger = logging.getLogger(__name__)

# only convolution weights are decayed; biases and batch norm are exempt
DECAYED_KINDS = ('conv_weight',)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.01
    momentum: float = 0.9
    batch_size: int = 32
    max_epochs: int = 240
    weight_decay: float = 0.001
    lr_step_epochs: tuple = field(default=(60, 180))
    lr_factor: float = 0.1
    early_stopping: bool = True
    patience: int = 0
    seed: int = 0
    threads: int = 1
    full_tile_validation: bool = False

    def __post_init__(self):
        object.__setattr__(self, 'lr_step_epochs', tuple(sorted(int(e) for e in self.lr_step_epochs)))
        if self.learning_rate <= 0:
            raise ConfigError(f'learning_rate must be > 0, got {self.learning_rate}')
        if not 0 <= self.momentum < 1:
            raise ConfigError(f'momentum must be in [0, 1), got {self.momentum}')
        if self.batch_size < 1:
            raise ConfigError(f'batch_size must be >= 1, got {self.batch_size}')
        if self.max_epochs < 1:
            raise ConfigError(f'max_epochs must be >= 1, got {self.max_epochs}')
        if self.weight_decay < 0:
            raise ConfigError(f'weight_decay must be >= 0, got {self.weight_decay}')
        if not 0 < self.lr_factor < 1:
            raise ConfigError(f'lr_factor must be in (0, 1), got {self.lr_factor}')
        if any(e < 1 for e in self.lr_step_epochs):
            raise ConfigError(f'lr_step_epochs must be >= 1, got {list(self.lr_step_epochs)}')
        if self.patience < 0:
            raise ConfigError(f'patience must be >= 0, got {self.patience}')
        if self.threads < 1:
            raise ConfigError(f'threads must be >= 1, got {self.threads}')


def lr_at_epoch(config, epoch):
    """
    Learning rate for the 0-based ``epoch``: the initial rate times
    ``lr_factor`` once per step boundary already reached.
    """
    passed = sum(1 for step in config.lr_step_epochs if epoch >= step)
    return config.learning_rate * config.lr_factor ** passed


def sgd_momentum_step(store, rate, config):
    """
    One update of every parameter in ``store``, then clear the gradients.

    g' = g + 2*lambda*w for convolution weights, v <- alpha*v - rate*g', w <- w + v.
    """
    if rate <= 0:
        raise MrcnError(f'learning rate must be > 0, got {rate}')
    decay = 2.0 * config.weight_decay
    for param in store.params.values():
        grad = param.grad
        if decay and param.kind in DECAYED_KINDS:
            grad = grad + decay * param.value
        param.momentum *= config.momentum
        param.momentum -= np.asarray(rate, dtype=store.dtype) * grad
        param.value += param.momentum
    store.zero_grad()
    return store
