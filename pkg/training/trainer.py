"""
Training loop: epochs over a fixed patch set, validation OA every epoch and
early stopping on the best validation accuracy.
"""
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from networks.inference import DEFAULT_WINDOW, predict_tile
from training.optimizer import lr_at_epoch, sgd_momentum_step
from utils.exceptions import NumericError
from utils.raster import UNLABELED
from utils.tensors import Rng

logger = logging.getLogger(__name__)


@dataclass
class EpochStats:
    epoch: int
    lr: float
    loss: float
    train_oa: float
    val_oa: float = 0.0


@dataclass
class EarlyStopState:
    """Best validation OA so far and the parameters that reached it."""
    best_val_oa: float = -1.0
    best_epoch: int = 0
    best_checkpoint: dict = None
    stale_epochs: int = 0

    def update(self, epoch, val_oa, store):
        """Keep the latest epoch with the best OA; returns True when it was kept."""
        self.stale_epochs = 0 if val_oa > self.best_val_oa else self.stale_epochs + 1
        if val_oa < self.best_val_oa:
            return False
        self.best_val_oa = val_oa
        self.best_epoch = epoch
        self.best_checkpoint = store.snapshot()
        return True


@dataclass
class FitResult:
    network: object
    history: list = field(default_factory=list)
    best_epoch: int = 0
    best_val_oa: float = 0.0
    stopped_early: bool = False


def _correct_and_labeled(scores, labels):
    labeled = labels != UNLABELED
    predicted = np.argmax(scores, axis=1)[:, None]
    return int(np.count_nonzero((predicted == labels) & labeled)), int(np.count_nonzero(labeled))


def epoch_rng(seed, epoch):
    """Shuffle stream of one epoch, derived from the run seed and the epoch number."""
    return Rng(seed, _sequence=np.random.SeedSequence([seed, epoch]))


def train_epoch(network, patches, config, rate, rng):
    """
    One pass over ``patches`` in ceil(len / batch_size) shuffled mini-batches.

    With ``rate == 0`` the batches are only forwarded and back-propagated;
    parameters stay untouched.

    Returns:
        tuple: (mean batch loss, train OA over the labeled pixels seen)
    """
    order = rng.generator.permutation(len(patches))
    batches = math.ceil(len(patches) / config.batch_size)
    store = network.store
    losses = []
    correct = labeled = 0
    for b in range(batches):
        batch = patches.subset(order[b * config.batch_size:(b + 1) * config.batch_size])
        store.zero_grad()
        out = network.run(batch.pan, batch.ms, batch.target, batch.mask, training=True)
        loss = float(out['loss'])
        if not math.isfinite(loss):
            raise NumericError(f'loss became {loss} in batch {b + 1} of {batches}')
        network.graph.backward('loss')
        if rate > 0:
            sgd_momentum_step(store, rate, config)
        else:
            store.zero_grad()
        losses.append(loss)
        c, n = _correct_and_labeled(out['scores'], batch.labels)
        correct += c
        labeled += n
    return float(np.mean(losses)), (correct / labeled if labeled else 0.0)


def patch_accuracy(network, patches, batch_size):
    """OA of ``network`` over the labeled pixels of a patch set (inference mode)."""
    correct = labeled = 0
    for start in range(0, len(patches), batch_size):
        batch = patches.subset(slice(start, start + batch_size))
        scores = network.predict_scores(batch.pan, batch.ms)
        c, n = _correct_and_labeled(scores, batch.labels)
        correct += c
        labeled += n
    return correct / labeled if labeled else 0.0


def tile_accuracy(network, scenes, window=DEFAULT_WINDOW):
    """OA over every labeled pixel of whole tiles, by tiled prediction."""
    correct = labeled = 0
    for scene in scenes:
        _, labels = predict_tile(network, scene.pan, scene.ms, window=window)
        mask = scene.labels != UNLABELED
        correct += int(np.count_nonzero((labels == scene.labels) & mask))
        labeled += int(np.count_nonzero(mask))
    return correct / labeled if labeled else 0.0


def fit(network, train_patches, val_patches, config, val_scenes=None, on_epoch=None):
    """
    Train ``network`` in place for at most ``config.max_epochs`` epochs.

    With early stopping the parameters of the last epoch with the best
    validation OA are restored at the end; otherwise the final parameters are
    kept. ``on_epoch`` is called with every ``EpochStats``.
    """
    state = EarlyStopState()
    result = FitResult(network=network)
    use_tiles = config.full_tile_validation and val_scenes
    for index in range(config.max_epochs):
        epoch = index + 1
        rate = lr_at_epoch(config, index)
        loss, train_oa = train_epoch(network, train_patches, config, rate, epoch_rng(config.seed, epoch))
        if use_tiles:
            val_oa = tile_accuracy(network, val_scenes)
        else:
            val_oa = patch_accuracy(network, val_patches, config.batch_size)

        stats = EpochStats(epoch=epoch, lr=rate, loss=loss, train_oa=train_oa, val_oa=val_oa)
        result.history.append(stats)
        logger.info(
            f'epoch {epoch:>4}/{config.max_epochs} lr {rate:.6g} loss {loss:.5f} '
            f'train OA {train_oa:.4f} val OA {val_oa:.4f}'
        )
        if on_epoch:
            on_epoch(stats)

        state.update(epoch, val_oa, network.store)
        if config.early_stopping and config.patience and state.stale_epochs >= config.patience:
            logger.info(f'No validation improvement for {config.patience} epoch(s), stopping at epoch {epoch}')
            result.stopped_early = True
            break

    if config.early_stopping:
        network.store.restore(state.best_checkpoint)
        result.best_epoch = state.best_epoch
        result.best_val_oa = state.best_val_oa
    else:
        last = result.history[-1]
        result.best_epoch = last.epoch
        result.best_val_oa = last.val_oa
    logger.info(f'Finished training: kept epoch {result.best_epoch} (val OA {result.best_val_oa:.4f})')
    return result
