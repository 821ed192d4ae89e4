"""
Accuracy metrics over sparsely labeled rasters.

``counts[i, j]`` is the number of labeled pixels of reference class i that
were predicted as class j. AA averages the per-class precision term, which
divides by the prediction marginal (column sum); ``denominator='reference'``
switches it to the recall form (row sum).
"""
import logging
from dataclasses import dataclass

import numpy as np

from utils.exceptions import DataError, ShapeError
from utils.raster import UNLABELED

logger = logging.getLogger(__name__)

AA_DENOMINATORS = ('prediction', 'reference')


@dataclass
class ConfusionMatrix:
    counts: np.ndarray

    @classmethod
    def empty(cls, num_classes):
        return cls(np.zeros((num_classes, num_classes), dtype=np.int64))

    @property
    def num_classes(self):
        return self.counts.shape[0]

    @property
    def total(self):
        return int(self.counts.sum())

    def __add__(self, other):
        if other.counts.shape != self.counts.shape:
            raise ShapeError(f'cannot merge {self.num_classes}- and {other.num_classes}-class matrices')
        return ConfusionMatrix(self.counts + other.counts)

    def accumulate(self, pred, ref):
        accumulate(self, pred, ref)
        return self


def accumulate(cm, pred, ref):
    """Add one count per labeled pixel of ``ref`` (255 = unlabeled)."""
    pred = np.asarray(pred)
    ref = np.asarray(ref)
    if pred.shape != ref.shape:
        raise ShapeError(f'prediction dims {pred.shape} do not match reference dims {ref.shape}')
    C = cm.num_classes
    labeled = ref != UNLABELED
    r = ref[labeled].astype(np.int64)
    p = pred[labeled].astype(np.int64)
    if r.size and r.max() >= C:
        raise DataError(f'reference value {int(r.max())} out of range for {C} classes')
    if p.size and p.max() >= C:
        raise DataError(f'prediction value {int(p.max())} out of range for {C} classes')
    cm.counts += np.bincount(r * C + p, minlength=C * C).reshape(C, C)
    return cm


def _require_counts(cm):
    if cm.total == 0:
        raise DataError('empty evaluation: no labeled pixels in the reference')
    return cm.counts.astype(np.float64)


def _ratio(numerator, denominator):
    """Elementwise division with 0 where the denominator is 0."""
    out = np.zeros_like(numerator, dtype=np.float64)
    np.divide(numerator, denominator, out=out, where=denominator > 0)
    return out


def oa(cm):
    counts = _require_counts(cm)
    return float(np.trace(counts) / counts.sum())


def kappa(cm):
    counts = _require_counts(cm)
    n = counts.sum()
    chance = float(counts.sum(axis=1) @ counts.sum(axis=0))
    denominator = n * n - chance
    if denominator == 0:
        value = 1.0 if np.trace(counts) == n else 0.0
        logger.warning(f'Kappa is degenerate (single class in reference and prediction), reporting {value}')
        return value
    return float((n * np.trace(counts) - chance) / denominator)


def precision(cm):
    """Per class n_ii / n_{+i} over the prediction marginal."""
    counts = _require_counts(cm)
    return _ratio(np.diag(counts), counts.sum(axis=0))


def recall(cm):
    counts = _require_counts(cm)
    return _ratio(np.diag(counts), counts.sum(axis=1))


def per_class_f1(cm):
    p, r = precision(cm), recall(cm)
    return _ratio(2 * p * r, p + r)


def aa(cm, denominator='prediction'):
    if denominator not in AA_DENOMINATORS:
        raise ValueError(f'denominator must be one of {AA_DENOMINATORS}, got {denominator!r}')
    terms = precision(cm) if denominator == 'prediction' else recall(cm)
    return float(terms.mean())


def f1(cm):
    return float(per_class_f1(cm).mean())


def summary(cm, aa_denominator='prediction'):
    return {
        'oa': oa(cm),
        'kappa': kappa(cm),
        'aa': aa(cm, aa_denominator),
        'f1': f1(cm),
    }
