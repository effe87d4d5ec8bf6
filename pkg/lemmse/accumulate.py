"""
Streaming log-sum-exp reductions.

A WeightedMeanAccumulator holds (m, s, v, count) such that the weighted sum
seen so far is exp(m) * (s, v): m is the running maximum log-weight, so every
stored exponential is at most 1. States are mergeable, which lets dataset
chunks be reduced independently and combined afterwards.
"""

import numpy as np

from .errors import AllWeightsOffSupport, DimensionMismatch


def _rescale(old_max, new_max):
    """exp(old_max - new_max), 0 where nothing has been seen yet"""
    with np.errstate(invalid="ignore"):
        return np.where(np.isfinite(old_max), np.exp(old_max - new_max), 0.0)


class WeightedMeanAccumulator(object):
    def __init__(self, dim, batch_shape=()):
        """
        :param dim: length of the values being averaged
        :param batch_shape: shape of independent reductions carried in parallel
            (e.g. one per output pixel)
        """
        self.dim = int(dim)
        self.batch_shape = tuple(batch_shape)
        self.running_max = np.full(self.batch_shape, -np.inf)
        self.weight_sum = np.zeros(self.batch_shape)
        self.value_sum = np.zeros(self.batch_shape + (self.dim,))
        self.count = np.zeros(self.batch_shape, dtype=np.int64)

    def __repr__(self):
        return "WeightedMeanAccumulator(dim={}, batch_shape={}, count={})".format(
            self.dim, self.batch_shape, int(np.sum(self.count))
        )

    @classmethod
    def from_state(cls, running_max, weight_sum, value_sum, count):
        value_sum = np.asarray(value_sum, dtype=np.float64)
        acc = cls(value_sum.shape[-1], value_sum.shape[:-1])
        acc.running_max = np.asarray(running_max, dtype=np.float64).reshape(acc.batch_shape)
        acc.weight_sum = np.asarray(weight_sum, dtype=np.float64).reshape(acc.batch_shape)
        acc.value_sum = value_sum.copy()
        acc.count = np.asarray(count, dtype=np.int64).reshape(acc.batch_shape)
        return acc

    def accumulate(self, log_weight, value):
        """
        Insert one component. A log-weight of -inf is ignored.

        :param log_weight: scalar or batch-shaped extended real
        :param value: (dim,) or batch_shape + (dim,) array
        """
        log_weight = np.broadcast_to(np.asarray(log_weight, dtype=np.float64), self.batch_shape)
        value = np.asarray(value, dtype=np.float64)
        return self.add(log_weight[None], value[None])

    def add(self, log_weights, values):
        """
        Insert a block of components.

        :param log_weights: (items,) + batch_shape
        :param values: (items, dim), shared across the batch, or
            (items,) + batch_shape + (dim,)
        """
        log_weights = np.asarray(log_weights, dtype=np.float64)
        values = np.asarray(values, dtype=np.float64)
        if values.shape[-1] != self.dim:
            raise DimensionMismatch(
                "expected values of length {}, got shape {}".format(self.dim, values.shape)
            )
        if log_weights.shape[1:] != self.batch_shape or values.shape[0] != log_weights.shape[0]:
            raise DimensionMismatch(
                "log-weights of shape {} do not match batch {} and {} values".format(
                    log_weights.shape, self.batch_shape, values.shape[0]
                )
            )
        if log_weights.shape[0] == 0:
            return self
        new_max = np.maximum(self.running_max, log_weights.max(axis=0))
        scale = _rescale(self.running_max, new_max)
        with np.errstate(invalid="ignore"):
            weights = np.where(np.isneginf(log_weights), 0.0, np.exp(log_weights - new_max))
        self.weight_sum = self.weight_sum * scale + weights.sum(axis=0)
        if values.ndim == 2:
            contribution = np.tensordot(weights, values, axes=(0, 0))
        else:
            contribution = np.einsum("i...,i...d->...d", weights, values)
        self.value_sum = self.value_sum * scale[..., None] + contribution
        self.running_max = new_max
        self.count += np.sum(~np.isneginf(log_weights), axis=0)
        return self

    def add_reduced(self, block_max, block_weight_sum, block_value_sum, block_count):
        """Insert a block that was already reduced relative to its own maximum"""
        return self.merge(
            WeightedMeanAccumulator.from_state(
                block_max, block_weight_sum, block_value_sum, block_count
            )
        )

    def merge(self, other):
        if other.dim != self.dim or other.batch_shape != self.batch_shape:
            raise DimensionMismatch("cannot merge accumulators of different shapes")
        new_max = np.maximum(self.running_max, other.running_max)
        a = _rescale(self.running_max, new_max)
        b = _rescale(other.running_max, new_max)
        self.weight_sum = self.weight_sum * a + other.weight_sum * b
        self.value_sum = self.value_sum * a[..., None] + other.value_sum * b[..., None]
        self.running_max = new_max
        self.count = self.count + other.count
        return self

    @property
    def log_normalizer(self):
        """log of the total (unnormalized) weight"""
        with np.errstate(divide="ignore"):
            return self.running_max + np.log(self.weight_sum)

    def finalize(self):
        """
        The weighted mean.

        :raises AllWeightsOffSupport: if some reduction received no finite weight
        """
        if np.any(self.weight_sum <= 0):
            raise AllWeightsOffSupport(
                "{} of {} reductions saw only off-support components".format(
                    int(np.sum(self.weight_sum <= 0)), max(1, int(np.prod(self.batch_shape)))
                )
            )
        return self.value_sum / self.weight_sum[..., None]


class TopK(object):
    """
    Keeps the k largest log-weights per batch entry, with the dataset image id
    and source pixel of each. ``k=None`` retains everything.
    """

    def __init__(self, k, batch_shape=()):
        self.k = k
        self.batch_shape = tuple(batch_shape)
        self.log_weights = np.zeros(self.batch_shape + (0,))
        self.ids = np.zeros(self.batch_shape + (0,), dtype=np.int64)
        self.sources = np.zeros(self.batch_shape + (0,), dtype=np.int64)

    def add(self, log_weights, ids, sources):
        """
        :param log_weights: (items,) + batch_shape
        :param ids: (items,) image ids
        :param sources: (items,) or (items,) + batch_shape source pixels
        """
        if self.k == 0:
            return self
        log_weights = np.moveaxis(np.asarray(log_weights, dtype=np.float64), 0, -1)
        shape = log_weights.shape
        ids = np.asarray(ids, dtype=np.int64)
        sources = np.asarray(sources, dtype=np.int64)
        if sources.ndim == 1:
            sources = np.broadcast_to(sources, shape)
        else:
            sources = np.moveaxis(sources, 0, -1)
        self.log_weights = np.concatenate([self.log_weights, log_weights], axis=-1)
        self.ids = np.concatenate([self.ids, np.broadcast_to(ids, shape)], axis=-1)
        self.sources = np.concatenate([self.sources, sources], axis=-1)
        self._truncate()
        return self

    def _truncate(self):
        if self.k is None or self.log_weights.shape[-1] <= self.k:
            return
        keep = np.argpartition(-self.log_weights, self.k - 1, axis=-1)[..., : self.k]
        self.log_weights = np.take_along_axis(self.log_weights, keep, axis=-1)
        self.ids = np.take_along_axis(self.ids, keep, axis=-1)
        self.sources = np.take_along_axis(self.sources, keep, axis=-1)

    def merge(self, other):
        self.log_weights = np.concatenate([self.log_weights, other.log_weights], axis=-1)
        self.ids = np.concatenate([self.ids, other.ids], axis=-1)
        self.sources = np.concatenate([self.sources, other.sources], axis=-1)
        self._truncate()
        return self

    def finalize(self, log_normalizer):
        """
        Normalized retained weights, sorted descending (ties by image id, then
        source pixel).

        :returns: (ids, sources, weights), each batch_shape + (k,)
        """
        log_normalizer = np.asarray(log_normalizer, dtype=np.float64)
        with np.errstate(invalid="ignore", over="ignore"):
            weights = np.exp(self.log_weights - log_normalizer[..., None])
        weights = np.nan_to_num(weights, nan=0.0)
        order = np.lexsort((self.sources, self.ids, -weights), axis=-1)
        return (
            np.take_along_axis(self.ids, order, axis=-1),
            np.take_along_axis(self.sources, order, axis=-1),
            np.take_along_axis(weights, order, axis=-1),
        )
