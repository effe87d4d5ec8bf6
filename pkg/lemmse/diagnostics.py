"""
Analysis instruments for the estimators: measurement and patch densities,
mass concentration, patchwork source maps, the signal/noise decomposition of
patch distances for a pre-inverse, pixel-wise variance studies and PSNR.
"""

import logging
from typing import NamedTuple

import numpy as np
import pandas as pd
from scipy import linalg
from scipy.special import logsumexp

from .errors import ConfigError, DenseLimitExceeded, InsufficientRetention, ShapeMismatch
from .estimators import NoiseModel, le_mmse
from .grid import Dataset, PatchGeometry, as_array, patch_index
from .operators import synthesize_measurement
from .util import tolerances

logger = logging.getLogger(__name__)


class DensityReport(NamedTuple):
    #: scalar for whole measurements, (N,) per patch
    neg_log_density: object
    sigma: float
    dataset_size: int
    #: per-patch map without the 1/(|D| N) count factor
    unnormalized: object = None


class TradeoffReport(NamedTuple):
    #: one row per (n_prime, n, image) with signal and noise terms
    table: pd.DataFrame
    #: per output pixel, the smallest signal term over the requested pairs
    min_signal: pd.Series
    mean_noise: float


def _positive_sigma(noise):
    sigma = float(getattr(noise, "sigma", noise))
    if not sigma > 0:
        raise ConfigError("density diagnostics need sigma > 0, got {}".format(sigma))
    return sigma


def neg_log_measurement_density(y, forward, dataset, noise):
    """
    -log p(y) for the mixture p(y) = 1/|D| sum_x N(y; Ax, sigma^2 I).
    """
    sigma = _positive_sigma(noise)
    y = as_array(y)
    if y.shape != tuple(dataset.shape):
        raise ShapeMismatch(
            "measurement of shape {} for images of shape {}".format(y.shape, dataset.shape)
        )
    residual = forward.apply(dataset.values) - y[None]
    exponents = -np.sum(residual.reshape(len(dataset), -1) ** 2, axis=1) / (2 * sigma**2)
    dim = y.size
    value = 0.5 * dim * np.log(2 * np.pi * sigma**2) + np.log(len(dataset)) - logsumexp(exponents)
    return DensityReport(float(value), sigma, len(dataset))


def patch_density_map(y, forward, pre_inverse, dataset, geom, noise, report=None):
    """
    Per-pixel patch negative log-density: minus the log of the LE-MMSE weight
    normalizer, with and without the 1/(|D| N) count factor.

    :param report: an LE-MMSE EstimateReport for y, computed if not given
    """
    sigma = _positive_sigma(noise)
    if report is None:
        report = le_mmse(y, forward, pre_inverse, dataset, geom, NoiseModel(sigma), top_k=0)
    lognorm = np.asarray(report.per_pixel_log_normalizer, dtype=np.float64)
    npix = lognorm.size
    normalized = -(lognorm - np.log(len(dataset) * npix))
    return DensityReport(normalized, sigma, len(dataset), -lognorm)


def _retained(report):
    if not report.has_top_k:
        raise InsufficientRetention("the report kept no top-k weights")
    return report.top_k_weights


def mass_concentration(report, q=0.99):
    """
    Per pixel, the number of largest weights needed to reach a fraction q of
    the mass.

    :raises InsufficientRetention: if the retained weights sum to less than q
        somewhere (for q = 1, if anything was dropped)
    """
    if not 0 < q <= 1:
        raise ConfigError("mass fraction must lie in (0, 1], got {}".format(q))
    weights = _retained(report)
    mass = weights.sum(axis=-1)
    need = q - 1e-12 if q < 1 else 1 - 1e-9
    if np.any(mass < need):
        raise InsufficientRetention(
            "top-{} weights hold only {:.6g} of the mass somewhere (need {})".format(
                weights.shape[-1], mass.min(), q
            )
        )
    if q == 1:
        return np.sum(weights > 0, axis=-1)
    reached = np.cumsum(weights, axis=-1) >= q - 1e-12
    return np.argmax(reached, axis=-1) + 1


def patchwork_source_map(report, threshold=0.5):
    """
    Per pixel, the id of the dataset image whose single best component carries
    at least ``threshold`` of the weight, -1 where none does.
    """
    weights = _retained(report)
    if weights.shape[-1] == 0:
        return np.full(weights.shape[0], -1)
    return np.where(weights[:, 0] >= threshold, report.top_k_ids[:, 0], -1)


def _pinv_rows(pre_inverse, index, n, cache):
    if n not in cache:
        rows = pre_inverse.rows(index[n])
        cache[n] = (rows, linalg.pinv(rows, rtol=np.sqrt(tolerances.rank)))
    return cache[n]


def pre_inverse_tradeoff(forward, pre_inverse, geom, x_bar, images, noise, pairs=None):
    """
    Expected squared patch distance split into a signal term
    |Q_n^+ Delta_{n',n}(x_bar, x)|^2 and a noise term
    sigma^2 tr(Q_n^+ Q_n' Q_n'^T Q_n^+T), where Delta is the difference of the
    patches of B A x_bar at n' and B A x at n.

    :param images: Dataset, or a single image
    :param pairs: iterable of (n_prime, n); defaults to (n, n) for every pixel
    """
    if not isinstance(geom, PatchGeometry):
        geom = PatchGeometry(geom)
    x_bar = as_array(x_bar)
    if not isinstance(images, Dataset):
        images = Dataset([images])
    channels, height, width = x_bar.shape
    npix = height * width
    if npix > tolerances.dense_limit:
        raise DenseLimitExceeded(
            "the tradeoff needs Q_n^+ explicitly, N={} > {}".format(npix, tolerances.dense_limit)
        )
    sigma = float(getattr(noise, "sigma", noise))
    if pairs is None:
        pairs = [(n, n) for n in range(npix)]
    index = patch_index(height, width, geom.side)

    def patch_stack(values, n):
        # (..., C, P) window around n
        return values.reshape(values.shape[:-3] + (channels, npix))[..., index[n]]

    reference = pre_inverse.apply(forward.apply(x_bar))
    means = pre_inverse.apply(forward.apply(images.values))
    cache = {}
    records = []
    for n_prime, n in pairs:
        rows_prime, _ = _pinv_rows(pre_inverse, index, n_prime, cache)
        _, pinv = _pinv_rows(pre_inverse, index, n, cache)
        noise_term = sigma**2 * channels * np.sum((pinv @ rows_prime) ** 2)
        delta = patch_stack(reference, n_prime)[None] - patch_stack(means, n)
        signal = np.sum((delta @ pinv.T) ** 2, axis=(-2, -1))
        for image, s in zip(images.ids, signal):
            records.append((n_prime, n, int(image), float(s), float(noise_term)))
    table = pd.DataFrame.from_records(
        records, columns=["n_prime", "n", "image", "signal", "noise"]
    )
    return TradeoffReport(
        table,
        table.groupby("n_prime")["signal"].min(),
        float(table["noise"].mean()) if len(table) else 0.0,
    )


def variance_study(x_bar, forward, estimate, noise, trials, seed):
    """
    Run an estimator on independent noise draws of A x_bar.

    :param estimate: callable mapping a measurement to an EstimateReport or image
    :param trials: number of draws, at least 2
    :param seed: root seed; draw k uses the k-th spawned child sequence
    :returns: (mean, variance) per pixel, each (C, H, W)
    """
    if trials < 2:
        raise ConfigError("a variance study needs at least two trials, got {}".format(trials))
    sigma = float(getattr(noise, "sigma", noise))
    outputs = []
    for child in np.random.SeedSequence(seed).spawn(trials):
        y = synthesize_measurement(x_bar, forward, sigma, np.random.default_rng(child))
        result = estimate(y)
        outputs.append(as_array(getattr(result, "reconstruction", result)))
    outputs = np.stack(outputs)
    return outputs.mean(axis=0), outputs.var(axis=0)


def psnr(a, b, peak=1.0):
    """
    Peak signal-to-noise ratio in dB; inf when the images are identical.
    """
    a, b = as_array(a), as_array(b)
    if a.shape != b.shape:
        raise ShapeMismatch("cannot compare shapes {} and {}".format(a.shape, b.shape))
    if not peak > 0:
        raise ConfigError("peak must be positive, got {}".format(peak))
    mse = np.mean((a - b) ** 2)
    if mse == 0:
        return np.inf
    return float(10 * np.log10(peak**2 / mse))


def nearest_training_image(y, forward, pre_inverse, dataset):
    """
    The dataset image whose B A x is closest to B y in the metric of
    (B B^T)^+, i.e. the sigma -> 0 limit of the MMSE estimator.

    :returns: (image id, squared Mahalanobis distance)
    """
    whitening = pre_inverse.whitening()
    u = whitening.coords(pre_inverse.apply(as_array(y)))
    coords = whitening.coords(pre_inverse.apply(forward.apply(dataset.values)))
    dist = np.sum((coords - u[None]) ** 2, axis=1)
    best = int(np.argmin(dist))
    return best, float(dist[best])
