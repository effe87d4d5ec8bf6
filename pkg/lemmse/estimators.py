"""
Closed-form constrained MMSE estimators over a finite dataset.

Every estimator is a Gaussian-weighted average of dataset quantities:

* ``mmse``: whole images x, weighted by N(By; BAx, sigma^2 BB^T)
* ``augmented_mmse``: the same over every cyclic shift of every image
* ``e_mmse``: shifted images T_g x, weighted by N(T_g^-1 By; BAx, sigma^2 BB^T)
* ``le_mmse``: single pixels x[n], weighted per output pixel n' by
  N(Q_n' y; Q_n A x, sigma^2 Q_n Q_n^T), restricted to the minimal-rank
  stratum that contains the query patch
* ``smoothed_le_mmse``: le_mmse averaged over Gaussian input perturbations

Log-weights are reduced with mergeable log-sum-exp accumulators over dataset
chunks, so memory stays within the configured budget and chunks can run on a
thread pool.
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor, as_completed
from typing import Callable, NamedTuple

import numpy as np
from scipy import fft
from threadpoolctl import threadpool_limits
from tqdm import tqdm

from .accumulate import TopK, WeightedMeanAccumulator
from .errors import AllWeightsOffSupport, ConfigError, ShapeMismatch
from .grid import ImageGrid, PatchGeometry, Translation, as_array, roll
from .operators import build_q_matrices
from .util import tolerances

logger = logging.getLogger(__name__)

LOG_2PI = np.log(2 * np.pi)


class NoiseModel(NamedTuple):
    sigma: float

    @property
    def is_zero_limit(self):
        return self.sigma < tolerances.sigma_floor

    def check(self):
        if not (self.sigma >= 0 and np.isfinite(self.sigma)):
            raise ConfigError("noise sigma must be finite and >= 0, got {}".format(self.sigma))
        return self


class EstimateReport(object):
    """
    An estimate plus the per-pixel quantities the diagnostics need.

    :param reconstruction: ImageGrid
    :param per_pixel_log_normalizer: (N,) log of the unnormalized weight sum,
        including Gaussian normalizing constants
    :param top_k_ids: (N, k) image ids of the largest weights, or None
    :param top_k_sources: (N, k) source pixel of each retained component
    :param top_k_weights: (N, k) normalized weights, descending
    :param stratum_rank: (N,) rank of the stratum used at each pixel (LE only)
    :param stderr: per-pixel Monte-Carlo standard error (smoothed only)
    """

    def __init__(
        self,
        reconstruction,
        per_pixel_log_normalizer,
        top_k_ids=None,
        top_k_sources=None,
        top_k_weights=None,
        stratum_rank=None,
        stderr=None,
        metadata=None,
    ):
        self.reconstruction = reconstruction
        self.per_pixel_log_normalizer = per_pixel_log_normalizer
        self.top_k_ids = top_k_ids
        self.top_k_sources = top_k_sources
        self.top_k_weights = top_k_weights
        self.stratum_rank = stratum_rank
        self.stderr = stderr
        self.metadata = dict(metadata or {})

    def __repr__(self):
        return "EstimateReport({}, {})".format(
            self.metadata.get("estimator", "?"), self.reconstruction
        )

    @property
    def has_top_k(self):
        return self.top_k_weights is not None

    def retained_mass(self):
        """(N,) total normalized weight kept in the top-k lists"""
        if not self.has_top_k:
            return np.zeros(self.reconstruction.size)
        return self.top_k_weights.sum(axis=-1)

    def stratum_counts(self):
        if self.stratum_rank is None:
            return {}
        ranks, counts = np.unique(self.stratum_rank, return_counts=True)
        return {int(r): int(c) for r, c in zip(ranks, counts)}

    def summary(self):
        """JSON-ready aggregate view"""
        lognorm = self.per_pixel_log_normalizer
        finite = lognorm[np.isfinite(lognorm)]
        out = dict(self.metadata)
        out["shape"] = list(self.reconstruction.shape)
        out["log_normalizer"] = {
            "min": float(finite.min()) if finite.size else None,
            "max": float(finite.max()) if finite.size else None,
            "mean": float(finite.mean()) if finite.size else None,
        }
        out["stratum_counts"] = self.stratum_counts()
        if self.has_top_k:
            mass = self.retained_mass()
            out["top_k"] = {
                "k": int(self.top_k_weights.shape[-1]),
                "min_retained_mass": float(mass.min()),
            }
        return out


class Schedule(object):
    """
    How dataset chunks are sized and executed.

    In deterministic mode the chunk size depends only on the memory budget and
    partial results are merged in chunk order, so outputs are bit-identical
    across runs and thread counts.
    """

    def __init__(
        self,
        threads=1,
        deterministic=False,
        memory_budget_mib=tolerances.memory_budget_mib,
        progress=None,
    ):
        self.threads = max(1, int(threads))
        self.deterministic = bool(deterministic)
        self.memory_budget_mib = float(memory_budget_mib)
        if progress is None:
            progress = logger.isEnabledFor(logging.INFO)
        self.progress = progress

    def __repr__(self):
        return "Schedule(threads={}, deterministic={}, memory_budget_mib={})".format(
            self.threads, self.deterministic, self.memory_budget_mib
        )

    def chunks(self, count, bytes_per_item):
        budget = self.memory_budget_mib * 2**20
        size = max(1, int(budget // max(1, bytes_per_item)))
        if not self.deterministic and self.threads > 1:
            size = min(size, max(1, math.ceil(count / self.threads)))
        return [np.arange(i, min(count, i + size)) for i in range(0, count, size)]

    def map(self, func, chunks, desc=None):
        """Yield func(chunk) for every chunk"""
        if self.threads == 1 or len(chunks) == 1:
            for chunk in tqdm(chunks, desc=desc, disable=not self.progress):
                yield func(chunk)
            return
        with threadpool_limits(limits=1, user_api="blas"):
            with ThreadPoolExecutor(max_workers=self.threads) as executor:
                if self.deterministic:
                    results = executor.map(func, chunks)
                else:
                    futures = [executor.submit(func, chunk) for chunk in chunks]
                    results = (f.result() for f in as_completed(futures))
                for result in tqdm(results, total=len(chunks), desc=desc, disable=not self.progress):
                    yield result


class _Block(NamedTuple):
    """Squared Mahalanobis distances for one dataset chunk"""

    #: (items,) + batch, inf for off-support components
    mahal: np.ndarray
    #: log normalizing constant, scalar or broadcastable to mahal
    const: object
    #: (items,) image ids
    ids: np.ndarray
    #: (items,) or (items,) + batch source indices
    sources: np.ndarray
    #: maps weights shaped like mahal to the batch + (dim,) weighted sum
    contribute: Callable


def _log_weights(block, sigma, threshold):
    mahal = block.mahal
    if threshold is not None:
        return np.where(mahal <= threshold, 0.0, -np.inf)
    with np.errstate(invalid="ignore"):
        return np.where(np.isinf(mahal), -np.inf, block.const - mahal / (2 * sigma**2))


def _reduce(evaluate, chunks, noise, dim, batch_shape, top_k, schedule, desc):
    """
    Run evaluate over every chunk and merge the partial log-sum-exp states.

    :returns: (accumulator, TopK, zero_noise_threshold)
    """
    threshold = None
    if noise.is_zero_limit:
        closest = np.full(batch_shape, np.inf)
        for block_min in schedule.map(lambda c: evaluate(c).mahal.min(axis=0), chunks, desc):
            closest = np.minimum(closest, block_min)
        if np.any(np.isinf(closest)):
            raise AllWeightsOffSupport("no on-support component in the zero-noise limit")
        threshold = closest + tolerances.tie

    def work(chunk):
        block = evaluate(chunk)
        log_weights = _log_weights(block, noise.sigma, threshold)
        block_max = log_weights.max(axis=0)
        with np.errstate(invalid="ignore"):
            weights = np.where(
                np.isneginf(log_weights), 0.0, np.exp(log_weights - block_max)
            )
        partial = WeightedMeanAccumulator.from_state(
            block_max,
            weights.sum(axis=0),
            block.contribute(weights),
            np.sum(~np.isneginf(log_weights), axis=0),
        )
        kept = TopK(top_k, batch_shape).add(log_weights, block.ids, block.sources)
        return partial, kept

    acc = WeightedMeanAccumulator(dim, batch_shape)
    kept = TopK(top_k, batch_shape)
    for partial, partial_kept in schedule.map(work, chunks, desc):
        acc.merge(partial)
        kept.merge(partial_kept)
    return acc, kept, threshold


def _measurement(y, dataset):
    y = as_array(y)
    if y.shape != tuple(dataset.shape):
        raise ShapeMismatch(
            "measurement of shape {} for images of shape {}".format(y.shape, dataset.shape)
        )
    return y


def _sq_norms(a):
    return np.einsum("...i,...i->...", a, a)


def _expand_sq_dist(a_sq, b_sq, cross):
    return np.maximum(a_sq + b_sq - 2 * cross, 0.0)


def _off_support(diff_sq, residual_sq, support_tolerance):
    return np.sqrt(residual_sq) > support_tolerance * (1.0 + np.sqrt(diff_sq))


def _fft(values):
    return fft.fft2(values, axes=(-2, -1))


def _correlate(u, c):
    """
    <u, T_g c> for every translation g, summed over channels.

    :param u: (C, H, W)
    :param c: (k, C, H, W)
    :returns: (k, H*W) with column g.index
    """
    corr = np.real(fft.ifft2(_fft(u)[None] * np.conj(_fft(c)), axes=(-2, -1)))
    return corr.sum(axis=1).reshape(len(c), -1)


def _convolve_weights(weights, x):
    """
    sum_{k,g} weights[k, g] T_g x_k

    :param weights: (k, H*W)
    :param x: (k, C, H, W)
    :returns: flat (C*H*W,)
    """
    k, channels, height, width = x.shape
    maps = _fft(weights.reshape(k, height, width))
    spectrum = (maps[:, None] * _fft(x)).sum(axis=0)
    return np.real(fft.ifft2(spectrum, axes=(-2, -1))).reshape(-1)


def _constant(noise, rank, log_pseudo_det):
    """log prefactor of N(., sigma^2 S) for rank(S)=rank"""
    if noise.is_zero_limit:
        return 0.0
    return -0.5 * rank * (LOG_2PI + 2 * np.log(noise.sigma)) - 0.5 * log_pseudo_det


def _global_report(acc, kept, shape, shifted, metadata):
    """Report for estimators with one weight per (image[, shift]) component"""
    channels, height, width = shape
    npix = height * width
    reconstruction = ImageGrid(acc.finalize().reshape(shape))
    lognorm = np.full(npix, float(acc.log_normalizer))
    ids = sources = weights = None
    if kept.k != 0:
        ids, g, weights = kept.finalize(acc.log_normalizer)
        n = np.arange(npix)[:, None]
        if shifted:
            # T_g x at pixel n reads x at n - g
            row, col = np.divmod(n, width)
            g_h, g_w = np.divmod(g[None, :], width)
            sources = ((row - g_h) % height) * width + (col - g_w) % width
        else:
            sources = np.broadcast_to(n, (npix, len(ids))).copy()
        ids = np.broadcast_to(ids, (npix, len(ids))).copy()
        weights = np.broadcast_to(weights, (npix, len(weights))).copy()
    metadata["components"] = int(acc.count)
    return EstimateReport(reconstruction, lognorm, ids, sources, weights, metadata=metadata)


def as_noise(noise):
    """Accept a NoiseModel or a bare sigma"""
    if not isinstance(noise, NoiseModel):
        noise = NoiseModel(float(noise))
    return noise.check()


def mmse(
    y,
    forward,
    pre_inverse,
    dataset,
    noise,
    top_k=tolerances.top_k,
    schedule=None,
    support_tolerance=tolerances.support,
):
    """
    Empirical MMSE: sum_x x w(x|y) with w(x|y) proportional to
    N(By; BAx, sigma^2 BB^T).

    :param y: measurement, (C, H, W)
    :param forward: forward operator A
    :param pre_inverse: pre-inverse B
    :param dataset: Dataset of clean images
    :param noise: NoiseModel
    :param top_k: number of largest weights retained (None for all)
    """
    noise = as_noise(noise)
    schedule = schedule or Schedule()
    y = _measurement(y, dataset)
    channels = dataset.shape[0]
    whitening = pre_inverse.whitening()
    z = pre_inverse.apply(y)
    u = whitening.coords(z)
    uu = u @ u
    rz = whitening.residual(z)
    z_flat = z.reshape(-1)
    const = _constant(noise, channels * whitening.rank, channels * whitening.log_pseudo_det)

    def evaluate(ids):
        x = dataset.values[ids]
        means = pre_inverse.apply(forward.apply(x))
        coords = whitening.coords(means)
        mahal = _expand_sq_dist(_sq_norms(coords), uu, coords @ u)
        if not whitening.full_rank:
            r = whitening.residual(means)
            m_flat = means.reshape(len(ids), -1)
            off = _off_support(
                _expand_sq_dist(_sq_norms(m_flat), z_flat @ z_flat, m_flat @ z_flat),
                _expand_sq_dist(_sq_norms(r), rz @ rz, r @ rz),
                support_tolerance,
            )
            mahal = np.where(off, np.inf, mahal)
        flat = x.reshape(len(ids), -1)
        return _Block(
            mahal, const, ids, np.zeros(len(ids), int), lambda w: np.tensordot(w, flat, (0, 0))
        )

    item_bytes = 8 * 6 * y.size
    chunks = schedule.chunks(len(dataset), item_bytes)
    acc, kept, _ = _reduce(evaluate, chunks, noise, y.size, (), top_k, schedule, "mmse")
    return _global_report(
        acc,
        kept,
        y.shape,
        False,
        {"estimator": "mmse", "sigma": noise.sigma, "zero_noise": noise.is_zero_limit},
    )


def _shift_evaluator(forward, pre_inverse, dataset, y, noise, support_tolerance, fast, augmented):
    """
    Distances for components indexed by (image, translation), image-major.

    With ``augmented`` the means are B A T_g x; otherwise the shifted query
    T_g^-1 B y is compared with B A x.
    """
    channels, height, width = dataset.shape
    npix = height * width
    whitening = pre_inverse.whitening()
    z = pre_inverse.apply(y)
    const = _constant(noise, channels * whitening.rank, channels * whitening.log_pseudo_det)
    shifts = np.arange(npix)

    def block(ids, mahal):
        x = dataset.values[ids]
        return _Block(
            mahal.reshape(-1),
            const,
            np.repeat(ids, npix),
            np.tile(shifts, len(ids)),
            lambda w: _convolve_weights(w.reshape(len(ids), npix), x),
        )

    if fast:
        # whitening commutes with translations: |W(T_g^-1 z - m)| = |Wz - T_g Wm|
        u = whitening.coords(z).reshape(z.shape)
        uu = _sq_norms(u.reshape(-1))
        rz = whitening.residual(z).reshape(z.shape) if not whitening.full_rank else None

        def evaluate(ids):
            means = pre_inverse.apply(forward.apply(dataset.values[ids]))
            c = whitening.coords(means).reshape(means.shape)
            mahal = _expand_sq_dist(
                _sq_norms(c.reshape(len(ids), -1))[:, None], uu, _correlate(u, c)
            )
            if rz is not None:
                r = whitening.residual(means).reshape(means.shape)
                off = _off_support(
                    _expand_sq_dist(
                        _sq_norms(means.reshape(len(ids), -1))[:, None],
                        _sq_norms(z.reshape(-1)),
                        _correlate(z, means),
                    ),
                    _expand_sq_dist(
                        _sq_norms(r.reshape(len(ids), -1))[:, None],
                        _sq_norms(rz.reshape(-1)),
                        _correlate(rz, r),
                    ),
                    support_tolerance,
                )
                mahal = np.where(off, np.inf, mahal)
            return block(ids, mahal)

        return evaluate, 8 * 12 * z.size

    if augmented:
        u = whitening.coords(z)
        uu = u @ u
        rz = whitening.residual(z)
        z_flat = z.reshape(-1)

        def evaluate(ids):
            rows = []
            for x in dataset.values[ids]:
                orbit = np.stack([roll(x, g.g_h, g.g_w) for g in Translation.group(height, width)])
                means = pre_inverse.apply(forward.apply(orbit))
                coords = whitening.coords(means)
                mahal = _expand_sq_dist(_sq_norms(coords), uu, coords @ u)
                if not whitening.full_rank:
                    r = whitening.residual(means)
                    m_flat = means.reshape(npix, -1)
                    off = _off_support(
                        _expand_sq_dist(_sq_norms(m_flat), z_flat @ z_flat, m_flat @ z_flat),
                        _expand_sq_dist(_sq_norms(r), rz @ rz, r @ rz),
                        support_tolerance,
                    )
                    mahal = np.where(off, np.inf, mahal)
                rows.append(mahal)
            return block(ids, np.stack(rows))

        return evaluate, 8 * 4 * npix * z.size

    # T_g^-1 z for every g, indexed by g
    shifted = np.stack([roll(z, -g.g_h, -g.g_w) for g in Translation.group(height, width)])
    u = whitening.coords(shifted)
    uu = _sq_norms(u)
    rz = whitening.residual(shifted)
    z_flat = shifted.reshape(npix, -1)

    def evaluate(ids):
        means = pre_inverse.apply(forward.apply(dataset.values[ids]))
        coords = whitening.coords(means)
        mahal = _expand_sq_dist(_sq_norms(coords)[:, None], uu[None, :], coords @ u.T)
        if not whitening.full_rank:
            r = whitening.residual(means)
            m_flat = means.reshape(len(ids), -1)
            off = _off_support(
                _expand_sq_dist(
                    _sq_norms(m_flat)[:, None], _sq_norms(z_flat)[None, :], m_flat @ z_flat.T
                ),
                _expand_sq_dist(_sq_norms(r)[:, None], _sq_norms(rz)[None, :], r @ rz.T),
                support_tolerance,
            )
            mahal = np.where(off, np.inf, mahal)
        return block(ids, mahal)

    return evaluate, 8 * 4 * (z.size + npix)


def _commutes_with_shifts(op):
    operator = getattr(op, "operator", op)
    return operator.is_circulant


def augmented_mmse(
    y,
    forward,
    pre_inverse,
    dataset,
    noise,
    top_k=tolerances.top_k,
    schedule=None,
    support_tolerance=tolerances.support,
):
    """
    MMSE over the translation orbit of the dataset, without materializing it.
    When A and B are circulant the means B A T_g x are translated copies of
    B A x and distances for all g come from one FFT cross-correlation.
    """
    noise = as_noise(noise)
    schedule = schedule or Schedule()
    y = _measurement(y, dataset)
    fast = _commutes_with_shifts(forward) and _commutes_with_shifts(pre_inverse)
    evaluate, item_bytes = _shift_evaluator(
        forward, pre_inverse, dataset, y, noise, support_tolerance, fast, True
    )
    chunks = schedule.chunks(len(dataset), item_bytes)
    acc, kept, _ = _reduce(evaluate, chunks, noise, y.size, (), top_k, schedule, "aug-mmse")
    return _global_report(
        acc,
        kept,
        y.shape,
        True,
        {
            "estimator": "aug-mmse",
            "sigma": noise.sigma,
            "zero_noise": noise.is_zero_limit,
            "fft_path": fast,
        },
    )


def e_mmse(
    y,
    forward,
    pre_inverse,
    dataset,
    noise,
    top_k=tolerances.top_k,
    schedule=None,
    fast_path=None,
    support_tolerance=tolerances.support,
):
    """
    Translation-equivariant MMSE: sum_{x,g} T_g x w_g(x|y) with
    w_g proportional to N(T_g^-1 By; BAx, sigma^2 BB^T), normalized over all
    (x, g).

    :param fast_path: use the FFT cross-correlation for all shifts at once;
        None selects it whenever B is circulant
    """
    noise = as_noise(noise)
    schedule = schedule or Schedule()
    y = _measurement(y, dataset)
    circulant = _commutes_with_shifts(pre_inverse)
    if fast_path is None:
        fast_path = circulant
    elif fast_path and not circulant:
        raise ConfigError("the FFT fast path needs a circulant pre-inverse")
    evaluate, item_bytes = _shift_evaluator(
        forward, pre_inverse, dataset, y, noise, support_tolerance, fast_path, False
    )
    chunks = schedule.chunks(len(dataset), item_bytes)
    acc, kept, _ = _reduce(evaluate, chunks, noise, y.size, (), top_k, schedule, "emmse")
    return _global_report(
        acc,
        kept,
        y.shape,
        True,
        {
            "estimator": "emmse",
            "sigma": noise.sigma,
            "zero_noise": noise.is_zero_limit,
            "fft_path": bool(fast_path),
        },
    )


def le_mmse(
    y,
    forward,
    pre_inverse,
    dataset,
    geom,
    noise,
    top_k=tolerances.top_k,
    schedule=None,
    q=None,
    support_tolerance=tolerances.support,
):
    """
    Local and translation-equivariant MMSE.

    For each output pixel n' the query patch v = Q_n' y is compared with every
    dataset patch mean Q_n A x over the admissible pixels n of its stratum;
    the output is the weighted mean of the central pixels x[n].

    :param geom: PatchGeometry (or odd side)
    :param q: prebuilt QMatrices, reused across calls
    """
    noise = as_noise(noise)
    schedule = schedule or Schedule()
    y = _measurement(y, dataset)
    channels, height, width = dataset.shape
    npix = height * width
    if not isinstance(geom, PatchGeometry):
        geom = PatchGeometry(geom)
    if q is None:
        q = build_q_matrices(forward, pre_inverse, geom, channels)
    v = q.query_patches(y)
    stratum_rank, admissible = q.admissibility(v, support_tolerance)

    groups = []
    for f, fac in enumerate(q.factorizations):
        if not admissible[f].any():
            continue
        u = v @ fac.whitener
        groups.append(
            (
                q.pixels_of(f),
                fac.whitener,
                u,
                _sq_norms(u),
                ~admissible[f],
                _constant(noise, fac.rank, fac.log_pseudo_det),
            )
        )
    logger.debug("le_mmse: %d of %d factorizations in use", len(groups), len(q.factorizations))

    def evaluate(ids):
        x = dataset.values[ids]
        means = q.mean_patches(x)
        centers = x.reshape(len(ids), channels, npix).transpose(0, 2, 1)
        mahal, const, image_ids, sources, values = [], [], [], [], []
        for pixels, whitener, u, uu, excluded, c in groups:
            coords = (means[:, pixels, :] @ whitener).reshape(len(ids) * len(pixels), -1)
            d = _expand_sq_dist(_sq_norms(coords)[:, None], uu[None, :], coords @ u.T)
            d[:, excluded] = np.inf
            mahal.append(d)
            const.append(np.full(len(d), c))
            image_ids.append(np.repeat(ids, len(pixels)))
            sources.append(np.tile(pixels, len(ids)))
            values.append(centers[:, pixels, :].reshape(-1, channels))
        values = np.concatenate(values)
        return _Block(
            np.concatenate(mahal),
            np.concatenate(const)[:, None],
            np.concatenate(image_ids),
            np.concatenate(sources),
            lambda w: w.T @ values,
        )

    item_bytes = 8 * npix * (channels * geom.size + 4 * npix)
    chunks = schedule.chunks(len(dataset), item_bytes)
    acc, kept, _ = _reduce(evaluate, chunks, noise, channels, (npix,), top_k, schedule, "lemmse")
    reconstruction = ImageGrid(acc.finalize().T.reshape(channels, height, width))
    ids = sources = weights = None
    if kept.k != 0:
        ids, sources, weights = kept.finalize(acc.log_normalizer)
    report = EstimateReport(
        reconstruction,
        acc.log_normalizer,
        ids,
        sources,
        weights,
        stratum_rank=stratum_rank,
        metadata={
            "estimator": "lemmse",
            "sigma": noise.sigma,
            "zero_noise": noise.is_zero_limit,
            "patch_side": geom.side,
            "factorizations": len(q.factorizations),
            "constant_rank": q.strata.constant_rank,
            "pixel_strata": q.strata.counts(),
        },
    )
    return report


def smoothed_le_mmse(
    y,
    forward,
    pre_inverse,
    dataset,
    geom,
    noise,
    epsilon,
    samples,
    seed,
    top_k=0,
    schedule=None,
    q=None,
    support_tolerance=tolerances.support,
):
    """
    Randomized smoothing of le_mmse: the average of le_mmse(y + epsilon z_k)
    over ``samples`` standard normal draws z_k, taken in order from one
    ``numpy.random.default_rng(seed)``. epsilon = 0 returns le_mmse(y) exactly.

    :param q: prebuilt QMatrices, reused across calls
    """
    if not epsilon >= 0:
        raise ConfigError("epsilon must be >= 0, got {}".format(epsilon))
    if samples < 1:
        raise ConfigError("need at least one Monte-Carlo sample, got {}".format(samples))
    noise = as_noise(noise)
    y = _measurement(y, dataset)
    channels = dataset.shape[0]
    if not isinstance(geom, PatchGeometry):
        geom = PatchGeometry(geom)
    if q is None:
        q = build_q_matrices(forward, pre_inverse, geom, channels)
    meta = {"estimator": "lemmse-smooth", "epsilon": epsilon, "samples": samples, "seed": seed}
    if epsilon == 0:
        report = le_mmse(y, forward, pre_inverse, dataset, geom, noise, top_k, schedule, q, support_tolerance)
        report.metadata.update(meta)
        report.stderr = np.zeros(report.reconstruction.shape)
        return report

    rng = np.random.default_rng(seed)
    draws = []
    lognorms = []
    for _ in range(samples):
        perturbed = y + epsilon * rng.standard_normal(y.shape)
        report = le_mmse(
            perturbed, forward, pre_inverse, dataset, geom, noise, 0, schedule, q, support_tolerance
        )
        draws.append(report.reconstruction.values)
        lognorms.append(report.per_pixel_log_normalizer)
    draws = np.stack(draws)
    if samples > 1:
        stderr = draws.std(axis=0, ddof=1) / np.sqrt(samples)
    else:
        stderr = np.zeros(draws.shape[1:])
    meta.update(
        {
            "sigma": noise.sigma,
            "zero_noise": noise.is_zero_limit,
            "patch_side": geom.side,
            "pixel_strata": q.strata.counts(),
        }
    )
    return EstimateReport(
        ImageGrid(draws.mean(axis=0)),
        np.mean(lognorms, axis=0),
        stderr=stderr,
        metadata=meta,
    )


def zero_noise_limit(
    y, means, values, fac=None, tie_tolerance=tolerances.tie, support_tolerance=tolerances.support
):
    """
    The sigma -> 0 limit of a Gaussian-weighted mean: the value of the
    component closest to y in Mahalanobis distance, ties averaged.

    :param y: (dim,) query
    :param means: (K, dim) component means
    :param values: (K, ...) component values
    :param fac: GaussianFactorization of the shared covariance (identity if None)
    """
    y = np.asarray(y, dtype=np.float64)
    means = np.atleast_2d(np.asarray(means, dtype=np.float64))
    values = np.asarray(values, dtype=np.float64)
    d = y[None, :] - means
    if fac is None:
        dist = _sq_norms(d)
    else:
        dist = np.where(fac.on_support(d, support_tolerance), fac.mahalanobis_sq(d), np.inf)
    if not np.isfinite(dist).any():
        raise AllWeightsOffSupport("every component is off the support of the query")
    ties = dist <= dist.min() + tie_tolerance
    return values[ties].mean(axis=0)


ESTIMATORS = {
    "mmse": mmse,
    "aug-mmse": augmented_mmse,
    "emmse": e_mmse,
    "lemmse": le_mmse,
    "lemmse-smooth": smoothed_le_mmse,
}
