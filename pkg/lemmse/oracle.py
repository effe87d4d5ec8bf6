"""
Slow dense reference implementations of the estimators, for cross-checking
the optimized paths on tiny grayscale problems.

Everything here materializes the matrices A and B, factorizes every
covariance with its full normalizing constant, and reduces all log-weights in
a single scipy logsumexp. There are no fast paths and no chunking.
"""

import logging

import numpy as np
from scipy import linalg
from scipy.special import logsumexp

from . import gaussian
from .errors import (
    AllWeightsOffSupport,
    ConfigError,
    EmptyStratum,
    ShapeMismatch,
    SizeLimitExceeded,
)
from .estimators import zero_noise_limit
from .grid import PatchGeometry, Translation, patch_index, roll
from .util import tolerances

logger = logging.getLogger(__name__)

SIZE_LIMIT = 256


class DenseProblem(object):
    """
    :param forward: (M, N) matrix A
    :param pre_inverse: (N, M) matrix B
    :param images: (K, N) flattened grayscale dataset
    :param sigma: noise level
    :param shape: (H, W) with H*W = N
    """

    def __init__(self, forward, pre_inverse, images, sigma, shape):
        self.forward = np.asarray(forward, dtype=np.float64)
        self.pre_inverse = np.asarray(pre_inverse, dtype=np.float64)
        self.images = np.asarray(images, dtype=np.float64)
        self.sigma = float(sigma)
        self.shape = tuple(shape)
        npix = self.shape[0] * self.shape[1]
        if npix > SIZE_LIMIT:
            raise SizeLimitExceeded(
                "the dense oracle handles N <= {}, got {}".format(SIZE_LIMIT, npix)
            )
        if self.images.ndim != 2 or self.images.shape[1] != npix:
            raise ShapeMismatch("images must be (K, {}), got {}".format(npix, self.images.shape))
        if self.forward.shape[1] != npix or self.pre_inverse.shape != self.forward.shape[::-1]:
            raise ShapeMismatch(
                "A {} and B {} do not fit N={}".format(
                    self.forward.shape, self.pre_inverse.shape, npix
                )
            )
        for m in (self.forward, self.pre_inverse, self.images):
            if not np.isfinite(m).all():
                raise ValueError("oracle inputs must be finite")

    @classmethod
    def from_operators(cls, forward, pre_inverse, dataset, sigma):
        channels, height, width = dataset.shape
        if channels != 1:
            raise ShapeMismatch("the dense oracle is grayscale only, got C={}".format(channels))
        if height * width > SIZE_LIMIT:
            raise SizeLimitExceeded(
                "the dense oracle handles N <= {}, got {}".format(SIZE_LIMIT, height * width)
            )
        return cls(
            forward.dense(),
            pre_inverse.dense(),
            dataset.values.reshape(len(dataset), -1),
            sigma,
            (height, width),
        )

    @property
    def npix(self):
        return self.images.shape[1]

    @property
    def zero_noise(self):
        return self.sigma < tolerances.sigma_floor

    def covariance(self, factor):
        """Factorization of sigma^2 Q Q^T, or of Q Q^T in the zero-noise limit, from Q"""
        scale = 1.0 if self.zero_noise else self.sigma
        return gaussian.factorize_factor(scale * np.asarray(factor, dtype=np.float64))

    def shift(self, vector, g_h, g_w):
        return roll(vector.reshape(self.shape), g_h, g_w).reshape(-1)


def _weighted_mean(log_weights, values):
    log_weights = np.asarray(log_weights)
    finite = np.isfinite(log_weights)
    if not finite.any():
        raise AllWeightsOffSupport("no component lies on the support of the query")
    weights = np.exp(log_weights - logsumexp(log_weights[finite]))
    return weights @ values


def _mixture(problem, queries, means, values, fac):
    """Weighted mean over components (query_i, mean_i) sharing one covariance"""
    if problem.zero_noise:
        # shift the query so every component shares it: compare q_i - m_i with 0
        return zero_noise_limit(np.zeros(means.shape[1]), means - queries, values, fac)
    log_weights = [gaussian.log_density(q, m, fac) for q, m in zip(queries, means)]
    return _weighted_mean(log_weights, values)


def oracle_mmse(problem, y):
    """Literal MMSE: weights N(By; BAx, sigma^2 BB^T) over the dataset"""
    b = problem.pre_inverse
    z = b @ np.asarray(y, dtype=np.float64).reshape(-1)
    means = problem.images @ (b @ problem.forward).T
    queries = np.broadcast_to(z, means.shape)
    return _mixture(problem, queries, means, problem.images, problem.covariance(b))


def oracle_e_mmse(problem, y):
    """Literal E-MMSE: weights N(T_g^-1 By; BAx, sigma^2 BB^T) over (x, g)"""
    b = problem.pre_inverse
    z = b @ np.asarray(y, dtype=np.float64).reshape(-1)
    means = problem.images @ (b @ problem.forward).T
    queries, component_means, values = [], [], []
    for k, x in enumerate(problem.images):
        for g in Translation.group(*problem.shape):
            queries.append(problem.shift(z, -g.g_h, -g.g_w))
            component_means.append(means[k])
            values.append(problem.shift(x, g.g_h, g.g_w))
    return _mixture(
        problem,
        np.array(queries),
        np.array(component_means),
        np.array(values),
        problem.covariance(b),
    )


def _le_components(problem, y, geom, b):
    """
    Per output pixel, the stratum-restricted weighted mean of central pixels,
    with patch matrices Q_n = rows of b.
    """
    height, width = problem.shape
    index = patch_index(height, width, geom.side)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    q = [b[index[n]] for n in range(problem.npix)]
    facs = [problem.covariance(qn) for qn in q]
    ranks = np.array([f.rank for f in facs])
    means = [problem.images @ (qn @ problem.forward).T for qn in q]
    out = np.zeros(problem.npix)
    for n_prime in range(problem.npix):
        v = q[n_prime] @ y
        on = np.array([facs[n].on_support(v) for n in range(problem.npix)])
        if not on.any():
            raise EmptyStratum("query patch at pixel {} is off every support".format(n_prime))
        stratum = np.flatnonzero(on & (ranks == ranks[on].min()))
        if problem.zero_noise:
            dist = np.concatenate(
                [
                    np.where(
                        facs[n].on_support(v[None] - means[n]),
                        facs[n].mahalanobis_sq(v[None] - means[n]),
                        np.inf,
                    )
                    for n in stratum
                ]
            )
            values = np.concatenate([problem.images[:, n] for n in stratum])
            ties = dist <= dist.min() + tolerances.tie
            out[n_prime] = values[ties].mean()
            continue
        log_weights = np.concatenate(
            [gaussian.log_density(v[None], means[n], facs[n]) for n in stratum]
        )
        values = np.concatenate([problem.images[:, n] for n in stratum])
        out[n_prime] = _weighted_mean(log_weights, values)
    return out


def oracle_le_mmse(problem, y, geom):
    """Literal LE-MMSE with rank stratification"""
    if not isinstance(geom, PatchGeometry):
        geom = PatchGeometry(geom)
    return _le_components(problem, y, geom, problem.pre_inverse)


def oracle_epsilon_limit(problem, y, geom, epsilons):
    """
    Compare LE-MMSE computed with the full-rank lifted pre-inverse
    B_eps = U (S + eps) V^T against the stratified estimator.

    :returns: dict with per-epsilon max-abs gaps (in the given order), the
        rank and log pseudo-determinant of each lifted B_eps B_eps^T, and
        whether the gaps shrink monotonically
    """
    epsilons = list(epsilons)
    if not epsilons:
        raise ConfigError("need at least one epsilon")
    if not isinstance(geom, PatchGeometry):
        geom = PatchGeometry(geom)
    reference = oracle_le_mmse(problem, y, geom)
    b_svd = linalg.svd(problem.pre_inverse)
    gaps, ranks, log_dets = [], [], []
    for eps in epsilons:
        lifted = gaussian.lifted_factor(b_svd, eps)
        full = gaussian.epsilon_regularized_factorization(b_svd, eps)
        ranks.append(int(full.rank))
        log_dets.append(float(full.log_pseudo_det))
        estimate = _le_components(problem, y, geom, lifted)
        gaps.append(float(np.max(np.abs(estimate - reference))))
        logger.debug("eps=%g: gap %.3g, lifted rank %d", eps, gaps[-1], ranks[-1])
    monotone = all(later < earlier for earlier, later in zip(gaps, gaps[1:]))
    return {
        "epsilons": epsilons,
        "gaps": gaps,
        "lifted_rank": ranks,
        "lifted_log_det": log_dets,
        "monotone": monotone,
        "reference": reference,
    }
