"""
Gaussian densities with possibly singular covariance.

A degenerate Gaussian N(mean, S) with rank r lives on the affine subspace
mean + Im S. On that subspace it has density

    (2 pi)^(-r/2) |S|_+^(-1/2) exp(-1/2 (v-mean)^T S^+ (v-mean))

with |S|_+ the product of the non-zero eigenvalues; off the subspace the
density is zero. All functions here broadcast over leading axes so that a
whole batch of patches can be scored in one call.
"""

import logging

import numpy as np
from scipy import linalg

from .errors import (
    DimensionMismatch,
    NegativeEigenvalueBeyondTolerance,
    NonPositiveEpsilon,
    NonSymmetric,
)
from .util import tolerances

logger = logging.getLogger(__name__)

LOG_2PI = np.log(2 * np.pi)


class GaussianFactorization(object):
    """
    Truncated eigendecomposition S = U diag(eigenvalues) U^T of a positive
    semi-definite covariance.
    """

    def __init__(self, basis, eigenvalues, rank_tolerance=tolerances.rank):
        """
        :param basis: (dim, r) array with orthonormal columns
        :param eigenvalues: (r,) positive eigenvalues, descending
        :param rank_tolerance: relative threshold the truncation was made with
        """
        basis = np.asarray(basis, dtype=np.float64)
        eigenvalues = np.asarray(eigenvalues, dtype=np.float64)
        if basis.ndim != 2 or basis.shape[1] != eigenvalues.size:
            raise DimensionMismatch(
                "basis of shape {} does not match {} eigenvalues".format(
                    basis.shape, eigenvalues.size
                )
            )
        if np.any(eigenvalues <= 0):
            raise ValueError("retained eigenvalues must be positive")
        for a in (basis, eigenvalues):
            a.flags.writeable = False
        self.basis = basis
        self.eigenvalues = eigenvalues
        self.rank_tolerance = rank_tolerance
        self.log_pseudo_det = float(np.sum(np.log(eigenvalues)))
        self._whitener = basis / np.sqrt(eigenvalues)

    def __repr__(self):
        return "GaussianFactorization(dim={}, rank={}, log_pseudo_det={:.6g})".format(
            self.dim, self.rank, self.log_pseudo_det
        )

    @property
    def dim(self):
        return self.basis.shape[0]

    @property
    def rank(self):
        return self.basis.shape[1]

    @property
    def log_normalizer(self):
        """log of the density prefactor, -(r/2) log(2 pi) - 1/2 log|S|_+"""
        return -0.5 * self.rank * LOG_2PI - 0.5 * self.log_pseudo_det

    @property
    def whitener(self):
        """(dim, r) matrix W with ||d W||^2 = d^T S^+ d"""
        return self._whitener

    def covariance(self):
        return (self.basis * self.eigenvalues) @ self.basis.T

    def pinv(self):
        return self._whitener @ self._whitener.T

    def _check(self, d):
        d = np.asarray(d, dtype=np.float64)
        if d.shape[-1] != self.dim:
            raise DimensionMismatch(
                "expected vectors of length {}, got shape {}".format(self.dim, d.shape)
            )
        return d

    def project(self, d):
        """Orthogonal projection onto the support Im S"""
        d = self._check(d)
        return (d @ self.basis) @ self.basis.T

    def residual_norm(self, d):
        """Norm of the component of d orthogonal to the support"""
        d = self._check(d)
        return np.linalg.norm(d - self.project(d), axis=-1)

    def on_support(self, d, support_tolerance=tolerances.support):
        d = self._check(d)
        scale = 1.0 + np.linalg.norm(d, axis=-1)
        return self.residual_norm(d) <= support_tolerance * scale

    def whiten(self, d):
        """Coordinates of d in the whitened support basis"""
        return self._check(d) @ self._whitener

    def mahalanobis_sq(self, d):
        w = self.whiten(d)
        return np.einsum("...i,...i->...", w, w)

    def scaled(self, c):
        """Factorization of c * S for c > 0"""
        return GaussianFactorization(self.basis, c * self.eigenvalues, self.rank_tolerance)

    def kron_channels(self, channels):
        """
        Factorization of the block-diagonal covariance I_C (x) S, with vectors
        ordered channel-major.
        """
        if channels == 1:
            return self
        basis = np.kron(np.eye(channels), self.basis)
        eigenvalues = np.tile(self.eigenvalues, channels)
        order = np.argsort(-eigenvalues, kind="stable")
        return GaussianFactorization(basis[:, order], eigenvalues[order], self.rank_tolerance)

    def same_as(self, other, atol=1e-10):
        """True if both factorizations describe the same covariance"""
        if self.dim != other.dim or self.rank != other.rank:
            return False
        return np.allclose(self.covariance(), other.covariance(), rtol=0, atol=atol)


def point_mass(dim):
    """The rank-0 factorization of the zero covariance"""
    return GaussianFactorization(np.zeros((dim, 0)), np.zeros(0), tolerances.rank)


def _truncate(eigenvalues, vectors, rank_tolerance):
    order = np.argsort(-eigenvalues, kind="stable")
    eigenvalues, vectors = eigenvalues[order], vectors[:, order]
    if eigenvalues.size == 0 or eigenvalues[0] <= 0:
        return GaussianFactorization(vectors[:, :0], eigenvalues[:0], rank_tolerance)
    keep = eigenvalues > rank_tolerance * eigenvalues[0]
    return GaussianFactorization(vectors[:, keep], eigenvalues[keep], rank_tolerance)


def factorize(cov, rank_tolerance=tolerances.rank):
    """
    Factorize a symmetric positive semi-definite covariance.

    :param cov: (dim, dim) array
    :param rank_tolerance: eigenvalues at or below rank_tolerance * lambda_max
        are treated as zero
    :raises NonSymmetric: if cov deviates from its transpose by more than
        1e-10 relative
    :raises NegativeEigenvalueBeyondTolerance: if cov has a clearly negative
        eigenvalue
    """
    cov = np.asarray(cov, dtype=np.float64)
    if cov.ndim != 2 or cov.shape[0] != cov.shape[1]:
        raise DimensionMismatch("covariance must be square, got {}".format(cov.shape))
    dim = cov.shape[0]
    if dim == 0:
        return point_mass(0)
    scale = np.abs(cov).max()
    if scale == 0:
        return point_mass(dim)
    if np.abs(cov - cov.T).max() > 1e-10 * scale:
        raise NonSymmetric("covariance is not symmetric")
    eigenvalues, vectors = linalg.eigh(0.5 * (cov + cov.T))
    largest = np.abs(eigenvalues).max()
    floor = max(rank_tolerance, dim * np.finfo(float).eps) * largest
    if eigenvalues.min() < -floor:
        raise NegativeEigenvalueBeyondTolerance(
            "covariance has eigenvalue {:.3g} (largest {:.3g})".format(
                eigenvalues.min(), largest
            )
        )
    return _truncate(eigenvalues, vectors, rank_tolerance)


def factorize_factor(factor, rank_tolerance=tolerances.rank):
    """
    Factorize S = Q Q^T from Q itself, using the singular values of Q so the
    condition number is not squared.

    :param factor: (dim, m) array Q
    """
    factor = np.asarray(factor, dtype=np.float64)
    if factor.ndim != 2:
        raise DimensionMismatch("factor must be a matrix, got {}".format(factor.shape))
    dim = factor.shape[0]
    if factor.size == 0 or not np.any(factor):
        return point_mass(dim)
    u, s, _ = linalg.svd(factor, full_matrices=False)
    return _truncate(s**2, u, rank_tolerance)


def epsilon_regularized_factorization(b_svd, epsilon):
    """
    Factorization of B_eps B_eps^T where B_eps shares the singular vectors of B
    and has singular values s_i + epsilon. The result has full rank.

    :param b_svd: triplet (U, s, Vt) from a full SVD of B
    :param epsilon: positive lift
    """
    if not epsilon > 0:
        raise NonPositiveEpsilon("epsilon must be positive, got {}".format(epsilon))
    u, s, _ = b_svd
    u = np.asarray(u, dtype=np.float64)
    lifted = np.zeros(u.shape[1])
    lifted[: len(s)] = s
    lifted += epsilon
    return _truncate(lifted**2, u, 0.0)


def lifted_factor(b_svd, epsilon):
    """B_eps = U diag(s + epsilon) V^T, with the same padding as above"""
    if not epsilon > 0:
        raise NonPositiveEpsilon("epsilon must be positive, got {}".format(epsilon))
    u, s, vt = b_svd
    lifted = np.zeros((u.shape[1], vt.shape[0]))
    k = min(lifted.shape)
    lifted[np.arange(k), np.arange(k)] = epsilon
    lifted[np.arange(len(s)), np.arange(len(s))] += s
    return u @ lifted @ vt


def _difference(v, mean, fac):
    v = np.asarray(v, dtype=np.float64)
    mean = np.asarray(mean, dtype=np.float64)
    if v.shape[-1] != fac.dim or mean.shape[-1] != fac.dim:
        raise DimensionMismatch(
            "expected vectors of length {}, got {} and {}".format(
                fac.dim, v.shape, mean.shape
            )
        )
    return v - mean


def mahalanobis_sq(v, mean, fac):
    """
    Squared Mahalanobis distance restricted to the support. The off-support
    component is ignored; combine with log_density for the support test.
    """
    return fac.mahalanobis_sq(_difference(v, mean, fac))


def log_density(v, mean, fac, support_tolerance=tolerances.support):
    """
    Log density of N(mean, S) at v, -inf off the support.

    :param v: (..., dim) points
    :param mean: (..., dim) means, broadcast against v
    :param fac: GaussianFactorization of S
    :returns: float or array of extended reals
    """
    d = _difference(v, mean, fac)
    with np.errstate(divide="ignore"):
        value = np.where(
            fac.on_support(d, support_tolerance),
            fac.log_normalizer - 0.5 * fac.mahalanobis_sq(d),
            -np.inf,
        )
    return value[()] if value.ndim == 0 else value
