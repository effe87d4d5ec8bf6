"""
Forward operators A, pre-inverses B, and the patch matrices Q_n = Pi_n B.

Every operator acts on arrays with trailing (C, H, W) axes and applies the
same single-channel map to each channel. Circulant operators are stored as
their 2D DFT symbol (unnormalized forward transform, 1/N inverse), diagonal
operators as a per-pixel weight image, and anything else as a dense N x N
matrix.
"""

import logging
from typing import NamedTuple

import numpy as np
from scipy import fft, linalg
from toolz import memoize

from . import gaussian
from .errors import (
    ConfigError,
    DenseLimitExceeded,
    EmptyStratum,
    NonPositiveStd,
    ShapeMismatch,
    SideTooLarge,
    UnsupportedCombination,
)
from .grid import PatchGeometry, patch_index, patches
from .util import tolerances

logger = logging.getLogger(__name__)


def _fft(values):
    return fft.fft2(values, axes=(-2, -1))


def _ifft(values):
    return fft.ifft2(values, axes=(-2, -1))


class Whitening(object):
    """
    Whitening transform for the image-space covariance B B^T of a pre-inverse.

    ``coords(z)`` returns vectors whose squared norm is z^T (B B^T)^+ z, and
    ``residual(z)`` the component of z outside Im B. Both act per channel and
    flatten the trailing (C, H, W) axes.
    """

    def __init__(self, transform, residual, rank, log_pseudo_det):
        self._transform = transform
        self._residual = residual
        #: rank of the single-channel covariance
        self.rank = rank
        #: log pseudo-determinant of the single-channel covariance
        self.log_pseudo_det = log_pseudo_det

    @property
    def full_rank(self):
        return self._residual is None

    def coords(self, z):
        z = np.asarray(z, dtype=np.float64)
        out = self._transform(z)
        return out.reshape(z.shape[:-3] + (-1,))

    def residual(self, z):
        z = np.asarray(z, dtype=np.float64)
        if self._residual is None:
            return np.zeros(z.shape[:-3] + (0,))
        return self._residual(z).reshape(z.shape[:-3] + (-1,))


class LinearOperatorSpec(object):
    """
    Base class for linear maps on H x W images, applied channel by channel.
    """

    kind = None

    def __init__(self, height, width):
        self.height = int(height)
        self.width = int(width)

    def __repr__(self):
        return "{}(kind={}, H={}, W={})".format(
            type(self).__name__, self.kind, self.height, self.width
        )

    @property
    def in_dim(self):
        return self.height * self.width

    @property
    def out_dim(self):
        return self.height * self.width

    @property
    def is_circulant(self):
        return False

    @property
    def is_diagonal(self):
        return False

    def _check(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.ndim < 2 or x.shape[-2:] != (self.height, self.width):
            raise ShapeMismatch(
                "{} acts on {}x{} images, got shape {}".format(
                    self.kind, self.height, self.width, x.shape
                )
            )
        return x

    def apply(self, x):
        raise NotImplementedError

    def adjoint(self, y):
        raise NotImplementedError

    def __call__(self, x):
        return self.apply(x)

    def dense(self):
        """
        The single-channel N x N matrix of the operator.

        :raises DenseLimitExceeded: if N exceeds the dense limit
        """
        if self.in_dim > tolerances.dense_limit:
            raise DenseLimitExceeded(
                "refusing to materialize a {0}x{0} matrix (dense limit {1})".format(
                    self.in_dim, tolerances.dense_limit
                )
            )
        return self._materialize()

    @memoize
    def _materialize(self):
        basis = np.eye(self.in_dim).reshape(self.in_dim, self.height, self.width)
        matrix = self.apply(basis).reshape(self.in_dim, self.in_dim).T
        matrix.flags.writeable = False
        return matrix

    def rows(self, pixels):
        """Rows of the single-channel matrix at the given flat pixel indices"""
        pixels = np.asarray(pixels)
        units = np.zeros((len(pixels), self.in_dim))
        units[np.arange(len(pixels)), pixels] = 1
        units = units.reshape(len(pixels), self.height, self.width)
        return self.adjoint(units).reshape(len(pixels), self.in_dim)

    def gram_scalar(self, rtol=1e-12):
        """c if B B^T = c I, else None"""
        return None

    def whitening(self, rank_tolerance=tolerances.rank):
        return _dense_whitening(self.dense(), self.height, self.width, rank_tolerance)

    def project_row_space(self, x):
        """Orthogonal projection onto Im B^T, per channel"""
        x = self._check(x)
        u, s, vt = linalg.svd(self.dense())
        keep = s**2 > tolerances.rank * s[0] ** 2 if s[0] > 0 else np.zeros_like(s, bool)
        v = vt[keep].T
        flat = x.reshape(x.shape[:-2] + (-1,))
        return ((flat @ v) @ v.T).reshape(x.shape)


class Diagonal(LinearOperatorSpec):
    """Pixel-wise multiplication by a fixed weight image"""

    kind = "diagonal"

    def __init__(self, weights, kind=None):
        weights = np.array(weights, dtype=np.float64)
        super(Diagonal, self).__init__(*weights.shape)
        weights.flags.writeable = False
        self.weights = weights
        if kind is not None:
            self.kind = kind

    @property
    def is_diagonal(self):
        return True

    @property
    def is_circulant(self):
        return bool(np.all(self.weights == self.weights.flat[0]))

    @property
    def symbol(self):
        if not self.is_circulant:
            raise UnsupportedCombination("a non-constant diagonal has no DFT symbol")
        return np.full(self.weights.shape, self.weights.flat[0], dtype=complex)

    def apply(self, x):
        return self._check(x) * self.weights

    adjoint = apply

    def _materialize(self):
        return np.diag(self.weights.ravel())

    def rows(self, pixels):
        pixels = np.asarray(pixels)
        out = np.zeros((len(pixels), self.in_dim))
        out[np.arange(len(pixels)), pixels] = self.weights.flat[pixels]
        return out

    def gram_scalar(self, rtol=1e-12):
        sq = self.weights**2
        if np.ptp(sq) <= rtol * max(sq.max(), 1e-300):
            return float(sq.flat[0])
        return None

    def support(self, rank_tolerance=tolerances.rank):
        magnitude = np.abs(self.weights)
        if magnitude.max() == 0:
            return np.zeros(self.weights.shape, bool)
        return magnitude > rank_tolerance * magnitude.max()

    def whitening(self, rank_tolerance=tolerances.rank):
        # covariance eigenvalues are squared weights
        keep = self.support(np.sqrt(rank_tolerance))
        inv = np.zeros_like(self.weights)
        inv[keep] = 1.0 / np.abs(self.weights[keep])
        residual = None if keep.all() else (lambda z: z * (~keep))
        return Whitening(
            lambda z: z * inv,
            residual,
            rank=int(keep.sum()),
            log_pseudo_det=float(np.sum(np.log(self.weights[keep] ** 2))),
        )

    def project_row_space(self, x):
        return self._check(x) * self.support(np.sqrt(tolerances.rank))


class Identity(Diagonal):
    kind = "identity"

    def __init__(self, height, width):
        super(Identity, self).__init__(np.ones((height, width)))

    def apply(self, x):
        return self._check(x).copy()

    adjoint = apply


class InpaintMask(Diagonal):
    """
    Zeroes the unobserved pixels.

    :param observed: boolean H x W array, True where the pixel is measured
    """

    kind = "inpaint_mask"

    def __init__(self, observed):
        observed = np.asarray(observed, dtype=bool)
        super(InpaintMask, self).__init__(observed.astype(np.float64))
        self.mask = observed
        self.mask.flags.writeable = False

    @property
    def masked_pixels(self):
        return np.flatnonzero(~self.mask)


class CircularConvolution(LinearOperatorSpec):
    """
    Circular convolution with a kernel anchored at pixel (0, 0), applied
    through its DFT symbol.
    """

    kind = "circular_convolution"

    def __init__(self, symbol, kernel=None):
        symbol = np.array(symbol, dtype=complex)
        super(CircularConvolution, self).__init__(*symbol.shape)
        symbol.flags.writeable = False
        self.symbol = symbol
        if kernel is None:
            kernel = np.real(_ifft(symbol))
        self.kernel = kernel

    @classmethod
    def from_kernel(cls, kernel):
        kernel = np.asarray(kernel, dtype=np.float64)
        return cls(_fft(kernel), kernel)

    @property
    def is_circulant(self):
        return True

    def apply(self, x):
        return np.real(_ifft(_fft(self._check(x)) * self.symbol))

    def adjoint(self, y):
        return np.real(_ifft(_fft(self._check(y)) * np.conj(self.symbol)))

    def support(self, rank_tolerance=tolerances.rank):
        magnitude = np.abs(self.symbol)
        return magnitude > rank_tolerance * magnitude.max()

    def gram_scalar(self, rtol=1e-12):
        power = np.abs(self.symbol) ** 2
        if np.ptp(power) <= rtol * power.max():
            return float(power.flat[0])
        return None

    def whitening(self, rank_tolerance=tolerances.rank):
        keep = self.support(np.sqrt(rank_tolerance))
        inv = np.zeros(self.symbol.shape)
        inv[keep] = 1.0 / np.abs(self.symbol[keep])
        residual = None
        if not keep.all():
            residual = lambda z: np.real(_ifft(_fft(z) * (~keep)))
        return Whitening(
            lambda z: np.real(_ifft(_fft(z) * inv)),
            residual,
            rank=int(keep.sum()),
            log_pseudo_det=float(np.sum(np.log(np.abs(self.symbol[keep]) ** 2))),
        )

    def project_row_space(self, x):
        return np.real(_ifft(_fft(self._check(x)) * self.support(np.sqrt(tolerances.rank))))


class DenseOperator(LinearOperatorSpec):
    """An arbitrary N x N single-channel matrix"""

    kind = "custom_dense"

    def __init__(self, matrix, height, width):
        matrix = np.array(matrix, dtype=np.float64)
        super(DenseOperator, self).__init__(height, width)
        if matrix.shape != (self.in_dim, self.in_dim):
            raise ShapeMismatch(
                "expected a {0}x{0} matrix, got {1}".format(self.in_dim, matrix.shape)
            )
        matrix.flags.writeable = False
        self.matrix = matrix

    def apply(self, x):
        x = self._check(x)
        flat = x.reshape(x.shape[:-2] + (-1,))
        return (flat @ self.matrix.T).reshape(x.shape)

    def adjoint(self, y):
        y = self._check(y)
        flat = y.reshape(y.shape[:-2] + (-1,))
        return (flat @ self.matrix).reshape(y.shape)

    def _materialize(self):
        return self.matrix

    def rows(self, pixels):
        return self.matrix[np.asarray(pixels)]

    def gram_scalar(self, rtol=1e-12):
        gram = self.matrix @ self.matrix.T
        c = gram[0, 0]
        if np.abs(gram - c * np.eye(self.in_dim)).max() <= rtol * max(abs(c), 1e-300):
            return float(c)
        return None


def _dense_whitening(matrix, height, width, rank_tolerance):
    fac = gaussian.factorize_factor(matrix, rank_tolerance)

    def transform(z):
        flat = z.reshape(z.shape[:-2] + (-1,))
        return flat @ fac.whitener

    def residual(z):
        flat = z.reshape(z.shape[:-2] + (-1,))
        return flat - (flat @ fac.basis) @ fac.basis.T

    return Whitening(
        transform,
        None if fac.rank == height * width else residual,
        rank=fac.rank,
        log_pseudo_det=fac.log_pseudo_det,
    )


def make_denoising(height, width):
    """A = I on H x W images"""
    return Identity(height, width)


def center_mask(height, width, side):
    """Boolean observed-pixel map with a side x side hole near the center"""
    if side < 0 or side > min(height, width):
        raise SideTooLarge(
            "mask side {} does not fit a {}x{} image".format(side, height, width)
        )
    observed = np.ones((height, width), dtype=bool)
    top, left = (height - side) // 2, (width - side) // 2
    observed[top : top + side, left : left + side] = False
    return observed


def make_center_mask(height, width, side):
    """
    Inpainting operator hiding a centered square of the given side. The hole
    is anchored with its top-left corner at ((H-side)//2, (W-side)//2).

    :raises SideTooLarge: if side > min(H, W)
    """
    return InpaintMask(center_mask(height, width, side))


@memoize
def gaussian_kernel(height, width, std):
    """
    Isotropic Gaussian sampled on the periodic grid centered at (0, 0),
    normalized to unit sum.
    """
    if not std > 0:
        raise NonPositiveStd("blur std must be positive, got {}".format(std))
    dr = np.minimum(np.arange(height), height - np.arange(height))
    dc = np.minimum(np.arange(width), width - np.arange(width))
    kernel = np.exp(-(dr[:, None] ** 2 + dc[None, :] ** 2) / (2.0 * std**2))
    kernel /= kernel.sum()
    kernel.flags.writeable = False
    return kernel


def make_gaussian_blur(height, width, std):
    """
    Circular convolution with an isotropic Gaussian of the given standard
    deviation, in pixels.
    """
    return CircularConvolution.from_kernel(gaussian_kernel(height, width, float(std)))


PRE_INVERSE_KINDS = ("identity", "pseudo_inverse", "tikhonov", "custom_dense")


class PreInverseSpec(object):
    """
    A pre-inverse B tied to a forward operator. Apply, adjoint and the other
    linear-operator queries are delegated to the concrete ``operator``.
    """

    def __init__(self, kind, forward, operator, lam=None):
        self.kind = kind
        self.forward = forward
        self.operator = operator
        self.lam = lam

    def __repr__(self):
        extra = "" if self.lam is None else ", lam={}".format(self.lam)
        return "PreInverseSpec(kind={}, forward={}{})".format(
            self.kind, self.forward.kind, extra
        )

    def __getattr__(self, name):
        if name in ("operator", "forward", "kind", "lam"):
            raise AttributeError(name)
        return getattr(self.operator, name)

    def __call__(self, x):
        return self.operator.apply(x)

    @property
    def physics_aware(self):
        return self.kind != "identity"


def _pseudo_inverse(forward, rank_tolerance):
    if forward.kind == "identity":
        return Identity(forward.height, forward.width)
    if forward.is_circulant and not forward.is_diagonal:
        magnitude = np.abs(forward.symbol)
        keep = magnitude > rank_tolerance * magnitude.max()
        if not keep.all():
            logger.warning(
                "pseudo-inverse drops %d of %d frequencies below the cutoff",
                (~keep).sum(),
                keep.size,
            )
        inverse = np.zeros_like(forward.symbol)
        inverse[keep] = 1.0 / forward.symbol[keep]
        return CircularConvolution(inverse)
    if isinstance(forward, InpaintMask):
        # a 0/1 mask is its own pseudo-inverse
        return InpaintMask(forward.mask)
    if forward.is_diagonal:
        keep = forward.support(rank_tolerance)
        inverse = np.zeros_like(forward.weights)
        inverse[keep] = 1.0 / forward.weights[keep]
        return Diagonal(inverse)
    if forward.in_dim > tolerances.dense_limit:
        raise UnsupportedCombination(
            "no closed-form pseudo-inverse for {} at N={} > {}".format(
                forward.kind, forward.in_dim, tolerances.dense_limit
            )
        )
    matrix = linalg.pinv(forward.dense(), rtol=rank_tolerance)
    return DenseOperator(matrix, forward.height, forward.width)


def _tikhonov(forward, lam):
    if forward.is_circulant and not forward.is_diagonal:
        symbol = forward.symbol
        return CircularConvolution(np.conj(symbol) / (np.abs(symbol) ** 2 + lam))
    if forward.is_diagonal:
        weights = forward.weights
        return Diagonal(weights / (weights**2 + lam))
    if forward.in_dim > tolerances.dense_limit:
        raise UnsupportedCombination(
            "no closed-form Tikhonov inverse for {} at N={} > {}".format(
                forward.kind, forward.in_dim, tolerances.dense_limit
            )
        )
    a = forward.dense()
    gram = a @ a.T + lam * np.eye(a.shape[0])
    matrix = linalg.solve(gram, a, assume_a="pos").T
    return DenseOperator(matrix, forward.height, forward.width)


def make_pre_inverse(kind, forward, lam=None, matrix=None, rank_tolerance=tolerances.rank):
    """
    Build the pre-inverse B applied to measurements before estimation.

    :param kind: one of identity, pseudo_inverse, tikhonov, custom_dense
    :param forward: the forward LinearOperatorSpec A
    :param lam: Tikhonov regularization strength (tikhonov only)
    :param matrix: N x N matrix (custom_dense only)
    """
    if kind == "identity":
        operator = Identity(forward.height, forward.width)
    elif kind == "pseudo_inverse":
        operator = _pseudo_inverse(forward, rank_tolerance)
    elif kind == "tikhonov":
        if lam is None or not lam > 0:
            raise ConfigError("tikhonov needs a positive lambda, got {}".format(lam))
        operator = _tikhonov(forward, float(lam))
    elif kind == "custom_dense":
        if matrix is None:
            raise ConfigError("custom_dense needs a matrix")
        operator = DenseOperator(matrix, forward.height, forward.width)
    else:
        raise ConfigError(
            "unknown pre-inverse {!r}, expected one of {}".format(kind, PRE_INVERSE_KINDS)
        )
    return PreInverseSpec(kind, forward, operator, lam)


class RankStrata(NamedTuple):
    ranks: np.ndarray
    strata: dict
    #: rank -> indices of the distinct patch factorizations with that rank
    factor_strata: dict

    @property
    def constant_rank(self):
        return len(self.strata) == 1

    def counts(self):
        return {int(r): int(len(p)) for r, p in sorted(self.strata.items())}


def _unique_factorizations(pre_inverse, geom, rank_tolerance):
    """
    Single-channel factorizations of Q_n Q_n^T and the index of the one used
    at each pixel.
    """
    operator = pre_inverse.operator if isinstance(pre_inverse, PreInverseSpec) else pre_inverse
    height, width = operator.height, operator.width
    index = patch_index(height, width, geom.side)
    npix = height * width
    if operator.is_circulant:
        fac = gaussian.factorize_factor(operator.rows(index[0]), rank_tolerance)
        return [fac], np.zeros(npix, dtype=int)
    if operator.is_diagonal:
        keys = operator.weights.ravel()[index]
    else:
        if npix > tolerances.dense_limit:
            raise DenseLimitExceeded(
                "per-pixel patch covariances of a dense operator need N <= {}".format(
                    tolerances.dense_limit
                )
            )
        matrix = operator.dense()
        gram = matrix @ matrix.T
        keys = np.round(gram[index[:, :, None], index[:, None, :]], 12).reshape(npix, -1)
    # identical windows share a factorization
    _, first, inverse = np.unique(keys, axis=0, return_index=True, return_inverse=True)
    factorizations = []
    for n in first:
        if operator.is_diagonal:
            factorizations.append(
                gaussian.factorize(np.diag(operator.weights.ravel()[index[n]] ** 2), rank_tolerance)
            )
        else:
            factorizations.append(gaussian.factorize_factor(operator.rows(index[n]), rank_tolerance))
    return factorizations, np.asarray(inverse).reshape(-1)


class QMatrices(object):
    """
    Access to Q_n = Pi_n B for every pixel n: patch means, patch queries, and
    the Gaussian factorization of Q_n Q_n^T (block-diagonal over channels).
    """

    def __init__(self, forward, pre_inverse, geom, channels, factorizations, pixel_factor):
        self.forward = forward
        self.pre_inverse = pre_inverse
        self.geom = geom
        self.channels = channels
        self.factorizations = factorizations
        self.pixel_factor = pixel_factor
        ranks = np.array([f.rank for f in factorizations])[pixel_factor]
        strata = {int(r): np.flatnonzero(ranks == r) for r in np.unique(ranks)}
        factor_strata = {}
        for i, f in enumerate(factorizations):
            factor_strata.setdefault(f.rank, []).append(i)
        self.strata = RankStrata(
            ranks, strata, {r: np.array(v) for r, v in factor_strata.items()}
        )

    def __repr__(self):
        return "QMatrices(side={}, C={}, factorizations={}, strata={})".format(
            self.geom.side, self.channels, len(self.factorizations), self.strata.counts()
        )

    @property
    def npix(self):
        return len(self.pixel_factor)

    def factorization(self, n):
        return self.factorizations[self.pixel_factor[n]]

    def pixels_of(self, factor):
        return np.flatnonzero(self.pixel_factor == factor)

    def mean_patches(self, x):
        """Q_n A x for all n: array (..., N, C*P)"""
        return patches(self.pre_inverse.apply(self.forward.apply(x)), self.geom)

    def query_patches(self, y):
        """Q_n y for all n: array (..., N, C*P)"""
        return patches(self.pre_inverse.apply(y), self.geom)

    def admissibility(self, v, support_tolerance=tolerances.support):
        """
        Stratum selection for a batch of query patches.

        :param v: (N', C*P) query patches
        :returns: (rank (N',), mask (F, N')) with the minimal rank whose
            stratum contains each query, and which factorizations are admissible
        :raises EmptyStratum: if a query lies off every patch support
        """
        v = np.asarray(v)
        on = np.stack([f.on_support(v, support_tolerance) for f in self.factorizations])
        ranks = np.array([f.rank for f in self.factorizations])
        candidate = np.where(on, ranks[:, None], np.iinfo(int).max)
        best = candidate.min(axis=0)
        if np.any(best == np.iinfo(int).max):
            bad = np.flatnonzero(best == np.iinfo(int).max)
            raise EmptyStratum(
                "query patches at pixels {} lie off every patch support".format(bad[:8].tolist())
            )
        return best, on & (ranks[:, None] == best[None, :])


def build_q_matrices(forward, pre_inverse, geom, channels=1, rank_tolerance=tolerances.rank):
    """
    Factorize the patch covariances Q_n Q_n^T and stratify pixels by rank.
    Circulant pre-inverses yield a single shared factorization.

    :param forward: LinearOperatorSpec A
    :param pre_inverse: PreInverseSpec B
    :param geom: PatchGeometry
    :param channels: number of image channels C
    """
    if not isinstance(geom, PatchGeometry):
        geom = PatchGeometry(geom)
    singles, pixel_factor = _unique_factorizations(pre_inverse, geom, rank_tolerance)
    factorizations = [f.kron_channels(channels) for f in singles]
    q = QMatrices(forward, pre_inverse, geom, channels, factorizations, pixel_factor)
    logger.debug("built %r", q)
    return q


def stratum_of(v, n_prime, q, support_tolerance=tolerances.support):
    """
    Locate the stratum used for the query patch v = Q_{n'} y.

    :returns: (rank, admissible pixel indices)
    :raises EmptyStratum: if v is off every patch support
    """
    if q.strata.constant_rank:
        rank = next(iter(q.strata.strata))
        if not any(f.on_support(v, support_tolerance) for f in q.factorizations):
            raise EmptyStratum("query patch at pixel {} is off every support".format(n_prime))
        return rank, np.arange(q.npix)
    best, mask = q.admissibility(np.asarray(v)[None, :], support_tolerance)
    factors = np.flatnonzero(mask[:, 0])
    return int(best[0]), np.flatnonzero(np.isin(q.pixel_factor, factors))


def synthesize_measurement(x_bar, forward, sigma, seed=None):
    """
    y = A x_bar + sigma z with z standard normal from
    ``numpy.random.default_rng(seed)`` (PCG64). sigma = 0 returns A x_bar.

    :param seed: integer seed, SeedSequence or Generator
    """
    if not sigma >= 0:
        raise ConfigError("sigma must be >= 0, got {}".format(sigma))
    clean = forward.apply(np.asarray(x_bar, dtype=np.float64))
    if sigma == 0:
        return clean
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    return clean + sigma * rng.standard_normal(clean.shape)
