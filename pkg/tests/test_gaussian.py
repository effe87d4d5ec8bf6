import numpy as np
import pytest
from scipy import integrate, linalg, stats

from lemmse import gaussian
from lemmse.errors import (
    DimensionMismatch,
    NegativeEigenvalueBeyondTolerance,
    NonPositiveEpsilon,
    NonSymmetric,
)


def test_factorize_identity():
    fac = gaussian.factorize(np.eye(3))
    assert fac.rank == 3
    np.testing.assert_allclose(fac.eigenvalues, 1)
    assert fac.log_pseudo_det == pytest.approx(0, abs=1e-12)


def test_factorize_singular():
    fac = gaussian.factorize(np.diag([4.0, 0.0]))
    assert fac.rank == 1
    np.testing.assert_allclose(fac.eigenvalues, [4])
    assert fac.log_pseudo_det == pytest.approx(np.log(4), rel=1e-12)


def test_factorize_rank_one(rng):
    q = rng.normal(size=5)
    q /= np.linalg.norm(q)
    fac = gaussian.factorize(np.outer(q, q))
    assert fac.rank == 1
    assert fac.eigenvalues[0] == pytest.approx(1, rel=1e-12)
    assert abs(fac.basis[:, 0] @ q) == pytest.approx(1, rel=1e-12)


def test_factorization_invariants(rng):
    factor = rng.normal(size=(6, 3))
    cov = factor @ factor.T
    fac = gaussian.factorize(cov)
    assert fac.rank == 3
    np.testing.assert_allclose(fac.basis.T @ fac.basis, np.eye(3), atol=1e-12)
    assert np.all(np.diff(fac.eigenvalues) <= 0)
    assert fac.log_pseudo_det == pytest.approx(np.sum(np.log(fac.eigenvalues)), rel=1e-12)
    bound = 10 * fac.rank_tolerance * fac.eigenvalues[0] * 6
    assert np.linalg.norm(fac.covariance() - cov) <= bound + 1e-12


def test_factorize_factor_matches_covariance(rng):
    factor = rng.normal(size=(4, 7))
    assert gaussian.factorize_factor(factor).same_as(gaussian.factorize(factor @ factor.T))


def test_factorize_rejects_bad_covariances():
    with pytest.raises(NonSymmetric):
        gaussian.factorize(np.array([[1.0, 0.5], [0.0, 1.0]]))
    with pytest.raises(NegativeEigenvalueBeyondTolerance):
        gaussian.factorize(np.diag([1.0, -0.5]))
    with pytest.raises(DimensionMismatch):
        gaussian.factorize(np.ones((2, 3)))


def test_point_mass():
    fac = gaussian.factorize(np.zeros((2, 2)))
    assert fac.rank == 0
    assert gaussian.log_density(np.ones(2), np.ones(2), fac) == 0
    assert gaussian.log_density(np.array([1.0, 2.0]), np.ones(2), fac) == -np.inf


def test_log_density_standard_normal():
    fac = gaussian.factorize(np.eye(2))
    value = gaussian.log_density(np.zeros(2), np.zeros(2), fac)
    assert value == pytest.approx(-np.log(2 * np.pi), rel=1e-12)
    assert value == pytest.approx(-1.837877, abs=1e-6)


def test_log_density_on_and_off_support():
    fac = gaussian.factorize(np.diag([1.0, 0.0]))
    on = gaussian.log_density(np.array([0.5, 0.0]), np.zeros(2), fac, support_tolerance=1e-6)
    assert on == pytest.approx(-0.5 * np.log(2 * np.pi) - 0.125, rel=1e-12)
    off = gaussian.log_density(np.array([0.5, 0.1]), np.zeros(2), fac, support_tolerance=1e-6)
    assert off == -np.inf


def test_log_density_matches_scipy(rng):
    factor = rng.normal(size=(3, 3))
    cov = factor @ factor.T + 0.1 * np.eye(3)
    mean = rng.normal(size=3)
    v = rng.normal(size=(5, 3))
    np.testing.assert_allclose(
        gaussian.log_density(v, mean, gaussian.factorize(cov)),
        stats.multivariate_normal(mean, cov).logpdf(v),
        rtol=1e-10,
    )


def test_log_density_integrates_to_one_on_support(rng):
    q = rng.normal(size=3)
    q /= np.linalg.norm(q)
    fac = gaussian.factorize(2.5 * np.outer(q, q))
    mean = rng.normal(size=3)
    total, _ = integrate.quad(
        lambda t: np.exp(gaussian.log_density(mean + t * q, mean, fac)), -np.inf, np.inf
    )
    assert total == pytest.approx(1, rel=1e-4)


def test_log_density_shift_invariance(rng):
    fac = gaussian.factorize(np.diag([2.0, 0.5, 0.0]))
    v, mean = np.array([0.3, -0.2, 0.0]), np.array([0.1, 0.1, 0.0])
    t = np.array([1.5, -4.0, 0.0])
    assert gaussian.log_density(v + t, mean + t, fac) == pytest.approx(
        gaussian.log_density(v, mean, fac), abs=1e-12
    )


def test_log_density_rotation(rng):
    cov = np.diag([2.0, 0.5, 0.0])
    rotation, _ = np.linalg.qr(rng.normal(size=(3, 3)))
    v, mean = np.array([0.3, -0.2, 0.0]), np.array([0.1, 0.1, 0.0])
    rotated = gaussian.factorize(rotation @ cov @ rotation.T)
    assert gaussian.log_density(rotation @ v, rotation @ mean, rotated) == pytest.approx(
        gaussian.log_density(v, mean, gaussian.factorize(cov)), abs=1e-10
    )


def test_mahalanobis():
    identity = gaussian.factorize(np.eye(3))
    v = np.array([1.0, 2.0, 2.0])
    assert gaussian.mahalanobis_sq(v, v, identity) == 0
    assert gaussian.mahalanobis_sq(v, np.zeros(3), identity) == pytest.approx(9)
    fac = gaussian.factorize(np.diag([4.0, 1.0]))
    assert gaussian.mahalanobis_sq(np.array([2.0, 3.0]), np.zeros(2), fac) == pytest.approx(10)
    with pytest.raises(DimensionMismatch):
        gaussian.mahalanobis_sq(np.zeros(2), np.zeros(3), fac)


def test_epsilon_regularization():
    b_svd = linalg.svd(np.diag([1.0, 0.0]))
    fac = gaussian.epsilon_regularized_factorization(b_svd, 1e-4)
    assert fac.rank == 2
    np.testing.assert_allclose(fac.eigenvalues, [(1 + 1e-4) ** 2, 1e-8], rtol=1e-10)
    lifted = gaussian.lifted_factor(b_svd, 1e-4)
    assert gaussian.factorize(lifted @ lifted.T).same_as(fac, atol=1e-14)
    with pytest.raises(NonPositiveEpsilon):
        gaussian.epsilon_regularized_factorization(b_svd, 0)


def test_epsilon_limit_of_mahalanobis():
    b_svd = linalg.svd(np.diag([1.0, 0.0]))
    v = np.array([0.5, 0.0])
    exact = gaussian.mahalanobis_sq(v, np.zeros(2), gaussian.factorize(np.diag([1.0, 0.0])))
    gaps = [
        abs(
            gaussian.mahalanobis_sq(
                v, np.zeros(2), gaussian.epsilon_regularized_factorization(b_svd, eps)
            )
            - exact
        )
        for eps in (1e-2, 1e-4, 1e-6)
    ]
    assert gaps[0] > gaps[1] > gaps[2]


def test_kron_channels():
    fac = gaussian.factorize(np.diag([4.0, 0.0]))
    block = fac.kron_channels(3)
    assert block.rank == 3
    assert block.dim == 6
    assert block.same_as(gaussian.factorize(np.kron(np.eye(3), np.diag([4.0, 0.0]))))
