import numpy as np
import pytest

from lemmse.errors import (
    ConfigError,
    EmptyStratum,
    NonPositiveStd,
    SideTooLarge,
)
from lemmse.grid import PatchGeometry, Translation, patch_index, translate
from lemmse.operators import (
    DenseOperator,
    build_q_matrices,
    make_center_mask,
    make_denoising,
    make_gaussian_blur,
    make_pre_inverse,
    stratum_of,
    synthesize_measurement,
)


def test_denoising(rng):
    op = make_denoising(4, 5)
    x = rng.normal(size=(2, 4, 5))
    np.testing.assert_array_equal(op.apply(x), x)
    np.testing.assert_array_equal(op.adjoint(x), x)
    np.testing.assert_array_equal(op.dense(), np.eye(20))


def test_center_mask():
    op = make_center_mask(32, 32, 15)
    assert len(op.masked_pixels) == 225
    assert not op.mask[8, 8]
    assert not op.mask[22, 22]
    assert op.mask[7, 8] and op.mask[23, 22]


def test_center_mask_side_zero(rng):
    op = make_center_mask(6, 6, 0)
    x = rng.normal(size=(1, 6, 6))
    np.testing.assert_array_equal(op.apply(x), x)


def test_center_mask_idempotent(rng):
    op = make_center_mask(8, 8, 3)
    x = rng.normal(size=(3, 8, 8))
    np.testing.assert_array_equal(op.apply(op.apply(x)), op.apply(x))


def test_center_mask_too_large():
    with pytest.raises(SideTooLarge):
        make_center_mask(8, 8, 9)


def test_blur_kernel():
    op = make_gaussian_blur(32, 32, 1.0)
    assert op.kernel.sum() == pytest.approx(1, abs=1e-12)
    assert op.kernel[0, 0] == op.kernel.max()
    assert op.kernel[0, 1] == pytest.approx(op.kernel[0, -1])
    with pytest.raises(NonPositiveStd):
        make_gaussian_blur(8, 8, 0.0)


def test_blur_preserves_constants():
    op = make_gaussian_blur(16, 12, 1.5)
    np.testing.assert_allclose(op.apply(np.full((1, 16, 12), 0.7)), 0.7, atol=1e-12)


@pytest.mark.parametrize("g_h,g_w", [(1, 0), (3, 5), (7, 2)])
def test_blur_commutes_with_translation(rng, g_h, g_w):
    op = make_gaussian_blur(8, 8, 1.0)
    x = rng.normal(size=(2, 8, 8))
    g = Translation.of(g_h, g_w, 8, 8)
    assert np.abs(op.apply(translate(x, g)) - translate(op.apply(x), g)).max() <= 1e-10


@pytest.mark.parametrize("task", ["denoise", "inpaint", "deconv"])
def test_dense_matches_apply(make_problem, rng, task):
    forward, pre_inverse = make_problem(task, "tikhonov", lam=0.1)
    x = rng.normal(size=(8, 8))
    for op in (forward, pre_inverse):
        assert np.abs(op.dense() @ x.ravel() - op.apply(x).ravel()).max() <= 1e-10
        np.testing.assert_allclose(op.rows([3, 17]), op.dense()[[3, 17]], atol=1e-12)
    y = rng.normal(size=(8, 8))
    # adjoint
    assert np.sum(forward.apply(x) * y) == pytest.approx(np.sum(x * forward.adjoint(y)), rel=1e-12)


@pytest.mark.parametrize("task", ["denoise", "inpaint", "deconv"])
def test_pseudo_inverse_identities(make_problem, task):
    forward, pre_inverse = make_problem(task, "pseudo_inverse")
    a, b = forward.dense(), pre_inverse.dense()
    scale = max(1.0, np.abs(b).max())
    assert np.abs(a @ b @ a - a).max() <= 1e-8
    assert np.abs(b @ a @ b - b).max() <= 1e-8 * scale**2
    assert np.abs((a @ b).T - a @ b).max() <= 1e-8 * scale
    assert np.abs((b @ a).T - b @ a).max() <= 1e-8 * scale


def test_inpaint_pseudo_inverse_is_mask(make_problem, rng):
    forward, pre_inverse = make_problem("inpaint", "pseudo_inverse")
    y = rng.normal(size=(1, 8, 8))
    np.testing.assert_array_equal(pre_inverse.apply(y), forward.apply(y))
    np.testing.assert_array_equal(
        pre_inverse.apply(forward.apply(pre_inverse.apply(y))), pre_inverse.apply(y)
    )


def test_tikhonov_closed_form(make_problem):
    forward, pre_inverse = make_problem("deconv", "tikhonov", lam=1e-2)
    a = forward.dense()
    expected = a.T @ np.linalg.inv(a @ a.T + 1e-2 * np.eye(64))
    assert np.abs(pre_inverse.dense() - expected).max() <= 1e-8


def test_tikhonov_improves_on_blur(make_problem, rng):
    forward, pre_inverse = make_problem("deconv", "tikhonov", lam=1e-2)
    i = np.arange(8)
    x = np.sin(2 * np.pi * i / 8)[:, None] * np.cos(2 * np.pi * i / 8)[None, :]
    ax = forward.apply(x)
    assert np.linalg.norm(pre_inverse.apply(ax) - x) < np.linalg.norm(ax - x)


def test_pre_inverse_identity(make_problem, rng):
    _, pre_inverse = make_problem("deconv", "identity")
    y = rng.normal(size=(1, 8, 8))
    np.testing.assert_array_equal(pre_inverse.apply(y), y)
    assert not pre_inverse.physics_aware


def test_pre_inverse_errors(make_problem):
    forward, _ = make_problem("deconv", "identity")
    with pytest.raises(ConfigError):
        make_pre_inverse("tikhonov", forward)
    with pytest.raises(ConfigError):
        make_pre_inverse("wiener", forward)


def test_dense_pre_inverse(rng):
    blur = make_gaussian_blur(4, 4, 0.8)
    forward = DenseOperator(blur.dense(), 4, 4)
    pre_inverse = make_pre_inverse("pseudo_inverse", forward)
    np.testing.assert_allclose(pre_inverse.dense(), np.linalg.pinv(blur.dense()), atol=1e-8)


def test_inpaint_projection_contracts(rng):
    op = make_center_mask(8, 8, 3)
    e = rng.normal(size=(1, 8, 8))
    assert np.linalg.norm(op.project_row_space(e)) < np.linalg.norm(e)
    off_mask = e * op.mask
    assert np.linalg.norm(op.project_row_space(off_mask)) == pytest.approx(
        np.linalg.norm(off_mask)
    )


@pytest.mark.parametrize("channels", [1, 3])
def test_q_matrices_identity(channels):
    forward = make_denoising(6, 6)
    q = build_q_matrices(forward, make_pre_inverse("identity", forward), PatchGeometry(3), channels)
    assert len(q.factorizations) == 1
    assert q.strata.constant_rank
    assert q.strata.counts() == {9 * channels: 36}
    fac = q.factorization(0)
    np.testing.assert_allclose(fac.covariance(), np.eye(9 * channels), atol=1e-12)


def test_q_matrices_circulant_shared(make_problem):
    forward, pre_inverse = make_problem("deconv", "pseudo_inverse")
    geom = PatchGeometry(3)
    q = build_q_matrices(forward, pre_inverse, geom)
    assert len(q.factorizations) == 1
    index = patch_index(8, 8, 3)
    shared = q.factorization(0)
    for n in (0, 9, 63):
        rows = pre_inverse.rows(index[n])
        assert np.abs(shared.covariance() - rows @ rows.T).max() <= 1e-10 * np.abs(rows @ rows.T).max()


def test_q_matrices_mean_patches(make_problem, rng):
    forward, pre_inverse = make_problem("deconv", "tikhonov", lam=0.05)
    geom = PatchGeometry(3)
    q = build_q_matrices(forward, pre_inverse, geom)
    x = rng.uniform(size=(1, 8, 8))
    means = q.mean_patches(x)
    index = patch_index(8, 8, 3)
    qn = pre_inverse.dense()[index[10]]
    np.testing.assert_allclose(means[10], qn @ forward.dense() @ x.ravel(), atol=1e-12)


def test_inpaint_strata():
    forward = make_center_mask(32, 32, 15)
    pre_inverse = make_pre_inverse("pseudo_inverse", forward)
    q = build_q_matrices(forward, pre_inverse, PatchGeometry(5))
    unmasked = forward.mask.ravel()[patch_index(32, 32, 5)].sum(axis=1)
    np.testing.assert_array_equal(q.strata.ranks, unmasked)
    assert set(q.strata.strata) == set(np.unique(unmasked).tolist())
    assert 0 in q.strata.strata
    assert not q.strata.constant_rank
    covered = np.concatenate(list(q.strata.strata.values()))
    np.testing.assert_array_equal(np.sort(covered), np.arange(32 * 32))


def test_stratum_of_identity(rng):
    forward = make_denoising(6, 6)
    q = build_q_matrices(forward, make_pre_inverse("identity", forward), PatchGeometry(3))
    rank, admissible = stratum_of(rng.normal(size=9), 4, q)
    assert rank == 9
    np.testing.assert_array_equal(admissible, np.arange(36))


def test_stratum_of_inpaint_matches_window_patterns(rng):
    forward = make_center_mask(16, 16, 3)
    pre_inverse = make_pre_inverse("pseudo_inverse", forward)
    geom = PatchGeometry(3)
    q = build_q_matrices(forward, pre_inverse, geom)
    index = patch_index(16, 16, 3)
    patterns = forward.mask.ravel()[index]
    y = rng.uniform(0.1, 1.0, size=(1, 16, 16))
    v = q.query_patches(y)
    for n_prime in (0, 7 * 16 + 6, 7 * 16 + 7, 8 * 16 + 9):
        rank, admissible = stratum_of(v[n_prime], n_prime, q)
        expected = np.flatnonzero(np.all(patterns == patterns[n_prime], axis=1))
        assert rank == patterns[n_prime].sum()
        np.testing.assert_array_equal(admissible, expected)


def test_stratum_of_zero_patch():
    forward = make_center_mask(16, 16, 5)
    q = build_q_matrices(forward, make_pre_inverse("pseudo_inverse", forward), PatchGeometry(3))
    center = 8 * 16 + 8
    rank, admissible = stratum_of(np.zeros(9), center, q)
    assert rank == 0
    assert center in admissible


def test_stratum_of_dense_patch():
    forward = make_center_mask(16, 16, 5)
    q = build_q_matrices(forward, make_pre_inverse("pseudo_inverse", forward), PatchGeometry(3))
    # only fully observed windows carry a patch that is nonzero at every offset
    rank, admissible = stratum_of(np.ones(9), 0, q)
    assert rank == 9
    np.testing.assert_array_equal(admissible, q.strata.strata[9])


def test_stratum_of_off_support():
    forward = make_center_mask(4, 4, 4)
    q = build_q_matrices(forward, make_pre_inverse("pseudo_inverse", forward), PatchGeometry(3))
    assert q.strata.counts() == {0: 16}
    with pytest.raises(EmptyStratum):
        stratum_of(np.ones(9), 0, q)


def test_synthesize_noise_statistics(make_problem):
    forward, _ = make_problem("inpaint", "identity", 64, 64, mask_side=8)
    clean = np.full((1, 64, 64), 0.5)
    residual = synthesize_measurement(clean, forward, 0.3, 11) - forward.apply(clean)
    assert abs(residual.mean()) < 0.03
    assert residual.var() == pytest.approx(0.09, rel=0.1)


def test_synthesize_reproducible(make_problem):
    forward, _ = make_problem("deconv", "identity")
    clean = np.full((1, 8, 8), 0.5)
    first = synthesize_measurement(clean, forward, 0.1, np.random.SeedSequence([3, 1]))
    again = synthesize_measurement(clean, forward, 0.1, np.random.SeedSequence([3, 1]))
    other = synthesize_measurement(clean, forward, 0.1, np.random.SeedSequence([3, 2]))
    np.testing.assert_array_equal(first, again)
    assert not np.array_equal(first, other)
    np.testing.assert_array_equal(synthesize_measurement(clean, forward, 0.0), forward.apply(clean))
    with pytest.raises(ConfigError):
        synthesize_measurement(clean, forward, -1.0)
