import numpy as np
import pytest

from lemmse.estimators import augmented_mmse, e_mmse, le_mmse, mmse
from lemmse.grid import PatchGeometry, Translation, translate
from lemmse.operators import build_q_matrices, synthesize_measurement

SHIFTS = [(1, 0), (0, 5), (3, 7), (9, 2)]
RANDOM_SHIFTS = [tuple(g) for g in np.random.default_rng(16).integers(0, 16, size=(16, 2)).tolist()]


@pytest.fixture
def denoising(make_problem, make_dataset, rng):
    forward, pre_inverse = make_problem("denoise", "identity", 16, 16)
    dataset = make_dataset(21, 4, (1, 16, 16), smooth=True)
    y = synthesize_measurement(dataset.values[0], forward, 0.2, rng)
    return forward, pre_inverse, dataset, y


@pytest.mark.parametrize("g_h,g_w", RANDOM_SHIFTS)
def test_lemmse_denoising(denoising, g_h, g_w):
    forward, pre_inverse, dataset, y = denoising
    geom = PatchGeometry(3)
    q = build_q_matrices(forward, pre_inverse, geom)
    g = Translation.of(g_h, g_w, 16, 16)
    shifted = le_mmse(translate(y, g), forward, pre_inverse, dataset, geom, 0.2, q=q)
    plain = le_mmse(y, forward, pre_inverse, dataset, geom, 0.2, q=q)
    assert np.abs(shifted.reconstruction.values - translate(plain.reconstruction.values, g)).max() <= 1e-9


@pytest.mark.parametrize("g_h,g_w", SHIFTS[:2])
def test_e_mmse_denoising(denoising, g_h, g_w):
    forward, pre_inverse, dataset, y = denoising
    g = Translation.of(g_h, g_w, 16, 16)
    shifted = e_mmse(translate(y, g), forward, pre_inverse, dataset, 0.2)
    plain = e_mmse(y, forward, pre_inverse, dataset, 0.2)
    assert np.abs(shifted.reconstruction.values - translate(plain.reconstruction.values, g)).max() <= 1e-9


def test_mmse_is_not_equivariant(denoising):
    forward, pre_inverse, dataset, y = denoising
    g = Translation.of(3, 7, 16, 16)
    shifted = mmse(translate(y, g), forward, pre_inverse, dataset, 0.2)
    plain = mmse(y, forward, pre_inverse, dataset, 0.2)
    assert np.abs(shifted.reconstruction.values - translate(plain.reconstruction.values, g)).max() > 1e-3


@pytest.mark.parametrize("g_h,g_w", [(1, 2), (5, 3)])
def test_e_mmse_deconvolution(make_problem, make_dataset, rng, g_h, g_w):
    """With A, B circulant, A T_g A^+ = T_g so f(T_g y) = T_g f(y)"""
    forward, pre_inverse = make_problem("deconv", "pseudo_inverse")
    dataset = make_dataset(22, 8, smooth=True)
    y = synthesize_measurement(rng.uniform(size=(1, 8, 8)), forward, 0.2, rng)
    g = Translation.of(g_h, g_w, 8, 8)
    moved = forward.apply(translate(pre_inverse.apply(y), g))
    shifted = e_mmse(moved, forward, pre_inverse, dataset, 0.2)
    plain = e_mmse(y, forward, pre_inverse, dataset, 0.2)
    assert np.abs(shifted.reconstruction.values - translate(plain.reconstruction.values, g)).max() <= 1e-8


def test_augmented_mmse_blur(make_problem, make_dataset, rng):
    forward, pre_inverse = make_problem("deconv", "identity")
    dataset = make_dataset(23, 4, smooth=True)
    y = synthesize_measurement(rng.uniform(size=(1, 8, 8)), forward, 0.2, rng)
    g = Translation.of(2, 6, 8, 8)
    shifted = augmented_mmse(translate(y, g), forward, pre_inverse, dataset, 0.2)
    plain = augmented_mmse(y, forward, pre_inverse, dataset, 0.2)
    assert np.abs(shifted.reconstruction.values - translate(plain.reconstruction.values, g)).max() <= 1e-9
