import numpy as np
import pytest

from lemmse.estimators import le_mmse, mmse
from lemmse.grid import Dataset, PatchGeometry

STEP = 1e-5


def jacobian_entry(f, y, out, wrt, h=STEP):
    """central difference of f(y)[out] with respect to y[wrt]"""
    up, down = y.copy(), y.copy()
    up.flat[wrt] += h
    down.flat[wrt] -= h
    return (f(up).flat[out] - f(down).flat[out]) / (2 * h)


@pytest.mark.parametrize("seed", [31, 32, 33])
def test_mmse_jacobian_is_symmetric(make_problem, make_dataset, seed):
    forward, pre_inverse = make_problem("denoise", "identity", 4, 4)
    dataset = make_dataset(seed, 6, (1, 4, 4))
    y = np.random.default_rng(seed).uniform(size=(1, 4, 4))

    def f(v):
        return mmse(v, forward, pre_inverse, dataset, 0.5, top_k=0).reconstruction.values

    jacobian = np.array([[jacobian_entry(f, y, i, j) for j in range(16)] for i in range(16)])
    assert np.abs(jacobian - jacobian.T).max() <= max(1e-5, 10 * STEP)
    # Tweedie: the Jacobian is the posterior covariance over sigma^2, hence PSD
    assert np.linalg.eigvalsh(0.5 * (jacobian + jacobian.T)).min() >= -1e-6


def test_lemmse_jacobian_is_not_symmetric(make_problem, rng):
    """A dataset made of one image with a single positive pixel"""
    forward, pre_inverse = make_problem("denoise", "identity", 5, 5)
    x = np.zeros((1, 1, 5, 5))
    x[0, 0, 2, 2] = 1.0
    dataset = Dataset(x)
    geom = PatchGeometry(3)
    y = x[0] + 0.3 * rng.normal(size=(1, 5, 5))

    def f(v):
        return le_mmse(v, forward, pre_inverse, dataset, geom, 0.5, top_k=0).reconstruction.values

    center, neighbor = 2 * 5 + 2, 2 * 5 + 3
    forward_entry = jacobian_entry(f, y, center, neighbor)
    backward_entry = jacobian_entry(f, y, neighbor, center)
    assert abs(forward_entry - backward_entry) > 1e-6
