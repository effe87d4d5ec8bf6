import numpy as np
import pytest

from lemmse.grid import Dataset
from lemmse.imageio import write_png
from lemmse.operators import (
    make_center_mask,
    make_denoising,
    make_gaussian_blur,
    make_pre_inverse,
)


def smooth_images(rng, count, channels=1, height=8, width=8):
    """Random low-frequency cosine mixtures in [0.1, 0.9]"""
    i, j = np.meshgrid(np.arange(height), np.arange(width), indexing="ij")
    out = np.empty((count, channels, height, width))
    for k in range(count):
        for c in range(channels):
            a, b = [(0, 1), (1, 0), (1, 1)][rng.integers(3)]
            phase = rng.uniform(0, 2 * np.pi)
            wave = np.cos(2 * np.pi * (a * i / height + b * j / width) + phase)
            out[k, c] = 0.5 + 0.3 * wave + 0.1 * rng.uniform(-1, 1)
    return out


@pytest.fixture
def rng():
    return np.random.default_rng(20240917)


@pytest.fixture
def make_dataset():
    def make(seed, count, shape=(1, 8, 8), smooth=False):
        rng = np.random.default_rng(seed)
        if smooth:
            return Dataset(smooth_images(rng, count, *shape))
        return Dataset(rng.uniform(0, 1, size=(count,) + tuple(shape)))

    return make


@pytest.fixture
def make_problem():
    """(forward, pre_inverse) for a task name and pre-inverse kind"""

    def make(task, pre_inverse, height=8, width=8, mask_side=3, blur_std=1.0, lam=None):
        if task == "denoise":
            forward = make_denoising(height, width)
        elif task == "inpaint":
            forward = make_center_mask(height, width, mask_side)
        elif task == "deconv":
            forward = make_gaussian_blur(height, width, blur_std)
        else:
            raise ValueError(task)
        return forward, make_pre_inverse(pre_inverse, forward, lam=lam)

    return make


@pytest.fixture
def toy_pngs(tmp_path):
    """A directory of ten smooth 8x8 grayscale PNGs"""
    directory = tmp_path / "toy"
    directory.mkdir()
    images = smooth_images(np.random.default_rng(7), 10)
    for k, image in enumerate(images):
        write_png(str(directory / "img-{:02d}.png".format(k)), image)
    return directory
