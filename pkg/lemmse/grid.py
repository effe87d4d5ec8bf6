"""
Images, datasets, cyclic translations and circular patch extraction.

All geometry is periodic: translations wrap around the image borders and patch
windows wrap the same way. Flat pixel indices are row-major, ``n = row*W + col``.
"""

import itertools
from typing import NamedTuple

import numpy as np
from toolz import memoize

from .errors import ConfigError, MixedShapes, ShapeMismatch


class ImageGrid(object):
    """
    A C x H x W real image. The values are stored read-only, so instances can
    be shared freely between threads.
    """

    def __init__(self, values):
        """
        :param values: array of shape (C, H, W), or (H, W) for a single channel
        """
        values = np.array(values, dtype=np.float64)
        if values.ndim == 2:
            values = values[None, ...]
        if values.ndim != 3 or min(values.shape) < 1:
            raise ShapeMismatch(
                "expected an image of shape (C, H, W), got {}".format(values.shape)
            )
        if not np.isfinite(values).all():
            raise ValueError("image values must be finite")
        values.flags.writeable = False
        self.values = values

    def __array__(self, dtype=None, copy=None):
        if dtype is None:
            return self.values
        return self.values.astype(dtype)

    def __repr__(self):
        return "ImageGrid(C={}, H={}, W={})".format(*self.shape)

    @property
    def shape(self):
        return self.values.shape

    @property
    def channels(self):
        return self.values.shape[0]

    @property
    def height(self):
        return self.values.shape[1]

    @property
    def width(self):
        return self.values.shape[2]

    @property
    def size(self):
        """number of pixels N = H*W"""
        return self.values.shape[1] * self.values.shape[2]

    def flat(self):
        return self.values.reshape(-1)

    def pixels(self):
        """(N, C) view of the per-pixel channel vectors"""
        return self.values.reshape(self.channels, -1).T

    @classmethod
    def from_flat(cls, vector, shape):
        return cls(np.asarray(vector, dtype=np.float64).reshape(shape))


def as_array(img):
    """Return the (C, H, W) float array behind an image-like object"""
    values = np.asarray(img, dtype=np.float64)
    if values.ndim == 2:
        values = values[None, ...]
    return values


class Dataset(object):
    """
    An ordered, non-empty collection of images that share one shape. Items are
    identified by their position 0..K-1.
    """

    def __init__(self, images, names=None):
        """
        :param images: sequence of image-likes, or an array of shape (K, C, H, W)
        :param names: optional labels (e.g. file names), one per image
        """
        if isinstance(images, np.ndarray) and images.ndim == 4:
            values = np.array(images, dtype=np.float64)
        else:
            arrays = [as_array(img) for img in images]
            if not arrays:
                raise ShapeMismatch("a dataset needs at least one image")
            shapes = sorted(set(a.shape for a in arrays))
            if len(shapes) > 1:
                raise MixedShapes(
                    "all images must share one shape, found {}".format(shapes)
                )
            values = np.stack(arrays)
        if len(values) == 0:
            raise ShapeMismatch("a dataset needs at least one image")
        if not np.isfinite(values).all():
            raise ValueError("image values must be finite")
        values.flags.writeable = False
        self.values = values
        if names is not None and len(names) != len(values):
            raise ShapeMismatch("got {} names for {} images".format(len(names), len(values)))
        self.names = list(names) if names is not None else None

    def __len__(self):
        return self.values.shape[0]

    def __getitem__(self, i):
        return ImageGrid(self.values[i])

    def __iter__(self):
        for i in range(len(self)):
            yield self[i]

    def __repr__(self):
        return "Dataset(K={}, C={}, H={}, W={})".format(*self.values.shape)

    @property
    def ids(self):
        return np.arange(len(self))

    @property
    def shape(self):
        """shape (C, H, W) shared by every item"""
        return self.values.shape[1:]

    def subset(self, indices):
        names = None if self.names is None else [self.names[i] for i in indices]
        return Dataset(self.values[np.asarray(indices)], names=names)


class Translation(NamedTuple):
    """An element of the cyclic group Z_H x Z_W"""

    g_h: int
    g_w: int
    height: int
    width: int

    @classmethod
    def identity(cls, height, width):
        return cls(0, 0, height, width)

    @classmethod
    def of(cls, g_h, g_w, height, width):
        return cls(g_h % height, g_w % width, height, width)

    @classmethod
    def group(cls, height, width):
        """Every translation of an H x W grid, row-major in (g_h, g_w)"""
        for g_h, g_w in itertools.product(range(height), range(width)):
            yield cls(g_h, g_w, height, width)

    @classmethod
    def from_index(cls, index, height, width):
        return cls(index // width, index % width, height, width)

    @property
    def index(self):
        return self.g_h * self.width + self.g_w

    def compose(self, other):
        if (self.height, self.width) != (other.height, other.width):
            raise ShapeMismatch("translations act on different grids")
        return Translation.of(
            self.g_h + other.g_h, self.g_w + other.g_w, self.height, self.width
        )

    def inverse(self):
        return Translation.of(-self.g_h, -self.g_w, self.height, self.width)


def roll(values, g_h, g_w):
    """Cyclically shift the two trailing axes: out[..., i, j] = in[..., i-g_h, j-g_w]"""
    return np.roll(values, (g_h, g_w), axis=(-2, -1))


def translate(img, g):
    """
    Apply T_g to an image.

    :param img: ImageGrid (or array with trailing (H, W) axes)
    :param g: Translation
    :returns: an ImageGrid if an ImageGrid was given, else an array
    """
    values = as_array(img) if isinstance(img, ImageGrid) else np.asarray(img)
    if values.shape[-2:] != (g.height, g.width):
        raise ShapeMismatch(
            "translation on {}x{} applied to shape {}".format(
                g.height, g.width, values.shape
            )
        )
    out = roll(values, g.g_h, g.g_w)
    return ImageGrid(out) if isinstance(img, ImageGrid) else out


def shift_index(n, g):
    """Flat index of pixel n moved by the translation g"""
    row, col = np.divmod(n, g.width)
    return ((row + g.g_h) % g.height) * g.width + (col + g.g_w) % g.width


class PatchGeometry(object):
    """A centered square window of odd side, wrapped circularly"""

    def __init__(self, side):
        side = int(side)
        if side < 1 or side % 2 == 0:
            raise ConfigError("patch side must be an odd positive integer, got {}".format(side))
        self.side = side
        half = side // 2
        dr, dc = np.meshgrid(np.arange(-half, half + 1), np.arange(-half, half + 1), indexing="ij")
        self.offsets = np.stack([dr.ravel(), dc.ravel()], axis=1)
        self.offsets.flags.writeable = False

    def __repr__(self):
        return "PatchGeometry(side={})".format(self.side)

    def __eq__(self, other):
        return isinstance(other, PatchGeometry) and other.side == self.side

    def __hash__(self):
        return hash(("PatchGeometry", self.side))

    @property
    def size(self):
        """P = side**2"""
        return self.side**2

    @property
    def center(self):
        """position of the (0, 0) offset within the window"""
        return self.size // 2


@memoize
def patch_index(height, width, side):
    """
    (N, P) table of flat pixel indices: row n lists the window around pixel n,
    offsets in row-major (dr, dc) order.
    """
    geom = PatchGeometry(side)
    n = np.arange(height * width)
    rows = (n // width)[:, None] + geom.offsets[None, :, 0]
    cols = (n % width)[:, None] + geom.offsets[None, :, 1]
    index = (rows % height) * width + cols % width
    index.flags.writeable = False
    return index


def extract_patch(img, n, geom):
    """
    Extract the C*P vector of the window centered at pixel n, ordered
    (channel, dr, dc) row-major.
    """
    values = as_array(img)
    channels, height, width = values.shape
    if not 0 <= n < height * width:
        raise IndexError("pixel {} outside a {}x{} grid".format(n, height, width))
    index = patch_index(height, width, geom.side)[n]
    return values.reshape(channels, -1)[:, index].reshape(-1)


def patches(values, geom):
    """
    Batched patch extraction.

    :param values: array of shape (..., C, H, W)
    :returns: array of shape (..., N, C*P)
    """
    values = np.asarray(values)
    *batch, channels, height, width = values.shape
    index = patch_index(height, width, geom.side)
    flat = values.reshape(tuple(batch) + (channels, height * width))
    # (..., C, N, P) -> (..., N, C, P)
    windows = np.moveaxis(flat[..., index], -3, -2)
    return windows.reshape(tuple(batch) + (height * width, channels * geom.size))


def extract_all_patches(img, geom):
    """(N, C*P) matrix whose row n is extract_patch(img, n, geom)"""
    return patches(as_array(img), geom)


def augment_dataset(dataset):
    """
    The translation orbit of a dataset: T_g x for every image x and every g,
    image-major and then g row-major.
    """
    channels, height, width = dataset.shape
    values = np.concatenate([orbit(x) for x in dataset.values])
    names = None
    if dataset.names is not None:
        names = [
            "{}@{},{}".format(name, g.g_h, g.g_w)
            for name in dataset.names
            for g in Translation.group(height, width)
        ]
    return Dataset(values, names=names)


def orbit(values):
    """
    All cyclic shifts of an array with trailing (H, W) axes.

    :returns: array of shape (H*W, ...) with entry g.index holding T_g values
    """
    height, width = values.shape[-2:]
    return np.stack([roll(values, g.g_h, g.g_w) for g in Translation.group(height, width)])
