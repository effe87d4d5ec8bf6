"""
Reading datasets and images from disk, and writing the run artifacts.
"""

import glob
import json
import logging
import os

import numpy as np
from PIL import Image, ImageColor, UnidentifiedImageError

from .errors import MixedShapes, ShapeMismatch, UnreadableFile, UnsupportedBitDepth
from .grid import Dataset, ImageGrid, as_array
from .util import jsonify

logger = logging.getLogger(__name__)

# PIL mode -> full-scale value
_MODES = {
    "1": 1,
    "L": 255,
    "RGB": 255,
    "I;16": 65535,
    "I;16B": 65535,
    "I;16L": 65535,
    # 16-bit grayscale PNGs may decode as 32-bit "I"
    "I": 65535,
}

TENSOR_DTYPE = np.dtype("<f8")


def read_png(path):
    """
    Decode a PNG to a (C, H, W) float64 array in [0, 1].

    :raises UnreadableFile: if the file cannot be opened or decoded
    :raises UnsupportedBitDepth: for modes other than 1, 8 or 16 bit gray and 8 bit RGB
    """
    try:
        with Image.open(path) as img:
            img.load()
            mode = img.mode
            if mode == "P":
                img = img.convert("RGB")
                mode = "RGB"
            if mode not in _MODES:
                raise UnsupportedBitDepth("{}: unsupported image mode {}".format(path, mode))
            values = np.asarray(img, dtype=np.float64)
    except (OSError, UnidentifiedImageError) as e:
        raise UnreadableFile("{}: {}".format(path, e)) from e
    if mode == "I" and (values.min() < 0 or values.max() > 65535):
        raise UnsupportedBitDepth("{}: 32-bit integer samples".format(path))
    values = values / _MODES[mode]
    if values.ndim == 2:
        return values[None]
    return np.moveaxis(values, -1, 0)


def write_png(path, image):
    """Write a 1- or 3-channel image, clipped to [0, 1] and quantized to 8 bits"""
    values = as_array(image)
    if values.shape[0] not in (1, 3):
        raise ShapeMismatch("PNG export needs 1 or 3 channels, got {}".format(values.shape[0]))
    pixels = np.round(np.clip(values, 0, 1) * 255).astype(np.uint8)
    if values.shape[0] == 1:
        Image.fromarray(pixels[0]).save(path)
    else:
        Image.fromarray(np.ascontiguousarray(np.moveaxis(pixels, 0, -1))).save(path)


def load_tensor(path):
    try:
        return np.load(path, allow_pickle=False)
    except (OSError, ValueError) as e:
        raise UnreadableFile("{}: {}".format(path, e)) from e


def save_tensor(path, values):
    """NPY v1.0, little-endian float64, C order"""
    values = np.ascontiguousarray(np.asarray(values), dtype=TENSOR_DTYPE)
    with open(path, "wb") as f:
        np.lib.format.write_array(f, values, version=(1, 0), allow_pickle=False)


def read_image(path):
    """A single (C, H, W) image from a PNG or NPY file"""
    if str(path).lower().endswith(".npy"):
        return ImageGrid(load_tensor(path))
    return ImageGrid(read_png(path))


def list_images(path):
    """PNG files below a directory, in lexicographic order"""
    files = sorted(glob.glob(os.path.join(path, "*.png")))
    if not files:
        raise UnreadableFile("no PNG files in {}".format(path))
    return files


def ingest_dataset(path):
    """
    Load a dataset.

    :param path: a directory of PNG files, a tensor file of shape
        (K, C, H, W), or an explicit list of PNG files
    :returns: Dataset, with file names as item names for PNG input
    """
    if isinstance(path, (list, tuple)):
        files = list(path)
    elif os.path.isdir(path):
        files = list_images(path)
    elif os.path.isfile(path):
        values = load_tensor(path)
        if values.ndim == 3:
            values = values[:, None]
        if values.ndim != 4:
            raise ShapeMismatch(
                "{}: expected a tensor of shape (K, C, H, W), got {}".format(path, values.shape)
            )
        logger.info("loaded %d images of shape %s from %s", len(values), values.shape[1:], path)
        return Dataset(values)
    else:
        raise UnreadableFile("{} does not exist".format(path))

    images = [read_png(f) for f in files]
    shapes = sorted(set(img.shape for img in images))
    if len(shapes) > 1:
        raise MixedShapes("images in {} have shapes {}".format(path, shapes))
    logger.info("loaded %d images of shape %s", len(images), shapes[0])
    return Dataset(images, names=[os.path.basename(f) for f in files])


def export_dataset(path, dataset):
    save_tensor(path, dataset.values)


def id_palette(ids, shape):
    """
    Render a per-pixel image-id map as RGB, one color per id and white for -1.

    :param ids: (N,) integer ids
    :param shape: (H, W)
    :returns: (3, H, W) array in [0, 1]
    """
    ids = np.asarray(ids).reshape(shape)
    out = np.ones((3,) + tuple(shape))
    for i in np.unique(ids[ids >= 0]):
        hue = int(360 * ((i * 0.6180339887) % 1.0))
        rgb = ImageColor.getrgb("hsv({},80%,90%)".format(hue))
        out[:, ids == i] = np.asarray(rgb, dtype=np.float64)[:, None] / 255
    return out


def write_json(path, obj):
    with open(path, "w") as f:
        json.dump(jsonify(obj), f, indent=2)


def read_json(path):
    try:
        with open(path) as f:
            return json.load(f)
    except (OSError, ValueError) as e:
        raise UnreadableFile("{}: {}".format(path, e)) from e


def write_csv(path, frame):
    frame.to_csv(path, index=False)
