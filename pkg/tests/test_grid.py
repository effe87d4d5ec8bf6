import numpy as np
import pytest

from lemmse.errors import ConfigError, MixedShapes
from lemmse.grid import (
    Dataset,
    ImageGrid,
    PatchGeometry,
    Translation,
    augment_dataset,
    extract_all_patches,
    extract_patch,
    orbit,
    shift_index,
    translate,
)


@pytest.fixture
def image(rng):
    return ImageGrid(rng.uniform(size=(3, 5, 6)))


def test_translate_identity(image):
    g = Translation.identity(5, 6)
    np.testing.assert_array_equal(translate(image, g).values, image.values)


def test_translate_wraps():
    img = ImageGrid(np.array([[1.0, 2.0], [3.0, 4.0]]))
    out = translate(img, Translation.of(1, 0, 2, 2))
    np.testing.assert_array_equal(out.values[0], [[3, 4], [1, 2]])


def test_translate_inverse_and_compose(image):
    g = Translation.of(2, -1, 5, 6)
    h = Translation.of(4, 3, 5, 6)
    back = translate(translate(image, g), g.inverse())
    np.testing.assert_array_equal(back.values, image.values)
    np.testing.assert_array_equal(
        translate(translate(image, g), h).values, translate(image, g.compose(h)).values
    )
    assert g.compose(g.inverse()) == Translation.identity(5, 6)


def test_translate_permutes_values(image):
    out = translate(image, Translation.of(3, 5, 5, 6))
    assert np.sum(out.values**2) == pytest.approx(np.sum(image.values**2))
    np.testing.assert_array_equal(np.sort(out.values, axis=None), np.sort(image.values, axis=None))


def test_group_enumeration():
    group = list(Translation.group(3, 4))
    assert len(group) == 12
    assert [g.index for g in group] == list(range(12))
    assert Translation.from_index(7, 3, 4) == Translation(1, 3, 3, 4)


def test_patch_geometry():
    geom = PatchGeometry(3)
    assert geom.size == 9
    assert tuple(geom.offsets[geom.center]) == (0, 0)
    with pytest.raises(ConfigError):
        PatchGeometry(4)
    with pytest.raises(ConfigError):
        PatchGeometry(0)


def test_extract_patch_full_window():
    img = ImageGrid(np.arange(9.0).reshape(3, 3))
    np.testing.assert_array_equal(extract_patch(img, 4, PatchGeometry(3)), np.arange(9.0))


def test_extract_patch_single_pixel(image):
    n = 13
    row, col = divmod(n, image.width)
    np.testing.assert_array_equal(
        extract_patch(image, n, PatchGeometry(1)), image.values[:, row, col]
    )


def test_extract_patch_constant():
    img = ImageGrid(np.full((2, 4, 4), 0.25))
    np.testing.assert_array_equal(extract_patch(img, 0, PatchGeometry(3)), np.full(18, 0.25))


def test_extract_patch_wraps():
    img = ImageGrid(np.arange(16.0).reshape(4, 4))
    # window around the top-left corner wraps to the last row and column
    expected = [15, 12, 13, 3, 0, 1, 7, 4, 5]
    np.testing.assert_array_equal(extract_patch(img, 0, PatchGeometry(3)), expected)


@pytest.mark.parametrize("side", [1, 3, 5])
def test_extract_all_patches_rows(image, side):
    geom = PatchGeometry(side)
    table = extract_all_patches(image, geom)
    assert table.shape == (image.size, image.channels * geom.size)
    for n in (0, 7, image.size - 1):
        np.testing.assert_array_equal(table[n], extract_patch(image, n, geom))
    if side == 1:
        np.testing.assert_array_equal(table, image.pixels())


def test_extract_all_patches_center_column(image):
    geom = PatchGeometry(3)
    table = extract_all_patches(image, geom)
    centers = table[:, [c * geom.size + geom.center for c in range(image.channels)]]
    np.testing.assert_allclose(centers.sum(axis=0), image.values.sum(axis=(1, 2)))


@pytest.mark.parametrize("g_h,g_w", [(0, 1), (2, 3), (4, 5)])
def test_patches_commute_with_translation(image, g_h, g_w):
    geom = PatchGeometry(3)
    g = Translation.of(g_h, g_w, image.height, image.width)
    shifted = extract_all_patches(translate(image, g), geom)
    original = extract_all_patches(image, geom)
    for n in range(image.size):
        np.testing.assert_array_equal(shifted[n], original[shift_index(n, g.inverse())])


def test_augment_enumerates_orbit():
    x = np.array([[[1.0, 2.0], [3.0, 4.0]]])
    augmented = augment_dataset(Dataset([x]))
    assert len(augmented) == 4
    for k, g in enumerate(Translation.group(2, 2)):
        np.testing.assert_array_equal(augmented.values[k], translate(x, g))


def test_orbit_batched(rng):
    values = rng.uniform(size=(2, 3, 4))
    shifts = orbit(values)
    assert shifts.shape == (12, 2, 3, 4)
    for g in Translation.group(3, 4):
        np.testing.assert_array_equal(shifts[g.index], translate(values, g))


def test_augment_constant_image():
    augmented = augment_dataset(Dataset([np.full((1, 2, 2), 0.3)]))
    assert len(augmented) == 4
    np.testing.assert_array_equal(augmented.values, np.full((4, 1, 2, 2), 0.3))


def test_augment_twice(rng):
    dataset = Dataset(rng.uniform(size=(2, 1, 2, 3)))
    twice = augment_dataset(augment_dataset(dataset))
    assert len(twice) == 2 * 6**2
    once = augment_dataset(dataset)
    # every orbit element appears N times
    for x in once.values:
        hits = np.sum(np.all(twice.values == x, axis=(1, 2, 3)))
        assert hits == 6


def test_augment_names():
    dataset = Dataset([np.zeros((1, 1, 2))], names=["a.png"])
    assert augment_dataset(dataset).names == ["a.png@0,0", "a.png@0,1"]


def test_dataset_shapes():
    with pytest.raises(MixedShapes):
        Dataset([np.zeros((1, 8, 8)), np.zeros((1, 16, 16))])
    dataset = Dataset([np.zeros((8, 8)), np.ones((8, 8))])
    assert dataset.shape == (1, 8, 8)
    np.testing.assert_array_equal(dataset.ids, [0, 1])
    assert len(dataset.subset([1])) == 1
