"""Patch grid geometry: the 96px/24px/12px layout and its edge cases."""

import numpy as np
import pytest

from patchcpc.data import ImageSample
from patchcpc.errors import GeometryError
from patchcpc.patching import extract_patches, grid_shape


def test_grid_side_for_reference_geometry():
    # (96 - 24) / 12 + 1 = 7
    assert grid_shape(96, 24, 12) == 7


def test_grid_side_for_synthetic_geometry():
    assert grid_shape(32, 8, 4) == 7


@pytest.mark.parametrize(
    "image,patch,stride",
    [(96, 24, 11), (96, 25, 12), (10, 24, 12), (96, 24, 0)],
)
def test_bad_geometry_rejected(image, patch, stride):
    with pytest.raises(GeometryError):
        grid_shape(image, patch, stride)


def _ramp_image(size):
    # pixel value encodes its coordinates, so overlap checks are exact
    r = np.arange(size, dtype=np.uint8)
    px = np.zeros((size, size, 3), np.uint8)
    px[:, :, 0] = r[:, None]
    px[:, :, 1] = r[None, :]
    px[:, :, 2] = 7
    return px


def test_reference_grid_has_49_patches_with_12px_overlaps():
    grid = extract_patches(_ramp_image(96), 24, 12)
    assert grid.patches.shape == (7, 7, 24, 24, 3)
    assert grid.grid_side == 7
    for i in range(7):
        for j in range(6):
            left = grid.patches[i, j]
            right = grid.patches[i, j + 1]
            np.testing.assert_array_equal(left[:, 12:], right[:, :12])
            below = grid.patches[j + 1, i]
            np.testing.assert_array_equal(grid.patches[j, i][12:], below[:12])


def test_patch_content_matches_source_slices():
    px = _ramp_image(32)
    grid = extract_patches(px, 8, 4)
    for i in range(7):
        for j in range(7):
            np.testing.assert_array_equal(
                grid.patches[i, j], px[4 * i : 4 * i + 8, 4 * j : 4 * j + 8]
            )


def test_extract_accepts_image_sample():
    sample = ImageSample(pixels=_ramp_image(32), label=1, id="s0")
    grid = extract_patches(sample, 8, 4)
    assert grid.patches.shape == (7, 7, 8, 8, 3)
    assert grid.source_size == 32


def test_extract_rejects_non_square():
    with pytest.raises(GeometryError):
        extract_patches(np.zeros((32, 16, 3), np.uint8), 8, 4)


def test_non_overlapping_stride():
    grid = extract_patches(_ramp_image(32), 8, 8)
    assert grid.grid_side == 4
    assert grid.patches.shape == (4, 4, 8, 8, 3)
