"""Cut square images into regular grids of overlapping patches."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import GeometryError


@dataclass(frozen=True)
class PatchGrid:
    """G x G grid of p x p x 3 pixel blocks cut from one square image.

    Patch (i, j) is the crop whose top-left corner sits at row i*stride,
    column j*stride of the source image (row-major, (row, col) = (y, x)).
    """

    patches: np.ndarray  # (G, G, p, p, 3)
    patch_size: int
    stride: int
    source_size: int

    @property
    def grid_side(self) -> int:
        return self.patches.shape[0]


def grid_shape(image_size: int, patch_size: int, stride: int) -> int:
    """Number of patches per side for an exact (unpadded) tiling."""
    if stride < 1:
        raise GeometryError(f"stride must be >= 1, got {stride}")
    if patch_size > image_size:
        raise GeometryError(
            f"patch_size {patch_size} exceeds image size {image_size}"
        )
    span = image_size - patch_size
    if span % stride != 0:
        raise GeometryError(
            f"image size {image_size} with patch {patch_size} leaves span {span} "
            f"not divisible by stride {stride}; no padding is applied"
        )
    return span // stride + 1


def extract_patches(image, patch_size: int, stride: int) -> PatchGrid:
    """Cut an image (ImageSample or HxWx3 array) into its patch grid.

    Every patch is a verbatim crop; adjacent patches share
    patch_size - stride rows/columns of pixels.
    """
    pixels = getattr(image, "pixels", image)
    pixels = np.asarray(pixels)
    if pixels.ndim != 3 or pixels.shape[0] != pixels.shape[1]:
        raise GeometryError(f"expected a square HxWxC image, got shape {pixels.shape}")
    size = pixels.shape[0]
    g = grid_shape(size, patch_size, stride)
    patches = np.empty((g, g, patch_size, patch_size, pixels.shape[2]), dtype=pixels.dtype)
    for i in range(g):
        for j in range(g):
            patches[i, j] = pixels[
                i * stride : i * stride + patch_size,
                j * stride : j * stride + patch_size,
            ]
    return PatchGrid(patches=patches, patch_size=patch_size, stride=stride, source_size=size)
