"""Patch and image encoders.

Two families:

* ``toy_cnn`` — three conv layers plus a 1x1 projection; small enough for
  every verification budget in the test suite.
* ``resnext101`` — an aggregated-transform residual network with 101
  layers (cardinality 32, base width 4) for full-scale runs; far too slow
  for routine CPU testing but shape- and contract-compatible.

Both map a batch of square RGB inputs to one feature vector per input via
global average pooling over the final spatial map, so the same trunk
serves 24x24 patches and whole 96x96 images.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigurationError, NumericError
from .layers import Conv2d, Linear, Module
from .patching import PatchGrid

FAMILIES = ("toy_cnn", "resnext101")
NORMALIZATIONS = ("layer_norm", "none")


@dataclass
class EncoderConfig:
    family: str = "toy_cnn"
    latent_dim: int = 128
    normalization: str = "layer_norm"
    # toy_cnn trunk widths
    channels: tuple = (16, 32, 32)

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ConfigurationError(f"unknown encoder family {self.family!r}")
        if self.normalization not in NORMALIZATIONS:
            raise ConfigurationError(f"unknown normalization {self.normalization!r}")
        if self.latent_dim < 1:
            raise ConfigurationError("latent_dim must be >= 1")
        self.channels = tuple(int(c) for c in self.channels)
        if len(self.channels) != 3 or any(c < 1 for c in self.channels):
            raise ConfigurationError("channels must be three positive widths")


@dataclass
class LatentGrid:
    """G x G grid of patch embeddings."""

    values: np.ndarray  # (G, G, D)

    def __post_init__(self):
        v = np.asarray(self.values)
        if v.ndim != 3 or v.shape[0] != v.shape[1]:
            raise ConfigurationError(f"latent grid must be GxGxD, got {v.shape}")
        if not np.isfinite(v).all():
            raise NumericError("latent grid contains non-finite values")

    @property
    def grid_side(self) -> int:
        return self.values.shape[0]

    @property
    def latent_dim(self) -> int:
        return self.values.shape[2]


def pixels_to_input(pixels: np.ndarray, dtype=np.float32) -> np.ndarray:
    """uint8 N x H x W x 3 -> NCHW float in [-1, 1]."""
    arr = np.asarray(pixels)
    if arr.ndim == 3:
        arr = arr[None]
    x = arr.astype(dtype) / 127.5 - 1.0
    return np.ascontiguousarray(x.transpose(0, 3, 1, 2))


def _check_finite(t: Tensor, stage: str) -> Tensor:
    if not np.isfinite(t.data).all():
        raise NumericError(f"non-finite activation after {stage}")
    return t


class ToyCNN(Module):
    """3 conv layers -> 1x1 projection -> GAP -> optional channel norm.

    The normalization standardizes each pooled feature vector across its
    channels, per sample. It must sit after the pooling: normalizing the
    conv maps over space instead would zero their spatial means, and the
    mean pool of a 1x1 projection of mean-free maps collapses to the
    projection bias for every input.
    """

    min_input_size = 8

    def __init__(self, rng: np.random.Generator, config: EncoderConfig, dtype=np.float32):
        c1, c2, c3 = config.channels
        self.config = config
        self.conv1 = Conv2d(rng, 3, c1, 3, stride=1, pad=1, dtype=dtype)
        self.conv2 = Conv2d(rng, c1, c2, 3, stride=2, pad=1, dtype=dtype)
        self.conv3 = Conv2d(rng, c2, c3, 3, stride=2, pad=1, dtype=dtype)
        self.project = Conv2d(rng, c3, config.latent_dim, 1, stride=1, pad=0, dtype=dtype)

    def trunk(self, x: Tensor) -> Tensor:
        h = _check_finite(ad.relu(self.conv1(x)), "conv1")
        h = _check_finite(ad.relu(self.conv2(h)), "conv2")
        h = _check_finite(ad.relu(self.conv3(h)), "conv3")
        return h

    def features(self, x: Tensor) -> Tensor:
        h = self.trunk(x)
        h = _check_finite(self.project(h), "projection")
        v = ad.tmean(h, axis=(2, 3))
        if self.config.normalization == "layer_norm":
            v = ad.normalize(v, (1,))
        return v


class _GroupedConv(Module):
    """Grouped 3x3 convolution built from per-group slices."""

    def __init__(self, rng, channels: int, groups: int, stride: int, dtype):
        if channels % groups:
            raise ConfigurationError("channels must divide evenly into groups")
        self.groups = groups
        self.group_width = channels // groups
        self.convs = [
            Conv2d(rng, self.group_width, self.group_width, 3, stride=stride, pad=1, dtype=dtype)
            for _ in range(groups)
        ]

    def __call__(self, x: Tensor) -> Tensor:
        outs = []
        for gi, conv in enumerate(self.convs):
            outs.append(conv(ad.narrow(x, 1, gi * self.group_width, self.group_width)))
        return ad.concat(outs, axis=1)


class _Bottleneck(Module):
    def __init__(self, rng, c_in, width, c_out, stride, groups, norm, dtype):
        self.norm = norm
        self.reduce = Conv2d(rng, c_in, width, 1, dtype=dtype)
        self.grouped = _GroupedConv(rng, width, groups, stride, dtype)
        self.expand = Conv2d(rng, width, c_out, 1, dtype=dtype)
        if stride != 1 or c_in != c_out:
            self.shortcut = Conv2d(rng, c_in, c_out, 1, stride=stride, dtype=dtype)

    def _n(self, t: Tensor) -> Tensor:
        return ad.normalize(t, (1, 2, 3)) if self.norm else t

    def __call__(self, x: Tensor) -> Tensor:
        h = ad.relu(self._n(self.reduce(x)))
        h = ad.relu(self._n(self.grouped(h)))
        h = self._n(self.expand(h))
        sc = getattr(self, "shortcut", None)
        identity = sc(x) if sc is not None else x
        return ad.relu(ad.add(h, identity))


class ResNeXt101(Module):
    """ResNeXt-101 (32x4d) trunk with a 1x1 projection head.

    Normalization inside blocks is per-sample over channels and space
    (never across the batch: contrastive negatives come from the batch).
    """

    min_input_size = 24
    STAGES = (3, 4, 23, 3)

    def __init__(self, rng: np.random.Generator, config: EncoderConfig, dtype=np.float32):
        self.config = config
        norm = config.normalization == "layer_norm"
        self.stem = Conv2d(rng, 3, 64, 7, stride=2, pad=3, dtype=dtype)
        self.stages = []
        c_in = 64
        width, c_out = 128, 256
        for si, n_blocks in enumerate(self.STAGES):
            blocks = []
            for bi in range(n_blocks):
                stride = 2 if (si > 0 and bi == 0) else 1
                blocks.append(
                    _Bottleneck(rng, c_in, width, c_out, stride, 32, norm, dtype)
                )
                c_in = c_out
            self.stages.append(blocks)
            width, c_out = width * 2, c_out * 2
        self.project = Conv2d(rng, c_in, config.latent_dim, 1, dtype=dtype)
        self._norm = norm

    def trunk(self, x: Tensor) -> Tensor:
        h = self.stem(x)
        if self._norm:
            h = ad.normalize(h, (1, 2, 3))
        h = ad.relu(h)
        h = ad.maxpool2d(h, 3, 2, pad=1)
        _check_finite(h, "stem")
        for si, blocks in enumerate(self.stages):
            for block in blocks:
                h = block(h)
            _check_finite(h, f"stage{si + 2}")
        return h

    def features(self, x: Tensor) -> Tensor:
        h = self.trunk(x)
        h = _check_finite(self.project(h), "projection")
        return ad.tmean(h, axis=(2, 3))


class Classifier(Module):
    """Encoder trunk -> pooled features -> 256-unit hidden layer -> 2-way."""

    def __init__(self, rng: np.random.Generator, encoder: Module, hidden: int = 256, dtype=np.float32):
        self.encoder = encoder
        d = encoder.config.latent_dim
        self.hidden = Linear(rng, d, hidden, dtype=dtype)
        self.output = Linear(rng, hidden, 2, dtype=dtype)

    def logits(self, x: Tensor) -> Tensor:
        feats = self.encoder.features(x)
        return self.output(ad.relu(self.hidden(feats)))


def build_encoder(config: EncoderConfig, seed: int, dtype=np.float32) -> Module:
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xE4C]))
    if config.family == "toy_cnn":
        return ToyCNN(rng, config, dtype=dtype)
    return ResNeXt101(rng, config, dtype=dtype)


def encode_patches(grid: PatchGrid, encoder: Module) -> LatentGrid:
    """Embed every patch of a grid independently -> G x G x D."""
    g = grid.grid_side
    if grid.patch_size < encoder.min_input_size:
        raise ConfigurationError(
            f"{type(encoder).__name__} needs inputs >= {encoder.min_input_size}px, "
            f"got {grid.patch_size}px patches"
        )
    flat = grid.patches.reshape(g * g, grid.patch_size, grid.patch_size, 3)
    x = pixels_to_input(flat, dtype=next(iter(encoder.parameters())).dtype)
    z = encoder.features(Tensor(x)).data
    return LatentGrid(values=z.reshape(g, g, -1))


def encode_image(image, encoder: Module) -> np.ndarray:
    """Whole-image feature vector (the classifier trunk output)."""
    pixels = getattr(image, "pixels", image)
    if pixels.shape[0] < encoder.min_input_size:
        raise ConfigurationError(
            f"{type(encoder).__name__} needs inputs >= {encoder.min_input_size}px"
        )
    x = pixels_to_input(pixels, dtype=next(iter(encoder.parameters())).dtype)
    return encoder.features(Tensor(x)).data[0]
