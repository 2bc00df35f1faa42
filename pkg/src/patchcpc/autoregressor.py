"""Causal context building over the latent grid.

Masked convolutions enforce that a position's context never contains the
latent it will be asked to predict. Two stack flavors:

* ``single`` — one downward-looking stack: block 1 uses mask A (rows
  strictly above only), blocks 2-6 use mask B (raster preceding-or-equal).
  Output at row r is a function of latent rows < r only.
* ``multi`` — four directional streams, one per 90-degree rotation, each
  an all-mask-A stack run in its own rotated frame, re-aligned and fused
  once by a final 1x1 convolution. Output at (i, j) sees every grid
  position except (i, j) itself.

The fusion point is the one structural liberty taken here: reducing the
four branches to C channels after every block (instead of once at the
end) lets position (i, j) reach itself in two hops — block 1 writes it
into a neighbor, block 2 reads the neighbor back — which defeats the
whole point of the masks. Keeping the streams separate until a single
final reduction preserves per-stream half-plane causality at any depth,
and the union of the four half-planes is exactly "everything but self".

Mask A here hides the entire center row, not just the center tap and the
taps right of it. A stack whose first layer keeps same-row-left taps
would make context at row r depend on latents in row r, and strict row
causality ("context at row r sees only rows above") is the property the
top-down scheme predicts against.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigurationError, GeometryError, NumericError
from .layers import Conv2d, Module

MASK_TYPES = ("A", "B")
MODES = ("single", "multi")
STACK_DEPTH = 6


@dataclass
class MaskedConvSpec:
    kernel_size: int
    mask_type: str
    in_channels: int
    out_channels: int

    def __post_init__(self):
        if self.kernel_size < 1 or self.kernel_size % 2 == 0:
            raise ConfigurationError(
                f"masked conv kernel must be odd, got {self.kernel_size}"
            )
        if self.mask_type not in MASK_TYPES:
            raise ConfigurationError(f"mask_type must be A or B, got {self.mask_type!r}")
        if self.in_channels < 1 or self.out_channels < 1:
            raise ConfigurationError("channel counts must be positive")


def build_mask(mask_type: str, kernel_size: int) -> np.ndarray:
    """k x k 0/1 array of visible taps.

    A: rows strictly above the center row. B: those plus the center row
    through the center column inclusive.
    """
    if kernel_size < 1 or kernel_size % 2 == 0:
        raise ConfigurationError(f"masked conv kernel must be odd, got {kernel_size}")
    if mask_type not in MASK_TYPES:
        raise ConfigurationError(f"mask_type must be A or B, got {mask_type!r}")
    c = kernel_size // 2
    mask = np.zeros((kernel_size, kernel_size), dtype=np.float64)
    mask[:c, :] = 1.0
    if mask_type == "B":
        mask[c, : c + 1] = 1.0
    return mask


@dataclass
class ContextGrid:
    """G x G grid of context vectors, same spatial shape as its input."""

    values: np.ndarray  # (G, G, D)

    def __post_init__(self):
        v = np.asarray(self.values)
        if v.ndim != 3 or v.shape[0] != v.shape[1]:
            raise GeometryError(f"context grid must be GxGxD, got {v.shape}")
        if not np.isfinite(v).all():
            raise NumericError("context grid contains non-finite values")

    @property
    def grid_side(self) -> int:
        return self.values.shape[0]


class MaskedConv2d(Module):
    """Stride-1, shape-preserving convolution with a causal tap mask."""

    def __init__(self, rng: np.random.Generator, spec: MaskedConvSpec, dtype=np.float32):
        self.spec = spec
        self.conv = Conv2d(
            rng,
            spec.in_channels,
            spec.out_channels,
            spec.kernel_size,
            stride=1,
            pad=spec.kernel_size // 2,
            mask=build_mask(spec.mask_type, spec.kernel_size),
            dtype=dtype,
        )

    def __call__(self, x: Tensor) -> Tensor:
        return self.conv(x)


class MultiDirectionalBlock(Module):
    """Four rotated masked convolutions, re-aligned, concatenated, reduced.

    Each branch b rotates the input by b*90 degrees, applies its masked
    convolution, and rotates the result back so all four outputs describe
    the same spatial location before the channel concat. The block is
    linear: on a 1x1 grid with mask A nothing is visible, so the output
    is exactly the 1x1 reduction applied to the four branch biases.
    """

    def __init__(
        self,
        rng: np.random.Generator,
        spec: MaskedConvSpec,
        share_weights: bool = False,
        dtype=np.float32,
    ):
        self.spec = spec
        self.share_weights = share_weights
        if share_weights:
            self.branch = MaskedConv2d(rng, spec, dtype=dtype)
        else:
            self.branches = [MaskedConv2d(rng, spec, dtype=dtype) for _ in range(4)]
        self.reduction = Conv2d(rng, 4 * spec.out_channels, spec.out_channels, 1, dtype=dtype)

    def branch_conv(self, rotation: int) -> MaskedConv2d:
        return self.branch if self.share_weights else self.branches[rotation]

    def __call__(self, x: Tensor) -> Tensor:
        aligned = []
        for b in range(4):
            h = ad.rot90_grid(x, b)
            h = self.branch_conv(b)(h)
            aligned.append(ad.rot90_grid(h, -b))
        return self.reduction(ad.concat(aligned, axis=1))


def _stream_forward(blocks, x: Tensor) -> Tensor:
    # No residual on block 1: adding the raw input would hand every
    # position its own latent and void the mask.
    h = ad.relu(blocks[0](x))
    for block in blocks[1:]:
        h = ad.add(ad.relu(block(h)), h)
    return h


class SingleStack(Module):
    """Downward-looking stack: mask A first, mask B after."""

    mode = "single"

    def __init__(
        self,
        rng: np.random.Generator,
        channels: int,
        n_blocks: int = STACK_DEPTH,
        kernel_size: int = 3,
        dtype=np.float32,
    ):
        if n_blocks < 1:
            raise ConfigurationError("stack needs at least one block")
        self.blocks = [
            MaskedConv2d(
                rng,
                MaskedConvSpec(kernel_size, "A" if i == 0 else "B", channels, channels),
                dtype=dtype,
            )
            for i in range(n_blocks)
        ]

    @property
    def n_blocks(self) -> int:
        return len(self.blocks)

    def __call__(self, x: Tensor) -> Tensor:
        return _stream_forward(self.blocks, x)


class MultiStack(Module):
    """Four all-mask-A directional streams fused once at the end."""

    mode = "multi"

    def __init__(
        self,
        rng: np.random.Generator,
        channels: int,
        n_blocks: int = STACK_DEPTH,
        kernel_size: int = 3,
        share_branch_weights: bool = False,
        dtype=np.float32,
    ):
        if n_blocks < 1:
            raise ConfigurationError("stack needs at least one block")
        self.share_branch_weights = share_branch_weights

        def make_blocks():
            return [
                MaskedConv2d(
                    rng, MaskedConvSpec(kernel_size, "A", channels, channels), dtype=dtype
                )
                for _ in range(n_blocks)
            ]

        if share_branch_weights:
            self.blocks = make_blocks()
        else:
            self.streams = [make_blocks() for _ in range(4)]
        self.fusion = Conv2d(rng, 4 * channels, channels, 1, dtype=dtype)

    @property
    def n_blocks(self) -> int:
        return len(self.blocks if self.share_branch_weights else self.streams[0])

    def stream_blocks(self, rotation: int):
        return self.blocks if self.share_branch_weights else self.streams[rotation]

    def __call__(self, x: Tensor) -> Tensor:
        aligned = []
        for r in range(4):
            h = _stream_forward(self.stream_blocks(r), ad.rot90_grid(x, r))
            aligned.append(ad.rot90_grid(h, -r))
        return self.fusion(ad.concat(aligned, axis=1))


def build_stack(
    directional: str,
    channels: int,
    seed: int,
    n_blocks: int = STACK_DEPTH,
    kernel_size: int = 3,
    share_branch_weights: bool = False,
    dtype=np.float32,
) -> Module:
    if directional not in MODES:
        raise ConfigurationError(f"directional must be one of {MODES}, got {directional!r}")
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xA12]))
    if directional == "single":
        return SingleStack(rng, channels, n_blocks, kernel_size, dtype=dtype)
    return MultiStack(
        rng, channels, n_blocks, kernel_size, share_branch_weights, dtype=dtype
    )


def grid_to_nchw(grid) -> Tensor:
    """(G, G, C) grid (array, Tensor, LatentGrid-like) -> (1, C, G, G) Tensor."""
    values = getattr(grid, "values", grid)
    if not isinstance(values, Tensor):
        values = Tensor(np.asarray(values))
    if values.ndim != 3 or values.shape[0] != values.shape[1]:
        raise GeometryError(f"expected a square GxGxC grid, got {values.shape}")
    g, _, c = values.shape
    return ad.reshape(ad.transpose(values, (2, 0, 1)), (1, c, g, g))


def nchw_to_grid(x: Tensor) -> Tensor:
    """(1, C, G, G) Tensor -> (G, G, C) Tensor."""
    _, c, g, g2 = x.shape
    return ad.transpose(ad.reshape(x, (c, g, g2)), (1, 2, 0))


def masked_conv(grid, conv: MaskedConv2d) -> Tensor:
    """Apply a masked convolution to a (G, G, C) grid -> (G, G, C') Tensor."""
    return nchw_to_grid(conv(grid_to_nchw(grid)))


def multi_directional_block(grid, block: MultiDirectionalBlock) -> Tensor:
    """Apply a multi-directional block to a (G, G, C) grid -> (G, G, C) Tensor."""
    return nchw_to_grid(block(grid_to_nchw(grid)))


def autoregress(masked_latents, stack: Module, directional: str | None = None) -> ContextGrid:
    """Summarize a masked latent grid into a same-shape context grid.

    ``stack`` must carry exactly six blocks; ``directional``, when given,
    must agree with the stack's own mode.
    """
    if directional is not None and directional != stack.mode:
        raise ConfigurationError(
            f"requested {directional!r} context from a {stack.mode!r} stack"
        )
    if stack.n_blocks != STACK_DEPTH:
        raise ConfigurationError(
            f"context stack must have exactly {STACK_DEPTH} blocks, got {stack.n_blocks}"
        )
    out = nchw_to_grid(stack(grid_to_nchw(masked_latents)))
    return ContextGrid(values=out.data)
