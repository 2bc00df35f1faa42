"""Latent masking, prediction heads, negative sampling and the InfoNCE loss.

The objective is a softmax cross-entropy over inner-product scores: for
each target position the model must pick the true latent out of a lineup
of latents taken from other images at the same grid position. Context
never contains target latents (they are zero-filled before the context
stack runs), so the only way to win the lineup is to predict.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .encoder import LatentGrid
from .errors import (
    ConfigurationError,
    GeometryError,
    InvalidArgumentError,
    NumericError,
)
from .layers import Linear, Module

MASK_KINDS = ("top_down", "infill")


@dataclass
class LatentMask:
    """Partition of the grid into visible context and predicted targets."""

    kind: str
    context: np.ndarray  # (G, G) bool
    targets: np.ndarray  # (G, G) bool
    context_rows: int | None = None

    def __post_init__(self):
        if self.kind not in MASK_KINDS:
            raise InvalidArgumentError(f"mask kind must be one of {MASK_KINDS}")
        c, t = np.asarray(self.context), np.asarray(self.targets)
        if c.shape != t.shape or c.ndim != 2 or c.shape[0] != c.shape[1]:
            raise GeometryError("context/targets must be equal square boolean grids")
        if (c & t).any() or not (c | t).all():
            raise InvalidArgumentError("context and targets must partition the grid")

    @property
    def grid_side(self) -> int:
        return self.context.shape[0]

    @property
    def n_targets(self) -> int:
        return int(self.targets.sum())


def make_topdown_mask(grid_side: int, context_rows: int = 3) -> LatentMask:
    """Top ``context_rows`` rows are context; every row below is a target."""
    if not 1 <= context_rows < grid_side:
        raise InvalidArgumentError(
            f"context_rows must be in [1, {grid_side}); got {context_rows}"
        )
    context = np.zeros((grid_side, grid_side), dtype=bool)
    context[:context_rows] = True
    return LatentMask(
        kind="top_down", context=context, targets=~context, context_rows=context_rows
    )


def make_infill_mask(grid_side: int) -> LatentMask:
    """Perimeter ring is context; the interior is the target set."""
    if grid_side < 3:
        raise InvalidArgumentError(
            f"in-fill needs a grid side of at least 3, got {grid_side}"
        )
    context = np.zeros((grid_side, grid_side), dtype=bool)
    context[0, :] = context[-1, :] = True
    context[:, 0] = context[:, -1] = True
    return LatentMask(kind="infill", context=context, targets=~context)


def target_positions(mask: LatentMask) -> np.ndarray:
    """(T, 2) target coordinates in raster order; fixes prediction order."""
    return np.argwhere(mask.targets)


def apply_mask(latents: LatentGrid, mask: LatentMask) -> LatentGrid:
    """Zero-fill target latents; context latents pass through bitwise."""
    values = np.asarray(latents.values)
    if values.shape[:2] != mask.context.shape:
        raise GeometryError(
            f"latent grid {values.shape[:2]} does not match mask {mask.context.shape}"
        )
    out = values.copy()
    out[mask.targets] = 0.0
    return LatentGrid(values=out)


def mask_latents(z: Tensor, mask: LatentMask) -> Tensor:
    """Graph version of apply_mask for a (B, G, G, D) latent tensor.

    Multiplying by the 0/1 context map both zeroes target latents and
    cuts their gradient path through the context stack.
    """
    keep = mask.context[None, :, :, None].astype(z.dtype)
    return ad.mul(z, Tensor(keep))


class PredictionHead(Module):
    """Bias-free linear maps from context vectors to predicted latents.

    top_down: one map per row offset k = 1..K below the deepest context
    row. infill: a single map shared by every interior position.
    Initialization is deliberately tiny so that initial scores are near
    zero and the initial loss sits at the uniform-softmax value.
    """

    def __init__(
        self,
        rng: np.random.Generator,
        kind: str,
        latent_dim: int,
        n_offsets: int | None = None,
        init_scale: float | None = None,
        dtype=np.float32,
    ):
        if kind not in MASK_KINDS:
            raise ConfigurationError(f"head kind must be one of {MASK_KINDS}")
        if init_scale is None:
            init_scale = 1e-2 / np.sqrt(latent_dim)
        self.kind = kind
        self.latent_dim = latent_dim
        if kind == "top_down":
            if n_offsets is None or n_offsets < 1:
                raise ConfigurationError("top_down head needs n_offsets >= 1")
            self.maps = [
                Linear(rng, latent_dim, latent_dim, bias=False, scale=init_scale, dtype=dtype)
                for _ in range(n_offsets)
            ]
        else:
            self.map = Linear(
                rng, latent_dim, latent_dim, bias=False, scale=init_scale, dtype=dtype
            )

    @property
    def n_offsets(self) -> int:
        return len(self.maps) if self.kind == "top_down" else 0


def build_head(
    mask: LatentMask,
    latent_dim: int,
    seed: int,
    init_scale: float | None = None,
    dtype=np.float32,
) -> PredictionHead:
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x4EAD]))
    n_offsets = None
    if mask.kind == "top_down":
        n_offsets = mask.grid_side - mask.context_rows
    return PredictionHead(rng, mask.kind, latent_dim, n_offsets, init_scale, dtype)


def predict_targets_batch(context: Tensor, mask: LatentMask, head: PredictionHead) -> Tensor:
    """(B, G, G, D) context -> (B, T, D) predictions in raster target order."""
    if head.kind != mask.kind:
        raise ConfigurationError(
            f"{head.kind!r} head cannot serve a {mask.kind!r} mask"
        )
    b, g, g2, d = context.shape
    if g != mask.grid_side:
        raise GeometryError(f"context side {g} does not match mask side {mask.grid_side}")
    if mask.kind == "top_down":
        t = mask.context_rows - 1
        k_max = g - mask.context_rows
        if head.n_offsets != k_max:
            raise ConfigurationError(
                f"head has {head.n_offsets} offsets, mask needs {k_max}"
            )
        # one context vector per column, taken from the deepest context row
        row = ad.reshape(ad.narrow(context, 1, t, 1), (b * g, d))
        per_offset = [
            ad.reshape(head.maps[k](row), (b, 1, g, d)) for k in range(k_max)
        ]
        return ad.reshape(ad.concat(per_offset, axis=1), (b, k_max * g, d))
    interior = ad.narrow(ad.narrow(context, 1, 1, g - 2), 2, 1, g - 2)
    flat = ad.reshape(interior, (b * (g - 2) * (g - 2), d))
    return ad.reshape(head.map(flat), (b, (g - 2) * (g - 2), d))


def predict_targets(context, mask: LatentMask, head: PredictionHead) -> Tensor:
    """Single-grid predictions: (G, G, D) context -> (T, D) Tensor."""
    values = getattr(context, "values", context)
    if not isinstance(values, Tensor):
        values = Tensor(np.asarray(values))
    g, _, d = values.shape
    batched = predict_targets_batch(ad.reshape(values, (1, g, g, d)), mask, head)
    return ad.reshape(batched, (batched.shape[1], d))


def sample_negatives(
    batch_latents: list,
    position: tuple,
    n: int,
    seed: int,
    positive_index: int = 0,
) -> np.ndarray:
    """n latents at ``position`` drawn from other images, with replacement."""
    if len(batch_latents) < 2:
        raise InvalidArgumentError("need at least 2 images in the batch to sample negatives")
    if n < 1:
        raise InvalidArgumentError("need n >= 1 negatives")
    if not 0 <= positive_index < len(batch_latents):
        raise InvalidArgumentError("positive_index outside the batch")
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x7E6]))
    draws = rng.integers(0, len(batch_latents) - 1, size=n)
    draws = draws + (draws >= positive_index)  # skip the positive's image
    i, j = position
    return np.stack([np.asarray(batch_latents[b].values)[i, j] for b in draws])


def negative_image_indices(
    batch_size: int, n_targets: int, n_negatives: int, rng: np.random.Generator
) -> np.ndarray:
    """(B, T, n) image indices, each row avoiding its own image index."""
    if batch_size < 2:
        raise InvalidArgumentError("need at least 2 images in the batch to sample negatives")
    if n_negatives < 1:
        raise InvalidArgumentError("need n >= 1 negatives")
    draws = rng.integers(0, batch_size - 1, size=(batch_size, n_targets, n_negatives))
    own = np.arange(batch_size)[:, None, None]
    return draws + (draws >= own)


def info_nce_from_scores(scores: Tensor) -> Tensor:
    """(..., n+1) score tensor, slot 0 positive -> scalar mean loss."""
    lse = ad.logsumexp(scores, axis=scores.ndim - 1)
    pos = ad.reshape(ad.narrow(scores, scores.ndim - 1, 0, 1), lse.shape)
    return ad.tmean(ad.sub(lse, pos))


def info_nce_loss_graph(predictions: Tensor, positives: Tensor, negatives: Tensor) -> Tensor:
    """InfoNCE over explicit candidates.

    predictions/positives: (T, D); negatives: (T, n, D). Scores are inner
    products; the per-target loss is the log-sum-exp over the n+1
    candidates minus the positive's score.
    """
    t, d = predictions.shape
    pred = ad.reshape(predictions, (t, 1, d))
    cands = ad.concat([ad.reshape(positives, (t, 1, d)), negatives], axis=1)
    scores = ad.tsum(ad.mul(pred, cands), axis=2)
    if not np.isfinite(scores.data).all():
        raise NumericError("non-finite InfoNCE score")
    return info_nce_from_scores(scores)


def info_nce_loss(predictions, true_latents, negatives_per_target) -> float:
    """Numpy-facing InfoNCE: mean over targets of -log softmax(positive)."""
    pred = np.asarray(predictions)
    pos = np.asarray(true_latents)
    neg = np.asarray(negatives_per_target)
    if pred.ndim != 2 or pos.shape != pred.shape:
        raise GeometryError(
            f"predictions {pred.shape} and positives {pos.shape} must both be (T, D)"
        )
    if neg.ndim != 3 or neg.shape[0] != pred.shape[0] or neg.shape[2] != pred.shape[1]:
        raise GeometryError(
            f"negatives must be (T, n, D) matching predictions, got {neg.shape}"
        )
    loss = info_nce_loss_graph(Tensor(pred), Tensor(pos), Tensor(neg))
    return float(loss.data)


def cpc_batch_loss(
    z_true: Tensor,
    context: Tensor,
    mask: LatentMask,
    head: PredictionHead,
    n_negatives: int,
    rng: np.random.Generator,
) -> Tensor:
    """Full-batch InfoNCE on the training graph.

    z_true: (B, G, G, D) unmasked latents (positives and negatives are
    looked up here, so encoder gradients flow through both). context:
    (B, G, G, D) built from masked latents only.
    """
    b, g, _, d = z_true.shape
    predictions = predict_targets_batch(context, mask, head)
    t = predictions.shape[1]

    pos_rc = target_positions(mask)
    flat_pos = pos_rc[:, 0] * g + pos_rc[:, 1]  # (T,)
    own = np.arange(b)[:, None] * g * g + flat_pos[None, :]  # (B, T)
    neg_imgs = negative_image_indices(b, t, n_negatives, rng)  # (B, T, n)
    neg_rows = neg_imgs * g * g + flat_pos[None, :, None]  # (B, T, n)

    rows = np.concatenate([own[:, :, None], neg_rows], axis=2)  # (B, T, n+1)
    cands = ad.gather_rows(ad.reshape(z_true, (b * g * g, d)), rows)  # (B,T,n+1,D)
    pred = ad.reshape(predictions, (b, t, 1, d))
    scores = ad.tsum(ad.mul(pred, cands), axis=3)
    if not np.isfinite(scores.data).all():
        raise NumericError("non-finite InfoNCE score")
    return info_nce_from_scores(scores)
