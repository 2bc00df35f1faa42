"""CPC pretraining, classifier fine-tuning, evaluation, and the sweep.

Checkpoints are zip containers with a JSON metadata section (config
snapshot, metric history, RNG state, format tag) and an npz parameter
section. Metric histories are lists of {epoch, split, metric, value}
rows; epoch 0 is always a validation pass taken before any update, so
"how far did training move the needle" is answerable from the history
alone.
"""

from __future__ import annotations

import csv
import io
import json
import zipfile
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .autoregressor import STACK_DEPTH, build_stack
from .cpc_core import (
    LatentMask,
    build_head,
    cpc_batch_loss,
    make_infill_mask,
    make_topdown_mask,
    mask_latents,
)
from .data import DatasetStore, dihedral_transform, sample_label_subset
from .encoder import Classifier, EncoderConfig, build_encoder, pixels_to_input
from .errors import (
    ConfigurationError,
    DivergenceError,
    FormatError,
    InvalidArgumentError,
    NumericError,
)
from .layers import Adam, Module
from .patching import extract_patches, grid_shape

PHASES = ("pretrain", "finetune")
VARIANTS = (
    "none",
    "single+top_down",
    "single+infill",
    "multi+top_down",
    "multi+infill",
)
DEFAULT_SWEEP_SIZES = (10, 32, 100, 316, 1000, 3162, 10000, 31624, 100000)
CHECKPOINT_FORMAT = "patchcpc-checkpoint"
CHECKPOINT_VERSION = 1


@dataclass
class TrainConfig:
    phase: str = "pretrain"
    learning_rate: float = 1e-4
    epochs: int = 20
    batch_size: int = 16
    optimizer: str = "adam"
    patience: int = 5
    seed: int = 0
    directional: str = "multi"
    mask_kind: str = "infill"
    subset_size: int | None = None
    # model geometry
    patch_size: int = 24
    patch_stride: int = 12
    latent_dim: int = 128
    context_rows: int = 3
    n_negatives: int = 16
    encoder_family: str = "toy_cnn"
    encoder_channels: tuple = (16, 32, 32)
    kernel_size: int = 3
    n_blocks: int = STACK_DEPTH
    share_branch_weights: bool = False
    hidden_units: int = 256

    def __post_init__(self):
        if self.phase not in PHASES:
            raise ConfigurationError(f"phase must be one of {PHASES}, got {self.phase!r}")
        if self.learning_rate <= 0:
            raise ConfigurationError("learning_rate must be > 0")
        if self.epochs < 1:
            raise ConfigurationError("epochs must be >= 1")
        if self.optimizer != "adam":
            raise ConfigurationError(f"unsupported optimizer {self.optimizer!r}")
        if self.patience < 1:
            raise ConfigurationError("patience must be >= 1")
        if self.phase == "pretrain" and self.batch_size < 2:
            raise ConfigurationError("pretraining needs batch_size >= 2 (negatives must exist)")
        if self.batch_size < 1:
            raise ConfigurationError("batch_size must be >= 1")
        if self.n_negatives < 1:
            raise ConfigurationError("n_negatives must be >= 1")
        self.encoder_channels = tuple(self.encoder_channels)


def finetune_defaults(**overrides) -> TrainConfig:
    """Classifier defaults: 50 epochs, Adam, lr 1e-4, batch 64."""
    base = dict(phase="finetune", epochs=50, learning_rate=1e-4, batch_size=64)
    base.update(overrides)
    return TrainConfig(**base)


# --------------------------------------------------------------------------
# checkpoint container


@dataclass
class Checkpoint:
    config: dict
    history: list
    params: dict
    rng_state: dict | None = None
    version: int = CHECKPOINT_VERSION

    def component(self, prefix: str) -> dict:
        """Parameters under ``prefix.``, with the prefix stripped."""
        cut = len(prefix) + 1
        return {k[cut:]: v for k, v in self.params.items() if k.startswith(prefix + ".")}

    def has_component(self, prefix: str) -> bool:
        return any(k.startswith(prefix + ".") for k in self.params)

    def save(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        meta = {
            "format": CHECKPOINT_FORMAT,
            "version": self.version,
            "config": self.config,
            "history": self.history,
            "rng_state": self.rng_state,
        }
        buf = io.BytesIO()
        np.savez(buf, **self.params)
        with zipfile.ZipFile(path, "w", zipfile.ZIP_DEFLATED) as zf:
            zf.writestr("meta.json", json.dumps(meta, indent=2, sort_keys=True))
            zf.writestr("params.npz", buf.getvalue())
        return path

    @classmethod
    def load(cls, path) -> "Checkpoint":
        path = Path(path)
        if not path.exists():
            raise FormatError(f"checkpoint file not found: {path}")
        try:
            with zipfile.ZipFile(path) as zf:
                meta = json.loads(zf.read("meta.json"))
                with np.load(io.BytesIO(zf.read("params.npz"))) as npz:
                    params = {k: npz[k] for k in npz.files}
        except (zipfile.BadZipFile, KeyError, json.JSONDecodeError) as exc:
            raise FormatError(f"not a readable checkpoint: {path} ({exc})") from exc
        if meta.get("format") != CHECKPOINT_FORMAT:
            raise FormatError(f"unrecognized checkpoint format tag {meta.get('format')!r}")
        return cls(
            config=meta["config"],
            history=meta["history"],
            params=params,
            rng_state=meta.get("rng_state"),
            version=int(meta.get("version", 1)),
        )


def write_metrics_csv(path, history, append: bool = False) -> Path:
    """History rows -> CSV with columns epoch,split,metric,value."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fresh = not (append and path.exists())
    with open(path, "a" if not fresh else "w", newline="") as fh:
        writer = csv.writer(fh)
        if fresh:
            writer.writerow(["epoch", "split", "metric", "value"])
        for row in history:
            writer.writerow([row["epoch"], row["split"], row["metric"], f"{row['value']:.10g}"])
    return path


# --------------------------------------------------------------------------
# model assembly


def make_mask(config: TrainConfig, grid_side: int) -> LatentMask:
    if config.mask_kind == "top_down":
        return make_topdown_mask(grid_side, config.context_rows)
    return make_infill_mask(grid_side)


def build_pretrain_modules(config: TrainConfig, grid_side: int, dtype=np.float32):
    encoder_cfg = EncoderConfig(
        family=config.encoder_family,
        latent_dim=config.latent_dim,
        normalization="layer_norm",
        channels=config.encoder_channels,
    )
    encoder = build_encoder(encoder_cfg, config.seed, dtype=dtype)
    stack = build_stack(
        config.directional,
        config.latent_dim,
        config.seed,
        n_blocks=config.n_blocks,
        kernel_size=config.kernel_size,
        share_branch_weights=config.share_branch_weights,
        dtype=dtype,
    )
    mask = make_mask(config, grid_side)
    head = build_head(mask, config.latent_dim, config.seed, dtype=dtype)
    return encoder, stack, head, mask


def group_params(**modules) -> list:
    """[(\"component.param\", tensor), ...] in stable component order."""
    named = []
    for comp, module in modules.items():
        named.extend((f"{comp}.{name}", p) for name, p in module.named_parameters())
    return named


def encoder_from_config(cfg: dict, dtype=np.float32) -> Module:
    encoder_cfg = EncoderConfig(
        family=cfg["encoder_family"],
        latent_dim=int(cfg["latent_dim"]),
        normalization="layer_norm",
        channels=tuple(cfg["encoder_channels"]),
    )
    return build_encoder(encoder_cfg, int(cfg["seed"]), dtype=dtype)


def train_config_from_dict(cfg: dict) -> TrainConfig:
    """Rebuild a TrainConfig from a checkpoint's config snapshot."""
    names = {f.name for f in fields(TrainConfig)}
    kept = {k: v for k, v in cfg.items() if k in names}
    if kept.get("encoder_channels") is not None:
        kept["encoder_channels"] = tuple(kept["encoder_channels"])
    return TrainConfig(**kept)


def modules_from_checkpoint(ckpt: "Checkpoint", dtype=np.float32):
    """Reconstruct (encoder, stack, head, mask) from a pretrain checkpoint."""
    config = train_config_from_dict(ckpt.config)
    grid_side = int(ckpt.config["grid_side"])
    encoder, stack, head, mask = build_pretrain_modules(config, grid_side, dtype=dtype)
    encoder.load_state_dict(ckpt.component("encoder"))
    stack.load_state_dict(ckpt.component("stack"))
    head.load_state_dict(ckpt.component("head"))
    return encoder, stack, head, mask


def _snapshot(named) -> dict:
    return {name: p.data.copy() for name, p in named}


def _restore(named, state: dict) -> None:
    for name, p in named:
        p.data = state[name].copy()


def _rng(seed: int, *salts: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, *salts]))


def _batches(n: int, batch_size: int, order=None, min_size: int = 1):
    idx = np.arange(n) if order is None else order
    for s in range(0, n, batch_size):
        chunk = idx[s : s + batch_size]
        if len(chunk) >= min_size:
            yield chunk


# --------------------------------------------------------------------------
# CPC pretraining


def encode_image_batch(encoder: Module, pixel_list, patch_size: int, stride: int, dtype) -> Tensor:
    """List of HxWx3 uint8 arrays -> (B, G, G, D) latent tensor."""
    grids = [extract_patches(px, patch_size, stride) for px in pixel_list]
    g = grids[0].grid_side
    flat = np.stack([pg.patches for pg in grids]).reshape(-1, patch_size, patch_size, 3)
    feats = encoder.features(Tensor(pixels_to_input(flat, dtype)))
    return ad.reshape(feats, (len(grids), g, g, feats.shape[1]))


def pretrain_batch_loss(
    encoder: Module,
    stack: Module,
    head,
    mask: LatentMask,
    pixel_list,
    config: TrainConfig,
    neg_rng: np.random.Generator,
    dtype,
) -> Tensor:
    z = encode_image_batch(encoder, pixel_list, config.patch_size, config.patch_stride, dtype)
    masked = mask_latents(z, mask)
    context = ad.transpose(stack(ad.transpose(masked, (0, 3, 1, 2))), (0, 2, 3, 1))
    return cpc_batch_loss(z, context, mask, head, config.n_negatives, neg_rng)


def pretrain_cpc(store: DatasetStore, config: TrainConfig, dtype=np.float32, log=None) -> Checkpoint:
    """Joint encoder+context+head optimization on InfoNCE.

    Per-batch dihedral augmentation on train; epoch 0 is a validation
    pass before any update; best-validation parameters are retained and
    early stopping triggers after ``patience`` epochs without
    improvement. Divergence aborts with the last good checkpoint
    attached to the raised error.
    """
    if config.phase != "pretrain":
        raise ConfigurationError(f"pretrain_cpc needs phase 'pretrain', got {config.phase!r}")
    train = store.split("train")
    valid = store.split("valid")
    if len(train) < 2 or len(valid) < 2:
        raise InvalidArgumentError("pretraining needs >= 2 train and >= 2 valid images")
    g = grid_shape(store.image_size, config.patch_size, config.patch_stride)
    encoder, stack, head, mask = build_pretrain_modules(config, g, dtype=dtype)
    named = group_params(encoder=encoder, stack=stack, head=head)
    optimizer = Adam(named, lr=config.learning_rate)

    snapshot_config = dict(asdict(config), image_size=store.image_size, grid_side=g)
    history: list = []

    def checkpoint(state, rng_state=None) -> Checkpoint:
        return Checkpoint(
            config=dict(snapshot_config),
            history=list(history),
            params=dict(state),
            rng_state=rng_state,
        )

    def validation_loss(epoch: int) -> float:
        neg_rng = _rng(config.seed, 0x7A1, epoch)
        losses = []
        for idx in _batches(len(valid), config.batch_size, min_size=2):
            pixels = [valid[i].pixels for i in idx]
            loss = pretrain_batch_loss(encoder, stack, head, mask, pixels, config, neg_rng, dtype)
            losses.append(float(loss.data))
        return float(np.mean(losses))

    def note(epoch, split, metric, value):
        history.append({"epoch": epoch, "split": split, "metric": metric, "value": value})
        if log:
            log(f"epoch {epoch:3d}  {split:5s}  {metric} = {value:.4f}")

    best_val = validation_loss(0)
    note(0, "valid", "info_nce", best_val)
    best_state = _snapshot(named)
    since_best = 0
    last_rng_state = None

    for epoch in range(1, config.epochs + 1):
        order_rng = _rng(config.seed, 0x0E, epoch)
        aug_rng = _rng(config.seed, 0xA9, epoch)
        neg_rng = _rng(config.seed, 0x77, epoch)
        order = order_rng.permutation(len(train))
        train_losses = []
        for idx in _batches(len(train), config.batch_size, order, min_size=2):
            pixels = [
                dihedral_transform(train[i].pixels, int(aug_rng.integers(8))) for i in idx
            ]
            # forward passes on exploded parameters trip internal finite
            # checks; surface those as divergence with the last good state
            try:
                loss = pretrain_batch_loss(encoder, stack, head, mask, pixels, config, neg_rng, dtype)
                value = float(loss.data)
            except NumericError as exc:
                raise DivergenceError(
                    f"non-finite forward pass at epoch {epoch}: {exc}",
                    checkpoint=checkpoint(best_state),
                ) from exc
            if not np.isfinite(value):
                raise DivergenceError(
                    f"non-finite training loss at epoch {epoch}",
                    checkpoint=checkpoint(best_state),
                )
            optimizer.zero_grad()
            ad.backward(loss)
            optimizer.step()
            train_losses.append(value)
        note(epoch, "train", "info_nce", float(np.mean(train_losses)))

        try:
            val = validation_loss(epoch)
        except NumericError as exc:
            raise DivergenceError(
                f"non-finite forward pass at epoch {epoch}: {exc}",
                checkpoint=checkpoint(best_state),
            ) from exc
        if not np.isfinite(val):
            raise DivergenceError(
                f"non-finite validation loss at epoch {epoch}",
                checkpoint=checkpoint(best_state),
            )
        note(epoch, "valid", "info_nce", val)
        last_rng_state = {
            "order": order_rng.bit_generator.state,
            "augment": aug_rng.bit_generator.state,
            "negatives": neg_rng.bit_generator.state,
        }
        if val < best_val:
            best_val = val
            best_state = _snapshot(named)
            since_best = 0
        else:
            since_best += 1
            if since_best >= config.patience:
                break

    _restore(named, best_state)
    return checkpoint(best_state, rng_state=last_rng_state)


# --------------------------------------------------------------------------
# classifier fine-tuning


def _softmax_ce(logits: Tensor, labels) -> Tensor:
    labels = np.asarray(labels)
    onehot = np.zeros(logits.shape, dtype=logits.data.dtype)
    onehot[np.arange(len(labels)), labels] = 1.0
    lse = ad.logsumexp(logits, axis=1)
    picked = ad.tsum(ad.mul(logits, Tensor(onehot)), axis=1)
    return ad.tmean(ad.sub(lse, picked))


def _split_accuracy(classifier: Classifier, samples, batch_size: int, dtype) -> float:
    correct = 0
    for start in range(0, len(samples), batch_size):
        chunk = samples[start : start + batch_size]
        x = Tensor(pixels_to_input(np.stack([s.pixels for s in chunk]), dtype))
        pred = classifier.logits(x).data.argmax(axis=1)
        correct += int((pred == np.array([s.label for s in chunk])).sum())
    return correct / len(samples)


def finetune_classifier(
    store: DatasetStore,
    subset_size: int,
    init,
    config: TrainConfig,
    dtype=np.float32,
    log=None,
) -> Checkpoint:
    """Train the 2-way classifier on a stratified labeled subset.

    ``init`` is "random" or a pretrained Checkpoint (or its path); the
    encoder trunk is loaded from it and every weight stays trainable.
    Early stopping watches validation accuracy.
    """
    if config.phase != "finetune":
        raise ConfigurationError(
            f"finetune_classifier needs phase 'finetune', got {config.phase!r}"
        )
    store.require_labels("train")
    store.require_labels("valid")

    ids = sample_label_subset(store, subset_size, config.seed)
    by_id = {s.id: s for s in store.split("train")}
    subset = [by_id[i] for i in ids]
    if len({s.label for s in subset}) < 2:
        raise InvalidArgumentError(
            "stratification produced a single-class subset; refusing to fit a 2-way classifier"
        )

    snapshot_config = dict(
        asdict(config), image_size=store.image_size, subset_size=subset_size
    )
    if init == "random":
        encoder = encoder_from_config(snapshot_config, dtype=dtype)
        snapshot_config["init"] = "random"
    else:
        ckpt = init if isinstance(init, Checkpoint) else Checkpoint.load(init)
        # the trunk must be rebuilt exactly as it was pretrained
        for key in ("encoder_family", "latent_dim", "encoder_channels"):
            snapshot_config[key] = ckpt.config[key]
        trunk_cfg = dict(ckpt.config)
        encoder = encoder_from_config(trunk_cfg, dtype=dtype)
        encoder.load_state_dict(ckpt.component("encoder"))
        snapshot_config["init"] = "checkpoint"

    classifier = Classifier(
        _rng(config.seed, 0xC1F), encoder, hidden=config.hidden_units, dtype=dtype
    )
    named = [
        (name if name.startswith("encoder.") else f"classifier.{name}", p)
        for name, p in classifier.named_parameters()
    ]
    optimizer = Adam(named, lr=config.learning_rate)
    valid = store.split("valid")
    history: list = []

    def checkpoint(state) -> Checkpoint:
        return Checkpoint(
            config=dict(snapshot_config), history=list(history), params=dict(state)
        )

    def note(epoch, split, metric, value):
        history.append({"epoch": epoch, "split": split, "metric": metric, "value": value})
        if log:
            log(f"epoch {epoch:3d}  {split:5s}  {metric} = {value:.4f}")

    best_acc = _split_accuracy(classifier, valid, config.batch_size, dtype)
    note(0, "valid", "accuracy", best_acc)
    best_state = _snapshot(named)
    since_best = 0

    for epoch in range(1, config.epochs + 1):
        order_rng = _rng(config.seed, 0x0E, epoch)
        aug_rng = _rng(config.seed, 0xA9, epoch)
        order = order_rng.permutation(len(subset))
        losses = []
        for idx in _batches(len(subset), config.batch_size, order):
            pixels = np.stack(
                [
                    dihedral_transform(subset[i].pixels, int(aug_rng.integers(8)))
                    for i in idx
                ]
            )
            labels = [subset[i].label for i in idx]
            try:
                logits = classifier.logits(Tensor(pixels_to_input(pixels, dtype)))
                loss = _softmax_ce(logits, labels)
                value = float(loss.data)
            except NumericError as exc:
                raise DivergenceError(
                    f"non-finite forward pass at epoch {epoch}: {exc}",
                    checkpoint=checkpoint(best_state),
                ) from exc
            if not np.isfinite(value):
                raise DivergenceError(
                    f"non-finite classifier loss at epoch {epoch}",
                    checkpoint=checkpoint(best_state),
                )
            optimizer.zero_grad()
            ad.backward(loss)
            optimizer.step()
            losses.append(value)
        note(epoch, "train", "cross_entropy", float(np.mean(losses)))

        try:
            acc = _split_accuracy(classifier, valid, config.batch_size, dtype)
        except NumericError as exc:
            raise DivergenceError(
                f"non-finite forward pass at epoch {epoch}: {exc}",
                checkpoint=checkpoint(best_state),
            ) from exc
        note(epoch, "valid", "accuracy", acc)
        if acc > best_acc:
            best_acc = acc
            best_state = _snapshot(named)
            since_best = 0
        else:
            since_best += 1
            if since_best >= config.patience:
                break

    _restore(named, best_state)
    return checkpoint(best_state)


def load_classifier(checkpoint: Checkpoint, dtype=np.float32) -> Classifier:
    if not checkpoint.has_component("classifier"):
        raise ConfigurationError("checkpoint has no classifier parameters")
    encoder = encoder_from_config(checkpoint.config, dtype=dtype)
    classifier = Classifier(
        _rng(0, 0xC1F), encoder, hidden=int(checkpoint.config["hidden_units"]), dtype=dtype
    )
    state = dict(checkpoint.component("classifier"))
    state.update({f"encoder.{k}": v for k, v in checkpoint.component("encoder").items()})
    classifier.load_state_dict(state)
    return classifier


def evaluate(checkpoint: Checkpoint, store: DatasetStore, split: str = "test", dtype=np.float32) -> float:
    """Plain accuracy of a fine-tuned checkpoint on a split; no augmentation."""
    classifier = load_classifier(checkpoint, dtype=dtype)
    store.require_labels(split)
    batch = int(checkpoint.config.get("batch_size", 64))
    return _split_accuracy(classifier, store.split(split), batch, dtype)


# --------------------------------------------------------------------------
# data-efficiency sweep


@dataclass
class SweepResult:
    rows: list  # dicts: variant, subset_size, seed, test_accuracy

    def __post_init__(self):
        for row in self.rows:
            if not 0.0 <= row["test_accuracy"] <= 1.0:
                raise InvalidArgumentError(f"accuracy outside [0,1] in row {row}")

    def aggregate(self) -> list:
        """Mean/std per (variant, subset_size), in first-seen order."""
        groups: dict = {}
        for row in self.rows:
            groups.setdefault((row["variant"], row["subset_size"]), []).append(
                row["test_accuracy"]
            )
        return [
            {
                "variant": variant,
                "subset_size": size,
                "mean_accuracy": float(np.mean(accs)),
                "std_accuracy": float(np.std(accs)),
                "n_seeds": len(accs),
            }
            for (variant, size), accs in groups.items()
        ]

    def write_rows_csv(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["variant", "subset_size", "seed", "test_accuracy"])
            for row in self.rows:
                writer.writerow(
                    [row["variant"], row["subset_size"], row["seed"], f"{row['test_accuracy']:.6f}"]
                )
        return path

    def write_aggregate_csv(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["variant", "subset_size", "mean_accuracy", "std_accuracy", "n_seeds"])
            for row in self.aggregate():
                writer.writerow(
                    [
                        row["variant"],
                        row["subset_size"],
                        f"{row['mean_accuracy']:.6f}",
                        f"{row['std_accuracy']:.6f}",
                        row["n_seeds"],
                    ]
                )
        return path


def run_sweep(
    store: DatasetStore,
    variants,
    subset_sizes,
    seeds,
    config: TrainConfig,
    pretrained: dict | None = None,
    dtype=np.float32,
    log=None,
) -> SweepResult:
    """Fine-tune and test every (variant, subset_size, seed) cell.

    ``pretrained`` maps variant name -> Checkpoint (or path); the "none"
    baseline runs from random init and needs no entry.
    """
    variants = list(variants)
    subset_sizes = list(subset_sizes)
    seeds = list(seeds)
    if not variants or not subset_sizes or not seeds:
        raise InvalidArgumentError("variants, subset_sizes and seeds must all be non-empty")
    for v in variants:
        if v not in VARIANTS:
            raise InvalidArgumentError(f"unknown variant {v!r}; choose from {VARIANTS}")
    pretrained = dict(pretrained or {})
    inits: dict = {}
    for v in variants:
        if v == "none":
            inits[v] = "random"
            continue
        if v not in pretrained:
            raise ConfigurationError(f"no pretrained checkpoint supplied for variant {v!r}")
        ck = pretrained[v]
        inits[v] = ck if isinstance(ck, Checkpoint) else Checkpoint.load(ck)

    rows = []
    for variant in variants:
        for size in subset_sizes:
            for seed in seeds:
                cell_cfg = replace(config, phase="finetune", seed=int(seed))
                ckpt = finetune_classifier(store, int(size), inits[variant], cell_cfg, dtype=dtype)
                acc = evaluate(ckpt, store, "test", dtype=dtype)
                rows.append(
                    {
                        "variant": variant,
                        "subset_size": int(size),
                        "seed": int(seed),
                        "test_accuracy": float(acc),
                    }
                )
                if log:
                    log(f"{variant:16s} size {size:6d} seed {seed:3d} -> test acc {acc:.4f}")
    return SweepResult(rows=rows)


# --------------------------------------------------------------------------
# gradient verification


@dataclass
class GradCheckReport:
    per_group: dict
    step: float

    @property
    def max_relative_error(self) -> float:
        return max(self.per_group.values()) if self.per_group else 0.0

    def __str__(self) -> str:
        if not self.per_group:
            return "gradient check: no parameters"
        lines = [
            f"  {group:10s} max rel err {err:.3e}" for group, err in sorted(self.per_group.items())
        ]
        return "gradient check (step {:g}):\n{}".format(self.step, "\n".join(lines))


def check_gradients(loss_fn, named_params, step: float = 1e-5) -> dict:
    """Max relative error of analytic vs central-difference gradients.

    loss_fn() must rebuild the full graph from the current parameter
    values and return a scalar loss Tensor. Parameters must be float64.
    """
    named_params = list(named_params)
    if not named_params:
        return {}
    for name, p in named_params:
        if p.data.dtype != np.float64:
            raise InvalidArgumentError(f"gradient check requires float64 params ({name})")
        p.grad = None
    loss = loss_fn()
    ad.backward(loss)
    analytic = {name: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data))
                for name, p in named_params}

    errors = {}
    for name, p in named_params:
        flat = p.data.reshape(-1)
        worst = 0.0
        for i in range(flat.size):
            keep = flat[i]
            flat[i] = keep + step
            hi = float(loss_fn().data)
            flat[i] = keep - step
            lo = float(loss_fn().data)
            flat[i] = keep
            numeric = (hi - lo) / (2.0 * step)
            a = analytic[name].reshape(-1)[i]
            denom = max(abs(a), abs(numeric), 1e-6)
            worst = max(worst, abs(a - numeric) / denom)
        errors[name] = worst
    return errors


def gradient_check(config: TrainConfig | None = None, seed: int = 0, step: float = 1e-5) -> GradCheckReport:
    """End-to-end finite-difference audit of a toy CPC graph (float64).

    Probes at a randomly nudged point in parameter space, not at the
    training init: zero-initialized biases put masked-border
    pre-activations exactly on the relu kink, where central differences
    are undefined. The audit verifies the backward pass, which must be
    correct at generic points.
    """
    if config is None:
        config = TrainConfig(
            phase="pretrain",
            batch_size=2,
            n_negatives=1,
            patch_size=8,
            patch_stride=4,
            latent_dim=4,
            encoder_channels=(3, 4, 4),
            n_blocks=2,
            directional="single",
            mask_kind="infill",
            seed=seed,
        )
    image_size = 16
    g = grid_shape(image_size, config.patch_size, config.patch_stride)
    encoder, stack, head, mask = build_pretrain_modules(config, g, dtype=np.float64)
    named = group_params(encoder=encoder, stack=stack, head=head)
    total = sum(p.data.size for _, p in named)
    if total > 1000:
        raise InvalidArgumentError(
            f"gradient check is a toy-scale audit; got {total} parameters (> 1000)"
        )
    nudge = _rng(config.seed, 0x0FF)
    for _, p in named:
        p.data += nudge.normal(scale=0.05, size=p.data.shape)
    pix_rng = _rng(config.seed, 0xF1D)
    pixels = [
        pix_rng.integers(0, 256, size=(image_size, image_size, 3)).astype(np.uint8)
        for _ in range(config.batch_size)
    ]

    def loss_fn():
        neg_rng = _rng(config.seed, 0x7)
        return pretrain_batch_loss(
            encoder, stack, head, mask, pixels, config, neg_rng, np.float64
        )

    per_param = check_gradients(loss_fn, named, step=step)
    per_group: dict = {}
    for name, err in per_param.items():
        group = name.split(".", 1)[0]
        per_group[group] = max(per_group.get(group, 0.0), err)
    return GradCheckReport(per_group=per_group, step=step)
