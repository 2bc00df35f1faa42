"""Datasets: PCam-style HDF5 ingestion, synthetic textures, augmentation,
labeled-subset sampling and PNG+CSV export.

All randomness flows through explicit ``numpy.random.Generator`` instances
derived from caller-supplied seeds; nothing touches global RNG state.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import FormatError, IngestionError, InvalidArgumentError

PCAM_FILE_TEMPLATE = "camelyonpatch_level_2_split_{split}_{part}.h5"
PCAM_SPLITS = ("train", "valid", "test")
DEFAULT_PATCH_SIZE = 8
DEFAULT_PATCH_STRIDE = 4


@dataclass
class ImageSample:
    """One square RGB image with an optional binary label."""

    pixels: np.ndarray  # (H, W, 3) uint8
    label: int | None
    id: str

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.ndim != 3 or px.shape[2] != 3:
            raise InvalidArgumentError(f"pixels must be HxWx3, got {px.shape}")
        if px.shape[0] != px.shape[1]:
            raise InvalidArgumentError(f"image must be square, got {px.shape[:2]}")
        if px.shape[0] < 16:
            raise InvalidArgumentError(f"image side must be >= 16, got {px.shape[0]}")
        if self.label is not None and self.label not in (0, 1):
            raise InvalidArgumentError(f"label must be 0, 1 or None, got {self.label}")


@dataclass
class DatasetStore:
    """Named train/valid/test partitions of image samples."""

    splits: dict[str, list[ImageSample]]
    image_size: int
    class_names: tuple[str, str] = ("negative", "positive")
    source: str = "unknown"
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        seen: dict[str, str] = {}
        for split, samples in self.splits.items():
            for s in samples:
                if s.id in seen:
                    raise InvalidArgumentError(
                        f"sample id {s.id!r} appears in both {seen[s.id]!r} and {split!r}"
                    )
                seen[s.id] = split

    def split(self, name: str) -> list[ImageSample]:
        if name not in self.splits:
            raise InvalidArgumentError(f"no split named {name!r}; have {sorted(self.splits)}")
        return self.splits[name]

    def require_labels(self, name: str) -> None:
        if any(s.label is None for s in self.split(name)):
            raise InvalidArgumentError(f"split {name!r} has unlabeled samples")


# --------------------------------------------------------------------------
# PCam ingestion


def load_pcam(path) -> DatasetStore:
    """Load the PCam HDF5 sextet from a directory.

    Expects the six standard files (train/valid/test x/y) holding uint8
    N x 96 x 96 x 3 images and binary labels.
    """
    import h5py

    root = Path(path)
    if not root.is_dir():
        raise IngestionError(f"{root} is not a directory")
    for split in PCAM_SPLITS:
        for part in ("x", "y"):
            f = root / PCAM_FILE_TEMPLATE.format(split=split, part=part)
            if not f.exists():
                raise IngestionError(f"missing PCam file: {f.name} (in {root})")

    splits: dict[str, list[ImageSample]] = {}
    for split in PCAM_SPLITS:
        x_path = root / PCAM_FILE_TEMPLATE.format(split=split, part="x")
        y_path = root / PCAM_FILE_TEMPLATE.format(split=split, part="y")
        try:
            with h5py.File(x_path, "r") as hx:
                x = np.asarray(hx["x"])
            with h5py.File(y_path, "r") as hy:
                y = np.asarray(hy["y"])
        except (OSError, KeyError) as exc:
            raise IngestionError(f"unreadable PCam file under {root}: {exc}") from exc
        if x.ndim != 4 or x.shape[1:] != (96, 96, 3):
            raise FormatError(
                f"{x_path.name}: expected N x 96 x 96 x 3 uint8 images, got {x.shape}"
            )
        if x.dtype != np.uint8:
            raise FormatError(f"{x_path.name}: expected uint8 pixels, got {x.dtype}")
        y = y.reshape(y.shape[0], -1)[:, 0]
        if y.shape[0] != x.shape[0]:
            raise FormatError(
                f"{split}: image count {x.shape[0]} != label count {y.shape[0]}"
            )
        if not np.isin(y, (0, 1)).all():
            raise FormatError(f"{y_path.name}: labels must be binary")
        splits[split] = [
            ImageSample(pixels=x[i], label=int(y[i]), id=f"pcam-{split}-{i:06d}")
            for i in range(x.shape[0])
        ]
    return DatasetStore(
        splits=splits, image_size=96, class_names=("normal", "metastasis"), source=str(root)
    )


# --------------------------------------------------------------------------
# synthetic textures


def _grating(rng: np.random.Generator, size: int, freq_cycles: float) -> np.ndarray:
    """One oriented sinusoidal grating image, orientation/phase randomized.

    The class-bearing quantity is the spatial frequency magnitude, which is
    invariant under the dihedral group; orientation carries no information.
    Amplitude and channel balance are held constant so no patch-independent
    per-image fingerprint exists: a patch identifies its source image only
    through the grating parameters themselves.
    """
    theta = rng.uniform(0.0, 2.0 * np.pi)
    phase = rng.uniform(0.0, 2.0 * np.pi)
    freq = freq_cycles * rng.uniform(0.9, 1.1)
    coords = np.arange(size, dtype=np.float64)
    yy, xx = np.meshgrid(coords, coords, indexing="ij")
    u = np.cos(theta) * xx + np.sin(theta) * yy
    base = 0.5 + 0.10 * np.sin(2.0 * np.pi * freq * u / size + phase)
    img = base[:, :, None] + rng.normal(0.0, 0.18, size=(size, size, 3))
    return np.clip(img * 255.0, 0, 255).astype(np.uint8)


# cycles per image side for the two texture classes; the bands are adjacent
# and the signal sits near the noise floor, so a handful of labels is not
# enough to nail the boundary from scratch
CLASS_FREQUENCIES = (3.0, 5.0)


def generate_synthetic(n_per_class: int, image_size: int = 32, seed: int = 0) -> DatasetStore:
    """Two-class oriented-grating dataset with a rotation-invariant class
    signal, split 60/20/20 per class. Deterministic given the seed."""
    if n_per_class < 1:
        raise InvalidArgumentError("n_per_class must be >= 1")
    if image_size < 16:
        raise InvalidArgumentError(f"image_size must be >= 16, got {image_size}")
    if (image_size - DEFAULT_PATCH_SIZE) % DEFAULT_PATCH_STRIDE != 0:
        raise InvalidArgumentError(
            f"image_size {image_size} is incompatible with the default patching "
            f"geometry (p={DEFAULT_PATCH_SIZE}, s={DEFAULT_PATCH_STRIDE})"
        )
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x5E71]))
    splits: dict[str, list[ImageSample]] = {"train": [], "valid": [], "test": []}
    n_train = int(n_per_class * 0.6)
    n_valid = int(n_per_class * 0.2)
    for cls, freq in enumerate(CLASS_FREQUENCIES):
        for i in range(n_per_class):
            img = _grating(rng, image_size, freq)
            if i < n_train:
                split = "train"
            elif i < n_train + n_valid:
                split = "valid"
            else:
                split = "test"
            splits[split].append(
                ImageSample(pixels=img, label=cls, id=f"syn-c{cls}-{i:05d}")
            )
    return DatasetStore(
        splits=splits,
        image_size=image_size,
        class_names=("low_band", "high_band"),
        source=f"synthetic(seed={seed})",
    )


# --------------------------------------------------------------------------
# augmentation


def dihedral_transform(pixels: np.ndarray, element: int) -> np.ndarray:
    """Apply one of the 8 square-symmetry elements to an HxWxC array.

    Elements 0-3 are clockwise rotations by element*90 degrees; elements
    4-7 are a horizontal flip followed by the same rotations. Element 1 is
    the plain 90-degree-clockwise rotation.
    """
    if element not in range(8):
        raise InvalidArgumentError(f"dihedral element must be in 0..7, got {element}")
    out = pixels
    if element >= 4:
        out = np.fliplr(out)
    return np.ascontiguousarray(np.rot90(out, -(element % 4)))


def augment(image: ImageSample, seed: int) -> ImageSample:
    """Random 90-degree rotation / flip of a square image; label unchanged."""
    px = np.asarray(image.pixels)
    if px.shape[0] != px.shape[1]:
        raise InvalidArgumentError("augment requires a square image")
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xA46]))
    element = int(rng.integers(8))
    return ImageSample(pixels=dihedral_transform(px, element), label=image.label, id=image.id)


# --------------------------------------------------------------------------
# subset sampling / splitting


def sample_label_subset(store: DatasetStore, n: int, seed: int) -> list[str]:
    """Stratified, without-replacement draw of n training sample ids.

    Class counts differ by at most one (the odd slot goes to a seeded coin
    flip). Deterministic given the seed.
    """
    train = store.split("train")
    if n < 1:
        raise InvalidArgumentError("n must be >= 1")
    if n > len(train):
        raise InvalidArgumentError(f"requested {n} samples but train split has {len(train)}")
    store.require_labels("train")
    by_class: dict[int, list[str]] = {0: [], 1: []}
    for s in train:
        by_class[s.label].append(s.id)
    if not by_class[0] or not by_class[1]:
        raise InvalidArgumentError("train split must contain both classes")
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x5AB5]))
    quota = {0: n // 2, 1: n // 2}
    if n % 2:
        quota[int(rng.integers(2))] += 1
    # spill over when a class runs short so the total always equals n
    short = sum(max(0, quota[c] - len(by_class[c])) for c in (0, 1))
    if short:
        for c in (0, 1):
            if quota[c] > len(by_class[c]):
                quota[c] = len(by_class[c])
        for c in (0, 1):
            room = len(by_class[c]) - quota[c]
            take = min(room, short)
            quota[c] += take
            short -= take
    ids: list[str] = []
    for c in (0, 1):
        pool = by_class[c]
        picked = rng.choice(len(pool), size=quota[c], replace=False)
        ids.extend(pool[i] for i in sorted(picked))
    return ids


def split_train_val(store: DatasetStore, fraction: float, seed: int) -> DatasetStore:
    """Partition the train split into disjoint train/valid parts.

    valid size = round(fraction * len(train)). Any pre-existing valid split
    is replaced; other splits pass through untouched.
    """
    if not 0.0 < fraction < 1.0:
        raise InvalidArgumentError(f"fraction must be in (0, 1), got {fraction}")
    train = store.split("train")
    n_valid = int(round(fraction * len(train)))
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x5917]))
    order = rng.permutation(len(train))
    valid_idx = set(order[:n_valid].tolist())
    new_splits = dict(store.splits)
    new_splits["valid"] = [train[i] for i in sorted(valid_idx)]
    new_splits["train"] = [train[i] for i in range(len(train)) if i not in valid_idx]
    return DatasetStore(
        splits=new_splits,
        image_size=store.image_size,
        class_names=store.class_names,
        source=store.source,
        metadata=dict(store.metadata),
    )


# --------------------------------------------------------------------------
# PNG + CSV export / import


def save_dataset_png(store: DatasetStore, out_dir, force: bool = False) -> Path:
    """Write every sample as {id}.png plus a manifest.csv (id,split,label)."""
    from PIL import Image

    out = Path(out_dir)
    if out.exists() and any(out.iterdir()) and not force:
        raise InvalidArgumentError(f"{out} exists and is not empty (use force)")
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for split, samples in store.splits.items():
        for s in samples:
            Image.fromarray(s.pixels).save(out / f"{s.id}.png")
            rows.append((s.id, split, "" if s.label is None else str(s.label)))
    with open(out / "manifest.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "split", "label"])
        writer.writerows(rows)
    return out


def load_dataset_png(path) -> DatasetStore:
    """Rebuild a DatasetStore from a directory written by save_dataset_png."""
    from PIL import Image

    root = Path(path)
    manifest = root / "manifest.csv"
    if not manifest.exists():
        raise IngestionError(f"missing manifest.csv in {root}")
    splits: dict[str, list[ImageSample]] = {}
    size = None
    with open(manifest, newline="") as fh:
        for row in csv.DictReader(fh):
            png = root / f"{row['id']}.png"
            if not png.exists():
                raise IngestionError(f"manifest names {png.name} but the file is missing")
            px = np.asarray(Image.open(png).convert("RGB"))
            if size is None:
                size = px.shape[0]
            elif px.shape[0] != size:
                raise FormatError(f"{png.name}: size {px.shape[0]} != dataset size {size}")
            label = int(row["label"]) if row["label"] != "" else None
            splits.setdefault(row["split"], []).append(
                ImageSample(pixels=px, label=label, id=row["id"])
            )
    if not splits:
        raise FormatError(f"{manifest} lists no samples")
    return DatasetStore(splits=splits, image_size=size, source=str(root))
