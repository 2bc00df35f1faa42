"""Synthetic dataset, PNG/HDF5 loaders, augmentation, subset sampling."""

import numpy as np
import pytest

try:
    import h5py
except ImportError:  # pragma: no cover
    h5py = None

from patchcpc.data import (
    CLASS_FREQUENCIES,
    PCAM_FILE_TEMPLATE,
    DatasetStore,
    ImageSample,
    augment,
    dihedral_transform,
    generate_synthetic,
    load_dataset_png,
    load_pcam,
    sample_label_subset,
    save_dataset_png,
    split_train_val,
)
from patchcpc.errors import FormatError, IngestionError, InvalidArgumentError


# ----------------------------------------------------------------- synthetic


def test_synthetic_split_sizes():
    store = generate_synthetic(50, image_size=32, seed=1)
    assert len(store.split("train")) == 60
    assert len(store.split("valid")) == 20
    assert len(store.split("test")) == 20


def test_synthetic_shapes_and_labels():
    store = generate_synthetic(10, image_size=32, seed=0)
    for split in ("train", "valid", "test"):
        for s in store.split(split):
            assert s.pixels.shape == (32, 32, 3)
            assert s.pixels.dtype == np.uint8
            assert s.label in (0, 1)


def test_synthetic_splits_are_class_balanced():
    store = generate_synthetic(20, image_size=32, seed=2)
    for split in ("train", "valid", "test"):
        labels = [s.label for s in store.split(split)]
        assert labels.count(0) == labels.count(1)


def test_synthetic_deterministic():
    a = generate_synthetic(8, image_size=32, seed=9)
    b = generate_synthetic(8, image_size=32, seed=9)
    for split in a.splits:
        for sa, sb in zip(a.split(split), b.split(split)):
            assert sa.id == sb.id and sa.label == sb.label
            np.testing.assert_array_equal(sa.pixels, sb.pixels)
    c = generate_synthetic(8, image_size=32, seed=10)
    assert any(
        not np.array_equal(sa.pixels, sc.pixels)
        for sa, sc in zip(a.split("train"), c.split("train"))
    )


def _peak_radius(pixels):
    gray = pixels.astype(np.float64).mean(axis=2)
    spec = np.abs(np.fft.fftshift(np.fft.fft2(gray - gray.mean())))
    c = gray.shape[0] // 2
    iy, ix = np.unravel_index(np.argmax(spec), spec.shape)
    return np.hypot(iy - c, ix - c)


def test_synthetic_classes_separated_in_frequency():
    # class 0 is a low-frequency grating, class 1 high-frequency; the
    # dominant spectral radius is an independent oracle for that
    store = generate_synthetic(15, image_size=32, seed=4)
    radii = {0: [], 1: []}
    for s in store.split("train"):
        radii[s.label].append(_peak_radius(s.pixels))
    assert max(radii[0]) < min(radii[1])
    assert CLASS_FREQUENCIES[0] < CLASS_FREQUENCIES[1]


def test_synthetic_classes_dihedral_invariant():
    # rotating/flipping must not move an image's spectral radius across
    # the class boundary, otherwise augmentation would corrupt labels
    store = generate_synthetic(5, image_size=32, seed=6)
    threshold = (CLASS_FREQUENCIES[0] + CLASS_FREQUENCIES[1]) / 2
    for s in store.split("train"):
        for element in range(8):
            r = _peak_radius(dihedral_transform(s.pixels, element))
            assert (r < threshold) == (s.label == 0)


def test_generate_synthetic_validates_arguments():
    with pytest.raises(InvalidArgumentError):
        generate_synthetic(0)
    with pytest.raises(InvalidArgumentError):
        generate_synthetic(5, image_size=8)


# ------------------------------------------------------------------ dihedral


def test_dihedral_identity_and_rotations():
    px = np.arange(27, dtype=np.uint8).reshape(3, 3, 3)
    np.testing.assert_array_equal(dihedral_transform(px, 0), px)
    r1 = dihedral_transform(px, 1)
    r2 = dihedral_transform(r1, 1)
    np.testing.assert_array_equal(r2, dihedral_transform(px, 2))
    r4 = dihedral_transform(r2, 2)
    np.testing.assert_array_equal(r4, px)


def test_dihedral_flips_are_involutions():
    px = np.random.default_rng(1).integers(0, 255, (4, 4, 3)).astype(np.uint8)
    flipped = dihedral_transform(px, 4)
    assert not np.array_equal(flipped, px)
    # element 4 is a pure mirror: applying it twice is the identity
    np.testing.assert_array_equal(dihedral_transform(flipped, 4), px)


def test_dihedral_elements_distinct():
    px = np.zeros((4, 4, 3), np.uint8)
    px[0, 0] = 255
    px[0, 1] = 128  # break every symmetry
    seen = {dihedral_transform(px, e).tobytes() for e in range(8)}
    assert len(seen) == 8


def test_dihedral_rejects_bad_element():
    with pytest.raises(InvalidArgumentError):
        dihedral_transform(np.zeros((3, 3, 3), np.uint8), 8)


def test_augment_deterministic_and_label_preserving():
    sample = ImageSample(
        pixels=np.random.default_rng(2).integers(0, 255, (16, 16, 3)).astype(np.uint8),
        label=1,
        id="a",
    )
    out1 = augment(sample, seed=5)
    out2 = augment(sample, seed=5)
    np.testing.assert_array_equal(out1.pixels, out2.pixels)
    assert out1.label == sample.label
    variants = {augment(sample, seed=s).pixels.tobytes() for s in range(16)}
    assert len(variants) > 1


# ----------------------------------------------------------------- PNG store


def test_png_round_trip(tmp_path, tiny_store):
    out = save_dataset_png(tiny_store, tmp_path / "ds")
    loaded = load_dataset_png(out)
    assert set(loaded.splits) == set(tiny_store.splits)
    for split in tiny_store.splits:
        for orig, back in zip(tiny_store.split(split), loaded.split(split)):
            assert back.label == orig.label
            np.testing.assert_array_equal(back.pixels, orig.pixels)


def test_png_save_refuses_nonempty_dir(tmp_path, tiny_store):
    target = tmp_path / "ds"
    target.mkdir()
    (target / "junk.txt").write_text("x")
    with pytest.raises(InvalidArgumentError):
        save_dataset_png(tiny_store, target)
    save_dataset_png(tiny_store, target, force=True)  # explicit override


def test_png_load_missing_manifest(tmp_path):
    (tmp_path / "empty").mkdir()
    with pytest.raises(IngestionError):
        load_dataset_png(tmp_path / "empty")


def test_png_load_missing_file(tmp_path, tiny_store):
    out = save_dataset_png(tiny_store, tmp_path / "ds")
    victim = next(out.glob("*.png"))
    victim.unlink()
    with pytest.raises(IngestionError):
        load_dataset_png(out)


# ---------------------------------------------------------------------- PCam


@pytest.fixture
def fake_pcam(tmp_path):
    if h5py is None:
        pytest.skip("h5py unavailable")
    rng = np.random.default_rng(0)
    sizes = {"train": 6, "valid": 4, "test": 4}
    for split, n in sizes.items():
        x = rng.integers(0, 255, (n, 96, 96, 3)).astype(np.uint8)
        y = (np.arange(n) % 2).reshape(n, 1, 1, 1).astype(np.uint8)
        with h5py.File(tmp_path / PCAM_FILE_TEMPLATE.format(split=split, part="x"), "w") as f:
            f.create_dataset("x", data=x)
        with h5py.File(tmp_path / PCAM_FILE_TEMPLATE.format(split=split, part="y"), "w") as f:
            f.create_dataset("y", data=y)
    return tmp_path


def test_pcam_loads_all_splits(fake_pcam):
    store = load_pcam(fake_pcam)
    assert len(store.split("train")) == 6
    assert len(store.split("valid")) == 4
    assert len(store.split("test")) == 4
    assert store.image_size == 96
    labels = [s.label for s in store.split("train")]
    assert labels == [0, 1, 0, 1, 0, 1]


def test_pcam_missing_file_names_it(fake_pcam):
    victim = fake_pcam / PCAM_FILE_TEMPLATE.format(split="valid", part="y")
    victim.unlink()
    with pytest.raises(IngestionError, match=victim.name):
        load_pcam(fake_pcam)


def test_pcam_rejects_wrong_dtype(fake_pcam):
    path = fake_pcam / PCAM_FILE_TEMPLATE.format(split="test", part="x")
    with h5py.File(path, "w") as f:
        f.create_dataset("x", data=np.zeros((4, 96, 96, 3), np.float32))
    with pytest.raises(FormatError):
        load_pcam(fake_pcam)


# ------------------------------------------------------------------- subsets


def test_subset_stratified_10_to_5_5(tiny_store):
    ids = sample_label_subset(tiny_store, 10, seed=0)
    assert len(ids) == len(set(ids)) == 10
    by_id = {s.id: s for s in tiny_store.split("train")}
    labels = [by_id[i].label for i in ids]
    assert labels.count(0) == 5 and labels.count(1) == 5


def test_subset_odd_size_near_balanced(tiny_store):
    by_id = {s.id: s for s in tiny_store.split("train")}
    labels = [by_id[i].label for i in sample_label_subset(tiny_store, 7, seed=1)]
    assert abs(labels.count(0) - labels.count(1)) == 1


def test_subset_deterministic(tiny_store):
    assert sample_label_subset(tiny_store, 8, seed=3) == sample_label_subset(
        tiny_store, 8, seed=3
    )


def test_subset_too_large_rejected(tiny_store):
    with pytest.raises(InvalidArgumentError):
        sample_label_subset(tiny_store, 10_000, seed=0)


def test_subset_single_class_pool_rejected():
    samples = [
        ImageSample(
            pixels=np.zeros((16, 16, 3), np.uint8), label=0, id=f"s{i}"
        )
        for i in range(6)
    ]
    store = DatasetStore(
        splits={"train": samples}, image_size=16, class_names=("a", "b"), source="test"
    )
    with pytest.raises(InvalidArgumentError, match="both classes"):
        sample_label_subset(store, 4, seed=0)


# --------------------------------------------------------------- train/valid


def test_split_train_val_sizes_and_disjoint(tiny_store):
    # tiny_store already has a valid split; rebuild one from train only
    train_only = DatasetStore(
        splits={"train": list(tiny_store.split("train"))},
        image_size=tiny_store.image_size,
        class_names=tiny_store.class_names,
        source="test",
    )
    n = len(train_only.split("train"))
    out = split_train_val(train_only, 0.25, seed=0)
    assert len(out.split("valid")) == round(0.25 * n)
    assert len(out.split("train")) + len(out.split("valid")) == n
    train_ids = {s.id for s in out.split("train")}
    valid_ids = {s.id for s in out.split("valid")}
    assert not train_ids & valid_ids


def test_split_train_val_deterministic(tiny_store):
    a = split_train_val(tiny_store, 0.2, seed=5)
    b = split_train_val(tiny_store, 0.2, seed=5)
    assert [s.id for s in a.split("valid")] == [s.id for s in b.split("valid")]


def test_split_train_val_bad_fraction(tiny_store):
    with pytest.raises(InvalidArgumentError):
        split_train_val(tiny_store, 1.5, seed=0)


def test_split_rejects_unknown_name(tiny_store):
    with pytest.raises(InvalidArgumentError, match="train"):
        tiny_store.split("banana")
