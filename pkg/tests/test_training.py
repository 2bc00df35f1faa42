"""Training loops, checkpoints, sweeps and the finite-difference audit."""

import csv
import io
import json
import zipfile

import numpy as np
import pytest

from patchcpc import autodiff as ad
from patchcpc.autodiff import Tensor
from patchcpc.errors import (
    ConfigurationError,
    DivergenceError,
    FormatError,
    InvalidArgumentError,
)
from patchcpc.data import generate_synthetic
from patchcpc.training import (
    DEFAULT_SWEEP_SIZES,
    VARIANTS,
    Checkpoint,
    GradCheckReport,
    SweepResult,
    TrainConfig,
    check_gradients,
    encode_image_batch,
    evaluate,
    finetune_classifier,
    finetune_defaults,
    gradient_check,
    modules_from_checkpoint,
    pretrain_cpc,
    run_sweep,
    write_metrics_csv,
)

LN5 = np.log(5.0)

# small model so every test runs in well under a second
TOY = dict(
    patch_size=8,
    patch_stride=4,
    latent_dim=8,
    encoder_channels=(4, 8, 8),
    n_blocks=2,
    hidden_units=16,
)


def toy_pretrain(**overrides):
    base = dict(
        phase="pretrain", epochs=2, batch_size=4, n_negatives=4,
        learning_rate=1e-3, seed=0, **TOY,
    )
    base.update(overrides)
    return TrainConfig(**base)


def toy_finetune(**overrides):
    base = dict(
        phase="finetune", epochs=2, batch_size=8, learning_rate=1e-3, seed=0, **TOY,
    )
    base.update(overrides)
    return TrainConfig(**base)


# ------------------------------------------------------------------- config


@pytest.mark.parametrize(
    "bad",
    [
        dict(phase="predict"),
        dict(learning_rate=0.0),
        dict(epochs=0),
        dict(optimizer="sgd"),
        dict(patience=0),
        dict(phase="pretrain", batch_size=1),
        dict(n_negatives=0),
    ],
)
def test_train_config_rejects(bad):
    with pytest.raises(ConfigurationError):
        TrainConfig(**bad)


def test_finetune_defaults():
    cfg = finetune_defaults(seed=7)
    assert cfg.phase == "finetune"
    assert cfg.epochs == 50
    assert cfg.batch_size == 64
    assert cfg.learning_rate == 1e-4
    assert cfg.seed == 7


def test_table1_protocol_constants():
    assert DEFAULT_SWEEP_SIZES == (10, 32, 100, 316, 1000, 3162, 10000, 31624, 100000)
    assert VARIANTS == (
        "none",
        "single+top_down",
        "single+infill",
        "multi+top_down",
        "multi+infill",
    )


# ----------------------------------------------------------------- pretrain


def test_pretrain_epoch0_matches_uniform_baseline(tiny_store):
    # tiny init keeps scores near zero, so the first validation pass sits
    # at the uniform-guess loss ln(n_negatives + 1)
    ckpt = pretrain_cpc(tiny_store, toy_pretrain(epochs=1))
    first = ckpt.history[0]
    assert (first["epoch"], first["split"], first["metric"]) == (0, "valid", "info_nce")
    assert first["value"] == pytest.approx(LN5, abs=0.02)


def test_pretrain_is_deterministic(tiny_store):
    a = pretrain_cpc(tiny_store, toy_pretrain())
    b = pretrain_cpc(tiny_store, toy_pretrain())
    assert a.history == b.history
    assert sorted(a.params) == sorted(b.params)
    for key in a.params:
        np.testing.assert_array_equal(a.params[key], b.params[key])


def test_pretrain_seed_changes_result(tiny_store):
    a = pretrain_cpc(tiny_store, toy_pretrain(epochs=1))
    b = pretrain_cpc(tiny_store, toy_pretrain(epochs=1, seed=1))
    assert any(
        not np.array_equal(a.params[k], b.params[k]) for k in a.params
    )


def test_pretrain_rejects_finetune_phase(tiny_store):
    with pytest.raises(ConfigurationError, match="pretrain"):
        pretrain_cpc(tiny_store, toy_finetune())


def test_pretrain_needs_two_validation_images():
    store = generate_synthetic(2, image_size=32, seed=0)  # 0 valid images
    with pytest.raises(InvalidArgumentError, match="valid"):
        pretrain_cpc(store, toy_pretrain())


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_carries_last_good_checkpoint(tiny_store):
    # one optimizer step at this rate overflows float32 activations
    with pytest.raises(DivergenceError) as info:
        pretrain_cpc(tiny_store, toy_pretrain(epochs=3, learning_rate=1e12))
    ckpt = info.value.checkpoint
    assert isinstance(ckpt, Checkpoint)
    assert all(np.isfinite(v).all() for v in ckpt.params.values())
    assert any(r["epoch"] == 0 for r in ckpt.history)


def test_pretrain_history_covers_train_and_valid(tiny_store):
    ckpt = pretrain_cpc(tiny_store, toy_pretrain(epochs=2, patience=5))
    rows = {(r["epoch"], r["split"]) for r in ckpt.history}
    assert (0, "valid") in rows
    assert (1, "train") in rows and (1, "valid") in rows
    assert (2, "train") in rows and (2, "valid") in rows


# -------------------------------------------------------------- checkpoints


def test_checkpoint_roundtrip_is_bitwise(tiny_store, tmp_path):
    ckpt = pretrain_cpc(tiny_store, toy_pretrain(epochs=1))
    path = ckpt.save(tmp_path / "ck.zip")
    loaded = Checkpoint.load(path)
    # config survives modulo JSON types (tuples come back as lists)
    assert loaded.config == json.loads(json.dumps(ckpt.config))
    assert loaded.history == ckpt.history
    assert sorted(loaded.params) == sorted(ckpt.params)
    for key in ckpt.params:
        np.testing.assert_array_equal(loaded.params[key], ckpt.params[key])
        assert loaded.params[key].dtype == ckpt.params[key].dtype


def test_checkpoint_probe_forward_is_bitwise(tiny_store, tmp_path):
    # reload and run the full pipeline: outputs must match exactly
    ckpt = pretrain_cpc(tiny_store, toy_pretrain(epochs=1))
    loaded = Checkpoint.load(ckpt.save(tmp_path / "ck.zip"))
    pixels = [s.pixels for s in tiny_store.split("valid")[:2]]

    def forward(ck):
        encoder, stack, head, mask = modules_from_checkpoint(ck)
        z = encode_image_batch(encoder, pixels, 8, 4, np.float32)
        ctx = stack(ad.transpose(z, (0, 3, 1, 2)))
        return z.data, ctx.data

    za, ca = forward(ckpt)
    zb, cb = forward(loaded)
    np.testing.assert_array_equal(za, zb)
    np.testing.assert_array_equal(ca, cb)


def test_checkpoint_load_missing_file(tmp_path):
    with pytest.raises(FormatError, match="not found"):
        Checkpoint.load(tmp_path / "absent.zip")


def test_checkpoint_load_garbage(tmp_path):
    path = tmp_path / "junk.zip"
    path.write_bytes(b"not a zip archive")
    with pytest.raises(FormatError, match="not a readable checkpoint"):
        Checkpoint.load(path)


def test_checkpoint_load_wrong_format_tag(tmp_path):
    path = tmp_path / "tagged.zip"
    buf = io.BytesIO()
    np.savez(buf, w=np.zeros(3))
    with zipfile.ZipFile(path, "w") as zf:
        zf.writestr("meta.json", json.dumps({"format": "something-else"}))
        zf.writestr("params.npz", buf.getvalue())
    with pytest.raises(FormatError, match="format tag"):
        Checkpoint.load(path)


def test_checkpoint_component_selection():
    ck = Checkpoint(
        config={}, history=[],
        params={"encoder.a": np.zeros(1), "head.b": np.ones(1)},
    )
    assert list(ck.component("encoder")) == ["a"]
    assert ck.has_component("head") and not ck.has_component("stack")


# -------------------------------------------------------------- metrics CSV


def test_write_metrics_csv_format(tmp_path):
    history = [
        {"epoch": 0, "split": "valid", "metric": "info_nce", "value": 1.6094379124},
        {"epoch": 1, "split": "train", "metric": "info_nce", "value": 1.25},
    ]
    path = write_metrics_csv(tmp_path / "m.csv", history)
    rows = list(csv.reader(open(path)))
    assert rows[0] == ["epoch", "split", "metric", "value"]
    assert rows[1] == ["0", "valid", "info_nce", "1.609437912"]
    assert rows[2][0] == "1"


def test_write_metrics_csv_append(tmp_path):
    h1 = [{"epoch": 0, "split": "valid", "metric": "m", "value": 1.0}]
    h2 = [{"epoch": 1, "split": "valid", "metric": "m", "value": 2.0}]
    path = write_metrics_csv(tmp_path / "m.csv", h1)
    write_metrics_csv(path, h2, append=True)
    rows = list(csv.reader(open(path)))
    assert len(rows) == 3  # one header, two data rows
    assert rows[0] == ["epoch", "split", "metric", "value"]
    # append on a fresh path still writes the header
    other = write_metrics_csv(tmp_path / "fresh.csv", h1, append=True)
    assert list(csv.reader(open(other)))[0] == ["epoch", "split", "metric", "value"]


# ----------------------------------------------------------------- finetune


def test_finetune_learns_the_synthetic_task():
    # the class signal sits near the noise floor, so this needs more
    # labels and epochs than the other finetune tests
    store = generate_synthetic(40, image_size=32, seed=3)
    cfg = toy_finetune(epochs=60, patience=60, learning_rate=3e-3)
    ckpt = finetune_classifier(store, 32, "random", cfg)
    assert evaluate(ckpt, store, "train") >= 0.9
    assert evaluate(ckpt, store, "test") >= 0.8


def test_finetune_early_stops_on_flat_accuracy(tiny_store):
    # a vanishing step keeps validation accuracy constant, so training
    # stops after exactly `patience` non-improving epochs
    cfg = toy_finetune(epochs=50, patience=2, learning_rate=1e-12)
    ckpt = finetune_classifier(tiny_store, 8, "random", cfg)
    val_epochs = [r["epoch"] for r in ckpt.history if r["split"] == "valid"]
    assert max(val_epochs) == 2


def test_finetune_runs_all_epochs_with_long_patience(tiny_store):
    cfg = toy_finetune(epochs=2, patience=10)
    ckpt = finetune_classifier(tiny_store, 8, "random", cfg)
    val_epochs = [r["epoch"] for r in ckpt.history if r["split"] == "valid"]
    assert val_epochs == [0, 1, 2]


def test_finetune_is_deterministic(tiny_store):
    a = finetune_classifier(tiny_store, 8, "random", toy_finetune())
    b = finetune_classifier(tiny_store, 8, "random", toy_finetune())
    assert a.history == b.history
    for key in a.params:
        np.testing.assert_array_equal(a.params[key], b.params[key])


def test_finetune_loads_pretrained_trunk(tiny_store):
    pre = pretrain_cpc(tiny_store, toy_pretrain(epochs=1))
    # seed 1 here: the warm trunk must come from the checkpoint, not from
    # the finetune seed's own random init
    cfg = toy_finetune(epochs=1, learning_rate=1e-12, seed=1)
    warm = finetune_classifier(tiny_store, 8, pre, cfg)
    cold = finetune_classifier(tiny_store, 8, "random", cfg)
    assert warm.config["init"] == "checkpoint"
    assert cold.config["init"] == "random"
    key = "encoder.conv1.weight"
    np.testing.assert_allclose(
        warm.params[key], pre.params[key], rtol=0, atol=1e-10
    )
    assert not np.array_equal(cold.params[key], pre.params[key])


def test_finetune_subset_larger_than_train(tiny_store):
    with pytest.raises(InvalidArgumentError):
        finetune_classifier(tiny_store, 100, "random", toy_finetune())


def test_finetune_refuses_single_class_subset(tiny_store):
    with pytest.raises(InvalidArgumentError, match="single-class"):
        finetune_classifier(tiny_store, 1, "random", toy_finetune())


def test_finetune_rejects_pretrain_phase(tiny_store):
    with pytest.raises(ConfigurationError, match="finetune"):
        finetune_classifier(tiny_store, 8, "random", toy_pretrain())


def test_evaluate_constant_predictor_scores_half(tiny_store):
    # zeroed output layer ties all logits; argmax then always predicts
    # class 0, which is exactly half of the balanced test split
    ckpt = finetune_classifier(
        tiny_store, 8, "random", toy_finetune(epochs=1, learning_rate=1e-12)
    )
    for key in ("classifier.output.weight", "classifier.output.bias"):
        ckpt.params[key] = np.zeros_like(ckpt.params[key])
    assert evaluate(ckpt, tiny_store, "test") == 0.5


def test_evaluate_requires_classifier_params(tiny_store):
    pre = pretrain_cpc(tiny_store, toy_pretrain(epochs=1))
    with pytest.raises(ConfigurationError, match="classifier"):
        evaluate(pre, tiny_store, "test")


# -------------------------------------------------------------------- sweep


def test_sweep_result_aggregates_population_std():
    rows = [
        {"variant": "none", "subset_size": 10, "seed": s, "test_accuracy": a}
        for s, a in [(1, 0.5), (2, 1.0)]
    ]
    rows.append(
        {"variant": "multi+infill", "subset_size": 10, "seed": 1, "test_accuracy": 0.75}
    )
    agg = SweepResult(rows=rows).aggregate()
    assert agg[0] == {
        "variant": "none",
        "subset_size": 10,
        "mean_accuracy": 0.75,
        "std_accuracy": 0.25,  # population std, not sample std
        "n_seeds": 2,
    }
    assert agg[1]["std_accuracy"] == 0.0 and agg[1]["n_seeds"] == 1


def test_sweep_result_rejects_bad_accuracy():
    with pytest.raises(InvalidArgumentError):
        SweepResult(rows=[{"variant": "none", "subset_size": 1, "seed": 0, "test_accuracy": 1.2}])


def test_sweep_csv_layouts(tmp_path):
    result = SweepResult(
        rows=[
            {"variant": "none", "subset_size": 10, "seed": 1, "test_accuracy": 0.5},
            {"variant": "none", "subset_size": 10, "seed": 2, "test_accuracy": 1.0},
        ]
    )
    rows_csv = list(csv.reader(open(result.write_rows_csv(tmp_path / "rows.csv"))))
    assert rows_csv[0] == ["variant", "subset_size", "seed", "test_accuracy"]
    assert rows_csv[1] == ["none", "10", "1", "0.500000"]
    agg_csv = list(csv.reader(open(result.write_aggregate_csv(tmp_path / "agg.csv"))))
    assert agg_csv[0] == ["variant", "subset_size", "mean_accuracy", "std_accuracy", "n_seeds"]
    assert agg_csv[1] == ["none", "10", "0.750000", "0.250000", "2"]


def test_run_sweep_validates_inputs(tiny_store):
    cfg = toy_finetune()
    with pytest.raises(InvalidArgumentError, match="non-empty"):
        run_sweep(tiny_store, [], [4], [0], cfg)
    with pytest.raises(InvalidArgumentError, match="unknown variant"):
        run_sweep(tiny_store, ["dual+infill"], [4], [0], cfg)
    with pytest.raises(ConfigurationError, match="single\\+infill"):
        run_sweep(tiny_store, ["single+infill"], [4], [0], cfg)


def test_run_sweep_grid(tiny_store):
    pre = pretrain_cpc(
        tiny_store, toy_pretrain(epochs=1, directional="single", mask_kind="infill")
    )
    result = run_sweep(
        tiny_store,
        ["none", "single+infill"],
        [4],
        [0, 1],
        toy_finetune(epochs=1),
        pretrained={"single+infill": pre},
    )
    assert len(result.rows) == 4
    assert {r["variant"] for r in result.rows} == {"none", "single+infill"}
    assert all(0.0 <= r["test_accuracy"] <= 1.0 for r in result.rows)
    assert [r["seed"] for r in result.rows] == [0, 1, 0, 1]
    agg = result.aggregate()
    assert len(agg) == 2 and all(row["n_seeds"] == 2 for row in agg)


# ----------------------------------------------------------- gradient audit


def test_gradient_check_toy_graph_passes():
    report = gradient_check(seed=0)
    assert sorted(report.per_group) == ["encoder", "head", "stack"]
    assert report.max_relative_error < 1e-4
    assert "gradient check" in str(report)


def test_gradient_check_rejects_large_models():
    cfg = TrainConfig(
        phase="pretrain", batch_size=2, n_negatives=1, patch_size=8,
        patch_stride=4, latent_dim=32, encoder_channels=(8, 16, 16),
        n_blocks=2, directional="single",
    )
    with pytest.raises(InvalidArgumentError, match="1000"):
        gradient_check(cfg)


def test_check_gradients_empty_params():
    assert check_gradients(lambda: Tensor(np.float64(0.0)), []) == {}
    report = GradCheckReport(per_group={}, step=1e-5)
    assert report.max_relative_error == 0.0
    assert "no parameters" in str(report)


def test_check_gradients_requires_float64():
    p = Tensor(np.zeros(2, dtype=np.float32), requires_grad=True)
    with pytest.raises(InvalidArgumentError, match="float64"):
        check_gradients(lambda: ad.tsum(ad.mul(p, p)), [("p", p)])


def test_check_gradients_flags_wrong_backward():
    # loss treats one factor as a constant, so its analytic gradient is
    # p instead of the true 2p: the audit must report a large error
    rng = np.random.default_rng(0)
    p = Tensor(rng.standard_normal(3), requires_grad=True)

    def loss_fn():
        frozen = Tensor(p.data.copy())
        return ad.tsum(ad.mul(p, frozen))

    errors = check_gradients(loss_fn, [("p", p)])
    assert errors["p"] > 1e-2


def test_check_gradients_accepts_correct_backward():
    rng = np.random.default_rng(1)
    p = Tensor(rng.standard_normal(4), requires_grad=True)
    errors = check_gradients(lambda: ad.tsum(ad.mul(p, p)), [("p", p)])
    assert errors["p"] < 1e-8
