"""Command-line pipeline: synth, pretrain, finetune, sweep, plot, leakcheck.

Every run writes exactly one manifest (resolved config, seed, input and
output paths with content hashes, timestamps) into its run directory and
appends a copy to <runs-root>/manifests.jsonl. Config precedence is CLI
flags > TOML config file > built-in defaults.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from .autoregressor import MaskedConv2d, autoregress, build_mask, build_stack
from .cpc_core import apply_mask, build_head, make_infill_mask, make_topdown_mask, predict_targets
from .data import generate_synthetic, load_dataset_png, load_pcam, save_dataset_png, split_train_val
from .encoder import LatentGrid
from .errors import (
    ConfigurationError,
    DataError,
    DivergenceError,
    FormatError,
    GeometryError,
    IngestionError,
    InvalidArgumentError,
    NumericError,
)
from .plotting import (
    plot_accuracy_vs_labels,
    plot_validation_curves,
    read_metrics_csv,
    read_sweep_csv,
)
from .training import (
    DEFAULT_SWEEP_SIZES,
    VARIANTS,
    Checkpoint,
    TrainConfig,
    evaluate,
    finetune_classifier,
    pretrain_cpc,
    run_sweep,
    write_metrics_csv,
)

RUNS_ENV = "PATCHCPC_RUNS"
EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3

LEAK_TOLERANCE = 1e-12


class UsageError(Exception):
    """Bad invocation: unknown flags, malformed values, missing arguments."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse would exit(2); the contract wants 1
        raise UsageError(message)


# --------------------------------------------------------------------------
# config resolution

SYNTH_DEFAULTS = {"n": None, "size": 32, "seed": 0, "out": None, "force": False}
PRETRAIN_DEFAULTS = {
    "mask": "infill",
    "directional": "multi",
    "negatives": 16,
    "lr": 1e-4,
    "epochs": 20,
    "batch": 16,
    "patience": 5,
    "seed": 0,
    "patch": 24,
    "stride": 12,
    "latent_dim": 128,
    "context_rows": 3,
    "encoder": "toy_cnn",
    "channels": (16, 32, 32),
    "kernel_size": 3,
    "share_branch_weights": False,
    "val_fraction": 0.2,
    "out": None,
}
FINETUNE_DEFAULTS = {
    "init": "random",
    "subset": None,
    "epochs": 50,
    "lr": 1e-4,
    "batch": 64,
    "patience": 5,
    "seed": 0,
    "hidden": 256,
    "latent_dim": 128,
    "encoder": "toy_cnn",
    "channels": (16, 32, 32),
    "out": None,
}
SWEEP_DEFAULTS = {
    "variants": VARIANTS,
    "sizes": DEFAULT_SWEEP_SIZES,
    "seeds": (1, 2, 3, 4, 5),
    "epochs": 50,
    "lr": 1e-4,
    "batch": 64,
    "patience": 5,
    "hidden": 256,
    "latent_dim": 128,
    "encoder": "toy_cnn",
    "channels": (16, 32, 32),
    "pretrained": {},
}
PLOT_DEFAULTS = {"metrics": (), "sweep": None, "out": None}
LEAKCHECK_DEFAULTS = {
    "mask": "infill",
    "directional": "multi",
    "grid": 7,
    "latent_dim": 16,
    "seed": 0,
    "trials": 20,
    "fixture": None,
}


def _load_toml(path) -> dict:
    try:
        import tomllib
    except ModuleNotFoundError:  # Python < 3.11
        import tomli as tomllib
    path = Path(path)
    if not path.exists():
        raise UsageError(f"config file not found: {path}")
    try:
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise UsageError(f"config file {path} is not valid TOML: {exc}") from exc


def _resolve(args, command: str, defaults: dict) -> dict:
    """flags > TOML section > built-in defaults."""
    cfg = dict(defaults)
    if getattr(args, "config", None):
        section = _load_toml(args.config).get(command, {})
        unknown = set(section) - set(defaults)
        if unknown:
            raise UsageError(
                f"unknown [{command}] config keys: {', '.join(sorted(unknown))}"
            )
        cfg.update(section)
    for key in defaults:
        value = getattr(args, key, None)
        if value is not None:
            cfg[key] = value
    return cfg


def _int_list(value, flag: str) -> list:
    if isinstance(value, str):
        value = [v for v in value.split(",") if v]
    try:
        return [int(v) for v in value]
    except (TypeError, ValueError) as exc:
        raise UsageError(f"--{flag} expects a comma-separated list of integers") from exc


def _str_list(value) -> list:
    if isinstance(value, str):
        return [v for v in value.split(",") if v]
    return list(value)


def _pretrained_map(value) -> dict:
    """--pretrained variant=path pairs (or a TOML table) -> dict."""
    if isinstance(value, dict):
        return {str(k): str(v) for k, v in value.items()}
    out = {}
    for item in value or ():
        if "=" not in item:
            raise UsageError(
                f"--pretrained expects variant=path, got {item!r}"
            )
        variant, _, path = item.partition("=")
        out[variant] = path
    return out


# --------------------------------------------------------------------------
# run directories, manifests, data loading


def _runs_root(args) -> Path:
    root = getattr(args, "runs", None) or os.environ.get(RUNS_ENV) or "runs"
    return Path(root)


def _make_run_dir(args, command: str) -> Path:
    root = _runs_root(args)
    stamp = time.strftime("%Y%m%d-%H%M%S")
    base = root / f"{command}-{stamp}"
    run_dir = base
    n = 1
    while run_dir.exists():
        run_dir = Path(f"{base}-{n}")
        n += 1
    run_dir.mkdir(parents=True)
    return run_dir


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _hash_tree(path) -> str:
    """Hash of a directory: file names and contents, order-independent."""
    path = Path(path)
    if path.is_file():
        return _sha256(path)
    h = hashlib.sha256()
    for f in sorted(p for p in path.rglob("*") if p.is_file()):
        h.update(str(f.relative_to(path)).encode())
        h.update(bytes.fromhex(_sha256(f)))
    return h.hexdigest()


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def _write_manifest(run_dir: Path, manifest: dict) -> Path:
    manifest = dict(manifest, finished=_now())
    path = run_dir / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True, default=str) + "\n")
    ledger = run_dir.parent / "manifests.jsonl"
    with open(ledger, "a") as fh:
        fh.write(json.dumps(manifest, sort_keys=True, default=str) + "\n")
    return path


def _load_store(path):
    p = Path(path)
    if p.is_dir() and (p / "manifest.csv").exists():
        return load_dataset_png(p)
    if p.is_dir() and list(p.glob("camelyonpatch_level_2_split_*.h5")):
        return load_pcam(p)
    raise IngestionError(
        f"no dataset recognized at {path}: expected a PNG dataset (manifest.csv) "
        "or PCam HDF5 files (camelyonpatch_level_2_split_*.h5)"
    )


# --------------------------------------------------------------------------
# subcommands


def cmd_synth(args) -> int:
    cfg = _resolve(args, "synth", SYNTH_DEFAULTS)
    if cfg["n"] is None:
        raise UsageError("synth requires --n (images per class)")
    run_dir = _make_run_dir(args, "synth")
    started = _now()
    out_dir = Path(cfg["out"]) if cfg["out"] else run_dir / "dataset"
    store = generate_synthetic(int(cfg["n"]), image_size=int(cfg["size"]), seed=int(cfg["seed"]))
    save_dataset_png(store, out_dir, force=bool(cfg["force"]))
    total = sum(len(v) for v in store.splits.values())
    print(f"wrote {total} images ({', '.join(f'{k}={len(v)}' for k, v in store.splits.items())})")
    print(f"dataset: {out_dir}")
    _write_manifest(
        run_dir,
        {
            "command": "synth",
            "config": {k: cfg[k] for k in ("n", "size", "seed", "force")},
            "seed": int(cfg["seed"]),
            "inputs": {},
            "outputs": {"dataset": {"path": str(out_dir), "sha256": _hash_tree(out_dir)}},
            "started": started,
            "status": "ok",
        },
    )
    return EXIT_OK


def _pretrain_config(cfg: dict) -> TrainConfig:
    return TrainConfig(
        phase="pretrain",
        learning_rate=float(cfg["lr"]),
        epochs=int(cfg["epochs"]),
        batch_size=int(cfg["batch"]),
        patience=int(cfg["patience"]),
        seed=int(cfg["seed"]),
        directional=cfg["directional"],
        mask_kind=cfg["mask"],
        patch_size=int(cfg["patch"]),
        patch_stride=int(cfg["stride"]),
        latent_dim=int(cfg["latent_dim"]),
        context_rows=int(cfg["context_rows"]),
        n_negatives=int(cfg["negatives"]),
        encoder_family=cfg["encoder"],
        encoder_channels=tuple(_int_list(cfg["channels"], "channels")),
        kernel_size=int(cfg["kernel_size"]),
        share_branch_weights=bool(cfg["share_branch_weights"]),
    )


def cmd_pretrain(args) -> int:
    cfg = _resolve(args, "pretrain", PRETRAIN_DEFAULTS)
    config = _pretrain_config(cfg)
    store = _load_store(args.data)
    if "valid" not in store.splits:
        store = split_train_val(store, float(cfg["val_fraction"]), config.seed)
    run_dir = _make_run_dir(args, "pretrain")
    started = _now()
    ckpt_path = Path(cfg["out"]) if cfg["out"] else run_dir / "checkpoint.zip"
    metrics_path = run_dir / "metrics.csv"
    manifest = {
        "command": "pretrain",
        "config": {k: (list(v) if isinstance(v, tuple) else v) for k, v in cfg.items()},
        "seed": config.seed,
        "inputs": {"data": str(args.data)},
        "outputs": {},
        "started": started,
    }
    try:
        ckpt = pretrain_cpc(store, config, log=lambda msg: print(msg))
    except DivergenceError as exc:
        if exc.checkpoint is not None:
            saved = exc.checkpoint.save(run_dir / "diverged-checkpoint.zip")
            write_metrics_csv(metrics_path, exc.checkpoint.history)
            manifest["outputs"] = {
                "checkpoint": {"path": str(saved), "sha256": _sha256(saved)},
                "metrics": {"path": str(metrics_path), "sha256": _sha256(metrics_path)},
            }
        manifest["status"] = "diverged"
        _write_manifest(run_dir, manifest)
        print(f"pretraining diverged: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    ckpt.save(ckpt_path)
    write_metrics_csv(metrics_path, ckpt.history)
    best = min(r["value"] for r in ckpt.history if r["split"] == "valid")
    print(f"best validation InfoNCE: {best:.4f}")
    print(f"checkpoint: {ckpt_path}")
    print(f"metrics: {metrics_path}")
    manifest["outputs"] = {
        "checkpoint": {"path": str(ckpt_path), "sha256": _sha256(ckpt_path)},
        "metrics": {"path": str(metrics_path), "sha256": _sha256(metrics_path)},
    }
    manifest["status"] = "ok"
    _write_manifest(run_dir, manifest)
    return EXIT_OK


def cmd_finetune(args) -> int:
    cfg = _resolve(args, "finetune", FINETUNE_DEFAULTS)
    config = TrainConfig(
        phase="finetune",
        learning_rate=float(cfg["lr"]),
        epochs=int(cfg["epochs"]),
        batch_size=int(cfg["batch"]),
        patience=int(cfg["patience"]),
        seed=int(cfg["seed"]),
        hidden_units=int(cfg["hidden"]),
        latent_dim=int(cfg["latent_dim"]),
        encoder_family=cfg["encoder"],
        encoder_channels=tuple(_int_list(cfg["channels"], "channels")),
    )
    store = _load_store(args.data)
    if "valid" not in store.splits:
        store = split_train_val(store, 0.2, config.seed)
    subset = int(cfg["subset"]) if cfg["subset"] is not None else len(store.split("train"))
    init = cfg["init"]
    if init != "random":
        init = Checkpoint.load(init)
    run_dir = _make_run_dir(args, "finetune")
    started = _now()
    ckpt_path = Path(cfg["out"]) if cfg["out"] else run_dir / "classifier.zip"
    metrics_path = run_dir / "metrics.csv"
    manifest = {
        "command": "finetune",
        "config": {k: (list(v) if isinstance(v, tuple) else v) for k, v in cfg.items()},
        "seed": config.seed,
        "inputs": {"data": str(args.data), "init": str(cfg["init"])},
        "outputs": {},
        "started": started,
    }
    try:
        ckpt = finetune_classifier(store, subset, init, config, log=lambda msg: print(msg))
    except DivergenceError as exc:
        manifest["status"] = "diverged"
        _write_manifest(run_dir, manifest)
        print(f"fine-tuning diverged: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    ckpt.save(ckpt_path)
    write_metrics_csv(metrics_path, ckpt.history)
    manifest["outputs"] = {
        "checkpoint": {"path": str(ckpt_path), "sha256": _sha256(ckpt_path)},
        "metrics": {"path": str(metrics_path), "sha256": _sha256(metrics_path)},
    }
    if "test" in store.splits:
        acc = evaluate(ckpt, store, "test")
        print(f"test accuracy: {acc:.4f}")
        manifest["test_accuracy"] = acc
    print(f"checkpoint: {ckpt_path}")
    manifest["status"] = "ok"
    _write_manifest(run_dir, manifest)
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = _resolve(args, "sweep", SWEEP_DEFAULTS)
    variants = _str_list(cfg["variants"])
    for v in variants:
        if v not in VARIANTS:
            raise UsageError(f"unknown variant {v!r}; choose from {', '.join(VARIANTS)}")
    sizes = _int_list(cfg["sizes"], "sizes")
    seeds = _int_list(cfg["seeds"], "seeds")
    pretrained = _pretrained_map(cfg["pretrained"])
    config = TrainConfig(
        phase="finetune",
        learning_rate=float(cfg["lr"]),
        epochs=int(cfg["epochs"]),
        batch_size=int(cfg["batch"]),
        patience=int(cfg["patience"]),
        hidden_units=int(cfg["hidden"]),
        latent_dim=int(cfg["latent_dim"]),
        encoder_family=cfg["encoder"],
        encoder_channels=tuple(_int_list(cfg["channels"], "channels")),
    )
    store = _load_store(args.data)
    if "valid" not in store.splits:
        store = split_train_val(store, 0.2, 0)
    # validate checkpoint availability before claiming a run directory
    for v in variants:
        if v != "none" and v not in pretrained:
            raise ConfigurationError(f"no pretrained checkpoint supplied for variant {v!r}")
    loaded = {v: Checkpoint.load(p) for v, p in pretrained.items()}
    run_dir = _make_run_dir(args, "sweep")
    started = _now()
    result = run_sweep(
        store, variants, sizes, seeds, config,
        pretrained=loaded, log=lambda msg: print(msg),
    )
    rows_path = result.write_rows_csv(run_dir / "sweep_rows.csv")
    agg_path = result.write_aggregate_csv(run_dir / "sweep_aggregate.csv")
    print(f"sweep rows: {rows_path}")
    print(f"aggregate: {agg_path}")
    _write_manifest(
        run_dir,
        {
            "command": "sweep",
            "config": {
                k: (list(v) if isinstance(v, tuple) else v)
                for k, v in cfg.items()
                if k != "pretrained"
            },
            "pretrained": pretrained,
            "seed": seeds,
            "inputs": {"data": str(args.data)},
            "outputs": {
                "rows": {"path": str(rows_path), "sha256": _sha256(rows_path)},
                "aggregate": {"path": str(agg_path), "sha256": _sha256(agg_path)},
            },
            "started": started,
            "status": "ok",
        },
    )
    return EXIT_OK


def cmd_plot(args) -> int:
    cfg = _resolve(args, "plot", PLOT_DEFAULTS)
    metric_files = {}
    for item in cfg["metrics"] or ():
        if isinstance(item, str) and "=" in item:
            label, _, path = item.partition("=")
        else:
            label, path = Path(str(item)).stem, item
        metric_files[label] = path
    if not metric_files and not cfg["sweep"]:
        raise UsageError("plot needs --metrics label=metrics.csv and/or --sweep sweep.csv")
    # validate the inputs before claiming a run directory; mirrors the
    # emptiness checks the plot functions apply before writing any file
    if metric_files and not any(
        any(r["split"] == "valid" and r["metric"] == "info_nce" for r in read_metrics_csv(p))
        for p in metric_files.values()
    ):
        raise FormatError("no validation 'info_nce' rows found; nothing to plot")
    if cfg["sweep"] and not read_sweep_csv(cfg["sweep"]):
        raise FormatError(f"sweep file {cfg['sweep']} has no result rows; nothing to plot")
    run_dir = _make_run_dir(args, "plot")
    started = _now()
    out_dir = Path(cfg["out"]) if cfg["out"] else run_dir
    outputs = {}
    if metric_files:
        p = plot_validation_curves(metric_files, out_dir / "validation_loss.svg")
        print(f"validation-loss plot: {p}")
        outputs["validation_loss"] = {"path": str(p), "sha256": _sha256(p)}
    if cfg["sweep"]:
        p = plot_accuracy_vs_labels(cfg["sweep"], out_dir / "label_efficiency.svg")
        print(f"label-efficiency plot: {p}")
        outputs["label_efficiency"] = {"path": str(p), "sha256": _sha256(p)}
    _write_manifest(
        run_dir,
        {
            "command": "plot",
            "config": {"metrics": {k: str(v) for k, v in metric_files.items()},
                       "sweep": str(cfg["sweep"]) if cfg["sweep"] else None},
            "seed": None,
            "inputs": {},
            "outputs": outputs,
            "started": started,
            "status": "ok",
        },
    )
    return EXIT_OK


def _leakcheck_suites(cfg: dict):
    """Run the causality/leakage perturbation suites; yield result rows."""
    g = int(cfg["grid"])
    d = int(cfg["latent_dim"])
    seed = int(cfg["seed"])
    trials = int(cfg["trials"])
    directional = cfg["directional"]
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x1EAC]))

    stack = build_stack(directional, d, seed, dtype=np.float64)
    if cfg["fixture"] == "mask-b-everywhere":
        # deliberate sabotage fixture: causal masks replaced by mask B
        for module in stack.modules():
            if isinstance(module, MaskedConv2d):
                module.conv.mask = build_mask("B", module.spec.kernel_size)

    base = rng.normal(size=(g, g, d))
    ref = autoregress(base, stack).values
    worst = 0.0
    if directional == "single":
        name = "single-stack row causality (context rows < r vs latent row r)"
        for _ in range(trials):
            r = int(rng.integers(1, g))
            c = int(rng.integers(0, g))
            pert = base.copy()
            pert[r, c] += rng.normal(size=d)
            out = autoregress(pert, stack).values
            worst = max(worst, float(np.abs(out[:r] - ref[:r]).max()))
    else:
        name = "multi-stack self-position independence (context(i,j) vs latent(i,j))"
        for _ in range(trials):
            r = int(rng.integers(0, g))
            c = int(rng.integers(0, g))
            pert = base.copy()
            pert[r, c] = rng.normal(size=d) * 5.0
            out = autoregress(pert, stack).values
            worst = max(worst, float(np.abs(out[r, c] - ref[r, c]).max()))
    yield name, worst

    mask = make_infill_mask(g) if cfg["mask"] == "infill" else make_topdown_mask(g, 3)
    head = build_head(mask, d, seed, dtype=np.float64)

    def predictions(z):
        masked = apply_mask(LatentGrid(values=z), mask)
        return predict_targets(autoregress(masked, stack).values, mask, head).data

    ref_pred = predictions(base)
    worst = 0.0
    tpos = np.argwhere(mask.targets)
    for _ in range(trials):
        r, c = tpos[int(rng.integers(len(tpos)))]
        pert = base.copy()
        pert[r, c] = rng.normal(size=d) * 5.0
        worst = max(worst, float(np.abs(predictions(pert) - ref_pred).max()))
    yield f"{cfg['mask']} prediction leakage (true target latents vs predictions)", worst


def cmd_leakcheck(args) -> int:
    cfg = _resolve(args, "leakcheck", LEAKCHECK_DEFAULTS)
    run_dir = _make_run_dir(args, "leakcheck")
    started = _now()
    results = list(_leakcheck_suites(cfg))
    all_pass = True
    for name, worst in results:
        ok = worst <= LEAK_TOLERANCE
        all_pass &= ok
        print(f"[{'PASS' if ok else 'FAIL'}] {name}: max delta {worst:.3e}")
    verdict = "PASS" if all_pass else "FAIL"
    print(f"leakcheck: {verdict}")
    _write_manifest(
        run_dir,
        {
            "command": "leakcheck",
            "config": dict(cfg),
            "seed": int(cfg["seed"]),
            "inputs": {},
            "outputs": {},
            "results": [{"suite": n, "max_delta": w} for n, w in results],
            "started": started,
            "status": verdict.lower(),
        },
    )
    return EXIT_OK if all_pass else EXIT_NUMERIC


# --------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="patchcpc", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", metavar="command")

    def common(p):
        p.add_argument("--config", help="TOML config file ([command] sections)")
        p.add_argument("--runs", help=f"runs root directory (default ${RUNS_ENV} or ./runs)")

    p = sub.add_parser("synth", help="generate the synthetic grating dataset (PNG + CSV)")
    p.add_argument("--n", type=int, help="images per class")
    p.add_argument("--size", type=int, help="image side in pixels (default 32)")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="dataset directory (default <run>/dataset)")
    p.add_argument("--force", action="store_true", default=None,
                   help="allow writing into an existing non-empty directory")
    common(p)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("pretrain", help="CPC pretraining on a patch grid")
    p.add_argument("--data", required=True, help="dataset directory (PNG+CSV or PCam HDF5)")
    p.add_argument("--mask", choices=["top_down", "infill"])
    p.add_argument("--directional", choices=["single", "multi"])
    p.add_argument("--negatives", type=int, help="negatives per target (default 16)")
    p.add_argument("--lr", type=float, help="learning rate (default 1e-4)")
    p.add_argument("--epochs", type=int, help="max epochs (default 20)")
    p.add_argument("--batch", type=int, help="batch size (default 16)")
    p.add_argument("--patience", type=int, help="early-stopping patience (default 5)")
    p.add_argument("--seed", type=int)
    p.add_argument("--patch", type=int, help="patch side (default 24)")
    p.add_argument("--stride", type=int, help="patch stride (default 12)")
    p.add_argument("--latent-dim", type=int, help="latent dimension (default 128)")
    p.add_argument("--context-rows", type=int, help="top-down context rows (default 3)")
    p.add_argument("--encoder", choices=["toy_cnn", "resnext101"])
    p.add_argument("--channels", help="toy encoder widths, e.g. 16,32,32")
    p.add_argument("--kernel-size", type=int, help="masked conv kernel (default 3)")
    p.add_argument("--share-branch-weights", action="store_true", default=None,
                   help="share masked-conv weights across the four directions")
    p.add_argument("--val-fraction", type=float,
                   help="carved validation fraction when the dataset has no valid split")
    p.add_argument("--out", help="checkpoint path (default <run>/checkpoint.zip)")
    common(p)
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("finetune", help="train the 2-way classifier on a labeled subset")
    p.add_argument("--data", required=True)
    p.add_argument("--init", help="'random' or a pretrained checkpoint path")
    p.add_argument("--subset", type=int, help="labeled subset size (default: full train split)")
    p.add_argument("--epochs", type=int, help="max epochs (default 50)")
    p.add_argument("--lr", type=float, help="learning rate (default 1e-4)")
    p.add_argument("--batch", type=int, help="batch size (default 64)")
    p.add_argument("--patience", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--hidden", type=int, help="hidden layer width (default 256)")
    p.add_argument("--latent-dim", type=int, help="encoder latent dim for random init")
    p.add_argument("--encoder", choices=["toy_cnn", "resnext101"])
    p.add_argument("--channels", help="toy encoder widths for random init")
    p.add_argument("--out", help="checkpoint path (default <run>/classifier.zip)")
    common(p)
    p.set_defaults(func=cmd_finetune)

    p = sub.add_parser("sweep", help="label-efficiency sweep over pretraining variants")
    p.add_argument("--data", required=True)
    p.add_argument("--variants", help=f"comma list from {','.join(VARIANTS)}")
    p.add_argument("--sizes", help="comma list of labeled subset sizes")
    p.add_argument("--seeds", help="comma list of seeds")
    p.add_argument("--pretrained", action="append",
                   help="variant=checkpoint.zip (repeatable)")
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch", type=int)
    p.add_argument("--patience", type=int)
    p.add_argument("--hidden", type=int)
    p.add_argument("--latent-dim", type=int)
    p.add_argument("--encoder", choices=["toy_cnn", "resnext101"])
    p.add_argument("--channels", help="toy encoder widths for the no-pretraining baseline")
    common(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("plot", help="render SVG plots from run CSVs")
    p.add_argument("--metrics", action="append",
                   help="label=metrics.csv for validation-loss curves (repeatable)")
    p.add_argument("--sweep", help="sweep CSV (rows or aggregate) for the accuracy plot")
    p.add_argument("--out", help="output directory (default: the run directory)")
    common(p)
    p.set_defaults(func=cmd_plot)

    p = sub.add_parser("leakcheck", help="verify causality/leakage invariants")
    p.add_argument("--mask", choices=["top_down", "infill"])
    p.add_argument("--directional", choices=["single", "multi"])
    p.add_argument("--grid", type=int, help="grid side (default 7)")
    p.add_argument("--latent-dim", type=int, help="latent dim (default 16)")
    p.add_argument("--seed", type=int)
    p.add_argument("--trials", type=int, help="perturbation trials per suite (default 20)")
    p.add_argument("--fixture", choices=["mask-b-everywhere"],
                   help="sabotage fixture that must make the check FAIL")
    common(p)
    p.set_defaults(func=cmd_leakcheck)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if getattr(args, "command", None) is None:
            parser.print_help()
            return EXIT_USAGE
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (InvalidArgumentError, ConfigurationError, GeometryError) as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:  # DivergenceError included
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
