"""Experiment runner.

One executable, five commands selected by the `command` config key: train,
cost-sweep, verify-prop1, dc-ratio, and snr-probe.  Configuration comes
from an optional `key = value` text file plus repeatable `--set key=value`
overrides; every run writes the fully-resolved configuration (defaults
included) next to its CSV artifacts, and identical configurations produce
byte-identical CSVs.  Exit codes: 0 success, 1 invalid configuration or
input, 2 a checked property was violated.
"""

from __future__ import annotations

import argparse
import math
import sys
from pathlib import Path

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .costmodel import LayerCfg, min_flops, sweep_curve
from .data import Dataset, SplitSpec, load_idx, noniid_split, synth_dataset
from .errors import ConfigError, FormatError, ShapeError
from .gradfilter import FilterCfg, expand, filter_gradient
from .nn import Conv2D, Model, build_desk_model, set_active_layers
from .spectral import dc_energy_ratio, measure_snr, run_prop1_trials
from .tensor import Kernel4, Tensor4
from .training import TrainCfg, cross_entropy, train

__all__ = ["main", "parse_config_text", "resolve_config"]


def _parse_int_list(value: str) -> tuple[int, ...]:
    items = tuple(int(tok.strip()) for tok in value.split(",") if tok.strip())
    if not items:
        raise ValueError("empty list")
    return items


_PARSERS = {
    "command": str,
    "mode": str,
    "source": str,
    "split": str,
    "partition": str,
    "images_path": str,
    "labels_path": str,
    "checkpoint": str,
    "init_checkpoint": str,
    "layers": int,
    "r": int,
    "epochs": int,
    "batch_size": int,
    "warmup_epochs": int,
    "seed": int,
    "model_seed": int,
    "data_seed": int,
    "split_seed": int,
    "classes": int,
    "n_per_class": int,
    "image_h": int,
    "image_w": int,
    "channels": int,
    "shard_count": int,
    "trials": int,
    "kernel_size": int,
    "batch": int,
    "c_x": int,
    "c_y": int,
    "h_y": int,
    "w_y": int,
    "h_k": int,
    "w_k": int,
    "h_x": int,
    "w_x": int,
    "base_lr": float,
    "momentum": float,
    "weight_decay": float,
    "clip_threshold": float,
    "val_fraction": float,
    "sigma": float,
    "r_list": _parse_int_list,
}

_DEFAULTS = {
    "mode": "vanilla",
    "layers": "2",
    "r": "2",
    "epochs": "10",
    "batch_size": "16",
    "base_lr": "0.05",
    "momentum": "0.9",
    "weight_decay": "0.0001",
    "clip_threshold": "2.0",
    "warmup_epochs": "1",
    "seed": "0",
    "model_seed": "1",
    "data_seed": "2",
    "split_seed": "3",
    "classes": "10",
    "n_per_class": "200",
    "image_h": "16",
    "image_w": "16",
    "channels": "1",
    "sigma": "0.25",
    "val_fraction": "0.2",
    "source": "synth",
    "images_path": "",
    "labels_path": "",
    "split": "none",
    "shard_count": "10",
    "partition": "a",
    "trials": "1000",
    "kernel_size": "3",
    "batch": "8",
    "checkpoint": "",
    "init_checkpoint": "",
    "c_x": "192",
    "c_y": "64",
    "h_y": "120",
    "w_y": "160",
    "h_k": "3",
    "w_k": "3",
    "h_x": "120",
    "w_x": "160",
    "r_list": "1,2,4,8",
}

_DATA_KEYS = (
    "classes",
    "n_per_class",
    "image_h",
    "image_w",
    "channels",
    "sigma",
    "data_seed",
)

_COMMAND_KEYS = {
    "train": frozenset(
        (
            "command",
            "mode",
            "layers",
            "r",
            "epochs",
            "batch_size",
            "base_lr",
            "momentum",
            "weight_decay",
            "clip_threshold",
            "warmup_epochs",
            "seed",
            "model_seed",
            "val_fraction",
            "source",
            "images_path",
            "labels_path",
            "init_checkpoint",
            "split",
            "shard_count",
            "split_seed",
            "partition",
        )
        + _DATA_KEYS
    ),
    "cost-sweep": frozenset(
        ("command", "c_x", "c_y", "h_y", "w_y", "h_k", "w_k", "h_x", "w_x", "r_list")
    ),
    "verify-prop1": frozenset(("command", "trials", "r", "kernel_size", "seed")),
    "dc-ratio": frozenset(
        ("command", "checkpoint", "classes", "image_h", "image_w", "channels", "model_seed")
    ),
    "snr-probe": frozenset(
        ("command", "checkpoint", "model_seed", "batch", "r_list") + _DATA_KEYS
    ),
}

_ENUMS = {
    "command": tuple(sorted(_COMMAND_KEYS)),
    "mode": ("vanilla", "filtered"),
    "source": ("synth", "idx"),
    "split": ("none", "noniid"),
    "partition": ("a", "b"),
}


def parse_config_text(text: str) -> dict[str, str]:
    """Read `key = value` lines; blank lines and whole-line # comments skip."""
    parsed: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value, got {line!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        if key in parsed:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        parsed[key] = value.strip()
    return parsed


def resolve_config(file_cfg: dict[str, str], set_args) -> dict[str, object]:
    """Merge defaults, file entries, and --set overrides into typed values.

    Keys are checked against the chosen command's allowed set, so a typo
    fails the run instead of silently falling back to a default.
    """
    raw = dict(file_cfg)
    for item in set_args:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, _, value = item.partition("=")
        raw[key.strip()] = value.strip()
    command = raw.get("command")
    if command is None:
        raise ConfigError("no command given; set `command = <name>` or --set command=<name>")
    if command not in _COMMAND_KEYS:
        raise ConfigError(f"unknown command {command!r}; choose from {_ENUMS['command']}")
    allowed = _COMMAND_KEYS[command]
    unknown = sorted(set(raw) - allowed)
    if unknown:
        raise ConfigError(f"unknown keys for {command}: {', '.join(unknown)}")
    resolved: dict[str, object] = {}
    for key in sorted(allowed):
        text = raw.get(key, _DEFAULTS.get(key))
        if key == "command":
            text = command
        try:
            resolved[key] = _PARSERS[key](text)
        except ValueError as exc:
            raise ConfigError(f"bad value for {key}: {text!r} ({exc})") from exc
    for key, choices in _ENUMS.items():
        if key in resolved and resolved[key] not in choices:
            raise ConfigError(f"{key} must be one of {choices}, got {resolved[key]!r}")
    return resolved


def _format_value(value) -> str:
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _write_csv(path: Path, header, rows) -> None:
    lines = [",".join(header)]
    lines.extend(",".join(_cell(v) for v in row) for row in rows)
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    print(f"wrote {path}")


def _write_resolved(cfg: dict[str, object], out: Path) -> None:
    lines = [f"{key} = {_format_value(cfg[key])}" for key in sorted(cfg)]
    path = out / "resolved-config.txt"
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    print(f"wrote {path}")


def _stratified_split(ds: Dataset, fraction: float) -> tuple[Dataset, Dataset]:
    """Tail of each class goes to validation; at least one sample per side."""
    if not 0.0 < fraction < 1.0:
        raise ConfigError(f"val_fraction must lie in (0, 1), got {fraction}")
    labels = np.asarray(ds.labels)
    train_idx: list[int] = []
    val_idx: list[int] = []
    for cls in range(ds.class_count):
        members = np.flatnonzero(labels == cls)
        if members.size == 0:
            continue
        if members.size < 2:
            raise ConfigError(f"class {cls} has {members.size} sample(s); need 2 to split")
        take = min(members.size - 1, max(1, int(members.size * fraction)))
        train_idx.extend(int(i) for i in members[:-take])
        val_idx.extend(int(i) for i in members[-take:])

    def subset(indices):
        return Dataset(
            images=Tensor4(ds.images.data[indices]),
            labels=tuple(ds.labels[i] for i in indices),
            class_count=ds.class_count,
        )

    return subset(train_idx), subset(val_idx)


def _load_train_dataset(cfg) -> Dataset:
    if cfg["source"] == "idx":
        if not cfg["images_path"] or not cfg["labels_path"]:
            raise ConfigError("source=idx needs images_path and labels_path")
        ds = load_idx(cfg["images_path"], cfg["labels_path"])
    else:
        ds = synth_dataset(
            seed=cfg["data_seed"],
            k=cfg["classes"],
            n_per_class=cfg["n_per_class"],
            dims=(cfg["channels"], cfg["image_h"], cfg["image_w"]),
            sigma=cfg["sigma"],
        )
    if cfg["split"] == "noniid":
        part_a, part_b = noniid_split(ds, SplitSpec(cfg["shard_count"], cfg["split_seed"]))
        ds = part_a if cfg["partition"] == "a" else part_b
    return ds


def _run_train(cfg, out: Path) -> int:
    ds = _load_train_dataset(cfg)
    train_set, val_set = _stratified_split(ds, cfg["val_fraction"])
    _, channels, h, w = ds.images.dims
    model = build_desk_model(channels, ds.class_count, (h, w), cfg["model_seed"])
    if cfg["init_checkpoint"]:
        load_checkpoint(model, cfg["init_checkpoint"])
    set_active_layers(model, cfg["layers"], cfg["mode"], r=cfg["r"])
    metrics = train(
        model,
        train_set,
        val_set,
        TrainCfg(
            epochs=cfg["epochs"],
            batch_size=cfg["batch_size"],
            base_lr=cfg["base_lr"],
            momentum=cfg["momentum"],
            weight_decay=cfg["weight_decay"],
            clip_threshold=cfg["clip_threshold"],
            warmup_epochs=cfg["warmup_epochs"],
            seed=cfg["seed"],
        ),
    )
    _write_csv(
        out / "metrics.csv",
        ("epoch", "train_loss", "train_acc", "val_acc", "lr"),
        [(row.epoch, row.train_loss, row.train_acc, row.val_acc, row.lr) for row in metrics.rows],
    )
    shows_r = cfg["mode"] == "filtered" and cfg["layers"] > 0
    _write_csv(
        out / "summary.csv",
        (
            "mode",
            "active_layers",
            "r",
            "best_val_acc",
            "total_flops",
            "peak_stored_activation_elements",
        ),
        [
            (
                cfg["mode"],
                cfg["layers"],
                cfg["r"] if shows_r else None,
                metrics.best_val_acc,
                metrics.total_flops,
                metrics.peak_stored_activation_elements,
            )
        ],
    )
    save_checkpoint(model, out / "checkpoint.bin")
    print(f"wrote {out / 'checkpoint.bin'}")
    return 0


def _run_cost_sweep(cfg, out: Path) -> int:
    layer = LayerCfg(
        c_x=cfg["c_x"],
        c_y=cfg["c_y"],
        h_y=cfg["h_y"],
        w_y=cfg["w_y"],
        h_k=cfg["h_k"],
        w_k=cfg["w_k"],
        h_x=cfg["h_x"],
        w_x=cfg["w_x"],
    )
    floor = min_flops(layer)
    rows = [
        (r, rep.leading_term, rep.overhead_terms, rep.flops, floor, rep.memory_saving_fraction)
        for r, rep in sweep_curve(layer, cfg["r_list"])
    ]
    _write_csv(
        out / "sweep.csv",
        ("r", "leading_term", "overhead", "total", "min_flops", "saving_fraction"),
        rows,
    )
    return 0


def _run_verify_prop1(cfg, out: Path) -> int:
    trials = run_prop1_trials(
        trials=cfg["trials"], r=cfg["r"], kernel_size=cfg["kernel_size"], seed=cfg["seed"]
    )
    _write_csv(
        out / "trials.csv",
        ("trial", "snr_gy", "snr_gx", "dc_ratio", "holds"),
        [
            (t.index, t.report.snr_gy, t.report.snr_gx, t.dc_ratio, t.report.holds)
            for t in trials
        ],
    )
    violations = sum(1 for t in trials if t.dc_ratio >= 1.0 and not t.report.holds)
    _write_csv(
        out / "prop1-summary.csv",
        ("trials", "violations", "all_hold"),
        [(len(trials), violations, violations == 0)],
    )
    if violations:
        print(f"{violations} of {len(trials)} DC-dominant trials violated the SNR bound")
        return 2
    return 0


def _restore_model(cfg) -> Model:
    if not cfg["checkpoint"]:
        raise ConfigError("this command needs `checkpoint = <path>`")
    model = build_desk_model(
        cfg["channels"], cfg["classes"], (cfg["image_h"], cfg["image_w"]), cfg["model_seed"]
    )
    load_checkpoint(model, cfg["checkpoint"])
    return model


def _run_dc_ratio(cfg, out: Path) -> int:
    model = _restore_model(cfg)
    rows = []
    aggregates = []
    for i, layer in enumerate(model.layers):
        if isinstance(layer, Conv2D):
            report = dc_energy_ratio(Kernel4(layer.kernel))
            rows.append((i, report.aggregate))
            aggregates.append(report.aggregate)
    rows.append(("all", min(aggregates)))
    _write_csv(out / "dc-ratio.csv", ("layer", "dc_ratio"), rows)
    return 0


def _conv_output_grads(model: Model, x: np.ndarray, labels) -> dict[int, np.ndarray]:
    """Exact per-conv-layer output gradients from one all-vanilla backward."""
    logits = model.forward(x, train=True)
    _, grad = cross_entropy(logits, labels)
    captured: dict[int, np.ndarray] = {}
    for i in range(len(model.layers) - 1, -1, -1):
        layer = model.layers[i]
        if isinstance(layer, Conv2D):
            captured[i] = np.array(grad)
        grad = layer.backward(grad, need_input_grad=i > 0)
    return captured


def _run_snr_probe(cfg, out: Path) -> int:
    if cfg["batch"] < 1:
        raise ConfigError(f"batch must be >= 1, got {cfg['batch']}")
    model = _restore_model(cfg)
    ds = synth_dataset(
        seed=cfg["data_seed"],
        k=cfg["classes"],
        n_per_class=cfg["n_per_class"],
        dims=(cfg["channels"], cfg["image_h"], cfg["image_w"]),
        sigma=cfg["sigma"],
    )
    if cfg["batch"] > len(ds):
        raise ConfigError(f"batch {cfg['batch']} exceeds dataset size {len(ds)}")
    x = ds.images.data[: cfg["batch"]]
    labels = ds.labels[: cfg["batch"]]
    set_active_layers(model, len(model.conv_layers), "vanilla")
    captured = _conv_output_grads(model, x, labels)
    rows = []
    for i in sorted(captured):
        reference = Tensor4(captured[i])
        for r in cfg["r_list"]:
            approx = expand(filter_gradient(reference, FilterCfg(r=r)))
            rows.append((i, r, measure_snr(reference, approx)))
    _write_csv(out / "snr.csv", ("layer", "r", "snr"), rows)
    return 0


_COMMANDS = {
    "train": _run_train,
    "cost-sweep": _run_cost_sweep,
    "verify-prop1": _run_verify_prop1,
    "dc-ratio": _run_dc_ratio,
    "snr-probe": _run_snr_probe,
}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="gradfilt",
        description="Run gradient-filtering experiments from a key = value config.",
    )
    parser.add_argument("--config", type=Path, default=None, help="config file path")
    parser.add_argument("--out", type=Path, default=Path("out"), help="output directory")
    parser.add_argument(
        "--set",
        dest="overrides",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="override one config key (repeatable)",
    )
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else 1
    try:
        file_cfg = (
            parse_config_text(args.config.read_text(encoding="utf-8")) if args.config else {}
        )
        cfg = resolve_config(file_cfg, args.overrides)
        args.out.mkdir(parents=True, exist_ok=True)
        _write_resolved(cfg, args.out)
        return _COMMANDS[cfg["command"]](cfg, args.out)
    except (ConfigError, FormatError, ShapeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
