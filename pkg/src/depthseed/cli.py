"""``depthseed`` command line: data generation, encoding, training, evaluation, diagnostics.

Every command writes into ``--out`` (created if needed) and leaves a
``run.cfg`` snapshot of the fully resolved configuration there. Settings are
resolved as built-in defaults < ``--config`` file < command flags <
``--set key=value`` overrides (last wins).

Exit codes: 0 success, 1 usage or configuration error, 2 I/O or missing
input, 3 runtime or metric failure.
"""

from __future__ import annotations

import argparse
import contextlib
import json
import logging
import os
import shutil
import sys
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .classifier import accuracy, compute_class_weights, mean_class_accuracy, standardize, train_svm
from .config import as_bool, as_float, as_int, as_int_list, dump_config, load_config, parse_overrides, resolve
from .data.datasets import load_split, read_camera
from .data.formats import (
    load_depth,
    load_manifest,
    save_tensor,
    write_manifest,
    write_pgm16,
    write_ppm,
)
from .data.hha import DepthMap, encode_hha
from .data.synth import LAYOUTS, generate_synthetic_scene
from .diagnostics import activation_ratio, export_filter_grid, profile_report, sort_profile
from .errors import (
    ConfigError,
    DataError,
    DepthSeedError,
    FormatError,
    MetricError,
    ParameterError,
)
from .fusion import RgbdModel, build_rgbd_model, head_only_plan, train_rgbd
from .models import (
    ArchPreset,
    ModelGraph,
    build_preset,
    load_model,
    load_model_meta,
    remove_top_layers,
    save_model,
    transfer_conv_weights,
)
from .training import (
    STRATEGIES,
    TrainConfig,
    apply_freeze_plan,
    build_freeze_plan,
    extract_features,
    predict,
    pretrain_wsp,
    train,
)

log = logging.getLogger("depthseed")

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_RUNTIME = 0, 1, 2, 3
MODEL_FILE = "model.dtns"

TRAIN_DEFAULTS = {
    "seed": 0,
    "lr": 0.01,
    "momentum": 0.9,
    "weight_decay": 0.0005,
    "batch_size": 32,
    "epochs": 5,
    "lr_decay": 0.1,
    "decay_at": 0.6667,
    "flip": False,
    "widths": "",
    "hidden": 512,
    "init_std": "he",
}

DEFAULTS = {
    "synth": {"seed": 0, "categories": 8, "per_class": 40, "test_per_class": 10, "size": 64},
    "encode-hha": {},
    "pretrain-wsp": {**TRAIN_DEFAULTS, "grid": 7, "patch": 35, "modality": "depth", "batch_size": 64,
                     "epochs": 3},
    "train": {**TRAIN_DEFAULTS, "preset": "dcnn", "modality": "depth", "strategy": "full", "split": "",
              "init": "scratch", "levels": "1,2,3"},
    "train-rgbd": {**TRAIN_DEFAULTS, "cut_rgb": "fc7", "cut_depth": "fc7", "freeze_branches": False},
    "eval": {"seed": 0, "split": "test", "feature_layer": "", "wsvm": False, "p": 2.0, "C": 1.0,
             "svm_epochs": 100, "modality": ""},
    "diagnose": {"layer": "conv1", "split": "train", "key": "ratio", "branch": "depth", "modality": ""},
    "export-filters": {"layer": "conv1", "branch": "depth"},
}


class UsageError(Exception):
    """Raised instead of argparse's exit(2) so usage problems map to exit code 1."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: error: {message}")


# -- argument parsing ---------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="depthseed", description="Depth CNNs with weakly supervised patch pretraining.")
    parser.add_argument("--version", action="version", version=f"depthseed {__version__}")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    def command(name, help_text):
        p = sub.add_parser(name, help=help_text, description=help_text)
        p.add_argument("--out", required=True, help="output directory (created if absent)")
        p.add_argument("--config", help="key=value configuration file")
        p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                       help="override one setting (repeatable, last wins)")
        p.add_argument("--seed", type=int)
        p.add_argument("-v", "--verbose", action="store_true")
        return p

    def training_flags(p):
        p.add_argument("--epochs", type=int)
        p.add_argument("--lr", type=float)
        p.add_argument("--batch-size", type=int)
        p.add_argument("--widths", help="comma-separated conv widths")
        p.add_argument("--hidden", type=int, help="width of fc7 / the fusion layer")

    p = command("synth", "render a synthetic paired RGB-D dataset with a manifest")
    p.add_argument("--categories", type=int)
    p.add_argument("--per-class", type=int, help="samples per category (train + test)")
    p.add_argument("--test-per-class", type=int, help="how many of them go to the test split")
    p.add_argument("--size", type=int, help="image side in pixels")

    p = command("encode-hha", "encode every depth map of a manifest as HHA")
    p.add_argument("--manifest", required=True)

    p = command("pretrain-wsp", "train a WSP-CNN on grid patches with weak scene labels")
    p.add_argument("--manifest", required=True)
    p.add_argument("--grid", type=int)
    p.add_argument("--patch", type=int)
    p.add_argument("--modality", choices=("rgb", "depth"))
    training_flags(p)

    p = command("train", "train or fine-tune a full-image network")
    p.add_argument("--manifest", required=True)
    p.add_argument("--preset", choices=("dcnn", "alexlike"))
    p.add_argument("--modality", choices=("rgb", "depth"))
    p.add_argument("--init", help="'scratch' or a checkpoint to transfer/fine-tune from")
    p.add_argument("--strategy", choices=STRATEGIES)
    p.add_argument("--split", help="layer at which the strategy splits the network")
    training_flags(p)

    p = command("train-rgbd", "fuse an RGB and a depth network and train them jointly")
    p.add_argument("--manifest", required=True)
    p.add_argument("--rgb", required=True, help="RGB network checkpoint")
    p.add_argument("--depth", required=True, help="depth network checkpoint")
    p.add_argument("--cut-rgb")
    p.add_argument("--cut-depth")
    p.add_argument("--freeze-branches", action="store_true", default=None)
    training_flags(p)

    p = command("eval", "evaluate a checkpoint with softmax or an SVM on layer features")
    p.add_argument("--manifest", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--feature-layer", help="train a linear SVM on this layer's activations")
    p.add_argument("--wsvm", action="store_true", default=None, help="class-weighted SVM")
    p.add_argument("--p", type=float, help="class-weight exponent")
    p.add_argument("--C", type=float, help="SVM regularisation constant")

    p = command("diagnose", "activation-ratio profile of a conv layer")
    p.add_argument("--manifest", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--layer")
    p.add_argument("--split", choices=("train", "test"))
    p.add_argument("--branch", choices=("rgb", "depth"), help="branch of an RGB-D model")

    p = command("export-filters", "write a conv layer's filters as a PPM grid")
    p.add_argument("--model", required=True)
    p.add_argument("--layer")
    p.add_argument("--branch", choices=("rgb", "depth"), help="branch of an RGB-D model")
    return parser


FLAG_KEYS = ("seed", "categories", "per_class", "test_per_class", "size", "grid", "patch", "modality", "epochs",
             "lr", "batch_size", "widths", "hidden", "preset", "init", "strategy", "split", "cut_rgb", "cut_depth",
             "freeze_branches", "feature_layer", "wsvm", "p", "C", "layer", "branch")


def resolve_settings(args) -> dict:
    file_values = load_config(args.config) if args.config else {}
    flags = {k: getattr(args, k) for k in FLAG_KEYS if hasattr(args, k)}
    settings = resolve(DEFAULTS[args.command], file_values, flags, parse_overrides(args.overrides))
    for key in ("manifest", "model", "rgb", "depth"):
        if hasattr(args, key):
            settings[key] = getattr(args, key)
    return settings


# -- helpers ------------------------------------------------------------------


def train_config(s: dict) -> TrainConfig:
    return TrainConfig(
        lr=as_float(s["lr"], "lr"),
        momentum=as_float(s["momentum"], "momentum"),
        weight_decay=as_float(s["weight_decay"], "weight_decay"),
        batch_size=as_int(s["batch_size"], "batch_size"),
        epochs=as_int(s["epochs"], "epochs"),
        seed=as_int(s["seed"], "seed"),
        lr_decay=as_float(s["lr_decay"], "lr_decay"),
        decay_at=as_float(s["decay_at"], "decay_at"),
        flip=as_bool(s["flip"]),
    )


def init_std(s: dict) -> Optional[float]:
    value = str(s.get("init_std", "he")).strip().lower()
    return None if value in ("he", "none", "") else as_float(value, "init_std")


def preset_from(s: dict, name: str, categories: int, input_shape) -> ArchPreset:
    widths = as_int_list(s.get("widths", ""), "widths") or None
    if name == "wsp" and widths is not None and len(widths) == 4:
        widths = widths[:3]  # a D-CNN width list: WSP owns conv1..conv3
    return ArchPreset(
        name,
        categories,
        input_size=int(input_shape[-1]),
        in_channels=int(input_shape[0]),
        widths=widths,
        hidden=as_int(s.get("hidden", 512), "hidden"),
        levels=as_int_list(s.get("levels", "1,2,3"), "levels"),
        init_std=init_std(s),
    )


def write_snapshot(out: Path, command: str, settings: dict) -> None:
    (out / "run.cfg").write_text(f"# depthseed {command}\n" + dump_config(settings))


def append_metrics(out: Path, record: dict) -> None:
    with open(out / "metrics.jsonl", "a", encoding="utf-8") as fh:
        fh.write(json.dumps(record, sort_keys=True) + "\n")


def _round(x: float) -> float:
    return float(f"{x:.6g}")


def square_dataset(dataset, what: str):
    shape = dataset.images.shape if hasattr(dataset, "images") else dataset.rgb.shape
    if shape[-1] != shape[-2]:
        raise DataError(f"{what} images must be square, got {shape[-2]}x{shape[-1]}")
    return dataset


def model_modality(model, path, s: dict) -> str:
    if isinstance(model, RgbdModel):
        return "rgbd"
    if s.get("modality"):
        return s["modality"]
    return load_model_meta(path).get("modality", "depth")


def graph_of(model, branch: str) -> ModelGraph:
    return model.branch(branch) if isinstance(model, RgbdModel) else model


# -- commands -----------------------------------------------------------------


def cmd_synth(s: dict, out: Path) -> dict:
    k, per, n_test = as_int(s["categories"]), as_int(s["per_class"]), as_int(s["test_per_class"])
    size, seed = as_int(s["size"]), as_int(s["seed"])
    if not 1 <= k <= len(LAYOUTS):
        raise ParameterError(f"the generator supports 1..{len(LAYOUTS)} categories, got {k}")
    if per < 1 or not 0 <= n_test <= per:
        raise ParameterError(f"need per_class >= 1 and 0 <= test_per_class <= per_class, got {per}, {n_test}")
    (out / "rgb").mkdir(exist_ok=True)
    (out / "depth").mkdir(exist_ok=True)
    rows, focal = [], None
    for category in range(k):
        for i in range(per):
            rgb, depth, label = generate_synthetic_scene(category, seed * 100_000 + i, size, k)
            stem = f"{category:02d}_{i:04d}"
            write_ppm(out / "rgb" / f"{stem}.ppm", rgb)
            write_pgm16(out / "depth" / f"{stem}.pgm", np.rint(depth.values * 1000.0).astype(np.uint16))
            split = "test" if i >= per - n_test else "train"
            rows.append((f"rgb/{stem}.ppm", f"depth/{stem}.pgm", label, split))
            focal = (depth.focal, depth.cx, depth.cy)
    write_manifest(out / "manifest.csv", rows)
    (out / "classes.txt").write_text("".join(f"{name}\n" for name in LAYOUTS[:k]))
    camera = {"focal": focal[0], "cx": focal[1], "cy": focal[2], "gravity": [0.0, -1.0, 0.0]}
    (out / "camera.json").write_text(json.dumps(camera, indent=1, sort_keys=True) + "\n")
    log.info("wrote %d samples to %s", len(rows), out)
    return {"samples": len(rows), "categories": k}


def cmd_encode_hha(s: dict, out: Path) -> dict:
    src = Path(s["manifest"])
    manifest = load_manifest(src)
    (out / "hha").mkdir(exist_ok=True)
    rows, failures = [], []
    for i, rec in enumerate(manifest.records):
        if rec.depth_path is None:
            failures.append((rec.row, "no depth path"))
            continue
        try:
            values = load_depth(rec.depth_path)
            focal, cx, cy = read_camera(manifest.root, values.shape[1], values.shape[0])
            hha = encode_hha(DepthMap(values, focal, cx, cy))
        except (DataError, FormatError, OSError) as exc:
            failures.append((rec.row, str(exc)))
            continue
        name = f"hha/{i:05d}.dtns"
        save_tensor(out / name, hha)
        rgb = os.path.relpath(rec.rgb_path, out) if rec.rgb_path is not None else ""
        rows.append((rgb, name, rec.label, rec.split))
    if failures:
        report = "".join(f"row {row}: {msg}\n" for row, msg in failures)
        (out / "errors.txt").write_text(report)
        raise DataError(f"{len(failures)} depth file(s) could not be encoded:\n{report.rstrip()}",
                        rows=[r for r, _ in failures])
    write_manifest(out / "manifest.csv", rows)
    for extra in ("classes.txt", "camera.json"):
        if (manifest.root / extra).exists():
            shutil.copyfile(manifest.root / extra, out / extra)
    return {"encoded": len(rows)}


def _epoch_logger(prefix: str):
    return lambda line: log.info("%s %s", prefix, line)


def _finish_training(out: Path, model, history, meta: dict, command: str, extra: dict) -> dict:
    save_model(out / MODEL_FILE, model, meta)
    history.to_csv(out / "trainlog.csv")
    final = history.final
    record = {"epochs": len(history.records), **extra}
    if final is not None:
        record.update(loss=_round(final.loss), train_acc=_round(final.train_acc))
        if not np.isnan(final.test_acc):
            record["test_mean_class_acc"] = _round(final.test_acc)
    return record


def cmd_pretrain_wsp(s: dict, out: Path) -> dict:
    manifest = load_manifest(s["manifest"])
    modality = s["modality"]
    train_set = square_dataset(load_split(manifest, "train", modality), "training")
    grid, patch = as_int(s["grid"], "grid"), as_int(s["patch"], "patch")
    k = manifest.num_classes
    arch = build_preset(preset_from(s, "wsp", k, (train_set.sample_shape[0], patch, patch)),
                        as_int(s["seed"]))
    model, history = pretrain_wsp(train_set, arch, train_config(s), grid=grid, patch=patch,
                                  log=_epoch_logger("wsp"))
    return _finish_training(out, model, history, {"modality": modality, "grid": grid, "patch": patch},
                            "pretrain-wsp", {"patches": len(train_set) * grid * grid})


def _initial_model(s: dict, k: int, input_shape) -> ModelGraph:
    seed = as_int(s["seed"])
    fresh = build_preset(preset_from(s, s["preset"], k, input_shape), seed)
    init = str(s.get("init", "scratch"))
    if init == "scratch":
        return fresh
    src = load_model(init)
    if isinstance(src, RgbdModel):
        raise ConfigError(f"{init} is an RGB-D model; initialise from a single-branch network")
    if src.preset == fresh.preset and src.input_shape == fresh.input_shape and src.layer_names == fresh.layer_names:
        # Same architecture: keep every layer and resize fc8 for this dataset.
        below = src.layers[src.index("fc8") - 1].name
        return remove_top_layers(src, below, k, seed)
    return transfer_conv_weights(src, fresh)


def cmd_train(s: dict, out: Path) -> dict:
    manifest = load_manifest(s["manifest"])
    modality = s["modality"]
    train_set = square_dataset(load_split(manifest, "train", modality), "training")
    test_set = load_split(manifest, "test", modality) if manifest.split("test") else None
    k = manifest.num_classes
    model = _initial_model(s, k, train_set.sample_shape)
    plan = None
    if s["strategy"] != "full":
        if not s.get("split"):
            raise ConfigError(f"strategy {s['strategy']} needs --split LAYER")
        plan = build_freeze_plan(s["strategy"], model, s["split"])
        model = apply_freeze_plan(model, plan, as_int(s["seed"]))
    model, history = train(model, train_set, train_config(s), plan=plan, test_set=test_set,
                           log=_epoch_logger("train"))
    meta = {"modality": modality, "strategy": s["strategy"],
            "init": "scratch" if str(s.get("init", "scratch")) == "scratch" else "checkpoint"}
    return _finish_training(out, model, history, meta, "train",
                            {"strategy": s["strategy"], "frozen": plan.frozen if plan else []})


def cmd_train_rgbd(s: dict, out: Path) -> dict:
    manifest = load_manifest(s["manifest"])
    train_set = load_split(manifest, "train", "rgbd")
    test_set = load_split(manifest, "test", "rgbd") if manifest.split("test") else None
    rgb, depth = load_model(s["rgb"]), load_model(s["depth"])
    model = build_rgbd_model(rgb, depth, s["cut_rgb"], s["cut_depth"], hidden=as_int(s["hidden"], "hidden"),
                             categories=manifest.num_classes, seed=as_int(s["seed"]), init_std=init_std(s))
    plan = head_only_plan(model) if as_bool(s["freeze_branches"]) else None
    model, history = train_rgbd(model, train_set, train_config(s), plan=plan, test_set=test_set,
                                log=_epoch_logger("rgbd"))
    return _finish_training(out, model, history, {"modality": "rgbd"}, "train-rgbd",
                            {"head_params": model.branch("head").num_params()})


def cmd_eval(s: dict, out: Path) -> dict:
    manifest = load_manifest(s["manifest"])
    model = load_model(s["model"])
    modality = model_modality(model, s["model"], s)
    split = s["split"]
    test_set = load_split(manifest, split, modality)
    k = manifest.num_classes
    layer = s.get("feature_layer") or ""
    record = {"split": split, "samples": len(test_set)}
    if layer:
        train_set = load_split(manifest, "train", modality)
        x_train, y_train = extract_features(model, layer, train_set)
        x_test, y_test = extract_features(model, layer, test_set)
        x_train, x_test = standardize(x_train, x_test)
        weights = None
        wsvm = as_bool(s["wsvm"])
        if wsvm:
            weights = compute_class_weights(np.bincount(y_train, minlength=k), as_float(s["p"], "p"))
        svm = train_svm(x_train, y_train, weights, C=as_float(s["C"], "C"),
                        epochs=as_int(s["svm_epochs"], "svm_epochs"), seed=as_int(s["seed"]))
        preds = svm.predict(x_test)
        record.update(classifier="wsvm" if wsvm else "svm", feature_layer=layer, feature_dim=int(x_train.shape[1]))
        if wsvm:
            record["p"] = as_float(s["p"], "p")
    else:
        preds = predict(model, test_set)
        record["classifier"] = "softmax"
    labels = test_set.labels
    record.update(mean_class_acc=_round(mean_class_accuracy(preds, labels, num_classes=k)),
                  accuracy=_round(accuracy(preds, labels)))
    rows = manifest.split(split)
    lines = ["sample_id,label,prediction\n"] + [f"{r.row},{r.label},{int(p)}\n" for r, p in zip(rows, preds)]
    (out / "predictions.csv").write_text("".join(lines))
    log.info("mean class accuracy %.4f", record["mean_class_acc"])
    return record


def cmd_diagnose(s: dict, out: Path) -> dict:
    manifest = load_manifest(s["manifest"])
    model = load_model(s["model"])
    if isinstance(model, RgbdModel):
        modality = s["branch"]
    else:
        modality = model_modality(model, s["model"], s)
    graph = graph_of(model, s["branch"])
    dataset = load_split(manifest, s["split"], modality)
    profile = activation_ratio(graph, s["layer"], dataset)
    profile_report([profile], out / "profile.csv", key=s["key"])
    ordered = sort_profile(profile, s["key"])
    return {"layer": s["layer"], "filters": len(profile), "samples": profile.samples,
            "mean_ratio": _round(float(profile.ratio.mean())), "dead_filters": int((profile.ratio == 0).sum()),
            "top_filter": int(ordered.order[0])}


def cmd_export_filters(s: dict, out: Path) -> dict:
    model = load_model(s["model"])
    graph = graph_of(model, s["branch"])
    image = export_filter_grid(graph, s["layer"], out / f"filters_{s['layer']}.ppm")
    return {"layer": s["layer"], "height": int(image.shape[1]), "width": int(image.shape[2])}


COMMANDS = {
    "synth": cmd_synth,
    "encode-hha": cmd_encode_hha,
    "pretrain-wsp": cmd_pretrain_wsp,
    "train": cmd_train,
    "train-rgbd": cmd_train_rgbd,
    "eval": cmd_eval,
    "diagnose": cmd_diagnose,
    "export-filters": cmd_export_filters,
}


# -- entry point --------------------------------------------------------------


def thread_limit():
    """Context capping BLAS threads from ``DEPTHSEED_THREADS`` (0 or unset = library default)."""
    raw = os.environ.get("DEPTHSEED_THREADS", "0").strip() or "0"
    try:
        n = int(raw)
    except ValueError as exc:
        raise ConfigError(f"DEPTHSEED_THREADS must be an integer, got {raw!r}") from exc
    if n < 0:
        raise ConfigError(f"DEPTHSEED_THREADS must be >= 0, got {n}")
    if n == 0:
        return contextlib.nullcontext()
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=n)


def exit_code_for(exc: BaseException) -> int:
    if isinstance(exc, (UsageError, ConfigError, ParameterError)):
        return EXIT_USAGE
    if isinstance(exc, (DataError, FormatError, OSError)):
        return EXIT_IO
    if isinstance(exc, (MetricError, DepthSeedError)):
        return EXIT_RUNTIME
    return EXIT_RUNTIME


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            parser.print_help(sys.stderr)
            return EXIT_USAGE
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(message)s", stream=sys.stderr)
        settings = resolve_settings(args)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        write_snapshot(out, args.command, settings)
        with thread_limit():
            record = COMMANDS[args.command](settings, out)
        if args.command not in ("synth", "encode-hha"):
            append_metrics(out, {"command": args.command, **record})
        return EXIT_OK
    except Exception as exc:  # mapped to documented exit codes
        code = exit_code_for(exc)
        print(f"depthseed: {exc}" if not isinstance(exc, UsageError) else str(exc), file=sys.stderr)
        if code == EXIT_RUNTIME and not isinstance(exc, DepthSeedError):
            log.exception("unexpected failure")
        return code


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
