"""SGD training, freeze plans for the fine-tuning strategies, WSP pretraining."""

from __future__ import annotations

import csv
import io
import math
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from . import ops
from .classifier import mean_class_accuracy
from .data.datasets import PatchDataset
from .errors import ConfigError, TrainingError
from .models import ModelGraph, remove_top_layers
from .tensor import no_grad

STRATEGIES = ("ft-top", "ft-bottom", "ft-keep", "full")
TRAIN, FREEZE = "train", "freeze"


# -- freeze plans -----------------------------------------------------------


@dataclass
class FreezePlan:
    """Per-layer ``train``/``freeze`` flags; layers without a flag train.

    ``keep_through`` marks the FT-keep removal boundary: layers above it are
    dropped (see :func:`apply_freeze_plan`) and carry no flags.
    """

    flags: dict
    strategy: str = "custom"
    keep_through: Optional[str] = None

    def trainable(self, layer: str) -> bool:
        return self.flags.get(layer, TRAIN) == TRAIN

    @property
    def frozen(self) -> list:
        return [name for name, flag in self.flags.items() if flag == FREEZE]


def build_freeze_plan(strategy: str, model: ModelGraph, split: str) -> FreezePlan:
    """Flags for the fine-tuning strategies.

    * ``ft-top``: layers below ``split`` frozen, ``split`` and above trained.
    * ``ft-bottom``: ``split`` and below trained, above frozen except fc8.
    * ``ft-keep``: layers above ``split`` removed, the rest (and a new fc8) trained.
    * ``full``: everything trains.
    """
    if strategy not in STRATEGIES:
        raise ConfigError(f"unknown strategy {strategy!r}; choose from {STRATEGIES}")
    cut = model.index(split)
    position = {l.name: i for i, l in enumerate(model.layers)}
    flags = {}
    for name in model.param_layers:
        below = position[name] < cut
        if strategy == "ft-top":
            flags[name] = FREEZE if below else TRAIN
        elif strategy == "ft-bottom":
            flags[name] = TRAIN if position[name] <= cut else FREEZE
        elif strategy == "ft-keep":
            if position[name] <= cut:
                flags[name] = TRAIN
        else:
            flags[name] = TRAIN
    flags["fc8"] = TRAIN
    return FreezePlan(flags, strategy, split if strategy == "ft-keep" else None)


def freeze_all_but(model, trainable) -> FreezePlan:
    """Plan training only the named layers (qualified names for RGB-D models)."""
    keep = set(trainable)
    names = {k.rsplit(".", 1)[0] for k in model.parameters()}
    unknown = keep - names
    if unknown:
        raise ConfigError(f"unknown layers {sorted(unknown)}")
    return FreezePlan({n: TRAIN if n in keep else FREEZE for n in sorted(names)})


def apply_freeze_plan(model: ModelGraph, plan: FreezePlan, seed: int = 0) -> ModelGraph:
    """Realise structural parts of a plan (FT-keep truncation); otherwise a copy."""
    if plan.keep_through is not None:
        return remove_top_layers(model, plan.keep_through, model.categories, seed)
    return model.copy()


# -- configuration and logs ------------------------------------------------


@dataclass
class TrainConfig:
    lr: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 5e-4
    batch_size: int = 32
    epochs: int = 10
    seed: int = 0
    lr_decay: float = 0.1
    decay_at: float = 2 / 3
    flip: bool = False

    def __post_init__(self):
        if not self.lr > 0:
            raise ConfigError(f"lr must be positive, got {self.lr}")
        if not 0 <= self.momentum < 1:
            raise ConfigError(f"momentum must be in [0, 1), got {self.momentum}")
        if self.weight_decay < 0:
            raise ConfigError(f"weight_decay must be non-negative, got {self.weight_decay}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be positive, got {self.batch_size}")
        if self.epochs < 0:
            raise ConfigError(f"epochs must be non-negative, got {self.epochs}")
        if not 0 < self.lr_decay <= 1 or not 0 < self.decay_at <= 1:
            raise ConfigError("lr_decay and decay_at must lie in (0, 1]")
        if not isinstance(self.seed, (int, np.integer)):
            raise ConfigError(f"seed must be an integer, got {self.seed!r}")

    @classmethod
    def from_dict(cls, values: dict) -> "TrainConfig":
        known = {f.name: f.type for f in fields(cls)}
        kwargs = {}
        for key, value in values.items():
            if key not in known:
                continue
            kwargs[key] = _coerce(value, getattr(cls, key))
        return cls(**kwargs)

    def lr_at(self, epoch: int) -> float:
        boundary = int(round(self.decay_at * self.epochs))
        return self.lr * (self.lr_decay if 0 < boundary <= epoch else 1.0)


def _coerce(value, default):
    if isinstance(default, bool):
        if isinstance(value, bool):
            return value
        text = str(value).strip().lower()
        if text in ("1", "true", "yes", "on"):
            return True
        if text in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"not a boolean: {value!r}")
    try:
        return type(default)(value) if not isinstance(default, int) else int(str(value))
    except ValueError as exc:
        raise ConfigError(f"cannot parse {value!r} as {type(default).__name__}") from exc


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    train_acc: float
    test_acc: float = float("nan")


@dataclass
class TrainLog:
    records: list = field(default_factory=list)
    wall_time: float = 0.0
    checkpoint: Optional[str] = None

    @property
    def final(self) -> Optional[EpochRecord]:
        return self.records[-1] if self.records else None

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["epoch", "loss", "train_acc", "test_acc"])
        for r in self.records:
            writer.writerow([r.epoch, f"{r.loss:.6f}", f"{r.train_acc:.6f}", f"{r.test_acc:.6f}"])
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text

    @classmethod
    def from_csv(cls, path) -> "TrainLog":
        rows = list(csv.DictReader(io.StringIO(Path(path).read_text())))
        return cls([EpochRecord(int(r["epoch"]), float(r["loss"]), float(r["train_acc"]), float(r["test_acc"]))
                    for r in rows])


# -- optimisation -----------------------------------------------------------


def layer_of(param_name: str) -> str:
    return param_name.rsplit(".", 1)[0]


class SGD:
    """Momentum SGD with L2 weight decay that skips frozen layers.

    ``v <- m v - lr (g + wd theta)``, ``theta <- theta + v``.
    """

    def __init__(self, params: dict, config: TrainConfig, plan: Optional[FreezePlan] = None):
        self.params = params
        self.config = config
        self.plan = plan
        self.lr = config.lr
        self.velocity = {k: np.zeros_like(p.data) for k, p in params.items()}

    def step(self) -> None:
        m, wd, lr = self.config.momentum, self.config.weight_decay, self.lr
        for name, p in self.params.items():
            if self.plan is not None and not self.plan.trainable(layer_of(name)):
                continue
            g = p.grad if p.grad is not None else 0.0
            v = self.velocity[name]
            v *= m
            v -= lr * (g + wd * p.data)
            p.data += v


def sgd_step(params: dict, config: TrainConfig, plan: Optional[FreezePlan] = None, velocity=None) -> dict:
    """Single functional update; returns the velocity state for the next call."""
    opt = SGD(params, config, plan)
    if velocity is not None:
        opt.velocity = velocity
    opt.step()
    return opt.velocity


def _flip_half(inputs: tuple, rng: np.random.Generator) -> tuple:
    mask = rng.random(len(inputs[0])) < 0.5
    out = []
    for x in inputs:
        x = x.copy()
        x[mask] = x[mask][..., ::-1]
        out.append(x)
    return tuple(out)


def predict(model, dataset, batch_size: int = 64) -> np.ndarray:
    preds = []
    with no_grad():
        for start in range(0, len(dataset), batch_size):
            inputs, _ = dataset.batch(np.arange(start, min(start + batch_size, len(dataset))))
            preds.append(model.logits(*inputs).data.argmax(axis=1))
    return np.concatenate(preds) if preds else np.zeros(0, dtype=np.int64)


def evaluate(model, dataset, batch_size: int = 64) -> float:
    """Mean class accuracy of softmax argmax predictions."""
    return mean_class_accuracy(predict(model, dataset, batch_size), dataset.labels)


def train(
    model,
    train_set,
    config: TrainConfig,
    plan: Optional[FreezePlan] = None,
    test_set=None,
    on_batch: Optional[Callable] = None,
    log: Optional[Callable[[str], None]] = None,
):
    """Shuffled mini-batch SGD; returns ``(trained copy, TrainLog)``.

    The input model is never modified. ``on_batch(epoch, batch, index,
    labels)`` is called before every update (instrumentation hook).
    """
    model = model.copy()
    history = TrainLog()
    if config.epochs == 0 or len(train_set) == 0:
        return model, history
    started = time.perf_counter()
    rng = np.random.default_rng(config.seed)
    params = model.parameters()
    opt = SGD(params, config, plan)
    n = len(train_set)
    for epoch in range(config.epochs):
        opt.lr = config.lr_at(epoch)
        order = rng.permutation(n)
        loss_sum, correct = 0.0, 0
        for b, start in enumerate(range(0, n, config.batch_size)):
            index = order[start:start + config.batch_size]
            inputs, labels = train_set.batch(index)
            if config.flip:
                inputs = _flip_half(inputs, rng)
            if on_batch is not None:
                on_batch(epoch, b, index, labels)
            model.zero_grad()
            logits = model.logits(*inputs)
            loss = ops.softmax_cross_entropy(logits, labels)
            value = float(loss.data)
            if not math.isfinite(value):
                raise TrainingError(f"non-finite loss at epoch {epoch}, batch {b}", epoch=epoch, batch=b)
            loss.backward()
            opt.step()
            loss_sum += value * len(index)
            correct += int((logits.data.argmax(axis=1) == labels).sum())
        test_acc = evaluate(model, test_set) if test_set is not None else float("nan")
        record = EpochRecord(epoch, loss_sum / n, correct / n, test_acc)
        history.records.append(record)
        if log is not None:
            log(f"epoch {epoch}: loss {record.loss:.4f} train_acc {record.train_acc:.3f} test_acc {test_acc:.3f}")
    model.zero_grad()
    history.wall_time = time.perf_counter() - started
    return model, history


def pretrain_wsp(train_set, arch: ModelGraph, config: TrainConfig, grid: int = 7, patch: int = 35,
                 test_set=None, on_batch=None, log=None):
    """Train a patch network on every grid patch, each labelled with its image's scene.

    ``train_set``/``test_set`` are image datasets; they are expanded into
    :class:`PatchDataset` grids. Returns ``(model, TrainLog)``.
    """
    if tuple(arch.input_shape[1:]) != (patch, patch):
        raise ConfigError(f"patch size {patch} does not match the network input {arch.input_shape}")
    patches = PatchDataset(train_set.images, train_set.labels, grid, patch)
    test_patches = PatchDataset(test_set.images, test_set.labels, grid, patch) if test_set is not None else None
    return train(arch, patches, config, test_set=test_patches, on_batch=on_batch, log=log)


def extract_features(model, layer: str, dataset, batch_size: int = 64) -> tuple:
    """Flattened activations of ``layer`` for every sample, in dataset order."""
    feats = []
    with no_grad():
        for start in range(0, len(dataset), batch_size):
            inputs, _ = dataset.batch(np.arange(start, min(start + batch_size, len(dataset))))
            feats.append(model.features(layer, *inputs).data)
    return np.concatenate(feats), np.asarray(dataset.labels).copy()


def config_dict(config: TrainConfig) -> dict:
    return asdict(config)
