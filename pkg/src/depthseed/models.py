"""Network definitions: layer specs, the model graph, presets and weight surgery.

A :class:`ModelGraph` is a straight chain of :class:`LayerSpec` entries.
Parametric layers (``conv`` and ``linear``) own ``<name>.weight`` and
``<name>.bias`` tensors. ``linear`` layers flatten their input implicitly.
The final ``fc8`` layer always maps to the category count and is followed by
a ``loss`` layer (softmax cross-entropy).
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import ops
from .errors import ConfigError, DimensionError, TransferError
from .tensor import Tensor, as_tensor

KINDS = ("conv", "maxpool", "relu", "spp", "linear", "loss")
PARAMETRIC = ("conv", "linear")
PRESETS = ("alexlike", "wsp", "dcnn", "fusion-head")

ALEXLIKE_WIDTHS = (96, 256, 384, 384, 256, 4096, 4096)
WSP_WIDTHS = (64, 128, 256)
DCNN_WIDTHS = (64, 128, 256, 512)
DEFAULT_INPUT = {"alexlike": 227, "wsp": 35, "dcnn": 235}
SPP_LEVELS = (1, 2, 3)


@dataclass
class LayerSpec:
    name: str
    kind: str
    hp: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown layer kind {self.kind!r} for layer {self.name!r}")

    @property
    def parametric(self) -> bool:
        return self.kind in PARAMETRIC

    def to_dict(self) -> dict:
        return {"name": self.name, "kind": self.kind, **self.hp}

    @classmethod
    def from_dict(cls, d: dict) -> "LayerSpec":
        d = dict(d)
        hp = {k: v for k, v in d.items() if k not in ("name", "kind")}
        if "levels" in hp:
            hp["levels"] = list(hp["levels"])
        return cls(d["name"], d["kind"], hp)


def conv(name, out, k, stride=1, pad=0) -> LayerSpec:
    return LayerSpec(name, "conv", {"out": out, "k": k, "stride": stride, "pad": pad})


def pool(name, win, stride) -> LayerSpec:
    return LayerSpec(name, "maxpool", {"win": win, "stride": stride})


def relu(name) -> LayerSpec:
    return LayerSpec(name, "relu")


def fc(name, out) -> LayerSpec:
    return LayerSpec(name, "linear", {"out": out})


def pyramid(name, levels=SPP_LEVELS) -> LayerSpec:
    return LayerSpec(name, "spp", {"levels": list(levels)})


def loss() -> LayerSpec:
    return LayerSpec("loss", "loss")


def infer_shapes(layers: Sequence[LayerSpec], input_shape: Sequence[int]) -> list:
    """Per-layer output shapes (without the batch axis).

    Fills ``hp["in"]`` for linear layers and ``hp["in_channels"]`` for conv
    layers. Raises ConfigError when the chain does not fit together.
    """
    names = [l.name for l in layers]
    dupes = {n for n in names if names.count(n) > 1}
    if dupes:
        raise ConfigError(f"duplicate layer names: {sorted(dupes)}")
    shape = tuple(int(s) for s in input_shape)
    shapes = []
    for layer in layers:
        hp = layer.hp
        if layer.kind == "conv":
            if len(shape) != 3:
                raise ConfigError(f"{layer.name}: conv needs a C x H x W input, got {shape}")
            c, h, w = shape
            k, s, p = hp["k"], hp["stride"], hp["pad"]
            if k > h + 2 * p or k > w + 2 * p:
                raise ConfigError(f"{layer.name}: kernel {k} does not fit input {h}x{w} with pad {p}")
            hp["in_channels"] = c
            shape = (hp["out"], ops.conv_output_size(h, k, s, p), ops.conv_output_size(w, k, s, p))
        elif layer.kind == "maxpool":
            if len(shape) != 3:
                raise ConfigError(f"{layer.name}: maxpool needs a C x H x W input, got {shape}")
            c, h, w = shape
            win, s = hp["win"], hp["stride"]
            if win > h or win > w:
                raise ConfigError(f"{layer.name}: window {win} does not fit input {h}x{w}")
            shape = (c, (h - win) // s + 1, (w - win) // s + 1)
        elif layer.kind == "spp":
            if len(shape) != 3:
                raise ConfigError(f"{layer.name}: spp needs a C x H x W input, got {shape}")
            c, h, w = shape
            if max(hp["levels"]) > min(h, w):
                raise ConfigError(f"{layer.name}: pyramid level {max(hp['levels'])} exceeds input {h}x{w}")
            shape = (c * sum(n * n for n in hp["levels"]),)
        elif layer.kind == "linear":
            hp["in"] = int(np.prod(shape))
            shape = (hp["out"],)
        shapes.append(shape)
    return shapes


def _param_shapes(layer: LayerSpec) -> tuple:
    hp = layer.hp
    if layer.kind == "conv":
        return (hp["out"], hp["in_channels"], hp["k"], hp["k"]), (hp["out"],)
    return (hp["out"], hp["in"]), (hp["out"],)


def _init_layer(layer: LayerSpec, rng: np.random.Generator, init_std) -> tuple:
    wshape, bshape = _param_shapes(layer)
    if init_std is None:
        std = np.sqrt(2.0 / np.prod(wshape[1:]))
    else:
        std = float(init_std)
    weight = rng.normal(0.0, std, size=wshape).astype(np.float32)
    return weight, np.zeros(bshape, dtype=np.float32)


class ModelGraph:
    """Chain of layers plus the parameter store keyed by ``layer.weight``/``layer.bias``."""

    def __init__(self, layers, input_shape, params: dict, preset: Optional[str] = None, init_std=None):
        self.layers = list(layers)
        self.input_shape = tuple(int(s) for s in input_shape)
        self.shapes = infer_shapes(self.layers, self.input_shape)
        self.params = params
        self.preset = preset
        self.init_std = init_std
        for layer in self.layers:
            if layer.parametric:
                wshape, bshape = _param_shapes(layer)
                for key, shp in ((f"{layer.name}.weight", wshape), (f"{layer.name}.bias", bshape)):
                    if key not in params:
                        raise ConfigError(f"missing parameter {key}")
                    if tuple(params[key].shape) != shp:
                        raise DimensionError(f"{key} has shape {params[key].shape}, expected {shp}")

    @classmethod
    def build(cls, layers, input_shape, seed: int, init_std=None, preset=None) -> "ModelGraph":
        layers = [copy.deepcopy(l) for l in layers]
        infer_shapes(layers, input_shape)
        rng = np.random.default_rng(seed)
        params = {}
        for layer in layers:
            if layer.parametric:
                w, b = _init_layer(layer, rng, init_std)
                params[f"{layer.name}.weight"] = Tensor(w, requires_grad=True)
                params[f"{layer.name}.bias"] = Tensor(b, requires_grad=True)
        return cls(layers, input_shape, params, preset=preset, init_std=init_std)

    # -- introspection -----------------------------------------------------

    @property
    def layer_names(self) -> list:
        return [l.name for l in self.layers]

    @property
    def param_layers(self) -> list:
        return [l.name for l in self.layers if l.parametric]

    @property
    def categories(self) -> int:
        return self.layer("fc8").hp["out"]

    def layer(self, name: str) -> LayerSpec:
        for l in self.layers:
            if l.name == name:
                return l
        raise ConfigError(f"unknown layer {name!r}; layers are {self.layer_names}")

    def index(self, name: str) -> int:
        return self.layer_names.index(self.layer(name).name)

    def output_shape(self, name: str) -> tuple:
        return self.shapes[self.index(name)]

    def parameters(self) -> dict:
        return dict(self.params)

    def num_params(self) -> int:
        return int(sum(p.size for p in self.params.values()))

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def state_dict(self) -> dict:
        return {k: v.data.copy() for k, v in self.params.items()}

    def copy(self) -> "ModelGraph":
        params = {k: Tensor(v.data.copy(), requires_grad=True) for k, v in self.params.items()}
        return ModelGraph(copy.deepcopy(self.layers), self.input_shape, params, self.preset, self.init_std)

    def describe(self) -> dict:
        return {
            "preset": self.preset,
            "input_shape": list(self.input_shape),
            "init_std": self.init_std,
            "layers": [l.to_dict() for l in self.layers],
        }

    @classmethod
    def from_description(cls, desc: dict, arrays: dict) -> "ModelGraph":
        layers = [LayerSpec.from_dict(d) for d in desc["layers"]]
        params = {k: Tensor(v, requires_grad=True) for k, v in arrays.items()}
        return cls(layers, desc["input_shape"], params, desc.get("preset"), desc.get("init_std"))

    # -- execution ---------------------------------------------------------

    def forward(self, x, until: Optional[str] = None) -> Tensor:
        """Run the chain up to and including ``until`` (default: up to the logits)."""
        if until is not None:
            self.layer(until)
        h = as_tensor(x)
        for layer in self.layers:
            if layer.kind == "loss":
                break
            h = self._apply(layer, h)
            if layer.name == until:
                break
        return h

    def _apply(self, layer: LayerSpec, h: Tensor) -> Tensor:
        hp = layer.hp
        if layer.kind == "conv":
            return ops.conv2d(h, self.params[f"{layer.name}.weight"], self.params[f"{layer.name}.bias"],
                              hp["stride"], hp["pad"])
        if layer.kind == "maxpool":
            return ops.maxpool2d(h, hp["win"], hp["stride"])
        if layer.kind == "relu":
            return ops.relu(h)
        if layer.kind == "spp":
            return ops.spp(h, hp["levels"])
        if layer.kind == "linear":
            if h.ndim != 2:
                h = ops.flatten(h)
            return ops.linear(h, self.params[f"{layer.name}.weight"], self.params[f"{layer.name}.bias"])
        raise ConfigError(f"cannot execute layer kind {layer.kind!r}")

    def logits(self, x) -> Tensor:
        return self.forward(x)

    def loss(self, x, labels) -> Tensor:
        return ops.softmax_cross_entropy(self.forward(x), labels)

    def feature_layer(self, name: str) -> str:
        """Layer whose output is reported as the feature of ``name``.

        Activations are taken after a directly following ReLU, the way
        in-place ReLUs expose conv/fc blobs.
        """
        i = self.index(name)
        if i + 1 < len(self.layers) and self.layers[i + 1].kind == "relu":
            return self.layers[i + 1].name
        return name

    def features(self, name: str, x) -> Tensor:
        """N x D flattened activation of layer ``name`` (after its ReLU, if any)."""
        h = self.forward(x, until=self.feature_layer(name))
        return ops.flatten(h) if h.ndim != 2 else h


@dataclass
class ArchPreset:
    """Named architecture plus its configurable widths, input size and initialisation."""

    name: str
    categories: int
    input_size: Optional[int] = None
    in_channels: int = 3
    widths: Optional[Sequence[int]] = None
    hidden: int = 512
    levels: Sequence[int] = SPP_LEVELS
    init_std: Optional[float] = None
    fusion_inputs: Optional[Sequence[int]] = None


def preset_layers(preset: ArchPreset) -> tuple:
    """Expand a preset into (layers, input_shape)."""
    if preset.name not in PRESETS:
        raise ConfigError(f"unknown preset {preset.name!r}; choose from {PRESETS}")
    if preset.categories < 1:
        raise ConfigError(f"categories must be positive, got {preset.categories}")
    k = preset.categories
    if preset.name == "fusion-head":
        if not preset.fusion_inputs or len(preset.fusion_inputs) != 2:
            raise ConfigError("fusion-head needs fusion_inputs=(D_rgb, D_depth)")
        d_rgb, d_depth = preset.fusion_inputs
        if d_rgb < 1 or d_depth < 1:
            raise DimensionError(f"fusion needs both modalities, got widths D_rgb={d_rgb}, D_depth={d_depth}")
        layers = [fc("fusion_proj", preset.hidden), relu("relu_fuse"), fc("fc8", k), loss()]
        return layers, (d_rgb + d_depth,)

    size = preset.input_size or DEFAULT_INPUT[preset.name]
    if preset.name == "alexlike":
        w = tuple(preset.widths or ALEXLIKE_WIDTHS)
        if len(w) != 7:
            raise ConfigError("alexlike needs 7 widths (conv1..conv5, fc6, fc7)")
        layers = [
            conv("conv1", w[0], 11, 4, 0), relu("relu1"), pool("pool1", 3, 2),
            conv("conv2", w[1], 5, 1, 2), relu("relu2"), pool("pool2", 3, 2),
            conv("conv3", w[2], 3, 1, 1), relu("relu3"),
            conv("conv4", w[3], 3, 1, 1), relu("relu4"),
            conv("conv5", w[4], 3, 1, 1), relu("relu5"), pool("pool5", 3, 2),
            fc("fc6", w[5]), relu("relu6"), fc("fc7", w[6]), relu("relu7"),
            fc("fc8", k), loss(),
        ]
    else:
        default = WSP_WIDTHS if preset.name == "wsp" else DCNN_WIDTHS
        w = tuple(preset.widths or default)
        if len(w) != len(default):
            raise ConfigError(f"{preset.name} needs {len(default)} conv widths, got {len(w)}")
        layers = [
            conv("conv1", w[0], 5, 2, 2), relu("relu1"), pool("pool1", 2, 2),
            conv("conv2", w[1], 3, 1, 1), relu("relu2"), pool("pool2", 2, 2),
            conv("conv3", w[2], 3, 1, 1), relu("relu3"),
        ]
        if preset.name == "wsp":
            layers += [fc("fc8", k), loss()]
        else:
            layers += [
                conv("conv4", w[3], 3, 1, 1), relu("relu4"),
                pyramid("spp", preset.levels),
                fc("fc7", preset.hidden), relu("relu7"),
                fc("fc8", k), loss(),
            ]
    return layers, (preset.in_channels, size, size)


def build_preset(preset: ArchPreset, seed: int) -> ModelGraph:
    """Build a preset with fixed-seed Gaussian weights and zero biases.

    ``init_std=None`` (the default) selects He scaling, std = sqrt(2 / fan_in);
    a number such as 0.01 gives a fixed standard deviation for every layer.
    """
    layers, input_shape = preset_layers(preset)
    try:
        return ModelGraph.build(layers, input_shape, seed, preset.init_std, preset=preset.name)
    except ConfigError as exc:
        raise ConfigError(f"preset {preset.name!r} with input {input_shape}: {exc}") from exc


def transfer_conv_weights(src: ModelGraph, dst: ModelGraph) -> ModelGraph:
    """Copy of ``dst`` whose conv layers shared with ``src`` carry ``src``'s weights.

    Non-conv parameters keep ``dst``'s initialisation. ``src`` is not touched.
    """
    src_convs = {l.name: l for l in src.layers if l.kind == "conv"}
    shared = [l.name for l in dst.layers if l.kind == "conv" and l.name in src_convs]
    if not shared:
        raise TransferError("source and destination share no conv layers")
    out = dst.copy()
    for name in shared:
        for part in ("weight", "bias"):
            key = f"{name}.{part}"
            a, b = src.params[key], out.params[key]
            if a.shape != b.shape:
                raise TransferError(f"layer {name}: {part} shape {a.shape} does not match {b.shape}", layer=name)
        a_hp, b_hp = src_convs[name].hp, out.layer(name).hp
        if (a_hp["stride"], a_hp["pad"]) != (b_hp["stride"], b_hp["pad"]):
            raise TransferError(f"layer {name}: stride/pad differ between models", layer=name)
        for part in ("weight", "bias"):
            key = f"{name}.{part}"
            out.params[key] = Tensor(src.params[key].data.copy(), requires_grad=True)
    return out


def truncate(model: ModelGraph, keep_through: str) -> tuple:
    """(layers, params) up to ``keep_through`` plus a directly following ReLU."""
    end = model.index(keep_through)
    if end + 1 < len(model.layers) and model.layers[end + 1].kind == "relu":
        end += 1
    layers = [copy.deepcopy(l) for l in model.layers[: end + 1]]
    names = {l.name for l in layers}
    params = {k: Tensor(v.data.copy(), requires_grad=True) for k, v in model.params.items()
              if k.rsplit(".", 1)[0] in names}
    return layers, params


def remove_top_layers(model: ModelGraph, keep_through: str, categories: int, seed: int = 0) -> ModelGraph:
    """Drop everything above ``keep_through`` and attach a fresh fc8 + loss."""
    if model.layer(keep_through).kind == "loss" or keep_through == "fc8":
        raise ConfigError("fc8 is always replaced; keep_through must name a layer below it")
    layers, params = truncate(model, keep_through)
    layers += [fc("fc8", categories), loss()]
    infer_shapes(layers, model.input_shape)
    w, b = _init_layer(layers[-2], np.random.default_rng(seed), model.init_std)
    params["fc8.weight"] = Tensor(w, requires_grad=True)
    params["fc8.bias"] = Tensor(b, requires_grad=True)
    return ModelGraph(layers, model.input_shape, params, model.preset, model.init_std)


def _arch_path(path: Path) -> Path:
    return path.with_suffix(path.suffix + ".arch")


def save_model(path, model, meta: Optional[dict] = None) -> None:
    """Write the parameter checkpoint and its ``.arch`` JSON descriptor next to it.

    ``meta`` (e.g. the input modality) is stored verbatim in the descriptor.
    """
    from .data.formats import save_checkpoint

    path = Path(path)
    save_checkpoint(path, model.state_dict())
    desc = model.describe()
    arch = {"type": desc.pop("type", "graph"), **desc, "meta": dict(meta or {})}
    _arch_path(path).write_text(json.dumps(arch, indent=1, sort_keys=True) + "\n")


def load_model_meta(path) -> dict:
    arch_path = _arch_path(Path(path))
    if not arch_path.exists():
        raise FileNotFoundError(f"model descriptor {arch_path} is missing")
    return json.loads(arch_path.read_text()).get("meta", {})


def load_model(path):
    """Inverse of :func:`save_model` (also understands RGB-D checkpoints)."""
    from .data.formats import load_checkpoint

    path = Path(path)
    arch_path = _arch_path(path)
    if not path.exists() or not arch_path.exists():
        raise FileNotFoundError(f"checkpoint {path} or its descriptor {arch_path} is missing")
    desc = json.loads(arch_path.read_text())
    arrays = load_checkpoint(path)
    if desc.get("type") == "rgbd":
        from .fusion import RgbdModel

        return RgbdModel.from_description(desc, arrays)
    return ModelGraph.from_description(desc, arrays)
