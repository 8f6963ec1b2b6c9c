"""RGB-D fusion: two truncated branches feeding a joint projection head.

The head's first fully connected layer is the block projection
``F_rgbd = [W_rgb W_depth] [F_rgb; F_depth] + b``; a ReLU and a second fully
connected layer (``fc8``) produce the class scores.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import ops
from .errors import ConfigError, DataError, DimensionError
from .models import ArchPreset, ModelGraph, build_preset, truncate
from .tensor import Tensor, as_tensor

BRANCHES = ("rgb", "depth", "head")


@dataclass
class FusionProjection:
    """Joint projection ``W = [W_rgb W_depth]`` (D_rgbd x (D_r + D_d)) plus bias."""

    weight: np.ndarray
    bias: np.ndarray
    d_rgb: int
    d_depth: int

    def __post_init__(self):
        self.weight = np.asarray(self.weight)
        self.bias = np.asarray(self.bias)
        if self.weight.ndim != 2 or self.weight.shape[1] != self.d_rgb + self.d_depth:
            raise DimensionError(f"projection of shape {self.weight.shape} does not split into "
                                 f"D_r={self.d_rgb} + D_d={self.d_depth} columns", axis="D")
        if self.bias.shape != (self.weight.shape[0],):
            raise DimensionError(f"bias shape {self.bias.shape} does not match {self.weight.shape[0]} outputs",
                                 axis="D_rgbd")

    @property
    def hidden(self) -> int:
        return self.weight.shape[0]

    @property
    def w_rgb(self) -> np.ndarray:
        return self.weight[:, : self.d_rgb]

    @property
    def w_depth(self) -> np.ndarray:
        return self.weight[:, self.d_rgb:]

    @classmethod
    def from_blocks(cls, w_rgb, w_depth, bias=None) -> "FusionProjection":
        w_rgb, w_depth = np.asarray(w_rgb), np.asarray(w_depth)
        if w_rgb.shape[0] != w_depth.shape[0]:
            raise DimensionError(f"blocks have {w_rgb.shape[0]} and {w_depth.shape[0]} rows", axis="D_rgbd")
        if bias is None:
            bias = np.zeros(w_rgb.shape[0], dtype=w_rgb.dtype)
        return cls(np.hstack([w_rgb, w_depth]), bias, w_rgb.shape[1], w_depth.shape[1])


def fuse_features(f_rgb, f_depth, proj: FusionProjection) -> Tensor:
    """``W_rgb f_rgb + W_depth f_depth + b`` for N x D_r and N x D_d batches.

    Single 1-d feature vectors are accepted as a convenience and give a 1-d
    result (not tracked for gradients).
    """
    f_rgb, f_depth = as_tensor(f_rgb), as_tensor(f_depth)
    single = f_rgb.ndim == 1 and f_depth.ndim == 1
    if single:
        f_rgb, f_depth = Tensor(f_rgb.data[None, :]), Tensor(f_depth.data[None, :])
    if f_rgb.ndim != 2 or f_depth.ndim != 2 or f_rgb.shape[0] != f_depth.shape[0]:
        raise DimensionError(f"unpaired feature batches {f_rgb.shape} and {f_depth.shape}", axis="N")
    if f_rgb.shape[1] != proj.d_rgb:
        raise DimensionError(f"F_rgb has width {f_rgb.shape[1]}, projection expects {proj.d_rgb}", axis="D_r")
    if f_depth.shape[1] != proj.d_depth:
        raise DimensionError(f"F_depth has width {f_depth.shape[1]}, projection expects {proj.d_depth}",
                             axis="D_d")
    joint = ops.concat([f_rgb, f_depth], axis=1)
    out = ops.linear(joint, Tensor(proj.weight.astype(joint.data.dtype)), Tensor(proj.bias.astype(joint.data.dtype)))
    return Tensor(out.data[0]) if single else out


class RgbdModel:
    """Two truncated branch networks plus a fusion head, trained as one model.

    Parameter names are qualified by branch: ``rgb/conv1.weight``,
    ``depth/conv1.weight``, ``head/fusion_proj.weight``.
    """

    def __init__(self, rgb: ModelGraph, depth: ModelGraph, head: ModelGraph, cut_rgb: str, cut_depth: str):
        self.rgb, self.depth, self.head = rgb, depth, head
        self.cut_rgb, self.cut_depth = cut_rgb, cut_depth
        d_r, d_d = self.branch_width("rgb"), self.branch_width("depth")
        if head.input_shape != (d_r + d_d,):
            raise DimensionError(f"head expects {head.input_shape[0]} inputs, branches give {d_r} + {d_d}",
                                 axis="D")
        self.d_rgb, self.d_depth = d_r, d_d

    # -- structure ----------------------------------------------------------

    def branch(self, name: str) -> ModelGraph:
        if name not in BRANCHES:
            raise ConfigError(f"unknown branch {name!r}; choose from {BRANCHES}")
        return getattr(self, name)

    def branch_width(self, name: str) -> int:
        graph = self.branch(name)
        return int(np.prod(graph.shapes[-1]))

    @property
    def categories(self) -> int:
        return self.head.categories

    @property
    def input_shape(self) -> tuple:
        return self.rgb.input_shape

    @property
    def projection(self) -> FusionProjection:
        return FusionProjection(self.head.params["fusion_proj.weight"].data,
                                self.head.params["fusion_proj.bias"].data, self.d_rgb, self.d_depth)

    def parameters(self) -> dict:
        out = {}
        for name in BRANCHES:
            for key, p in self.branch(name).params.items():
                out[f"{name}/{key}"] = p
        return out

    def num_params(self) -> int:
        return int(sum(p.size for p in self.parameters().values()))

    def zero_grad(self) -> None:
        for name in BRANCHES:
            self.branch(name).zero_grad()

    def state_dict(self) -> dict:
        return {k: v.data.copy() for k, v in self.parameters().items()}

    def copy(self) -> "RgbdModel":
        return RgbdModel(self.rgb.copy(), self.depth.copy(), self.head.copy(), self.cut_rgb, self.cut_depth)

    def describe(self) -> dict:
        return {
            "type": "rgbd",
            "cut_rgb": self.cut_rgb,
            "cut_depth": self.cut_depth,
            **{name: self.branch(name).describe() for name in BRANCHES},
        }

    @classmethod
    def from_description(cls, desc: dict, arrays: dict) -> "RgbdModel":
        graphs = {}
        for name in BRANCHES:
            prefix = f"{name}/"
            part = {k[len(prefix):]: v for k, v in arrays.items() if k.startswith(prefix)}
            graphs[name] = ModelGraph.from_description(desc[name], part)
        return cls(graphs["rgb"], graphs["depth"], graphs["head"], desc["cut_rgb"], desc["cut_depth"])

    # -- execution ------------------------------------------------------------

    def branch_features(self, rgb, depth) -> tuple:
        f_rgb = self.rgb.forward(rgb)
        f_depth = self.depth.forward(depth)
        if f_rgb.ndim != 2:
            f_rgb = ops.flatten(f_rgb)
        if f_depth.ndim != 2:
            f_depth = ops.flatten(f_depth)
        return f_rgb, f_depth

    def logits(self, rgb, depth) -> Tensor:
        f_rgb, f_depth = self.branch_features(rgb, depth)
        return self.head.forward(ops.concat([f_rgb, f_depth], axis=1))

    def loss(self, rgb, depth, labels) -> Tensor:
        return ops.softmax_cross_entropy(self.logits(rgb, depth), labels)

    def features(self, layer: str, rgb, depth) -> Tensor:
        """Activations of a head layer, or ``concat`` for the stacked branch features."""
        f_rgb, f_depth = self.branch_features(rgb, depth)
        joint = ops.concat([f_rgb, f_depth], axis=1)
        if layer == "concat":
            return joint
        return self.head.features(layer, joint)


def _branch(model: ModelGraph, cut: str) -> ModelGraph:
    layers, params = truncate(model, cut)
    if any(l.kind == "loss" for l in layers):
        raise ConfigError(f"cut layer {cut!r} must lie below the loss")
    return ModelGraph(layers, model.input_shape, params, model.preset, model.init_std)


def build_rgbd_model(
    rgb: Optional[ModelGraph],
    depth: Optional[ModelGraph],
    cut_rgb: str = "fc7",
    cut_depth: str = "fc7",
    hidden: int = 512,
    categories: Optional[int] = None,
    seed: int = 0,
    init_std: Optional[float] = None,
) -> RgbdModel:
    """Cut both branches (keeping a following ReLU) and attach a fresh fusion head.

    A missing branch counts as a zero-width modality and is rejected.
    """
    if rgb is None or depth is None:
        raise DimensionError("RGB-D fusion needs both branches; got a zero-width modality",
                             axis="D_r" if rgb is None else "D_d")
    rgb_b, depth_b = _branch(rgb, cut_rgb), _branch(depth, cut_depth)
    d_r, d_d = int(np.prod(rgb_b.shapes[-1])), int(np.prod(depth_b.shapes[-1]))
    k = categories if categories is not None else rgb.categories
    head = build_preset(ArchPreset("fusion-head", k, hidden=hidden, init_std=init_std,
                                   fusion_inputs=(d_r, d_d)), seed)
    return RgbdModel(rgb_b, depth_b, head, cut_rgb, cut_depth)


def branch_layers(model: RgbdModel, name: str) -> list:
    """Qualified parametric layer names of one branch (``rgb/conv1`` ...)."""
    return [f"{name}/{layer}" for layer in model.branch(name).param_layers]


def head_only_plan(model: RgbdModel):
    """FreezePlan training only the fusion head (both branches frozen)."""
    from .training import freeze_all_but

    return freeze_all_but(model, branch_layers(model, "head"))


def train_rgbd(model: RgbdModel, train_set, config, plan=None, test_set=None, on_batch=None, log=None):
    """Joint SGD over both branches and the head; returns ``(model, TrainLog)``."""
    from .training import train

    if not hasattr(train_set, "rgb") or not hasattr(train_set, "depth"):
        raise DataError("train_rgbd needs a paired RGB / depth dataset")
    return train(model, train_set, config, plan=plan, test_set=test_set, on_batch=on_batch, log=log)

