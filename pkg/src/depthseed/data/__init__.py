"""Data loading, encoding and synthetic scene generation."""

from .datasets import (
    ImageDataset,
    PairedDataset,
    PatchDataset,
    grid_offsets,
    load_split,
    sample_patch_grid,
    scale_input,
    synthetic_dataset,
)
from .formats import (
    DatasetManifest,
    load_checkpoint,
    load_image,
    load_manifest,
    load_tensor,
    save_checkpoint,
    save_tensor,
)
from .hha import DepthMap, encode_hha
from .synth import LAYOUTS, generate_synthetic_scene
