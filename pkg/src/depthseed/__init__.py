"""depthseed: depth CNNs with weakly supervised patch pretraining, SPP, RGB-D fusion and weighted SVMs.

The package is pure numpy. Main entry points:

* :mod:`depthseed.ops` and :class:`depthseed.tensor.Tensor` for the autograd engine,
* :func:`depthseed.models.build_preset` for the network presets,
* :func:`depthseed.training.train` and :func:`depthseed.training.pretrain_wsp`,
* :func:`depthseed.fusion.build_rgbd_model`,
* :func:`depthseed.classifier.train_svm`,
* the ``depthseed`` command line (:mod:`depthseed.cli`).
"""

__version__ = "0.1.0"

from .errors import (  # noqa: E402
    ConfigError,
    ContractError,
    DataError,
    DepthSeedError,
    DimensionError,
    ExportError,
    FormatError,
    MetricError,
    ParameterError,
    StateError,
    TrainingError,
    TransferError,
)
from .tensor import Tensor, no_grad  # noqa: E402
