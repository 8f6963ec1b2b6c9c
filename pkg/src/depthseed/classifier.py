"""Class-weighted linear SVMs on CNN features and the class-averaged metric."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np

from .errors import DataError, DimensionError, MetricError


@dataclass
class ClassWeights:
    """``w_k = (min_i N_i / N_k) ** p``; the rarest class gets weight 1."""

    weights: np.ndarray
    counts: np.ndarray
    p: float

    @property
    def num_classes(self) -> int:
        return len(self.weights)


def compute_class_weights(counts: Sequence[int], p: float = 2.0) -> ClassWeights:
    counts = np.asarray(counts, dtype=np.int64)
    if counts.ndim != 1 or counts.size == 0:
        raise DataError("counts must be a non-empty 1-d sequence")
    if (counts <= 0).any():
        empty = np.flatnonzero(counts <= 0).tolist()
        raise DataError(f"classes {empty} have no training samples")
    weights = (counts.min() / counts.astype(np.float64)) ** p
    return ClassWeights(weights, counts, float(p))


@dataclass
class SvmModel:
    """One-vs-rest linear SVM: ``scores = X @ weight.T + bias``."""

    weight: np.ndarray  # K x D
    bias: np.ndarray  # K
    C: float

    def decision_function(self, features) -> np.ndarray:
        features = np.asarray(features, dtype=np.float64)
        if features.ndim != 2 or features.shape[1] != self.weight.shape[1]:
            raise DimensionError(f"expected N x {self.weight.shape[1]} features, got {features.shape}", axis="D")
        return features @ self.weight.T + self.bias

    def predict(self, features) -> np.ndarray:
        return self.decision_function(features).argmax(axis=1)


def train_svm(
    features,
    labels,
    weights: Union[ClassWeights, Sequence[float], None] = None,
    C: float = 1.0,
    epochs: int = 100,
    seed: int = 0,
    tol: float = 1e-6,
) -> SvmModel:
    """Fit K one-vs-rest hinge-loss SVMs by dual coordinate descent.

    Each binary problem minimises ``0.5 * |w|^2 + C * sum_i c_{y_i} * hinge_i``
    where ``c_{y_i}`` is the weight of the sample's own class (1 when
    ``weights`` is None). The bias is learned as the weight of a constant
    feature. One epoch visits every sample once in an order drawn from
    ``seed``; iteration stops early once no dual variable moves more than
    ``tol``.
    """
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    if x.ndim != 2 or len(x) != len(y):
        raise DimensionError(f"features {x.shape} do not match {len(y)} labels", axis="N")
    classes = np.unique(y)
    if len(classes) < 2:
        raise DataError("SVM training needs at least two classes")
    k = int(y.max()) + 1
    if not np.array_equal(classes, np.arange(k)):
        raise DataError(f"labels must be dense in [0, {k}), got {classes.tolist()}")
    if weights is None:
        cw = np.ones(k)
    else:
        cw = np.asarray(weights.weights if isinstance(weights, ClassWeights) else weights, dtype=np.float64)
        if cw.shape != (k,):
            raise DimensionError(f"expected {k} class weights, got {cw.shape}", axis="K")
    if C <= 0 or epochs <= 0:
        raise DataError(f"C and epochs must be positive, got C={C}, epochs={epochs}")

    n = len(x)
    xa = np.hstack([x, np.ones((n, 1))])
    q = np.einsum("ij,ij->i", xa, xa)
    upper = C * cw[y]
    targets = np.where(y[:, None] == np.arange(k)[None, :], 1.0, -1.0)  # n x K
    alpha = np.zeros((n, k))
    w = np.zeros((k, xa.shape[1]))
    rng = np.random.default_rng(seed)
    for _ in range(epochs):
        moved = 0.0
        for i in rng.permutation(n):
            if q[i] == 0.0:
                continue
            grad = targets[i] * (w @ xa[i]) - 1.0
            new = np.clip(alpha[i] - grad / q[i], 0.0, upper[i])
            delta = new - alpha[i]
            if np.any(delta):
                alpha[i] = new
                w += (delta * targets[i])[:, None] * xa[i][None, :]
                moved = max(moved, float(np.abs(delta).max()))
        if moved <= tol:
            break
    return SvmModel(w[:, :-1].copy(), w[:, -1].copy(), float(C))


def mean_class_accuracy(predictions, labels, num_classes: Optional[int] = None) -> float:
    """Average over classes of per-class accuracy (recall).

    With ``num_classes`` every class in ``[0, num_classes)`` must have at
    least one sample; otherwise the classes present in ``labels`` are used.
    """
    predictions = np.asarray(predictions)
    labels = np.asarray(labels)
    if predictions.shape != labels.shape:
        raise MetricError(f"{predictions.shape[0] if predictions.ndim else 0} predictions for "
                          f"{labels.shape[0] if labels.ndim else 0} labels")
    if labels.size == 0:
        raise MetricError("no samples to evaluate")
    classes = np.arange(num_classes) if num_classes is not None else np.unique(labels)
    recalls = []
    for c in classes:
        mask = labels == c
        if not mask.any():
            raise MetricError(f"class {int(c)} has no samples")
        recalls.append(float((predictions[mask] == c).mean()))
    return float(np.mean(recalls))


def accuracy(predictions, labels) -> float:
    predictions, labels = np.asarray(predictions), np.asarray(labels)
    if predictions.shape != labels.shape or labels.size == 0:
        raise MetricError("predictions and labels must be equal-length and non-empty")
    return float((predictions == labels).mean())


def standardize(train, *others):
    """Z-score features with training statistics (constant columns left centred)."""
    train = np.asarray(train, dtype=np.float64)
    mu = train.mean(axis=0)
    sd = train.std(axis=0)
    sd[sd < 1e-12] = 1.0
    out = [(train - mu) / sd] + [(np.asarray(o, dtype=np.float64) - mu) / sd for o in others]
    return out if others else out[0]
