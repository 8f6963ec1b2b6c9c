"""Central-difference gradient checking."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import ContractError
from .tensor import Tensor, precision


@dataclass
class GradCheckResult:
    max_rel_error: float
    tol: float
    checked: int
    skipped: int

    @property
    def passed(self) -> bool:
        return self.max_rel_error <= self.tol

    def __float__(self) -> float:
        return self.max_rel_error


def grad_check(
    fn: Callable[[], Tensor],
    tensors: Sequence[Tensor],
    eps: float = 1e-3,
    tol: float = 1e-3,
    max_coords: Optional[int] = None,
    seed: int = 0,
    floor: float = 1e-6,
    kink_tol: Optional[float] = None,
) -> GradCheckResult:
    """Compare analytic gradients of ``fn()`` against central differences.

    ``fn`` rebuilds the graph on every call and must return a scalar.
    ``tensors`` are the leaves to differentiate; their data is promoted to
    float64 for the duration of the check and restored afterwards.

    Coordinates sitting on a kink (ReLU zero crossing, max-pool tie) are
    detected by comparing the difference quotients at eps, eps/2 and eps/4
    and are skipped when these disagree by more than ``kink_tol`` (relative,
    default ``tol / 10``). With ``max_coords`` only a random subset of each tensor's
    coordinates is probed.
    """
    if not tensors:
        return GradCheckResult(0.0, tol, 0, 0)
    originals = [t.data for t in tensors]
    flags = [t.requires_grad for t in tensors]
    kink_tol = tol / 10 if kink_tol is None else kink_tol
    rng = np.random.default_rng(seed)
    worst, checked, skipped = 0.0, 0, 0
    try:
        with precision(np.float64):
            for t in tensors:
                t.data = t.data.astype(np.float64)
                t.requires_grad = True
                t.grad = None

            def evaluate() -> float:
                out = fn()
                return float(out.data.reshape(-1)[0])

            out = fn()
            if out.data.size != 1:
                raise ContractError(f"grad_check needs a scalar output, got shape {out.shape}")
            out.backward()
            analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in tensors]

            for t, a in zip(tensors, analytic):
                flat = t.data.reshape(-1)
                coords = np.arange(flat.size)
                if max_coords is not None and flat.size > max_coords:
                    coords = np.sort(rng.choice(flat.size, size=max_coords, replace=False))
                for idx in coords:
                    keep = flat[idx]
                    estimates = []
                    for h in (eps, eps / 2, eps / 4):
                        flat[idx] = keep + h
                        fp = evaluate()
                        flat[idx] = keep - h
                        fm = evaluate()
                        estimates.append((fp - fm) / (2 * h))
                    flat[idx] = keep
                    num = estimates[0]
                    spread = max(estimates) - min(estimates)
                    if spread > kink_tol * max(max(abs(e) for e in estimates), floor):
                        skipped += 1
                        continue
                    ana = float(a.reshape(-1)[idx])
                    err = abs(ana - num) / max(abs(ana), abs(num), floor)
                    worst = max(worst, err)
                    checked += 1
    finally:
        for t, data, flag in zip(tensors, originals, flags):
            t.data = data
            t.requires_grad = flag
            t.grad = None
    return GradCheckResult(worst, tol, checked, skipped)
