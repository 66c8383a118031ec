"""Central finite-difference verification of tape gradients."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .tensor import Tape, Tensor


@dataclass
class GradCheckReport:
    max_rel_error: list[float]
    tol: float
    worst_index: list[tuple] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return max(self.max_rel_error, default=0.0) <= self.tol

    @property
    def worst(self) -> float:
        return max(self.max_rel_error, default=0.0)


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float) -> np.ndarray:
    # the floor keeps near-zero gradients from turning rounding noise into huge ratios
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / denom


def grad_check(f: Callable[..., Tensor], inputs: Sequence[np.ndarray], h: float = 1e-5,
               tol: float = 1e-5, floor: float = 1e-5) -> GradCheckReport:
    """Compare tape gradients of scalar ``f(*inputs)`` against central differences.

    ``f`` receives fresh ``Tensor`` objects (``requires_grad=True``) built from
    float64 copies of ``inputs``. The report holds, per input, the largest
    elementwise relative error ``|a - n| / max(|a|, |n|, floor)``.
    """
    base = [np.array(x, dtype=np.float64) for x in inputs]
    leaves = [Tensor(x.copy(), requires_grad=True) for x in base]
    with Tape() as tape:
        out = f(*leaves)
    if out.size != 1:
        raise ValueError(f"grad_check needs a scalar function, got shape {out.shape}")
    analytic = tape.gradient(out, leaves)

    def evaluate(arrays) -> float:
        return float(f(*[Tensor(a) for a in arrays]).data)

    errors, worst_idx = [], []
    for i, x in enumerate(base):
        numeric = np.zeros_like(x)
        probe = [b.copy() for b in base]
        flat = probe[i].reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + h
            up = evaluate(probe)
            flat[j] = orig - h
            down = evaluate(probe)
            flat[j] = orig
            numeric.reshape(-1)[j] = (up - down) / (2.0 * h)
        err = relative_error(analytic[i], numeric, floor)
        errors.append(float(err.max()) if err.size else 0.0)
        worst_idx.append(np.unravel_index(int(err.argmax()), err.shape) if err.size else ())
    return GradCheckReport(errors, tol, worst_idx)
