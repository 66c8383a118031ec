"""Parameter stores and the few layer building blocks the models share."""

from __future__ import annotations

from typing import Iterator

import numpy as np

from . import tensor as T
from .tensor import Tensor


class ParameterStore:
    """Named trainable tensors; the numpy buffers are updated in place by the optimizer."""

    def __init__(self):
        self._tensors: dict[str, Tensor] = {}

    def add(self, name: str, value: np.ndarray) -> Tensor:
        if name in self._tensors:
            raise KeyError(f"duplicate parameter {name!r}")
        t = Tensor(np.array(value, dtype=np.float64), requires_grad=True, name=name)
        self._tensors[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._tensors[name]

    def __contains__(self, name: str) -> bool:
        return name in self._tensors

    def __iter__(self) -> Iterator[str]:
        return iter(self._tensors)

    def __len__(self) -> int:
        return len(self._tensors)

    def names(self) -> list[str]:
        return list(self._tensors)

    def tensors(self) -> list[Tensor]:
        return list(self._tensors.values())

    def arrays(self) -> dict[str, np.ndarray]:
        return {k: t.data for k, t in self._tensors.items()}

    def count(self) -> int:
        return int(sum(t.size for t in self._tensors.values()))

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: t.data.copy() for k, t in self._tensors.items()}

    def load_state_dict(self, arrays: dict[str, np.ndarray], strict: bool = True) -> None:
        if strict:
            missing = set(self._tensors) - set(arrays)
            extra = set(arrays) - set(self._tensors)
            if missing or extra:
                raise KeyError(f"checkpoint mismatch: missing={sorted(missing)} "
                               f"unexpected={sorted(extra)}")
        for k, v in arrays.items():
            if k not in self._tensors:
                continue
            dst = self._tensors[k].data
            if dst.shape != np.shape(v):
                raise ValueError(f"shape mismatch for {k!r}: {dst.shape} vs {np.shape(v)}")
            dst[...] = v


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int, shape=None) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape or (fan_in, fan_out))


def add_linear(store: ParameterStore, rng: np.random.Generator, name: str,
               n_in: int, n_out: int, bias: float | np.ndarray = 0.0) -> None:
    store.add(f"{name}.w", glorot(rng, n_in, n_out))
    store.add(f"{name}.b", np.broadcast_to(np.asarray(bias, dtype=float), (n_out,)))


def linear(store: ParameterStore, name: str, x) -> Tensor:
    return T.add(T.matmul(x, store[f"{name}.w"]), store[f"{name}.b"])


def add_conv(store: ParameterStore, rng: np.random.Generator, name: str,
             kernel: int, c_in: int, c_out: int) -> None:
    store.add(f"{name}.w", glorot(rng, kernel * c_in, c_out, shape=(kernel, c_in, c_out)))
    store.add(f"{name}.b", np.zeros(c_out))


def conv(store: ParameterStore, name: str, x, padding: int) -> Tensor:
    return T.add(T.conv1d(x, store[f"{name}.w"], padding=padding), store[f"{name}.b"])


def add_gru(store: ParameterStore, rng: np.random.Generator, name: str,
            n_in: int, hidden: int) -> None:
    store.add(f"{name}.wx", glorot(rng, n_in, 3 * hidden))
    store.add(f"{name}.wh", np.concatenate(
        [_orthogonal(rng, hidden) for _ in range(3)], axis=1))
    store.add(f"{name}.bx", np.zeros(3 * hidden))
    store.add(f"{name}.bh", np.zeros(3 * hidden))


def gru_input(store: ParameterStore, name: str, x) -> Tensor:
    """Input half of the GRU gates; can be computed for a whole sequence at once."""
    return T.add(T.matmul(x, store[f"{name}.wx"]), store[f"{name}.bx"])


def gru_step(store: ParameterStore, name: str, xg: Tensor, h: Tensor) -> Tensor:
    """One GRU update given precomputed input gates ``xg`` (..., 3H)."""
    H = h.shape[-1]
    hg = T.add(T.matmul(h, store[f"{name}.wh"]), store[f"{name}.bh"])
    rz = T.sigmoid(T.add(xg[..., :2 * H], hg[..., :2 * H]))
    r, z = rz[..., :H], rz[..., H:]
    n = T.tanh(T.add(xg[..., 2 * H:], T.mul(r, hg[..., 2 * H:])))
    # h' = (1 - z) * n + z * h
    return T.add(n, T.mul(z, T.sub(h, n)))


def _orthogonal(rng: np.random.Generator, n: int) -> np.ndarray:
    q, r = np.linalg.qr(rng.standard_normal((n, n)))
    return q * np.sign(np.diag(r))
