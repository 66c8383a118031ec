"""Location-based GMM attention with monotone means."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..autodiff import ParameterStore, Tensor
from ..autodiff import ops
from ..autodiff.nn import linear

SIGMA_FLOOR = 1e-3


@dataclass
class GmmAttentionState:
    kappa: Tensor                # (B, K) mixture means, in encoder positions
    sigma: Tensor | None = None  # (B, K) widths of the last step
    mixture: np.ndarray | None = None  # (B, K) mixture weights of the last step, for inspection

    @classmethod
    def initial(cls, batch: int, mixtures: int) -> "GmmAttentionState":
        return cls(Tensor(np.zeros((batch, mixtures))))


def mixture_alignment(mix_logits, kappa, sigma, n_positions: int) -> Tensor:
    """Normalised ``sum_k w_k exp(-(j - kappa_k)^2 / (2 sigma_k^2))`` over positions j.

    With ``w = softmax(mix_logits)`` this equals a joint softmax over (k, j) of
    ``mix_logits_k - (j - kappa_k)^2 / (2 sigma_k^2)`` summed over k, which is
    the form used here because it cannot underflow to 0/0.
    """
    B, K = kappa.shape
    j = np.arange(n_positions, dtype=np.float64)[None, None, :]
    diff = ops.sub(j, ops.reshape(kappa, (B, K, 1)))
    var2 = ops.mul(ops.square(ops.reshape(sigma, (B, K, 1))), 2.0)
    energy = ops.sub(ops.reshape(mix_logits, (B, K, 1)), ops.div(ops.square(diff), var2))
    joint = ops.softmax(ops.reshape(energy, (B, K * n_positions)), axis=-1)
    return ops.sum_(ops.reshape(joint, (B, K, n_positions)), axis=1)


def gmm_attention_step(store: ParameterStore, name: str, state: GmmAttentionState, query,
                       n_positions: int) -> tuple[Tensor, GmmAttentionState]:
    """Advance the mixture means from ``query`` and return weights over ``n_positions``."""
    if n_positions < 1:
        raise ValueError("attention over an empty encoder sequence")
    K = state.kappa.shape[1]
    raw = linear(store, name, query)
    mix_logits, delta_hat, sigma_hat = raw[:, :K], raw[:, K:2 * K], raw[:, 2 * K:]
    kappa = ops.add(state.kappa, ops.softplus(delta_hat))
    sigma = ops.add(ops.softplus(sigma_hat), SIGMA_FLOOR)
    weights = mixture_alignment(mix_logits, kappa, sigma, n_positions)
    z = mix_logits.data - mix_logits.data.max(axis=-1, keepdims=True)
    mixture = np.exp(z) / np.exp(z).sum(axis=-1, keepdims=True)
    return weights, GmmAttentionState(kappa, sigma, mixture)
