"""CNN-DFSMN-FC mel-domain enhancer that predicts a denoise mask.

Input is the log-compressed noisy mel; the sigmoid head yields the mask and the
training loss is computed on linear mel energies:
``mean((noisy * mask - clean) ** 2)``.
"""

from __future__ import annotations

import json
import logging
import os
from dataclasses import asdict, dataclass, field

import numpy as np

from .autodiff import AdamState, ParameterStore, Tape, Tensor, adam_step, clip_by_global_norm
from .autodiff import ops
from .autodiff.checkpoint import load_checkpoint, save_checkpoint
from .autodiff.nn import add_conv, add_linear, conv, glorot, linear
from .dsp import MelSpectrogram
from .maskkit import DenoiseMask

log = logging.getLogger(__name__)


@dataclass
class EnhancerConfig:
    n_mels: int = 40
    conv_layers: int = 2
    conv_kernel: int = 3
    conv_channels: int = 32
    dfsmn_layers: int = 3
    channels: int = 64
    hidden: int = 128
    lookback: int = 4     # N1
    lookahead: int = 2    # N2
    stride_back: int = 1  # s1
    stride_ahead: int = 1  # s2
    log_floor: float = 1e-5
    seed: int = 0

    @classmethod
    def from_dict(cls, d: dict | None) -> "EnhancerConfig":
        known = set(cls.__dataclass_fields__)
        return cls(**{k: v for k, v in (d or {}).items() if k in known})


@dataclass
class TrainConfig:
    steps: int = 1500
    lr: float = 2e-3
    batch_size: int = 16
    grad_clip: float = 0.0
    seed: int = 0
    log_every: int = 100

    @classmethod
    def from_dict(cls, d: dict | None) -> "TrainConfig":
        known = set(cls.__dataclass_fields__)
        return cls(**{k: v for k, v in (d or {}).items() if k in known})


@dataclass
class DfsmnLayer:
    """Parameter names of one DFSMN block inside a store."""

    prefix: str
    lookback: int
    lookahead: int
    stride_back: int = 1
    stride_ahead: int = 1

    def __post_init__(self):
        if self.lookback < 0 or self.lookahead < 0:
            raise ValueError("tap counts must be non-negative")
        if self.stride_back < 1 or self.stride_ahead < 1:
            raise ValueError("strides must be >= 1")


def memory_block(h, back_taps, ahead_taps, stride_back: int = 1, stride_ahead: int = 1) -> Tensor:
    """``p_t = h_t + sum_i a_i * h[t - i*s1] + sum_j c_j * h[t + j*s2]``.

    ``back_taps`` has shape (N1 + 1, C) for i = 0..N1, ``ahead_taps`` (N2, C) for
    j = 1..N2. ``h`` is (..., T, C); taps outside the sequence read zeros.
    """
    back_taps, ahead_taps = ops.as_tensor(back_taps), ops.as_tensor(ahead_taps)
    p = ops.as_tensor(h)
    for i in range(back_taps.shape[0]):
        p = ops.add(p, ops.mul(back_taps[i], ops.shift(h, i * stride_back, axis=-2)))
    for j in range(ahead_taps.shape[0]):
        p = ops.add(p, ops.mul(ahead_taps[j], ops.shift(h, -(j + 1) * stride_ahead, axis=-2)))
    return p


def dfsmn_forward(store: ParameterStore, layer: DfsmnLayer, x) -> Tensor:
    """Hidden expansion, linear projection, memory block and residual skip."""
    pre = layer.prefix
    h = ops.relu(linear(store, f"{pre}.expand", x))
    q = ops.matmul(h, store[f"{pre}.project"])
    p = memory_block(q, store[f"{pre}.back"], store[f"{pre}.ahead"],
                     layer.stride_back, layer.stride_ahead)
    return ops.add(x, p)


class EnhancerModel:
    def __init__(self, config: EnhancerConfig | None = None):
        self.config = cfg = config or EnhancerConfig()
        rng = np.random.default_rng(cfg.seed)
        self.params = store = ParameterStore()
        c_in = cfg.n_mels
        for i in range(cfg.conv_layers):
            add_conv(store, rng, f"conv{i}", cfg.conv_kernel, c_in, cfg.conv_channels)
            c_in = cfg.conv_channels
        add_linear(store, rng, "proj_in", c_in, cfg.channels)
        self.layers = []
        for i in range(cfg.dfsmn_layers):
            layer = DfsmnLayer(f"dfsmn{i}", cfg.lookback, cfg.lookahead,
                               cfg.stride_back, cfg.stride_ahead)
            add_linear(store, rng, f"{layer.prefix}.expand", cfg.channels, cfg.hidden)
            store.add(f"{layer.prefix}.project", glorot(rng, cfg.hidden, cfg.channels))
            store.add(f"{layer.prefix}.back", 0.1 * rng.standard_normal((cfg.lookback + 1, cfg.channels)))
            store.add(f"{layer.prefix}.ahead", 0.1 * rng.standard_normal((cfg.lookahead, cfg.channels)))
            self.layers.append(layer)
        store.add("head.w", 0.01 * glorot(rng, cfg.channels, cfg.n_mels))
        store.add("head.b", np.zeros(cfg.n_mels))
        # input standardisation, fitted from data; not trained
        self.input_mean = np.zeros(cfg.n_mels)
        self.input_std = np.ones(cfg.n_mels)

    def expected_parameter_count(self) -> int:
        cfg = self.config
        n = 0
        c_in = cfg.n_mels
        for _ in range(cfg.conv_layers):
            n += cfg.conv_kernel * c_in * cfg.conv_channels + cfg.conv_channels
            c_in = cfg.conv_channels
        n += c_in * cfg.channels + cfg.channels
        per_layer = (cfg.channels * cfg.hidden + cfg.hidden + cfg.hidden * cfg.channels
                     + (cfg.lookback + 1 + cfg.lookahead) * cfg.channels)
        n += cfg.dfsmn_layers * per_layer
        n += cfg.channels * cfg.n_mels + cfg.n_mels
        return n

    def parameter_count(self) -> int:
        return self.params.count()

    def fit_normalizer(self, noisy_mels: list[np.ndarray]) -> None:
        feats = np.concatenate([self.features(m) for m in noisy_mels], axis=0)
        self.input_mean = feats.mean(axis=0)
        self.input_std = np.maximum(feats.std(axis=0), 1e-3)

    def features(self, mel: np.ndarray) -> np.ndarray:
        return np.log(np.maximum(mel, self.config.log_floor))

    def forward(self, noisy: np.ndarray) -> Tensor:
        """Mask logits are squashed by the sigmoid; ``noisy`` is linear mel (B, T, n_mels)."""
        cfg = self.config
        if noisy.shape[-1] != cfg.n_mels:
            raise ValueError(f"model expects {cfg.n_mels} mel channels, got {noisy.shape[-1]}")
        x = Tensor((self.features(noisy) - self.input_mean) / self.input_std)
        h = x
        pad = cfg.conv_kernel // 2
        for i in range(cfg.conv_layers):
            h = ops.relu(conv(self.params, f"conv{i}", h, padding=pad))
        h = linear(self.params, "proj_in", h)
        for layer in self.layers:
            h = dfsmn_forward(self.params, layer, h)
        return ops.sigmoid(linear(self.params, "head", h))

    def loss(self, noisy: np.ndarray, clean: np.ndarray) -> Tensor:
        mask = self.forward(noisy)
        return ops.mse(ops.mul(Tensor(noisy), mask), Tensor(clean))

    def save(self, path: str | os.PathLike, meta: dict[str, str] | None = None) -> None:
        arrays = self.params.state_dict()
        arrays["buf:input_mean"] = self.input_mean
        arrays["buf:input_std"] = self.input_std
        info = {"kind": "enhancer", "config": json.dumps(asdict(self.config), sort_keys=True)}
        info.update(meta or {})
        save_checkpoint(path, arrays, info)

    @classmethod
    def load(cls, path: str | os.PathLike) -> "EnhancerModel":
        arrays, meta = load_checkpoint(path)
        if meta.get("kind") != "enhancer":
            raise ValueError(f"{path} is not an enhancer checkpoint")
        model = cls(EnhancerConfig(**json.loads(meta["config"])))
        model.input_mean = arrays.pop("buf:input_mean")
        model.input_std = arrays.pop("buf:input_std")
        model.params.load_state_dict(arrays)
        return model


def enhance(model: EnhancerModel, noisy: MelSpectrogram | np.ndarray) -> DenoiseMask:
    bins = noisy.bins if isinstance(noisy, MelSpectrogram) else np.asarray(noisy, dtype=float)
    if bins.ndim != 2:
        raise ValueError("enhance expects a single frames x n_mels grid")
    mask = model.forward(bins[None]).data[0]
    return DenoiseMask(mask, "predicted")


def buckets_by_length(n_frames: list[int]) -> dict[int, list[int]]:
    out: dict[int, list[int]] = {}
    for i, n in enumerate(n_frames):
        out.setdefault(n, []).append(i)
    return out


def sample_batch(rng: np.random.Generator, buckets: dict[int, list[int]],
                 batch_size: int) -> list[int]:
    """Indices of one equal-length batch; buckets are drawn proportionally to size."""
    keys = sorted(buckets)
    sizes = np.array([len(buckets[k]) for k in keys], dtype=float)
    key = keys[int(rng.choice(len(keys), p=sizes / sizes.sum()))]
    members = buckets[key]
    if len(members) <= batch_size:
        return list(members)
    return sorted(rng.choice(members, size=batch_size, replace=False).tolist())


def train_enhancer(model: EnhancerModel, pairs: list[tuple[np.ndarray, np.ndarray]],
                   config: TrainConfig | None = None, checkpoint: str | os.PathLike | None = None
                   ) -> list[float]:
    """Adam on the masked-MSE loss; returns the per-step loss curve."""
    cfg = config or TrainConfig()
    if not pairs:
        raise ValueError("empty training set")
    for noisy, clean in pairs:
        if np.shape(noisy) != np.shape(clean):
            raise ValueError("noisy/clean shapes differ within a pair")
    model.fit_normalizer([p[0] for p in pairs])
    rng = np.random.default_rng(cfg.seed)
    buckets = buckets_by_length([np.shape(p[0])[0] for p in pairs])
    names = model.params.names()
    tensors = model.params.tensors()
    arrays = model.params.arrays()
    state = AdamState()
    losses = []
    for step in range(cfg.steps):
        idx = sample_batch(rng, buckets, cfg.batch_size)
        noisy = np.stack([pairs[i][0] for i in idx])
        clean = np.stack([pairs[i][1] for i in idx])
        with Tape() as tape:
            loss = model.loss(noisy, clean)
        value = float(loss.data)
        if not np.isfinite(value):
            raise FloatingPointError(f"enhancer loss became non-finite at step {step}")
        losses.append(value)
        grads = dict(zip(names, tape.gradient(loss, tensors)))
        if cfg.grad_clip:
            clip_by_global_norm(grads, cfg.grad_clip)
        adam_step(arrays, grads, state, lr=cfg.lr)
        if cfg.log_every and step % cfg.log_every == 0:
            log.info("enhancer step %d loss %.6g", step, value)
    if checkpoint is not None:
        model.save(checkpoint)
    return losses
