"""Speaker- and noise-conditioned Tacotron-style acoustic model.

Encoder: symbol embedding -> dense pre-net -> highway stack (speaker projection
concatenated to every layer input) -> bidirectional GRU initialised from a second
speaker projection; the raw speaker embedding is appended to every output.

Decoder: autoregressive pre-net -> attention GRU -> GMM attention -> decoder GRU
-> linear projection of ``r`` log-mel frames plus stop logits. The Post-Net sees
the projected frames concatenated with the normalised noise representation and
adds its output as a residual, so noise information only enters after the
projection.
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field

import numpy as np

from ..autodiff import ParameterStore, Tensor
from ..autodiff import ops
from ..autodiff.checkpoint import load_checkpoint, save_checkpoint
from ..autodiff.nn import add_conv, add_gru, add_linear, conv, glorot, gru_input, gru_step, linear
from .attention import GmmAttentionState, gmm_attention_step

N_LETTERS = 16
START, END = N_LETTERS, N_LETTERS + 1


@dataclass
class TtsConfig:
    n_symbols: int = N_LETTERS + 2
    n_mels: int = 40
    spk_dim: int = 32
    embed_dim: int = 32
    enc_prenet: int = 64
    spk_highway: int = 16
    highway_layers: int = 2
    enc_rnn: int = 32
    dec_prenet: int = 64
    dec_prenet_layers: int = 2
    att_rnn: int = 128
    dec_rnn: int = 128
    mixtures: int = 3
    reduction: int = 2
    postnet_channels: int = 64
    postnet_kernel: int = 5
    noise_conditioning: bool = True
    init_kappa_step: float = 0.5
    init_sigma: float = 1.0
    prenet_dropout: float = 0.0
    max_frames: int = 200
    seed: int = 0

    @classmethod
    def from_dict(cls, d: dict | None) -> "TtsConfig":
        known = set(cls.__dataclass_fields__)
        return cls(**{k: v for k, v in (d or {}).items() if k in known})

    @property
    def memory_dim(self) -> int:
        return 2 * self.enc_rnn + self.spk_dim


@dataclass
class SymbolSequence:
    ids: list[int]
    n_symbols: int = N_LETTERS + 2

    def __post_init__(self):
        self.ids = [int(i) for i in self.ids]
        if not self.ids:
            raise ValueError("empty symbol sequence")
        if min(self.ids) < 0 or max(self.ids) >= self.n_symbols:
            raise ValueError(f"symbol ids must lie in [0, {self.n_symbols})")

    @classmethod
    def from_text(cls, letters: list[int]) -> "SymbolSequence":
        """Wrap letter ids (0..15) with the start and end markers."""
        return cls([START, *letters, END])

    def __len__(self) -> int:
        return len(self.ids)


@dataclass
class DecoderOutput:
    before_mel: Tensor          # (B, T, n_mels), log domain
    after_mel: Tensor
    stop_logits: Tensor         # (B, T)
    alignments: np.ndarray      # (B, steps, J)
    kappa: np.ndarray           # (B, steps, K)
    lengths: list[int] = field(default_factory=list)
    hit_max_frames: bool = False

    @property
    def n_frames(self) -> int:
        return self.before_mel.shape[1]


def _inv_softplus(y: float) -> float:
    return float(np.log(np.expm1(y)))


class TtsModel:
    def __init__(self, config: TtsConfig | None = None):
        self.config = cfg = config or TtsConfig()
        rng = np.random.default_rng(cfg.seed)
        self.params = p = ParameterStore()
        p.add("embed", rng.standard_normal((cfg.n_symbols, cfg.embed_dim)) * 0.3)
        add_linear(p, rng, "enc.prenet", cfg.embed_dim, cfg.enc_prenet)
        add_linear(p, rng, "enc.spk_a", cfg.spk_dim, cfg.spk_highway)
        add_linear(p, rng, "enc.spk_b", cfg.spk_dim, 2 * cfg.enc_rnn)
        for layer in range(cfg.highway_layers):
            for gate, bias in (("h", 0.0), ("t", -1.0)):
                name = f"enc.hw{layer}.{gate}"
                p.add(f"{name}.w", glorot(rng, cfg.enc_prenet, cfg.enc_prenet))
                p.add(f"{name}.wc", glorot(rng, cfg.spk_highway, cfg.enc_prenet))
                p.add(f"{name}.b", np.full(cfg.enc_prenet, bias))
        add_gru(p, rng, "enc.fw", cfg.enc_prenet, cfg.enc_rnn)
        add_gru(p, rng, "enc.bw", cfg.enc_prenet, cfg.enc_rnn)

        n_in = cfg.n_mels
        for i in range(cfg.dec_prenet_layers):
            add_linear(p, rng, f"dec.prenet{i}", n_in, cfg.dec_prenet)
            n_in = cfg.dec_prenet
        mem = cfg.memory_dim
        add_gru(p, rng, "dec.att_rnn", n_in + mem, cfg.att_rnn)
        K = cfg.mixtures
        p.add("dec.gmm.w", 0.01 * glorot(rng, cfg.att_rnn, 3 * K))
        p.add("dec.gmm.b", np.concatenate([np.zeros(K),
                                           np.full(K, _inv_softplus(cfg.init_kappa_step)),
                                           np.full(K, _inv_softplus(cfg.init_sigma))]))
        add_gru(p, rng, "dec.rnn", cfg.att_rnn + mem, cfg.dec_rnn)
        add_linear(p, rng, "dec.proj", cfg.dec_rnn + mem, cfg.reduction * cfg.n_mels)
        add_linear(p, rng, "dec.stop", cfg.dec_rnn + mem, cfg.reduction)

        post_in = 2 * cfg.n_mels if cfg.noise_conditioning else cfg.n_mels
        add_conv(p, rng, "post.conv0", cfg.postnet_kernel, post_in, cfg.postnet_channels)
        add_conv(p, rng, "post.conv1", cfg.postnet_kernel, cfg.postnet_channels, cfg.n_mels)
        p["post.conv1.w"].data *= 0.1

    # ------------------------------------------------------------------ encoder

    def encode(self, symbols, spk=None, capture: dict | None = None) -> Tensor:
        """Encoder memory (B, J, D); ``spk=None`` runs the unconditioned path."""
        cfg, p = self.config, self.params
        ids = np.atleast_2d(np.asarray(getattr(symbols, "ids", symbols), dtype=np.int64))
        if ids.min() < 0 or ids.max() >= cfg.n_symbols:
            raise ValueError("symbol id outside the alphabet")
        B, J = ids.shape
        x = ops.relu(linear(p, "enc.prenet", p["embed"][ids]))
        cond = None
        if spk is not None:
            spk = ops.as_tensor(np.atleast_2d(spk) if not isinstance(spk, Tensor) else spk)
            if spk.shape != (B, cfg.spk_dim):
                raise ValueError(f"speaker embedding must have shape ({B}, {cfg.spk_dim}), "
                                 f"got {spk.shape}")
            cond = ops.reshape(linear(p, "enc.spk_a", spk), (B, 1, cfg.spk_highway))
        for layer in range(cfg.highway_layers):
            h = self._cond_dense(f"enc.hw{layer}.h", x, cond)
            t = self._cond_dense(f"enc.hw{layer}.t", x, cond)
            gate = ops.sigmoid(t)
            x = ops.add(ops.mul(ops.relu(h), gate), ops.mul(x, ops.sub(1.0, gate)))
        if capture is not None:
            capture["enc.highway"] = x.data
        H = cfg.enc_rnn
        if cond is not None:
            init = ops.tanh(linear(p, "enc.spk_b", spk))
            h_fw, h_bw = init[:, :H], init[:, H:]
        else:
            h_fw = h_bw = Tensor(np.zeros((B, H)))
        xg_fw = gru_input(p, "enc.fw", x)
        xg_bw = gru_input(p, "enc.bw", x)
        outs_fw, outs_bw = [], [None] * J
        for t in range(J):
            h_fw = gru_step(p, "enc.fw", xg_fw[:, t], h_fw)
            outs_fw.append(ops.reshape(h_fw, (B, 1, H)))
            h_bw = gru_step(p, "enc.bw", xg_bw[:, J - 1 - t], h_bw)
            outs_bw[J - 1 - t] = ops.reshape(h_bw, (B, 1, H))
        memory = ops.concat([ops.concat(outs_fw, axis=1), ops.concat(outs_bw, axis=1)], axis=-1)
        if spk is not None:
            tiled = ops.mul(ops.reshape(spk, (B, 1, cfg.spk_dim)), np.ones((1, J, 1)))
            memory = ops.concat([memory, tiled], axis=-1)
        if capture is not None:
            capture["enc.memory"] = memory.data
        return memory

    def _cond_dense(self, name: str, x, cond):
        p = self.params
        out = ops.add(ops.matmul(x, p[f"{name}.w"]), p[f"{name}.b"])
        if cond is not None:
            out = ops.add(out, ops.matmul(cond, p[f"{name}.wc"]))
        return out

    # ------------------------------------------------------------------ decoder

    def _prenet(self, frames, keep_masks=None):
        h = frames
        for i in range(self.config.dec_prenet_layers):
            h = ops.relu(linear(self.params, f"dec.prenet{i}", h))
            if keep_masks is not None:
                h = ops.mul(h, keep_masks[i])
        return h

    def _dropout_masks(self, rng, shape_prefix):
        q = self.config.prenet_dropout
        if rng is None or q <= 0:
            return None
        keep = 1.0 - q
        return [(rng.random((*shape_prefix, self.config.dec_prenet)) < keep) / keep
                for _ in range(self.config.dec_prenet_layers)]

    def decode(self, memory, noise_rep=None, teacher=None, n_frames: int | None = None,
               max_frames: int | None = None, capture: dict | None = None,
               rng: np.random.Generator | None = None) -> DecoderOutput:
        """Run the decoder loop and the Post-Net.

        With ``teacher`` (B, T, n_mels) the previous frame fed back is taken from
        it and ``noise_rep`` must cover all T frames. Without it the projected
        frames are fed back; generation stops when a stop probability exceeds 0.5,
        after ``n_frames`` frames if given, or at ``max_frames``. In free-running
        mode ``noise_rep`` may be shorter than the output: its last frame repeats.
        """
        cfg, p = self.config, self.params
        memory = ops.as_tensor(memory)
        B, J, D = memory.shape
        if J < 1:
            raise ValueError("empty encoder sequence")
        if D != cfg.memory_dim:
            raise ValueError(f"memory width {D} != configured {cfg.memory_dim}")
        r, n = cfg.reduction, cfg.n_mels
        max_frames = cfg.max_frames if max_frames is None else max_frames
        if teacher is not None:
            teacher = np.asarray(teacher, dtype=np.float64)
            T = teacher.shape[1]
            if cfg.noise_conditioning:
                if noise_rep is None or np.shape(noise_rep)[-2] != T:
                    raise ValueError("noise representation must have one frame per target frame")
            steps = -(-T // r)
            prev = np.zeros((B, steps, n))
            prev[:, 1:] = teacher[:, r - 1:(steps - 1) * r:r]
            pre_all = self._prenet(Tensor(prev), self._dropout_masks(rng, (B, steps)))
        else:
            limit = max_frames if n_frames is None else n_frames
            steps = -(-limit // r)

        att_h = Tensor(np.zeros((B, cfg.att_rnn)))
        dec_h = Tensor(np.zeros((B, cfg.dec_rnn)))
        context = Tensor(np.zeros((B, D)))
        state = GmmAttentionState.initial(B, cfg.mixtures)
        xg_att = None
        frames, stops, aligns, kappas = [], [], [], []
        prev_frame = Tensor(np.zeros((B, n)))
        done = np.zeros(B, dtype=bool)
        lengths = [0] * B
        for s in range(steps):
            if teacher is not None:
                pre = pre_all[:, s]
            else:
                pre = self._prenet(prev_frame)
            xg_att = gru_input(p, "dec.att_rnn", ops.concat([pre, context], axis=-1))
            att_h = gru_step(p, "dec.att_rnn", xg_att, att_h)
            weights, state = gmm_attention_step(p, "dec.gmm", state, att_h, J)
            context = ops.reshape(ops.matmul(ops.reshape(weights, (B, 1, J)), memory), (B, D))
            dec_in = gru_input(p, "dec.rnn", ops.concat([att_h, context], axis=-1))
            dec_h = gru_step(p, "dec.rnn", dec_in, dec_h)
            out_in = ops.concat([dec_h, context], axis=-1)
            step_frames = ops.reshape(linear(p, "dec.proj", out_in), (B, r, n))
            step_stop = linear(p, "dec.stop", out_in)
            frames.append(step_frames)
            stops.append(step_stop)
            aligns.append(weights.data)
            kappas.append(state.kappa.data)
            if capture is not None:
                capture[f"dec.att_h.{s}"] = att_h.data
                capture[f"dec.align.{s}"] = weights.data
                capture[f"dec.context.{s}"] = context.data
                capture[f"dec.dec_h.{s}"] = dec_h.data
                capture[f"dec.frames.{s}"] = step_frames.data
                capture[f"dec.stop.{s}"] = step_stop.data
            if teacher is None:
                prev_frame = step_frames[:, r - 1]
                for b in range(B):
                    if not done[b]:
                        lengths[b] = (s + 1) * r
                        if n_frames is None and np.any(step_stop.data[b] > 0.0):
                            done[b] = True
                if n_frames is None and done.all():
                    break

        before = ops.concat(frames, axis=1)
        stop_logits = ops.concat(stops, axis=1)
        if teacher is not None:
            T_out = T
            lengths = [T] * B
            hit_max = False
        else:
            T_out = min(max(lengths), max_frames if n_frames is None else n_frames)
            lengths = [min(L, T_out) for L in lengths]
            hit_max = n_frames is None and not done.all()
        if before.shape[1] != T_out:
            before = before[:, :T_out]
            stop_logits = stop_logits[:, :T_out]
        if capture is not None:
            capture["before_mel"] = before.data
        rep = None
        if cfg.noise_conditioning:
            rep = align_noise_rep(noise_rep, B, T_out, n)
        after = self.postnet(before, rep, capture)
        return DecoderOutput(before, after, stop_logits, np.stack(aligns, axis=1),
                             np.stack(kappas, axis=1), lengths, hit_max)

    def postnet(self, before, noise_rep=None, capture: dict | None = None) -> Tensor:
        cfg = self.config
        pad = cfg.postnet_kernel // 2
        x = before
        if cfg.noise_conditioning:
            if noise_rep is None:
                raise ValueError("noise-conditioned Post-Net needs a noise representation")
            x = ops.concat([before, Tensor(noise_rep)], axis=-1)
        if capture is not None:
            capture["postnet.input"] = x.data
        h = ops.tanh(conv(self.params, "post.conv0", x, padding=pad))
        residual = conv(self.params, "post.conv1", h, padding=pad)
        after = ops.add(before, residual)
        if capture is not None:
            capture["postnet.residual"] = residual.data
            capture["after_mel"] = after.data
        return after

    def forward(self, symbols, spk, noise_rep, teacher, capture: dict | None = None,
                rng: np.random.Generator | None = None) -> DecoderOutput:
        memory = self.encode(symbols, spk, capture)
        return self.decode(memory, noise_rep, teacher=teacher, capture=capture, rng=rng)

    def set_output_bias(self, mean_frame: np.ndarray) -> None:
        """Start the projection at the data mean so early steps are not spent on the offset."""
        self.params["dec.proj.b"].data[...] = np.tile(mean_frame, self.config.reduction)

    # -------------------------------------------------------------- persistence

    def save(self, path: str | os.PathLike, meta: dict[str, str] | None = None) -> None:
        info = {"kind": "tts", "config": json.dumps(asdict(self.config), sort_keys=True)}
        info.update(meta or {})
        save_checkpoint(path, self.params.state_dict(), info)

    @classmethod
    def load(cls, path: str | os.PathLike) -> tuple["TtsModel", dict[str, str]]:
        arrays, meta = load_checkpoint(path)
        if meta.get("kind") != "tts":
            raise ValueError(f"{path} is not a TTS checkpoint")
        model = cls(TtsConfig(**json.loads(meta["config"])))
        model.params.load_state_dict(arrays)
        return model, meta


def align_noise_rep(noise_rep, batch: int, frames: int, n_mels: int) -> np.ndarray:
    """Broadcast/extend a (T', n) or (B, T', n) representation to (B, frames, n)."""
    if noise_rep is None:
        raise ValueError("noise representation required")
    rep = np.asarray(noise_rep, dtype=np.float64)
    if rep.ndim == 2:
        rep = np.broadcast_to(rep, (batch, *rep.shape))
    if rep.ndim != 3 or rep.shape[-1] != n_mels or rep.shape[1] < 1:
        raise ValueError(f"bad noise representation shape {rep.shape}")
    if rep.shape[0] != batch:
        rep = np.broadcast_to(rep, (batch, *rep.shape[1:]))
    idx = np.minimum(np.arange(frames), rep.shape[1] - 1)
    return rep[:, idx]


def stop_targets(batch: int, frames: int, reduction: int) -> np.ndarray:
    target = np.zeros((batch, frames))
    target[:, max(0, frames - reduction):] = 1.0
    return target


def tts_loss(out: DecoderOutput, before_target, after_target, stop_target
             ) -> tuple[Tensor, dict[str, float]]:
    """Before loss + after loss + stop BCE; returns the total and its parts."""
    before_target = np.asarray(before_target, dtype=np.float64)
    after_target = np.asarray(after_target, dtype=np.float64)
    stop_target = np.asarray(stop_target, dtype=np.float64)
    if before_target.shape != out.before_mel.shape or after_target.shape != out.after_mel.shape:
        raise ValueError("target shapes do not match decoder output")
    if stop_target.shape != out.stop_logits.shape:
        raise ValueError("stop target shape does not match stop logits")
    before = ops.mse(out.before_mel, before_target)
    after = ops.mse(out.after_mel, after_target)
    stop = ops.bce(out.stop_logits, stop_target)
    total = ops.add(ops.add(before, after), stop)
    return total, {"before": float(before.data), "after": float(after.data),
                   "stop": float(stop.data), "total": float(total.data)}
