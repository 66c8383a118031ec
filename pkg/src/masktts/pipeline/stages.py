"""The three stages: multi-speaker pretraining, noisy low-resource adaptation, clean-mask inference."""

from __future__ import annotations

import dataclasses
import logging
import os
from dataclasses import dataclass, field

import numpy as np

from .. import maskkit, speaker
from ..autodiff import AdamState, Tape, adam_step, clip_by_global_norm
from ..enhancer import EnhancerModel, enhance
from ..maskkit import DenoiseMask
from ..speaker import SpeakerEmbedding
from ..ttscore.model import SymbolSequence, TtsModel, stop_targets, tts_loss
from .config import RunConfig, TtsTrainSettings
from .corpus import Corpus, UtterancePair

log = logging.getLogger(__name__)


class LineageError(ValueError):
    """A checkpoint was handed to a stage it was not produced for."""


@dataclass
class TtsExample:
    utt_id: str
    symbols: np.ndarray              # (J,)
    spk: np.ndarray                  # (spk_dim,)
    noise_rep: np.ndarray | None     # (T, n_mels), normalised mask
    before: np.ndarray               # (T, n_mels) log-mel target of the projection
    after: np.ndarray                # (T, n_mels) log-mel target after the Post-Net

    @property
    def key(self) -> tuple[int, int]:
        return self.symbols.size, self.before.shape[0]


@dataclass
class StageResult:
    model: TtsModel
    meta: dict[str, str]
    losses: list[float] = field(default_factory=list)
    embeddings: dict[str, SpeakerEmbedding] = field(default_factory=dict)


def log_mel(bins, floor: float = 1e-5) -> np.ndarray:
    return np.log(np.maximum(np.asarray(bins, dtype=np.float64), floor))


def conditioning_mask(utt: UtterancePair, mode: str, enhancer: EnhancerModel | None) -> DenoiseMask:
    """Clean records get the all-ones mask; noisy ones the enhancer's (or the ideal) mask."""
    if utt.is_clean:
        return maskkit.clean_mask(*utt.clean.bins.shape)
    if mode == "ideal":
        return utt.mask
    if enhancer is None:
        raise ValueError("predicted-mask mode needs a trained enhancer")
    return enhance(enhancer, utt.noisy.bins)


def speaker_centroids(mels: dict[str, list[np.ndarray]], seed: int = 0
                      ) -> dict[str, SpeakerEmbedding]:
    """Speaker-level toy embeddings from lists of log-mels."""
    return {spk: speaker.centroid([speaker.toy_embed(m, projection_seed=seed) for m in ms])
            for spk, ms in mels.items()}


def pretrain_examples(utts: list[UtterancePair], embeddings: dict[str, SpeakerEmbedding],
                      run: RunConfig, enhancer: EnhancerModel | None = None,
                      baseline: bool = False) -> list[TtsExample]:
    floor = run.dsp.log_floor
    out = []
    for u in utts:
        if baseline and not u.is_clean:
            continue
        rep = None
        if not baseline:
            rep = maskkit.normalize_for_conditioning(
                conditioning_mask(u, run.pipeline.mask_mode, enhancer))
        out.append(TtsExample(u.utt_id, np.array(u.symbols.ids), embeddings[u.speaker_id].vector,
                               rep, log_mel(u.clean.bins, floor), log_mel(u.noisy.bins, floor)))
    return out


def adapt_examples(utts: list[UtterancePair], embedding: SpeakerEmbedding, run: RunConfig,
                   enhancer: EnhancerModel | None = None, baseline: bool = False
                   ) -> list[TtsExample]:
    """Before target is the denoised mel; after target the noisy mel (denoised again in baseline mode)."""
    floor = run.dsp.log_floor
    out = []
    for u in utts:
        mask = conditioning_mask(u, run.pipeline.mask_mode, enhancer)
        denoised = log_mel(maskkit.apply_mask(u.noisy.bins, mask), floor)
        if baseline:
            out.append(TtsExample(u.utt_id, np.array(u.symbols.ids), embedding.vector, None,
                                  denoised, denoised))
        else:
            out.append(TtsExample(u.utt_id, np.array(u.symbols.ids), embedding.vector,
                                  maskkit.normalize_for_conditioning(mask), denoised,
                                  log_mel(u.noisy.bins, floor)))
    return out


def _buckets(examples: list[TtsExample]) -> dict[tuple[int, int], list[int]]:
    out: dict[tuple[int, int], list[int]] = {}
    for i, ex in enumerate(examples):
        out.setdefault(ex.key, []).append(i)
    return out


def _batch(model: TtsModel, examples: list[TtsExample], idx: list[int], rng=None):
    ex = [examples[i] for i in idx]
    ids = np.stack([e.symbols for e in ex])
    spk = np.stack([e.spk for e in ex])
    rep = None if ex[0].noise_rep is None else np.stack([e.noise_rep for e in ex])
    before = np.stack([e.before for e in ex])
    after = np.stack([e.after for e in ex])
    out = model.forward(ids, spk, rep, before, rng=rng)
    stop = stop_targets(len(ex), before.shape[1], model.config.reduction)
    return tts_loss(out, before, after, stop)


def train_tts(model: TtsModel, examples: list[TtsExample], settings: TtsTrainSettings,
              seed: int = 0) -> list[float]:
    """Adam over equal-length batches; returns the per-step total loss."""
    if not examples:
        raise ValueError("no training examples")
    rng = np.random.default_rng(seed)
    buckets = _buckets(examples)
    keys = sorted(buckets)
    sizes = np.array([len(buckets[k]) for k in keys], dtype=float)
    names = model.params.names()
    tensors = model.params.tensors()
    arrays = model.params.arrays()
    state = AdamState()
    losses = []
    for step in range(settings.steps):
        members = buckets[keys[int(rng.choice(len(keys), p=sizes / sizes.sum()))]]
        if len(members) > settings.batch_size:
            members = sorted(rng.choice(members, settings.batch_size, replace=False).tolist())
        with Tape() as tape:
            loss, parts = _batch(model, examples, members, rng)
        if not np.isfinite(parts["total"]):
            raise FloatingPointError(f"TTS loss became non-finite at step {step}")
        losses.append(parts["total"])
        grads = dict(zip(names, tape.gradient(loss, tensors)))
        if settings.grad_clip:
            clip_by_global_norm(grads, settings.grad_clip)
        adam_step(arrays, grads, state, lr=settings.lr)
        if settings.log_every and step % settings.log_every == 0:
            log.info("tts step %d loss %.5f (before %.5f after %.5f stop %.5f)", step,
                     parts["total"], parts["before"], parts["after"], parts["stop"])
    return losses


def evaluate_loss(model: TtsModel, examples: list[TtsExample], batch_size: int = 32
                  ) -> dict[str, float]:
    """Teacher-forced loss components averaged over ``examples``."""
    if not examples:
        raise ValueError("no examples to evaluate")
    totals = {"before": 0.0, "after": 0.0, "stop": 0.0, "total": 0.0}
    for idx in _buckets(examples).values():
        for start in range(0, len(idx), batch_size):
            chunk = idx[start:start + batch_size]
            _, parts = _batch(model, examples, chunk)
            for k in totals:
                totals[k] += parts[k] * len(chunk)
    return {k: v / len(examples) for k, v in totals.items()}


def _clone(model: TtsModel) -> TtsModel:
    twin = TtsModel(model.config)
    twin.params.load_state_dict(model.params.state_dict())
    return twin


def run_pretrain(corpus: Corpus, run: RunConfig, enhancer: EnhancerModel | None = None,
                 seed: int = 0, checkpoint: str | os.PathLike | None = None,
                 settings: TtsTrainSettings | None = None) -> StageResult:
    """Train the TTS model on all pretraining speakers' clean and noisy records."""
    pcfg = run.pipeline
    baseline = pcfg.baseline
    utts = corpus.select(split="train")
    if not utts:
        raise ValueError("corpus has no training records")
    clean_by_spk: dict[str, list[np.ndarray]] = {}
    for u in utts:
        if u.is_clean:
            clean_by_spk.setdefault(u.speaker_id, []).append(log_mel(u.clean.bins, run.dsp.log_floor))
    missing = {u.speaker_id for u in utts} - set(clean_by_spk)
    if missing:
        raise ValueError(f"speakers without clean records: {sorted(missing)}")
    embeddings = speaker_centroids(clean_by_spk, pcfg.embed_seed)
    examples = pretrain_examples(utts, embeddings, run, enhancer, baseline)

    tts_cfg = dataclasses.replace(run.tts, seed=seed, noise_conditioning=not baseline,
                                  spk_dim=next(iter(embeddings.values())).dim)
    model = TtsModel(tts_cfg)
    model.set_output_bias(np.mean([e.before.mean(axis=0) for e in examples], axis=0))
    losses = train_tts(model, examples, settings or pcfg.pretrain, seed)
    meta = {"stage": "pretrain", "lineage": "pretrain", "speakers": ",".join(sorted(embeddings)),
            "baseline": str(int(baseline)), "mask_mode": pcfg.mask_mode, "seed": str(seed)}
    if checkpoint is not None:
        model.save(checkpoint, meta)
    return StageResult(model, meta, losses, embeddings)


def run_adapt(pretrained: TtsModel, meta: dict[str, str], utts: list[UtterancePair],
              run: RunConfig, enhancer: EnhancerModel | None = None, seed: int = 0,
              checkpoint: str | os.PathLike | None = None,
              settings: TtsTrainSettings | None = None) -> StageResult:
    """Fine-tune every weight on one new speaker's noisy utterances.

    The pretrained model is left untouched; the adapted copy is returned.
    """
    if meta.get("stage") != "pretrain":
        raise LineageError(f"adaptation needs a pretrain checkpoint, got stage {meta.get('stage')!r}")
    if bool(int(meta.get("baseline", "0"))) != run.pipeline.baseline:
        raise LineageError("baseline flag differs between pretraining and adaptation")
    if not utts:
        raise ValueError("no adaptation data")
    speakers = {u.speaker_id for u in utts}
    if len(speakers) != 1:
        raise ValueError(f"adaptation data must come from one speaker, got {sorted(speakers)}")
    new_id = speakers.pop()
    if new_id in meta.get("speakers", "").split(","):
        raise ValueError(f"speaker {new_id!r} was seen during pretraining")
    if any(u.is_clean for u in utts):
        raise ValueError("adaptation data must be noisy recordings")
    settings = settings or run.pipeline.adapt

    floor = run.dsp.log_floor
    denoised = [log_mel(maskkit.apply_mask(u.noisy.bins,
                                           conditioning_mask(u, run.pipeline.mask_mode, enhancer)),
                        floor) for u in utts]
    embedding = speaker_centroids({new_id: denoised}, run.pipeline.embed_seed)[new_id]
    examples = adapt_examples(utts, embedding, run, enhancer, run.pipeline.baseline)
    model = _clone(pretrained)
    losses = train_tts(model, examples, settings, seed) if settings.steps > 0 else []
    out_meta = dict(meta, stage="adapt", lineage=meta["lineage"] + ">adapt", adapted=new_id,
                    adapt_seed=str(seed))
    if checkpoint is not None:
        model.save(checkpoint, out_meta)
    return StageResult(model, out_meta, losses, {new_id: embedding})


@dataclass
class Synthesis:
    before_mel: np.ndarray           # (T, n_mels) log-mel
    after_mel: np.ndarray
    alignment: np.ndarray            # (decoder steps, symbols)
    kappa: np.ndarray                # (decoder steps, mixtures)
    conditioning: np.ndarray | None  # (T, n_mels) normalised mask actually used
    hit_max_frames: bool = False

    @property
    def n_frames(self) -> int:
        return self.after_mel.shape[0]


def run_infer(model: TtsModel, symbols: SymbolSequence | list[int], spk: SpeakerEmbedding,
              mask_mode: str = "clean", reference_mask: DenoiseMask | np.ndarray | None = None,
              n_frames: int | None = None, max_frames: int | None = None) -> Synthesis:
    """Free-running synthesis conditioned on the clean mask or on a supplied reference mask."""
    if not isinstance(symbols, SymbolSequence):
        symbols = SymbolSequence(symbols, model.config.n_symbols)
    n = model.config.n_mels
    if mask_mode == "clean":
        rep = maskkit.normalize_for_conditioning(maskkit.clean_mask(1, n))
    elif mask_mode == "reference":
        if reference_mask is None:
            raise ValueError("reference mode needs a mask")
        rep = maskkit.normalize_for_conditioning(reference_mask)
    else:
        raise ValueError(f"unknown mask mode {mask_mode!r}")
    if not model.config.noise_conditioning:
        rep = None
    memory = model.encode(np.array(symbols.ids)[None], spk.vector[None])
    out = model.decode(memory, rep, n_frames=n_frames, max_frames=max_frames)
    cond = None
    if rep is not None:
        cond = rep[np.minimum(np.arange(out.n_frames), rep.shape[0] - 1)]
    return Synthesis(out.before_mel.data[0], out.after_mel.data[0], out.alignments[0],
                     out.kappa[0], cond, out.hit_max_frames)
