"""Evaluation harnesses: SI-SDR per input SNR, speaker similarity, oracle distance."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .. import dsp, maskkit, speaker
from ..enhancer import EnhancerModel, enhance
from ..speaker import SpeakerEmbedding
from ..ttscore.model import SymbolSequence, TtsModel
from .corpus import UtterancePair
from .stages import conditioning_mask, log_mel, run_infer, speaker_centroids

TABLE_SNRS = (-5.0, 0.0, 5.0)


@dataclass
class SiSdrRow:
    snr_db: float
    noisy: float      # SI-SDR of the unprocessed noisy mel
    enhanced: float   # SI-SDR after applying the predicted mask
    count: int

    @property
    def gain(self) -> float:
        return self.enhanced - self.noisy


def eval_enhancer(masker: EnhancerModel | Callable[[UtterancePair], np.ndarray],
                  utts: list[UtterancePair], snr_levels=TABLE_SNRS) -> list[SiSdrRow]:
    """Mean SI-SDR against the clean mel, per input SNR group.

    ``masker`` is a trained enhancer or any callable mapping a record to a mask grid,
    e.g. ``lambda u: u.mask.values`` for the ideal-mask upper bound.
    """
    if isinstance(masker, EnhancerModel):
        model = masker
        masker = lambda u: enhance(model, u.noisy.bins).values  # noqa: E731
    rows = []
    for snr in snr_levels:
        group = [u for u in utts if u.snr_db is not None and np.isclose(u.snr_db, snr)]
        if not group:
            raise ValueError(f"no test utterances at {snr} dB")
        noisy = [dsp.si_sdr_mel(u.clean, u.noisy) for u in group]
        enhanced = [dsp.si_sdr_mel(u.clean, maskkit.apply_mask(u.noisy.bins, masker(u)))
                    for u in group]
        rows.append(SiSdrRow(float(snr), float(np.mean(noisy)), float(np.mean(enhanced)), len(group)))
    return rows


SISDR_HEADER = ["snr_db", "noisy_si_sdr", "enhanced_si_sdr"]


def sisdr_rows(rows: list[SiSdrRow]) -> list[list]:
    return [[r.snr_db, r.noisy, r.enhanced] for r in rows]


@dataclass
class SimilarityRow:
    speaker_id: str
    cosine: float
    n_synth: int

    @property
    def same_speaker(self) -> bool:
        return speaker.same_speaker(self.cosine)


SIMILARITY_HEADER = ["speaker", "cosine", "same_speaker"]


def similarity_rows(rows: list[SimilarityRow]) -> list[list]:
    return [[r.speaker_id, r.cosine, r.same_speaker] for r in rows]


def similarity_table(synth: dict[str, list[np.ndarray]], reference: dict[str, list[np.ndarray]],
                     seed: int = 0) -> list[SimilarityRow]:
    """Cosine between speaker-level toy embeddings of synthesized and training log-mels."""
    rows = []
    for spk in synth:
        if spk not in reference or not reference[spk]:
            raise KeyError(f"no training centroid for speaker {spk!r}")
        if not synth[spk]:
            raise ValueError(f"no synthesized utterances for speaker {spk!r}")
        a = speaker_centroids({spk: synth[spk]}, seed)[spk]
        b = speaker_centroids({spk: reference[spk]}, seed)[spk]
        rows.append(SimilarityRow(spk, speaker.cosine_similarity(a, b), len(synth[spk])))
    return rows


def synthesize_speakers(model: TtsModel, embeddings: dict[str, SpeakerEmbedding],
                        texts: list[list[int]], max_frames: int | None = None
                        ) -> dict[str, list[np.ndarray]]:
    """Clean-mask synthesis of every text for every speaker; returns after-mels (log)."""
    out = {}
    for spk, emb in embeddings.items():
        out[spk] = [run_infer(model, SymbolSequence.from_text(t), emb, "clean",
                              max_frames=max_frames).after_mel for t in texts]
    return out


def eval_similarity(model: TtsModel, embeddings: dict[str, SpeakerEmbedding],
                    texts: list[list[int]], reference: dict[str, list[np.ndarray]],
                    seed: int = 0, max_frames: int | None = None) -> list[SimilarityRow]:
    return similarity_table(synthesize_speakers(model, embeddings, texts, max_frames),
                            reference, seed)


@dataclass
class OracleRow:
    utt_id: str
    clean_mode: float      # log-mel MSE of clean-mask synthesis to the clean oracle
    reference_mode: float  # same text, conditioned on the noisy reference's mask
    baseline: float        # denoise-then-adapt model, if given (nan otherwise)


ORACLE_HEADER = ["utt_id", "clean_mode_mse", "reference_mode_mse", "baseline_mse"]


def oracle_distance(model: TtsModel, embedding: SpeakerEmbedding, heldout: list[UtterancePair],
                    mask_mode: str = "predicted", enhancer: EnhancerModel | None = None,
                    baseline: TtsModel | None = None,
                    baseline_embedding: SpeakerEmbedding | None = None,
                    log_floor: float = 1e-5) -> list[OracleRow]:
    """Compare synthesized after-mels with the clean rendering of held-out texts.

    ``heldout`` holds noisy records of the adapted speaker; their clean side is
    the oracle and their mask conditions the reference mode. Synthesis is
    free-running with the length fixed to the oracle's.
    """
    rows = []
    for u in heldout:
        if u.is_clean:
            raise ValueError(f"{u.utt_id}: held-out records must carry a noisy reference")
        oracle = log_mel(u.clean.bins, log_floor)
        T = oracle.shape[0]
        clean = run_infer(model, u.symbols, embedding, "clean", n_frames=T).after_mel
        ref_mask = conditioning_mask(u, mask_mode, enhancer)
        ref = run_infer(model, u.symbols, embedding, "reference", ref_mask, n_frames=T).after_mel
        base = np.nan
        if baseline is not None:
            emb = baseline_embedding or embedding
            base_mel = run_infer(baseline, u.symbols, emb, "clean", n_frames=T).after_mel
            base = float(np.mean((base_mel - oracle) ** 2))
        rows.append(OracleRow(u.utt_id, float(np.mean((clean - oracle) ** 2)),
                              float(np.mean((ref - oracle) ** 2)), base))
    return rows


def oracle_rows(rows: list[OracleRow]) -> list[list]:
    return [[r.utt_id, r.clean_mode, r.reference_mode, r.baseline] for r in rows]
