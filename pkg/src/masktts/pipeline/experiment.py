"""Corpus layout used by the CLI and the end-to-end runs.

Splits: ``train`` (pretraining speakers, clean + one noisy variant per text),
``adapt`` (the new speaker, noisy only), ``heldout`` (new speaker, texts never
trained on; clean side is the oracle, noisy side the reference) and ``enh_test``
(fresh texts for the enhancer SI-SDR table).
"""

from __future__ import annotations

import dataclasses

from .. import maskkit
from .config import RunConfig
from .corpus import Corpus, augment, clean_utterance, default_speakers, random_texts, _filterbank
from .evaluation import TABLE_SNRS
from .stages import conditioning_mask, log_mel

NEW_SPEAKER = "new0"


def build_corpus(run: RunConfig, seed: int = 0) -> Corpus:
    p, cfg = run.pipeline, run.dsp
    specs = default_speakers(p.n_speakers + 1, seed)
    # the unseen voice sits inside the pretraining range, not at an extreme
    mid = (p.n_speakers + 1) // 2
    new = dataclasses.replace(specs[mid], speaker_id=NEW_SPEAKER)
    train_specs = [dataclasses.replace(s, speaker_id=f"spk{i}")
                   for i, s in enumerate(specs[:mid] + specs[mid + 1:])]
    n_enh = len(TABLE_SNRS) * p.enh_test_per_snr
    texts = random_texts(p.texts_per_speaker + p.adapt_utterances + p.heldout_texts + n_enh,
                         p.text_length, seed)
    train_t = texts[:p.texts_per_speaker]
    adapt_t = texts[p.texts_per_speaker:p.texts_per_speaker + p.adapt_utterances]
    held_t = texts[p.texts_per_speaker + p.adapt_utterances:][:p.heldout_texts]
    enh_t = texts[-n_enh:] if n_enh else []
    fb = _filterbank(cfg)
    sf = p.symbol_frames

    def render(spec, text_list, split, stream, tag=None):
        return [clean_utterance(spec, t, f"{spec.speaker_id}_{tag or split}{j:03d}", cfg, sf,
                                [seed, stream, j], split, fb)
                for j, t in enumerate(text_list)]

    utts = []
    train_clean = [u for si, s in enumerate(train_specs) for u in render(s, train_t, "train", si)]
    utts += train_clean + augment(train_clean, p.noise_kinds, p.snr_levels, cfg, seed, fb)
    adapt_clean = render(new, adapt_t, "adapt", 100)
    utts += augment(adapt_clean, p.noise_kinds, p.adapt_snr_levels, cfg, seed + 1, fb)
    held_clean = render(new, held_t, "heldout", 101)
    utts += augment(held_clean, p.noise_kinds, p.adapt_snr_levels, cfg, seed + 2, fb)
    everyone = train_specs + [new]
    enh_clean = [u for j, t in enumerate(enh_t)
                 for u in render(everyone[j % len(everyone)], [t], "enh_test", 200 + j,
                                 tag=f"enh{j:03d}_")]
    utts += augment(enh_clean, p.noise_kinds, list(TABLE_SNRS), cfg, seed + 3, fb)
    return Corpus(everyone, utts, cfg, sf)


def reference_mels(corpus: Corpus, run: RunConfig, enhancer=None) -> dict[str, list]:
    """Training-side log-mels per speaker, as the system itself sees them.

    Pretraining speakers contribute their clean recordings; the adapted speaker
    only has noisy ones, so its reference is the denoised adaptation data.
    """
    floor = run.dsp.log_floor
    out: dict[str, list] = {}
    for u in corpus.select(split="train", clean=True):
        out.setdefault(u.speaker_id, []).append(log_mel(u.clean.bins, floor))
    for u in corpus.select(split="adapt"):
        mask = conditioning_mask(u, run.pipeline.mask_mode, enhancer)
        out.setdefault(u.speaker_id, []).append(
            log_mel(maskkit.apply_mask(u.noisy.bins, mask), floor))
    return out
