"""Synthetic multi-speaker corpus: harmonic "speech" plus seeded noise augmentation.

Each letter id maps to a fixed pitch offset and a pair of formant peaks, and
every symbol (start/end markers included, rendered as near-silence) lasts the
same number of frames. A speaker is a base pitch, a spectral tilt and a vibrato.
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy import signal

from .. import dsp, maskkit
from ..dsp import DspConfig, MelSpectrogram, Waveform
from ..maskkit import DenoiseMask
from ..ttscore.model import END, N_LETTERS, START, SymbolSequence

NOISE_KINDS = ("white", "tonal", "chirp")
# semitone offsets per letter, a small pentatonic-ish pattern
_PITCH_STEPS = np.array([0, 2, 4, 7, 9, 12, 9, 7, 4, 2, 0, -3, -5, 3, 5, 10])
_NOISE_FLOOR_RMS = 3e-4
_SPEECH_RMS = 0.1


@dataclass(frozen=True)
class SyntheticSpeakerSpec:
    speaker_id: str
    f0_base: float
    spectral_tilt: float = -6.0    # dB per octave above f0
    vibrato_rate: float = 5.0      # Hz
    vibrato_depth: float = 20.0    # cents
    seed: int = 0

    def __post_init__(self):
        if not 80.0 <= self.f0_base <= 400.0:
            raise ValueError(f"f0_base {self.f0_base} outside [80, 400] Hz")


@dataclass
class UtterancePair:
    utt_id: str
    speaker_id: str
    symbols: SymbolSequence
    clean: MelSpectrogram
    noisy: MelSpectrogram
    mask: DenoiseMask
    snr_db: float | None = None         # None marks a clean-only record
    noise_kind: str | None = None
    split: str = "train"
    clean_wav: Waveform | None = field(default=None, repr=False)
    noisy_wav: Waveform | None = field(default=None, repr=False)
    noise_wav: Waveform | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.clean.bins.shape != self.noisy.bins.shape:
            raise ValueError(f"{self.utt_id}: clean and noisy mels are not frame-aligned")
        if self.mask.shape != self.clean.bins.shape:
            raise ValueError(f"{self.utt_id}: mask shape does not match the mel")

    @property
    def is_clean(self) -> bool:
        return self.snr_db is None

    @property
    def n_frames(self) -> int:
        return self.clean.n_frames


@dataclass
class Corpus:
    speakers: list[SyntheticSpeakerSpec]
    utterances: list[UtterancePair]
    dsp: DspConfig = field(default_factory=DspConfig)
    symbol_frames: int = 6

    def select(self, split: str | None = None, speaker_id: str | None = None,
               clean: bool | None = None) -> list[UtterancePair]:
        return [u for u in self.utterances
                if (split is None or u.split == split)
                and (speaker_id is None or u.speaker_id == speaker_id)
                and (clean is None or u.is_clean == clean)]

    def speaker_ids(self) -> list[str]:
        return [s.speaker_id for s in self.speakers]


def default_speakers(n: int, seed: int = 0, prefix: str = "spk") -> list[SyntheticSpeakerSpec]:
    """``n`` speakers with well separated pitch and tilt."""
    rng = np.random.default_rng(seed)
    f0s = np.geomspace(95.0, 330.0, n) if n > 1 else np.array([150.0])
    tilts = np.linspace(-3.0, -12.0, n) if n > 1 else np.array([-6.0])
    order = rng.permutation(n)
    return [SyntheticSpeakerSpec(f"{prefix}{i}", float(f0s[i]), float(tilts[order[i]]),
                                 float(rng.uniform(4.0, 6.5)), float(rng.uniform(10.0, 40.0)),
                                 seed=int(rng.integers(2**31)))
            for i in range(n)]


def random_texts(n: int, length: int, seed: int = 0) -> list[list[int]]:
    """Distinct letter sequences (ids 0..15)."""
    rng = np.random.default_rng(seed)
    seen, out = set(), []
    while len(out) < n:
        t = tuple(int(x) for x in rng.integers(0, N_LETTERS, length))
        if t not in seen:
            seen.add(t)
            out.append(list(t))
    return out


def n_samples_for(frames: int, cfg: DspConfig) -> int:
    return (frames - 1) * cfg.frame_hop + cfg.frame_len


def _formants(letter: int) -> tuple[float, float]:
    return 300.0 + 70.0 * (letter % 8), 900.0 + 120.0 * letter


def synth_speech(spec: SyntheticSpeakerSpec, symbols: SymbolSequence, cfg: DspConfig = DspConfig(),
                 symbol_frames: int = 6, rng: np.random.Generator | int | None = None) -> Waveform:
    """Harmonic rendering of a symbol sequence in the voice of ``spec``."""
    rng = np.random.default_rng(spec.seed if rng is None else rng)
    sr, hop = cfg.sample_rate, cfg.frame_hop
    n_frames = symbol_frames * len(symbols)
    n = n_samples_for(n_frames, cfg)
    t = np.arange(n) / sr
    # symbol boundaries in samples; the analysis window is centred, hence the half-frame lead
    lead = cfg.frame_len // 2 - hop // 2
    bounds = lead + np.arange(len(symbols) + 1) * symbol_frames * hop
    bounds[0], bounds[-1] = 0, n

    f0 = np.empty(n)
    voiced = np.zeros(n)
    f1 = np.empty(n)
    f2 = np.empty(n)
    ramp = int(0.01 * sr)
    for k, sym in enumerate(symbols.ids):
        a, b = bounds[k], bounds[k + 1]
        letter = sym if sym < N_LETTERS else 0
        f0[a:b] = spec.f0_base * 2.0 ** (_PITCH_STEPS[letter] / 12.0)
        f1[a:b], f2[a:b] = _formants(letter)
        if sym in (START, END):
            continue
        env = np.ones(b - a)
        r = min(ramp, (b - a) // 2)
        if r > 0:
            fade = 0.5 - 0.5 * np.cos(np.pi * np.arange(r) / r)
            env[:r], env[-r:] = fade, fade[::-1]
        voiced[a:b] = env
    f0 = f0 * 2.0 ** (spec.vibrato_depth / 1200.0 * np.sin(2 * np.pi * spec.vibrato_rate * t))
    phase = 2 * np.pi * np.cumsum(f0) / sr

    n_harm = int(cfg.sample_rate / 2 // (spec.f0_base * 2 ** (_PITCH_STEPS.min() / 12.0)))
    out = np.zeros(n)
    for h in range(1, n_harm + 1):
        fh = h * f0
        alive = fh < sr / 2 - 200
        if not alive.any():
            break
        tilt = 10.0 ** (spec.spectral_tilt * np.log2(h) / 20.0)
        res = (1.0 / (1.0 + ((fh - f1) / 120.0) ** 2) + 0.6 / (1.0 + ((fh - f2) / 180.0) ** 2)
               + 0.05)
        out += alive * tilt * res * np.sin(h * phase)
    out *= voiced
    out *= _SPEECH_RMS / np.sqrt(np.mean(out[voiced > 0.5] ** 2))
    out += _NOISE_FLOOR_RMS * rng.standard_normal(n)
    return Waveform(out, sr)


def make_noise(kind: str, n: int, sample_rate: int = 16000,
               rng: np.random.Generator | int | None = 0) -> Waveform:
    """Seeded interference: band-passed white noise, a few drifting tones, or repeated chirps."""
    rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
    nyq = sample_rate / 2
    t = np.arange(n) / sample_rate
    if kind == "white":
        lo = rng.uniform(100.0, 1500.0)
        hi = min(lo * rng.uniform(2.0, 6.0), nyq * 0.95)
        sos = signal.butter(4, [lo, hi], btype="bandpass", fs=sample_rate, output="sos")
        x = signal.sosfilt(sos, rng.standard_normal(n))
    elif kind == "tonal":
        x = np.zeros(n)
        for _ in range(3):
            f = rng.uniform(200.0, 4000.0)
            am = 1.0 + 0.3 * np.sin(2 * np.pi * rng.uniform(0.5, 3.0) * t + rng.uniform(0, 2 * np.pi))
            x += am * np.sin(2 * np.pi * f * t + rng.uniform(0, 2 * np.pi))
        x += 0.05 * rng.standard_normal(n)
    elif kind == "chirp":
        period = rng.uniform(0.2, 0.6)
        f_lo, f_hi = rng.uniform(200.0, 800.0), rng.uniform(2000.0, 6000.0)
        x = signal.chirp(np.mod(t + rng.uniform(0, period), period), f_lo, period, f_hi,
                         method="logarithmic")
        x += 0.05 * rng.standard_normal(n)
    else:
        raise ValueError(f"unknown noise kind {kind!r}; expected one of {NOISE_KINDS}")
    return Waveform(x, sample_rate)


def _f32(mel: MelSpectrogram) -> MelSpectrogram:
    # corpora are stored as f32; rounding here keeps in-memory and reloaded corpora identical
    return mel.with_bins(mel.bins.astype(np.float32).astype(np.float64))


def clean_utterance(spec: SyntheticSpeakerSpec, letters: list[int], utt_id: str,
                    cfg: DspConfig, symbol_frames: int, seed, split: str = "train",
                    fb=None) -> UtterancePair:
    symbols = SymbolSequence.from_text(letters)
    wav = synth_speech(spec, symbols, cfg, symbol_frames, np.random.default_rng(seed))
    mel = _f32(dsp.mel_spectrogram(wav, cfg, fb))
    return UtterancePair(utt_id, spec.speaker_id, symbols, mel, mel,
                         maskkit.clean_mask(*mel.bins.shape), split=split, clean_wav=wav)


def noisy_variant(utt: UtterancePair, kind: str, snr_db: float, cfg: DspConfig, seed,
                  utt_id: str | None = None, split: str | None = None, fb=None) -> UtterancePair:
    """Mix seeded noise into a clean record; the ideal mask is stored alongside."""
    if utt.clean_wav is None:
        raise ValueError(f"{utt.utt_id}: augmentation needs the clean waveform")
    rng = np.random.default_rng(seed)
    clean = utt.clean_wav
    noise = make_noise(kind, len(clean) + cfg.sample_rate // 4, cfg.sample_rate, rng)
    noisy, scaled = dsp.mix_at_snr(clean, noise, snr_db, rng)
    noisy_mel = _f32(dsp.mel_spectrogram(noisy, cfg, fb))
    noise_mel = _f32(dsp.mel_spectrogram(scaled, cfg, fb))
    mask = maskkit.ideal_mask(utt.clean, noise_mel)
    return UtterancePair(utt_id or f"{utt.utt_id}_n", utt.speaker_id, utt.symbols, utt.clean,
                         noisy_mel, mask, float(snr_db), kind, split or utt.split,
                         clean_wav=clean, noisy_wav=noisy, noise_wav=scaled)


def augment(utterances: list[UtterancePair], noise_kinds, snr_levels, cfg: DspConfig,
            seed: int = 0, fb=None) -> list[UtterancePair]:
    """One noisy variant per clean record; SNR cycles fastest, then the noise kind."""
    if not snr_levels:
        raise ValueError("at least one SNR level is required")
    if not noise_kinds:
        raise ValueError("at least one noise kind is required")
    out = []
    for i, u in enumerate(utterances):
        snr = snr_levels[i % len(snr_levels)]
        kind = noise_kinds[(i // len(snr_levels)) % len(noise_kinds)]
        out.append(noisy_variant(u, kind, snr, cfg, [seed, 7919, i], fb=fb))
    return out


def generate_corpus(specs: list[SyntheticSpeakerSpec], texts: list[list[int]],
                    noise_kinds=NOISE_KINDS, snr_levels=(-5.0, 0.0, 5.0),
                    cfg: DspConfig = DspConfig(), symbol_frames: int = 6, seed: int = 0,
                    split: str = "train", include_clean: bool = True) -> Corpus:
    """Clean rendering of every (speaker, text) plus one noisy variant of each."""
    if len(specs) < 2:
        raise ValueError("a corpus needs at least two speakers")
    if not texts:
        raise ValueError("no texts given")
    ids = [s.speaker_id for s in specs]
    if len(set(ids)) != len(ids):
        raise ValueError("duplicate speaker ids")
    fb = _filterbank(cfg)
    clean = [clean_utterance(spec, text, f"{spec.speaker_id}_{split}{j:03d}", cfg, symbol_frames,
                             [seed, si, j], split, fb)
             for si, spec in enumerate(specs) for j, text in enumerate(texts)]
    noisy = augment(clean, list(noise_kinds), list(snr_levels), cfg, seed, fb)
    return Corpus(list(specs), (clean if include_clean else []) + noisy, cfg, symbol_frames)


def _filterbank(cfg: DspConfig):
    return dsp.mel_filterbank(cfg.sample_rate, cfg.frame_len, cfg.n_mels, cfg.f_min, cfg.f_max)


# ------------------------------------------------------------------ storage

def save_corpus(corpus: Corpus, root: str | os.PathLike, wavs: bool = True) -> None:
    """Directory layout: ``index.json`` plus ``mel/``, ``mask/`` and optional ``wav/`` files."""
    root = Path(root)
    cfg = corpus.dsp
    entries = []
    for u in corpus.utterances:
        files = {"clean_mel": f"mel/{u.utt_id}.clean.mels", "mask": f"mask/{u.utt_id}.mask"}
        dsp.write_mels(root / files["clean_mel"], u.clean.bins, cfg.sample_rate, cfg.frame_hop)
        maskkit.save_mask(root / files["mask"], u.mask, cfg.sample_rate, cfg.frame_hop)
        if not u.is_clean:
            files["noisy_mel"] = f"mel/{u.utt_id}.noisy.mels"
            dsp.write_mels(root / files["noisy_mel"], u.noisy.bins, cfg.sample_rate, cfg.frame_hop)
        if wavs:
            for key, wav in (("clean_wav", u.clean_wav), ("noisy_wav", u.noisy_wav)):
                if wav is not None:
                    files[key] = f"wav/{u.utt_id}.{key[:-4]}.wav"
                    (root / "wav").mkdir(parents=True, exist_ok=True)
                    dsp.write_wav(root / files[key], wav)
        entries.append({"utt_id": u.utt_id, "speaker_id": u.speaker_id, "symbols": u.symbols.ids,
                        "snr_db": u.snr_db, "noise_kind": u.noise_kind, "split": u.split,
                        "mask_kind": u.mask.kind, "files": files})
    index = {"version": 1, "dsp": asdict(cfg), "symbol_frames": corpus.symbol_frames,
             "speakers": [asdict(s) for s in corpus.speakers], "utterances": entries}
    (root / "index.json").write_text(json.dumps(index, indent=1, sort_keys=True) + "\n")


def load_corpus(root: str | os.PathLike, with_wavs: bool = False) -> Corpus:
    """Read a corpus directory. Mels missing from an entry are computed from its WAV files,
    which is how externally recorded paired data can be brought in."""
    root = Path(root)
    index = json.loads((root / "index.json").read_text())
    cfg = DspConfig.from_dict(index.get("dsp"))
    fb = None
    utts = []
    for e in index["utterances"]:
        files = e["files"]
        wavs = {k: dsp.read_wav(root / files[k]) for k in ("clean_wav", "noisy_wav") if k in files}

        def mel_of(key, wav_key):
            nonlocal fb
            if key in files:
                f = dsp.read_mels(root / files[key], dsp.MELS_MAGIC)
                return MelSpectrogram(f.bins.astype(np.float64), cfg.sample_rate, cfg.frame_hop,
                                      cfg.frame_len)
            if wav_key not in wavs:
                return None
            fb = fb or _filterbank(cfg)
            return _f32(dsp.mel_spectrogram(wavs[wav_key], cfg, fb))

        clean = mel_of("clean_mel", "clean_wav")
        if clean is None:
            raise ValueError(f"{e['utt_id']}: missing paired clean reference")
        noisy = mel_of("noisy_mel", "noisy_wav") if e["snr_db"] is not None else clean
        if noisy is None:
            raise ValueError(f"{e['utt_id']}: noisy entry without noisy data")
        if "mask" in files:
            mask = maskkit.load_mask(root / files["mask"], e.get("mask_kind", "ideal"))
        elif e["snr_db"] is None:
            mask = maskkit.clean_mask(*clean.bins.shape)
        else:
            # no separated noise available: use the mixture-based ratio
            mask = maskkit.ideal_mask(clean, np.maximum(noisy.bins - clean.bins, 0.0), noisy)
        utts.append(UtterancePair(
            e["utt_id"], e["speaker_id"], SymbolSequence(e["symbols"]), clean, noisy, mask,
            e["snr_db"], e.get("noise_kind"), e.get("split", "train"),
            clean_wav=wavs.get("clean_wav") if with_wavs else None,
            noisy_wav=wavs.get("noisy_wav") if with_wavs else None))
    speakers = [SyntheticSpeakerSpec(**s) for s in index.get("speakers", [])]
    return Corpus(speakers, utts, cfg, index.get("symbol_frames", 6))
