"""Waveform I/O, STFT, mel projection, SNR mixing and SI-SDR on mel grids."""

from __future__ import annotations

import os
import struct
import wave
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.signal import get_window

SI_SDR_CLAMP = 100.0


class WavFormatError(ValueError):
    pass


@dataclass(frozen=True)
class DspConfig:
    sample_rate: int = 16000
    frame_len: int = 512
    frame_hop: int = 128
    n_mels: int = 40
    f_min: float = 0.0
    f_max: float | None = None
    log_floor: float = 1e-5

    @classmethod
    def from_dict(cls, d: dict | None) -> "DspConfig":
        return cls(**(d or {}))


@dataclass
class Waveform:
    samples: np.ndarray
    sample_rate: int = 16000

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1 or self.samples.size < 1:
            raise ValueError("waveform must be 1-D with at least one sample")
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("waveform contains non-finite samples")
        if int(self.sample_rate) <= 0:
            raise ValueError("sample_rate must be positive")

    def __len__(self) -> int:
        return self.samples.size

    @property
    def rms(self) -> float:
        return float(np.sqrt(np.mean(self.samples ** 2)))


@dataclass
class Spectrogram:
    bins: np.ndarray  # frames x freq magnitudes
    frame_hop: int
    frame_len: int
    sample_rate: int = 16000

    @property
    def n_frames(self) -> int:
        return self.bins.shape[0]


@dataclass
class MelSpectrogram:
    """frames x n_mels grid; power energies unless ``log`` is set."""

    bins: np.ndarray
    sample_rate: int = 16000
    frame_hop: int = 128
    frame_len: int = 512
    log: bool = False

    def __post_init__(self):
        self.bins = np.asarray(self.bins, dtype=np.float64)
        if self.bins.ndim != 2 or self.bins.shape[0] < 1:
            raise ValueError(f"mel grid must be frames x n_mels, got shape {self.bins.shape}")
        if not self.log and np.any(self.bins < 0):
            raise ValueError("power mel bins must be non-negative")

    @property
    def n_frames(self) -> int:
        return self.bins.shape[0]

    @property
    def n_mels(self) -> int:
        return self.bins.shape[1]

    def with_bins(self, bins: np.ndarray, log: bool | None = None) -> "MelSpectrogram":
        return MelSpectrogram(bins, self.sample_rate, self.frame_hop, self.frame_len,
                              self.log if log is None else log)


@dataclass
class MelFilterbank:
    weights: np.ndarray  # n_mels x freq
    f_min: float
    f_max: float
    sample_rate: int = 16000
    n_fft: int = 512

    def __post_init__(self):
        if np.any(self.weights < 0):
            raise ValueError("filterbank weights must be non-negative")
        if np.any(self.weights.max(axis=1) <= 0):
            raise ValueError("every mel filter needs at least one nonzero weight; "
                             "use fewer mels or a larger FFT")


# ------------------------------------------------------------------- WAV I/O

def read_wav(path: str | os.PathLike) -> Waveform:
    """Read 16-bit PCM mono; samples are scaled by 1/32768."""
    try:
        with wave.open(str(path), "rb") as w:
            if w.getnchannels() != 1:
                raise WavFormatError(f"{path}: expected mono, got {w.getnchannels()} channels")
            if w.getsampwidth() != 2:
                raise WavFormatError(f"{path}: expected 16-bit samples")
            if w.getcomptype() != "NONE":
                raise WavFormatError(f"{path}: compressed WAV not supported")
            n = w.getnframes()
            sr = w.getframerate()
            raw = w.readframes(n)
    except (wave.Error, EOFError, struct.error) as exc:
        raise WavFormatError(f"{path}: {exc}") from exc
    if n == 0 or len(raw) == 0:
        raise WavFormatError(f"{path}: no sample data")
    pcm = np.frombuffer(raw, dtype="<i2")
    return Waveform(pcm.astype(np.float64) / 32768.0, sr)


def write_wav(path: str | os.PathLike, wav: Waveform) -> None:
    pcm = np.clip(np.round(wav.samples * 32768.0), -32768, 32767).astype("<i2")
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with wave.open(str(path), "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(2)
        w.setframerate(int(wav.sample_rate))
        w.writeframes(pcm.tobytes())


# -------------------------------------------------------------- spectral

def stft(wav: Waveform, frame_len: int = 512, frame_hop: int = 128,
         window: str = "hann") -> Spectrogram:
    """Magnitude STFT without end padding: 1 + (len - frame_len) // hop frames."""
    if not frame_len >= frame_hop >= 1:
        raise ValueError("need frame_len >= frame_hop >= 1")
    x = wav.samples
    if x.size < frame_len:
        raise ValueError(f"waveform ({x.size} samples) shorter than frame_len ({frame_len})")
    n_frames = 1 + (x.size - frame_len) // frame_hop
    win = get_window(window, frame_len)
    frames = np.lib.stride_tricks.sliding_window_view(x, frame_len)[::frame_hop][:n_frames]
    mag = np.abs(np.fft.rfft(frames * win, axis=1))
    return Spectrogram(mag, frame_hop, frame_len, wav.sample_rate)


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=float) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=float) / 2595.0) - 1.0)


def mel_filterbank(sample_rate: int = 16000, n_fft: int = 512, n_mels: int = 40,
                   f_min: float = 0.0, f_max: float | None = None) -> MelFilterbank:
    """Triangular HTK-scale filters with unit peak (no area normalisation)."""
    f_max = sample_rate / 2.0 if f_max is None else f_max
    freqs = np.fft.rfftfreq(n_fft, 1.0 / sample_rate)
    edges = mel_to_hz(np.linspace(hz_to_mel(f_min), hz_to_mel(f_max), n_mels + 2))
    lo, mid, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    up = (freqs[None, :] - lo) / (mid - lo)
    down = (hi - freqs[None, :]) / (hi - mid)
    weights = np.maximum(0.0, np.minimum(up, down))
    return MelFilterbank(weights, f_min, f_max, sample_rate, n_fft)


def mel_project(spec: Spectrogram, fb: MelFilterbank) -> MelSpectrogram:
    if spec.bins.shape[1] != fb.weights.shape[1]:
        raise ValueError(f"filterbank expects {fb.weights.shape[1]} frequency bins, "
                         f"spectrogram has {spec.bins.shape[1]}")
    power = spec.bins ** 2
    return MelSpectrogram(power @ fb.weights.T, spec.sample_rate, spec.frame_hop, spec.frame_len)


def log_compress(mel: MelSpectrogram, floor: float = 1e-5) -> MelSpectrogram:
    if floor <= 0:
        raise ValueError("log floor must be positive")
    return mel.with_bins(np.log(np.maximum(mel.bins, floor)), log=True)


def mel_spectrogram(wav: Waveform, cfg: DspConfig = DspConfig(),
                    fb: MelFilterbank | None = None) -> MelSpectrogram:
    if fb is None:
        fb = mel_filterbank(cfg.sample_rate, cfg.frame_len, cfg.n_mels, cfg.f_min, cfg.f_max)
    return mel_project(stft(wav, cfg.frame_len, cfg.frame_hop), fb)


# ----------------------------------------------------------------- mixing

def mix_at_snr(clean: Waveform, noise: Waveform, snr_db: float,
               rng: np.random.Generator | int | None = 0) -> tuple[Waveform, Waveform]:
    """Add a crop of ``noise`` to ``clean`` so that the clean/noise power ratio is ``snr_db``.

    The crop offset is drawn from ``rng``. Returns ``(noisy, scaled_noise)``.
    """
    if noise.samples.size < clean.samples.size:
        raise ValueError("noise must be at least as long as the clean signal")
    if clean.sample_rate != noise.sample_rate:
        raise ValueError("sample rates differ")
    rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
    n = clean.samples.size
    offset = int(rng.integers(0, noise.samples.size - n + 1))
    crop = noise.samples[offset:offset + n]
    rms_clean = clean.rms
    rms_noise = float(np.sqrt(np.mean(crop ** 2)))
    if rms_clean == 0.0:
        raise ValueError("clean signal is silent")
    if rms_noise == 0.0:
        raise ValueError("noise crop is silent")
    gain = rms_clean / (rms_noise * 10.0 ** (snr_db / 20.0))
    scaled = gain * crop
    return (Waveform(clean.samples + scaled, clean.sample_rate),
            Waveform(scaled, clean.sample_rate))


def measured_snr(clean: Waveform, noise: Waveform) -> float:
    return float(10.0 * np.log10(np.sum(clean.samples ** 2) / np.sum(noise.samples ** 2)))


# ------------------------------------------------------------------ metric

def si_sdr_mel(reference, estimate) -> float:
    """Scale-invariant SDR (dB) between two mel grids, without mean removal.

    Clamped to [-100, 100] so exact matches and orthogonal estimates stay finite.
    """
    ref = np.asarray(getattr(reference, "bins", reference), dtype=np.float64)
    est = np.asarray(getattr(estimate, "bins", estimate), dtype=np.float64)
    if ref.shape != est.shape:
        raise ValueError(f"shape mismatch: reference {ref.shape}, estimate {est.shape}")
    ref, est = ref.ravel(), est.ravel()
    ref_energy = float(ref @ ref)
    if ref_energy == 0.0:
        raise ValueError("reference is all zeros")
    alpha = float(est @ ref) / ref_energy
    target = alpha * ref
    resid = target - est
    num, den = float(target @ target), float(resid @ resid)
    if den == 0.0:
        return SI_SDR_CLAMP
    if num == 0.0:
        return -SI_SDR_CLAMP
    return float(np.clip(10.0 * np.log10(num / den), -SI_SDR_CLAMP, SI_SDR_CLAMP))


# ---------------------------------------------------------- MELS container

_HEADER = struct.Struct("<4s5I")
MELS_MAGIC = b"MELS"
MASK_MAGIC = b"MASK"


def write_mels(path: str | os.PathLike, bins: np.ndarray, sample_rate: int, frame_hop: int,
               magic: bytes = MELS_MAGIC) -> None:
    """Frame-major f32 grid behind a ``MELS``/``MASK`` header."""
    bins = np.asarray(bins)
    if bins.ndim != 2:
        raise ValueError("expected a frames x n_mels grid")
    n_frames, n_mels = bins.shape
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_bytes(_HEADER.pack(magic, 1, n_frames, n_mels, sample_rate, frame_hop)
                           + np.ascontiguousarray(bins, dtype="<f4").tobytes())


@dataclass
class MelsFile:
    bins: np.ndarray
    sample_rate: int
    frame_hop: int
    magic: bytes = field(default=MELS_MAGIC)


def read_mels(path: str | os.PathLike, magic: bytes | None = None) -> MelsFile:
    buf = Path(path).read_bytes()
    if len(buf) < _HEADER.size:
        raise ValueError(f"{path}: truncated header")
    got, version, n_frames, n_mels, sr, hop = _HEADER.unpack_from(buf)
    if got not in (MELS_MAGIC, MASK_MAGIC) or (magic is not None and got != magic):
        raise ValueError(f"{path}: bad magic {got!r}")
    if version != 1:
        raise ValueError(f"{path}: unsupported version {version}")
    expected = _HEADER.size + 4 * n_frames * n_mels
    if len(buf) != expected:
        raise ValueError(f"{path}: expected {expected} bytes, found {len(buf)}")
    data = np.frombuffer(buf, dtype="<f4", offset=_HEADER.size).reshape(n_frames, n_mels)
    return MelsFile(data.astype(np.float64), sr, hop, got)
