"""Denoise-mask algebra on mel grids.

A mask holds, per time-frequency bin, the fraction of energy that belongs to
clean speech. Multiplying a noisy mel by it estimates the clean mel; the
all-ones mask stands for "no noise".
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from .dsp import MASK_MAGIC, MelSpectrogram, read_mels, write_mels

KINDS = ("ideal", "predicted", "clean")
CLIP_LOW = 0.1
NORM_RANGE = 4.0


@dataclass
class DenoiseMask:
    values: np.ndarray
    kind: str = "ideal"

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.kind not in KINDS:
            raise ValueError(f"unknown mask kind {self.kind!r}")
        if self.values.ndim != 2:
            raise ValueError("mask must be a frames x n_mels grid")
        if np.any(self.values < 0) or np.any(self.values > 1) or np.any(np.isnan(self.values)):
            raise ValueError("mask values must lie in [0, 1]")
        if self.kind == "clean" and not np.all(self.values == 1.0):
            raise ValueError("a clean mask must be all ones")

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape


def _grid(x) -> np.ndarray:
    return np.asarray(getattr(x, "bins", getattr(x, "values", x)), dtype=np.float64)


def ideal_mask(clean_mel, noise_mel, mixture_mel=None) -> DenoiseMask:
    """``E_s / (E_s + E_n)`` per bin, 1 where both energies vanish.

    With ``mixture_mel`` given, the denominator is the measured mixture energy
    instead of the additive sum (cross terms included), clipped into [0, 1].
    """
    s, n = _grid(clean_mel), _grid(noise_mel)
    if s.shape != n.shape:
        raise ValueError(f"shape mismatch: clean {s.shape}, noise {n.shape}")
    if np.any(s < 0) or np.any(n < 0):
        raise ValueError("mel energies must be non-negative")
    total = s + n if mixture_mel is None else _grid(mixture_mel)
    if total.shape != s.shape:
        raise ValueError("mixture shape mismatch")
    with np.errstate(divide="ignore", invalid="ignore"):
        m = np.where(total > 0, s / np.where(total > 0, total, 1.0), 1.0)
    return DenoiseMask(np.clip(m, 0.0, 1.0), "ideal")


def clean_mask(frames: int, n_mels: int) -> DenoiseMask:
    if frames < 1 or n_mels < 1:
        raise ValueError("mask dimensions must be positive")
    return DenoiseMask(np.ones((frames, n_mels)), "clean")


def apply_mask(mel, mask) -> MelSpectrogram | np.ndarray:
    s, m = _grid(mel), _grid(mask)
    if s.shape != m.shape:
        raise ValueError(f"shape mismatch: mel {s.shape}, mask {m.shape}")
    out = s * m
    if isinstance(mel, MelSpectrogram):
        return mel.with_bins(out)
    return out


def mask_mse_loss(noisy, mask, clean) -> float:
    """Squared error of the masked noisy mel against the clean mel, averaged over TF bins."""
    s_noisy, m, s_clean = _grid(noisy), _grid(mask), _grid(clean)
    if not s_noisy.shape == m.shape == s_clean.shape:
        raise ValueError(f"shape mismatch: {s_noisy.shape}, {m.shape}, {s_clean.shape}")
    diff = s_noisy * m - s_clean
    return float((diff * diff).sum() / diff.size)


def normalize_for_conditioning(mask) -> np.ndarray:
    """Clip to [0.1, 1], take the natural log and map [ln 0.1, 0] affinely onto [-4, 4]."""
    m = _grid(mask)
    c = np.clip(m, CLIP_LOW, 1.0)
    x = np.log(c)
    lo = np.log(CLIP_LOW)
    y = -NORM_RANGE + 2.0 * NORM_RANGE * (x - lo) / (0.0 - lo)
    return np.clip(y, -NORM_RANGE, NORM_RANGE)


def save_mask(path: str | os.PathLike, mask: DenoiseMask, sample_rate: int = 16000,
              frame_hop: int = 128) -> None:
    write_mels(path, mask.values, sample_rate, frame_hop, magic=MASK_MAGIC)


def load_mask(path: str | os.PathLike, kind: str = "predicted") -> DenoiseMask:
    f = read_mels(path, magic=MASK_MAGIC)
    return DenoiseMask(np.clip(f.bins, 0.0, 1.0), kind)
