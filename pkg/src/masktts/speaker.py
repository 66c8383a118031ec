"""Unit-norm speaker embeddings, hypersphere centroids and cosine scoring.

``toy_embed`` is a deterministic stand-in for a trained speaker recognition
network: log-mel channel statistics pushed through a fixed random projection.
Real embeddings can be loaded from a ``CKPT`` file instead.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .autodiff.checkpoint import load_checkpoint, save_checkpoint
from .dsp import MelSpectrogram

SAME_SPEAKER_THRESHOLD = 0.70
NORM_TOL = 1e-9


class DegenerateCentroid(ValueError):
    pass


@dataclass
class SpeakerEmbedding:
    vector: np.ndarray
    level: str = "utterance"

    def __post_init__(self):
        self.vector = np.asarray(self.vector, dtype=np.float64).ravel()
        if self.level not in ("utterance", "speaker"):
            raise ValueError(f"unknown embedding level {self.level!r}")
        norm = np.linalg.norm(self.vector)
        if abs(norm - 1.0) > NORM_TOL:
            raise ValueError(f"embedding must be unit norm, got {norm:.12f}")

    @property
    def dim(self) -> int:
        return self.vector.size


def _unit(v: np.ndarray) -> np.ndarray:
    v = v / np.linalg.norm(v)
    # one refinement pass keeps |norm - 1| well under 1e-12
    return v / np.linalg.norm(v)


@lru_cache(maxsize=16)
def _projection(n_stats: int, dim: int, seed: int) -> np.ndarray:
    return np.random.default_rng(seed).standard_normal((n_stats, dim)) / np.sqrt(n_stats)


def toy_embed(mel: MelSpectrogram | np.ndarray, projection_seed: int = 0, dim: int = 32,
              floor: float = 1e-5) -> SpeakerEmbedding:
    """Per-channel mean and std of the log-mel, randomly projected and normalised."""
    if isinstance(mel, MelSpectrogram):
        logmel = mel.bins if mel.log else np.log(np.maximum(mel.bins, floor))
    else:
        logmel = np.asarray(mel, dtype=np.float64)
    if logmel.ndim != 2 or logmel.shape[0] < 2:
        raise ValueError("toy_embed needs at least 2 frames")
    stats = np.concatenate([logmel.mean(axis=0), logmel.std(axis=0)])
    v = stats @ _projection(stats.size, dim, projection_seed)
    if not np.any(v):
        raise DegenerateCentroid("projected statistics are all zero")
    return SpeakerEmbedding(_unit(v), "utterance")


def centroid(embeddings: list[SpeakerEmbedding]) -> SpeakerEmbedding:
    """Speaker-level embedding: the normalised sum of utterance embeddings."""
    if not embeddings:
        raise ValueError("centroid of an empty list")
    dims = {e.dim for e in embeddings}
    if len(dims) != 1:
        raise ValueError(f"embedding dimensions differ: {sorted(dims)}")
    total = np.sum([e.vector for e in embeddings], axis=0)
    norm = np.linalg.norm(total)
    if norm <= 1e-12 * len(embeddings):
        raise DegenerateCentroid("embeddings sum to the zero vector")
    return SpeakerEmbedding(_unit(total), "speaker")


def cosine_similarity(a: SpeakerEmbedding, b: SpeakerEmbedding) -> float:
    if a.dim != b.dim:
        raise ValueError(f"dimension mismatch: {a.dim} vs {b.dim}")
    return float(a.vector @ b.vector)


def same_speaker(similarity: float, threshold: float = SAME_SPEAKER_THRESHOLD) -> bool:
    return similarity > threshold


def save_embeddings(path: str | os.PathLike, embeddings: dict[str, SpeakerEmbedding]) -> None:
    save_checkpoint(path, {k: e.vector for k, e in embeddings.items()},
                    meta={"levels": ",".join(f"{k}={e.level}" for k, e in embeddings.items())})


def load_embeddings(path: str | os.PathLike) -> dict[str, SpeakerEmbedding]:
    arrays, meta = load_checkpoint(path)
    levels = dict(item.split("=", 1) for item in meta.get("levels", "").split(",") if item)
    # externally produced vectors may be stored unnormalised (or as f32); renormalise
    return {k: SpeakerEmbedding(_unit(v), levels.get(k, "speaker")) for k, v in arrays.items()}
