"""Run configuration: one JSON document with ``dsp``, ``enhancer``, ``tts`` and ``pipeline`` sections."""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field

from ..dsp import DspConfig
from ..enhancer import EnhancerConfig, TrainConfig
from ..ttscore.model import TtsConfig


def _pick(cls, d: dict | None):
    known = set(cls.__dataclass_fields__)
    unknown = set(d or {}) - known
    if unknown:
        raise ValueError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    return cls(**(d or {}))


@dataclass
class TtsTrainSettings:
    steps: int = 3000
    lr: float = 2e-3
    batch_size: int = 16
    grad_clip: float = 1.0
    log_every: int = 200


@dataclass
class PipelineSettings:
    n_speakers: int = 4
    texts_per_speaker: int = 24
    text_length: int = 5
    symbol_frames: int = 6
    snr_levels: list = field(default_factory=lambda: [-5.0, 0.0, 5.0])
    noise_kinds: list = field(default_factory=lambda: ["white", "tonal", "chirp"])
    adapt_utterances: int = 8
    adapt_snr_levels: list = field(default_factory=lambda: [-5.0, 0.0])
    heldout_texts: int = 10
    enh_test_per_snr: int = 12
    mask_mode: str = "predicted"     # predicted | ideal
    baseline: bool = False
    embed_seed: int = 0
    pretrain: TtsTrainSettings = field(default_factory=TtsTrainSettings)
    adapt: TtsTrainSettings = field(default_factory=lambda: TtsTrainSettings(
        steps=2000, lr=1e-4, batch_size=8))

    def __post_init__(self):
        if isinstance(self.pretrain, dict):
            self.pretrain = _pick(TtsTrainSettings, self.pretrain)
        if isinstance(self.adapt, dict):
            self.adapt = _pick(TtsTrainSettings, self.adapt)
        if self.mask_mode not in ("predicted", "ideal"):
            raise ValueError(f"mask_mode must be 'predicted' or 'ideal', got {self.mask_mode!r}")
        if self.n_speakers < 2:
            raise ValueError("pretraining needs at least two speakers")
        if not self.snr_levels or not self.adapt_snr_levels:
            raise ValueError("SNR level lists must be non-empty")


@dataclass
class RunConfig:
    dsp: DspConfig = field(default_factory=DspConfig)
    enhancer: EnhancerConfig = field(default_factory=EnhancerConfig)
    enhancer_train: TrainConfig = field(default_factory=TrainConfig)
    tts: TtsConfig = field(default_factory=TtsConfig)
    pipeline: PipelineSettings = field(default_factory=PipelineSettings)

    @classmethod
    def from_dict(cls, doc: dict | None) -> "RunConfig":
        doc = dict(doc or {})
        unknown = set(doc) - {"dsp", "enhancer", "tts", "pipeline"}
        if unknown:
            raise ValueError(f"unknown config sections: {sorted(unknown)}")
        enh = dict(doc.get("enhancer") or {})
        train = enh.pop("train", None)
        dsp = _pick(DspConfig, doc.get("dsp"))
        tts = dict(doc.get("tts") or {})
        tts.setdefault("n_mels", dsp.n_mels)
        enh.setdefault("n_mels", dsp.n_mels)
        cfg = cls(dsp, _pick(EnhancerConfig, enh), _pick(TrainConfig, train),
                  _pick(TtsConfig, tts), _pick(PipelineSettings, doc.get("pipeline")))
        if cfg.tts.n_mels != cfg.dsp.n_mels or cfg.enhancer.n_mels != cfg.dsp.n_mels:
            raise ValueError("n_mels must agree across dsp, enhancer and tts sections")
        return cfg

    def to_dict(self) -> dict:
        enh = asdict(self.enhancer)
        enh["train"] = asdict(self.enhancer_train)
        return {"dsp": asdict(self.dsp), "enhancer": enh, "tts": asdict(self.tts),
                "pipeline": asdict(self.pipeline)}


def load_config(path: str | os.PathLike | None) -> RunConfig:
    if path is None:
        return RunConfig()
    with open(path) as fh:
        return RunConfig.from_dict(json.load(fh))


STAGE_KEYS = {
    "pretrain": ("corpus",),
    "adapt": ("corpus", "checkpoint"),
    "infer": ("checkpoint", "embeddings"),
}


@dataclass
class StageConfig:
    """One stage invocation: which inputs it reads, where it writes, and its seed."""

    stage: str
    paths: dict[str, str]
    run: RunConfig = field(default_factory=RunConfig)
    seed: int = 0

    def __post_init__(self):
        if self.stage not in STAGE_KEYS:
            raise ValueError(f"unknown stage {self.stage!r}")
        missing = [k for k in STAGE_KEYS[self.stage] if not self.paths.get(k)]
        if missing:
            raise ValueError(f"stage {self.stage!r} needs paths for {missing}")
