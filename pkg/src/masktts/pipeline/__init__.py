from .config import PipelineSettings, RunConfig, StageConfig, TtsTrainSettings, load_config
from .corpus import (Corpus, SyntheticSpeakerSpec, UtterancePair, augment, default_speakers,
                     generate_corpus, load_corpus, make_noise, random_texts, save_corpus)
from .evaluation import eval_enhancer, eval_similarity, oracle_distance, similarity_table
from .experiment import NEW_SPEAKER, build_corpus, reference_mels
from .stages import LineageError, Synthesis, run_adapt, run_infer, run_pretrain, train_tts

__all__ = ["Corpus", "LineageError", "NEW_SPEAKER", "PipelineSettings", "RunConfig",
           "StageConfig", "Synthesis", "SyntheticSpeakerSpec", "TtsTrainSettings",
           "UtterancePair", "augment", "build_corpus", "default_speakers", "eval_enhancer",
           "eval_similarity", "generate_corpus", "load_config", "load_corpus", "make_noise",
           "oracle_distance", "random_texts", "reference_mels", "run_adapt", "run_infer",
           "run_pretrain", "save_corpus", "similarity_table", "train_tts"]
