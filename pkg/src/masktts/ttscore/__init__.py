from .attention import GmmAttentionState, gmm_attention_step, mixture_alignment
from .model import (END, N_LETTERS, START, DecoderOutput, SymbolSequence, TtsConfig, TtsModel,
                    align_noise_rep, stop_targets, tts_loss)

__all__ = ["END", "N_LETTERS", "START", "DecoderOutput", "GmmAttentionState", "SymbolSequence",
           "TtsConfig", "TtsModel", "align_noise_rep", "gmm_attention_step", "mixture_alignment",
           "stop_targets", "tts_loss"]
