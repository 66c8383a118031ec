# %% [markdown]
# # Pretrain, adapt on a noisy voice, synthesise with the clean mask
#
# A deliberately small run (tiny widths, short texts, ideal masks instead of a
# trained enhancer) so it finishes in well under a minute. The acceptance
# suite runs the same protocol at the default size.

# %%
import numpy as np

from masktts.pipeline import NEW_SPEAKER, RunConfig, build_corpus, run_adapt, run_infer, run_pretrain
from masktts.pipeline.stages import log_mel

run = RunConfig.from_dict({
    "dsp": {"n_mels": 16},
    "tts": {"embed_dim": 8, "enc_prenet": 16, "enc_rnn": 8, "att_rnn": 32, "dec_rnn": 32,
            "dec_prenet": 16, "postnet_channels": 16, "init_kappa_step": 0.67},
    "pipeline": {"n_speakers": 3, "texts_per_speaker": 6, "text_length": 3, "symbol_frames": 3,
                 "adapt_utterances": 4, "heldout_texts": 3, "enh_test_per_snr": 1,
                 "mask_mode": "ideal",
                 "pretrain": {"steps": 300, "lr": 3e-3, "batch_size": 12, "log_every": 0},
                 "adapt": {"steps": 150, "lr": 1e-3, "batch_size": 4, "log_every": 0}},
})
corpus = build_corpus(run, seed=0)

# %%
pre = run_pretrain(corpus, run, seed=0)
print("pretrain loss", pre.losses[0], "->", np.mean(pre.losses[-20:]))
adapted = run_adapt(pre.model, pre.meta, corpus.select(split="adapt"), run, seed=0)
print("adapt loss", adapted.losses[0], "->", np.mean(adapted.losses[-20:]))
print("lineage:", adapted.meta["lineage"])

# %% [markdown]
# Clean-mask versus reference-mask synthesis of held-out texts, compared with
# the clean rendering nobody trained on.

# %%
emb = adapted.embeddings[NEW_SPEAKER]
for u in corpus.select(split="heldout"):
    oracle = log_mel(u.clean.bins)
    clean = run_infer(adapted.model, u.symbols, emb, "clean", n_frames=u.n_frames)
    ref = run_infer(adapted.model, u.symbols, emb, "reference", u.mask, n_frames=u.n_frames)
    print(u.utt_id, "clean-mask MSE %.3f" % np.mean((clean.after_mel - oracle) ** 2),
          " reference-mask MSE %.3f" % np.mean((ref.after_mel - oracle) ** 2))
