# %% [markdown]
# # Training the mel-domain enhancer
#
# Build the default synthetic corpus, train the CNN-DFSMN mask estimator on the
# noisy/clean training pairs, and print the SI-SDR table per input SNR.
# Takes about a minute on one CPU core.

# %%
import numpy as np

from masktts.enhancer import EnhancerModel, train_enhancer
from masktts.pipeline import RunConfig, build_corpus, eval_enhancer

run = RunConfig()
corpus = build_corpus(run, seed=0)
pairs = [(u.noisy.bins, u.clean.bins) for u in corpus.select(split="train", clean=False)]
print(len(pairs), "training pairs,", EnhancerModel(run.enhancer).parameter_count(), "parameters")

# %%
model = EnhancerModel(run.enhancer)
losses = train_enhancer(model, pairs, run.enhancer_train)
print("loss", losses[0], "->", np.mean(losses[-50:]))

# %%
test = corpus.select(split="enh_test")
print("snr   noisy  enhanced  ideal-mask")
for r, i in zip(eval_enhancer(model, test), eval_enhancer(lambda u: u.mask.values, test)):
    print(f"{r.snr_db:+4.0f} {r.noisy:7.2f} {r.enhanced:8.2f} {i.enhanced:10.2f}")
