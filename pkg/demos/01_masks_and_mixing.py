# %% [markdown]
# # Denoise masks on a synthetic voice
#
# Render one utterance, mix in noise at a few SNRs, and look at what the
# ideal mask does to the noisy mel and what the conditioning grid looks like.

# %%
import numpy as np

from masktts import dsp, maskkit
from masktts.pipeline import corpus as cp

cfg = dsp.DspConfig()
spec = cp.default_speakers(4)[1]
utt = cp.clean_utterance(spec, [3, 7, 1, 12, 5], "demo", cfg, symbol_frames=6, seed=0)
print(spec)
print("frames x mels:", utt.clean.bins.shape)

# %%
for snr in (-5.0, 0.0, 5.0):
    noisy = cp.noisy_variant(utt, "white", snr, cfg, seed=1)
    recovered = maskkit.apply_mask(noisy.clean.bins + dsp.mel_spectrogram(noisy.noise_wav, cfg).bins,
                                   noisy.mask)
    print(f"{snr:+.0f} dB  measured {dsp.measured_snr(noisy.clean_wav, noisy.noise_wav):+.6f} dB"
          f"  noisy SI-SDR {dsp.si_sdr_mel(utt.clean, noisy.noisy):6.2f}"
          f"  masked SI-SDR {dsp.si_sdr_mel(utt.clean, maskkit.apply_mask(noisy.noisy, noisy.mask)):6.2f}"
          f"  additive reconstruction err {np.abs(recovered - utt.clean.bins).max():.1e}")

# %% [markdown]
# The conditioning grid: mask clipped to [0.1, 1], log, mapped onto [-4, 4].
# The clean mask is the constant +4 grid.

# %%
grid = maskkit.normalize_for_conditioning(noisy.mask)
print("conditioning range", grid.min(), grid.max())
print("clean mask ->", np.unique(maskkit.normalize_for_conditioning(maskkit.clean_mask(3, 4))))
print("fraction of bins below 0 (noise dominated):", np.mean(grid < 0).round(3))
