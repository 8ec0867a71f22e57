"""
Separation metrics and losses
=============================

Scale-dependent SNR (the training objective), SI-SDR, their improvements
over the unprocessed mixture, and the frame-wise activity cross-entropy.
"""

# %%
# A four-sample toy signal where the estimate drops the last sample.
import numpy as np
import torch

from avselect import metrics

ref = np.ones(4)
est = np.array([1.0, 1.0, 1.0, 0.0])
print("SNR     ", metrics.snr_db(est, ref))      # 10 log10(4/1)
print("SI-SDR  ", metrics.si_sdr_db(est, ref))   # alpha = 3/4
print("loss    ", metrics.loss_on_plus_off(est, ref).item())

# %%
# SNR punishes a wrong gain, SI-SDR does not.
rng = np.random.default_rng(0)
clean = rng.normal(size=16000)
noisy = clean + 0.1 * rng.normal(size=16000)
for gain in (1.0, 2.0):
    print(f"gain {gain}: SNR {metrics.snr_db(gain * noisy, clean):6.2f} dB, "
          f"SI-SDR {metrics.si_sdr_db(gain * noisy, clean):6.2f} dB")

# %%
# Improvements are measured against the mixture; doing nothing scores zero.
mix = clean + rng.normal(size=16000)
denoised = clean + 0.3 * rng.normal(size=16000)
print("SI-SDRi (no-op)    ", metrics.si_sdri(mix, mix, clean))
print("SI-SDRi (denoised) ", round(metrics.si_sdri(denoised, mix, clean), 2))
print("SDRi    (denoised) ", round(metrics.sdri(denoised, mix, clean), 2))

# %%
# Activity cross-entropy, and the multi-task objective.
ce = metrics.vad_cross_entropy(torch.tensor([0.9, 0.2]), torch.tensor([1.0, 0.0]))
print("CE        ", ce.item())
print("total     ", metrics.total_loss(metrics.loss_on_plus_off(est, ref), ce, 1.0).item())
