"""
The selective extraction network
================================

Presets, parameter accounting, and a forward pass with per-block attention.
"""

# %%
import torch

from avselect import DESK_CONFIG, PAPER_CONFIG, build_model, count_parameters
from avselect.baseline import build_single_clue_model

for name, cfg in (("paper-size", PAPER_CONFIG), ("desk", DESK_CONFIG)):
    counts = count_parameters(build_model(cfg))
    pair = sum(count_parameters(build_single_clue_model(k, cfg))["total"]
               for k in ("visual", "voiceprint"))
    print(f"{name:10s} joint {counts['total'] / 1e6:6.2f}M  two single-clue models "
          f"{pair / 1e6:6.2f}M  attention head {counts['sdvad']}")

# %%
# One second of audio, its 25 fps lip track and a 2 s enrollment utterance.
model = build_model(DESK_CONFIG, seed=0).eval()
mix = torch.randn(2, 16000)
lips = torch.randn(2, 25, DESK_CONFIG.lip_dim)
enrollment = torch.randn(2, 32000)
with torch.no_grad():
    est, attentions = model(mix, lips, enrollment)
print("estimate", tuple(est.shape), "attention per block", [tuple(a.shape) for a in attentions])

# %%
# Without the attention head the voiceprint clue enters every frame with weight one.
from dataclasses import replace

plain = build_model(replace(DESK_CONFIG, use_attention=False), seed=0).eval()
with torch.no_grad():
    est, attentions = plain(mix, lips, enrollment)
print("attentions without head:", attentions)
