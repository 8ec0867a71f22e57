"""
Training, evaluation and the mixing baseline
============================================

A few epochs on a small synthetic benchmark.  Numbers here only show the
plumbing; meaningful comparisons need the full desk-scale runs (see the CLI).
"""

# %%
from dataclasses import replace

import numpy as np

from avselect import mixsim, training
from avselect.baseline import build_single_clue_model, evaluate_baseline
from avselect.model import TINY_CONFIG, build_model

cfg = replace(TINY_CONFIG, d_in=16, d_av=16, tcn_channels=32)
spec = mixsim.MixSpec(window_s=0.5, off_duration_range_s=(0.1, 0.4), enrollment_s=0.5,
                      lip_dim=cfg.lip_dim, frame_len=cfg.window_len, frame_hop=cfg.hop)
pools = mixsim.speaker_pools(16, 8, 8)
sets = {split: mixsim.generate_dataset(n, spec, mixsim.SyntheticCorpus(
            pools[split], clip_s=0.5, lip_dim=cfg.lip_dim), split)
        for split, n in (("train", 32), ("val", 8), ("test", 8))}

# %%
# The proposed model: attention supervised by the oracle activity, muting on.
tcfg = training.TrainConfig(batch_size=4, epochs_max=5)
model = build_model(cfg, seed=0)
result = training.fit(model, sets["train"], sets["val"], tcfg)
print(training.history_csv(result.history))
report = training.evaluate(model, sets["test"])
print("proposed SI-SDRi", round(report["si_sdri_mean"], 2),
      "attention accuracy", round(report["attention_accuracy"], 3))

# %%
# The baseline trains one extractor per clue and adds their outputs.
halves = {}
for kind, target in (("visual", "on"), ("voiceprint", "off")):
    halves[kind] = build_single_clue_model(kind, cfg, seed=0)
    training.fit(halves[kind], sets["train"], sets["val"],
                 replace(tcfg, target=target, p_on=0.0, p_off=0.0), mute=False)
base = evaluate_baseline(halves["visual"], halves["voiceprint"], sets["test"])
print("baseline SI-SDRi", round(base["si_sdri_mean"], 2))

# %%
# Muting grid: one training run per valid (p_on, p_off) pair.
grid = training.grid_search_muting([0.0, 0.6], [0.0, 0.6], lambda: build_model(cfg, seed=0),
                                   sets["train"], sets["val"], sets["test"],
                                   replace(tcfg, epochs_max=1))
print(training.grid_csv(grid))
print("null model SI-SDRi", training.evaluate(training.NullModel(), sets["test"])["si_sdri_mean"])
print("mean oracle activity", np.mean([s.oracle_vad.mean() for s in sets["test"]]))
