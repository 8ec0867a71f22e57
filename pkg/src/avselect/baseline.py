"""Mixing-based baseline: two single-clue extractors whose outputs are summed.

The visual model is trained to extract only the on-screen speech and the
voiceprint model only the off-screen speech.  Both reuse the proposed
backbone (encoder, TCN extractor blocks, decoder) so the comparison isolates
joint versus separate estimation.  Skip-connection paths of the original
voiceprint extractor are not modelled.
"""

from dataclasses import replace

import numpy as np
import torch

from .errors import ContractError
from .model import AVSelectNet
from .training import evaluate

KIND_TARGET = {"visual": "on", "voiceprint": "off"}


def build_single_clue_model(kind, cfg, seed=0):
    """Backbone conditioned on one clue; the other clue's encoder is not built."""
    if kind not in KIND_TARGET:
        raise ContractError(f"kind must be 'visual' or 'voiceprint', got {kind!r}")
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        return AVSelectNet(replace(cfg, clue=kind, use_attention=False))


def mix_outputs(est_on, est_off):
    """Sample-wise sum of the two single-target estimates."""
    if est_on.shape != est_off.shape:
        raise ContractError(f"length mismatch: {tuple(est_on.shape)} vs {tuple(est_off.shape)}")
    if isinstance(est_on, np.ndarray):
        return np.asarray(est_on) + np.asarray(est_off)
    return est_on + est_off


class MixedBaseline(torch.nn.Module):
    """Runs both single-clue models on the same input and adds their outputs."""

    def __init__(self, visual_model, voiceprint_model):
        super().__init__()
        if visual_model.cfg.clue != "visual" or voiceprint_model.cfg.clue != "voiceprint":
            raise ContractError("expected a visual model and a voiceprint model, in that order")
        self.visual = visual_model
        self.voiceprint = voiceprint_model

    def forward(self, mix, lips=None, enrollment=None):
        est_on, _ = self.visual(mix, lips, None)
        est_off, _ = self.voiceprint(mix, None, enrollment)
        return mix_outputs(est_on, est_off), []


def evaluate_baseline(visual_model, voiceprint_model, dataset, batch_size=4):
    """Same report as :func:`avselect.training.evaluate`, on the summed estimates."""
    report = evaluate(MixedBaseline(visual_model, voiceprint_model), dataset, batch_size)
    report["notes"] = ["single-clue backbones; voiceprint skip connections omitted"]
    return report
