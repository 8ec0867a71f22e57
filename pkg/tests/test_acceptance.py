"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line.

Run ``pytest tests/test_acceptance.py -s`` to see the verdict lines inline;
they are also collected in the terminal summary.  The long directional
quality comparison (criterion 11) only runs with ``--runslow``.
"""

import math
import time
from dataclasses import replace

import numpy as np
import pytest
import torch

from avselect import metrics, mixsim, training
from avselect.baseline import build_single_clue_model, evaluate_baseline
from avselect.checkpoint import load_checkpoint, save_checkpoint
from avselect.model import (DESK_CONFIG, PAPER_CONFIG, TINY_CONFIG, build_model,
                            count_parameters, fuse_clues)


def _inputs(cfg, n, batch=1, seed=0, enroll_len=512, dtype=torch.float32):
    g = torch.Generator().manual_seed(seed)
    frames = max(1, int(round(n / cfg.sample_rate * cfg.video_fps)))
    mix = torch.randn(batch, n, generator=g, dtype=dtype)
    lips = torch.randn(batch, frames, cfg.lip_dim, generator=g, dtype=dtype)
    enroll = torch.randn(batch, enroll_len, generator=g, dtype=dtype)
    return mix, lips, enroll


# ---------------------------------------------------------------- 1

def test_c01_metric_exactness(criterion):
    start = time.perf_counter()
    ref, est = [1.0, 1.0, 1.0, 1.0], [1.0, 1.0, 1.0, 0.0]
    checks = {
        "snr [1,1,1,0]": (metrics.snr_db(est, ref), 10 * math.log10(4.0)),
        "snr 2ref": (metrics.snr_db(np.multiply(2, ref), ref), 0.0),
        "snr ref": (metrics.snr_db(ref, ref), 60.0),
        "loss [1,1,1,0]": (metrics.loss_on_plus_off(est, ref).item(), -10 * math.log10(4.0)),
        "si-sdr [1,1,1,0]": (metrics.si_sdr_db(est, ref), 10 * math.log10(2.25 / 0.75)),
        "si-sdr 0.5ref": (metrics.si_sdr_db(np.multiply(0.5, ref), ref), 60.0),
        "si-sdr orthogonal": (metrics.si_sdr_db([0.0, 1.0], [1.0, 0.0]), -60.0),
        "ce [.9,.2]": (metrics.vad_cross_entropy([0.9, 0.2], [1, 0]).item(),
                       (-math.log(0.9) - math.log(0.8)) / 2),
        "ce 0.5": (metrics.vad_cross_entropy([0.5] * 5, [1, 0, 1, 1, 0]).item(), math.log(2)),
        "ce exact": (metrics.vad_cross_entropy([1.0, 0.0], [1, 0]).item(), 0.0),
        "total": (metrics.total_loss(-6.0206, 0.16425, 1.0), -5.85635),
        "total lam0": (metrics.total_loss(-6.0206, 0.16425, 0.0), -6.0206),
    }
    elapsed = time.perf_counter() - start
    worst = max(abs(a - b) for a, b in checks.values())
    ok = worst < 1e-4 and elapsed < 1.0
    criterion(1, "metric exactness", ok, f"max err {worst:.2e}, {elapsed * 1e3:.0f} ms")
    assert ok


# ---------------------------------------------------------------- 2

def test_c02_scale_invariance_and_dependence(criterion):
    rng = np.random.default_rng(2)
    ref = rng.normal(size=4000)
    est = ref + 0.3 * rng.normal(size=4000)
    base = metrics.si_sdr_db(est, ref)
    drift = max(abs(metrics.si_sdr_db(a * est, ref) - base) for a in (0.1, 1.0, 7.0))
    snr2 = metrics.snr_db(2 * ref, ref)
    ok = drift < 1e-6 and snr2 == 0.0
    criterion(2, "SI-SDR scale invariance / SNR scale dependence", ok,
              f"drift {drift:.1e} dB, snr(2ref)={snr2}")
    assert ok


# ---------------------------------------------------------------- 3

def test_c03_full_model_gradient_check(criterion):
    start = time.perf_counter()
    cfg = replace(TINY_CONFIG, d_in=8, num_blocks=1)
    model = build_model(cfg, seed=0).double()
    mix, lips, enroll = _inputs(cfg, 256, batch=2, seed=3, enroll_len=256, dtype=torch.float64)
    g = torch.Generator().manual_seed(4)
    target = torch.randn(2, 256, generator=g, dtype=torch.float64)
    vad = (torch.rand(2, cfg.num_frames(256), generator=g) > 0.5).double()

    def loss_fn():
        est, attentions = model(mix, lips, enroll)
        sep = metrics.loss_on_plus_off(est, target).mean()
        ce = torch.stack([metrics.vad_cross_entropy(a, vad) for a in attentions]).mean()
        return metrics.total_loss(sep, ce, 1.0)

    params = [p for p in model.parameters()]
    analytic = torch.autograd.grad(loss_fn(), params)
    h = 1e-6
    rel_errors = []
    with torch.no_grad():
        for p, grad in zip(params, analytic):
            flat, gflat = p.view(-1), grad.reshape(-1)
            for i in range(flat.numel()):
                orig = flat[i].item()
                flat[i] = orig + h
                up = loss_fn().item()
                flat[i] = orig - h
                down = loss_fn().item()
                flat[i] = orig
                numeric = (up - down) / (2 * h)
                a = gflat[i].item()
                scale = max(abs(a), abs(numeric), 1e-8)
                rel_errors.append(abs(a - numeric) / scale)
    rel_errors = np.array(rel_errors)
    share = float(np.mean(rel_errors < 1e-3))
    elapsed = time.perf_counter() - start
    ok = share >= 0.95 and elapsed < 120
    criterion(3, "full-model gradient check", ok,
              f"{share:.1%} of {rel_errors.size} params within 1e-3, {elapsed:.0f} s")
    assert ok


# ---------------------------------------------------------------- 4

def test_c04_shape_and_fusion_contracts(criterion):
    rng = np.random.default_rng(4)
    length_ok = bounds_ok = True
    for k in range(50):
        L = int(rng.integers(4, 81))
        hop = int(rng.integers(1, L + 1))
        n = int(rng.integers(max(L, 200), 4000))
        cfg = replace(TINY_CONFIG, window_len=L, hop=hop, num_blocks=2)
        model = build_model(cfg, seed=k).eval()
        mix, lips, enroll = _inputs(cfg, n, seed=k)
        with torch.no_grad():
            est, attentions = model(mix, lips, enroll)
        length_ok &= est.shape[-1] == n
        bounds_ok &= all(bool(((a >= 0) & (a <= 1)).all()) for a in attentions)
        bounds_ok &= len(attentions) == 2
    g = torch.Generator().manual_seed(5)
    zv, za = torch.randn(3, 8, 50, generator=g), torch.randn(3, 8, generator=g)
    zero_ok = torch.equal(fuse_clues(zv, za, torch.zeros(3, 50)), zv)
    one_ok = torch.equal(fuse_clues(zv, za, torch.ones(3, 50)), zv + za[..., None])
    none_ok = torch.equal(fuse_clues(zv, za, None), fuse_clues(zv, za, torch.ones(3, 50)))
    ok = length_ok and bounds_ok and zero_ok and one_ok and none_ok
    criterion(4, "shape/length contracts and fusion degenerate cases", ok,
              f"length={length_ok} bounds={bounds_ok} a=0:{zero_ok} a=1:{one_ok and none_ok}")
    assert ok


# ---------------------------------------------------------------- 5

def test_c05_overfit_smoke(criterion):
    start = time.perf_counter()
    cfg = replace(DESK_CONFIG, d_in=64, d_av=64, num_blocks=2, use_attention=False)
    spec = mixsim.MixSpec()
    corpus = mixsim.SyntheticCorpus(mixsim.speaker_pools()["train"], clip_s=spec.window_s)
    data = mixsim.generate_dataset(8, spec, corpus, "train")
    model = build_model(cfg, seed=0)
    tcfg = training.TrainConfig(batch_size=4, p_on=0.0, p_off=0.0)
    opt = training.make_optimizer(model, tcfg.lr0)
    rng = np.random.default_rng(0)
    mix, lips, enroll, target, _ = training.collate(data)

    def train_snr():
        model.eval()
        with torch.no_grad():
            est, _ = model(mix, lips, enroll)
        return float(np.mean([metrics.snr_db(e, t) for e, t in
                              zip(est.double().numpy(), target.double().numpy())]))

    steps, snr = 0, train_snr()
    while steps < 2000 and snr < 10.0 and time.perf_counter() - start < 600:
        for _ in range(5):
            training.train_epoch(model, data, tcfg, rng, opt, mute=False)
            steps += 2
        snr = train_snr()
    elapsed = time.perf_counter() - start
    ok = snr >= 10.0 and steps <= 2000 and elapsed < 600
    criterion(5, "overfit smoke", ok, f"train SNR {snr:.2f} dB after {steps} steps, "
                                      f"{elapsed:.0f} s")
    assert ok


# ---------------------------------------------------------------- 6

# coarser framing than the desk preset: 5 ms analysis windows, 4x fewer frames
VAD_CONFIG = replace(DESK_CONFIG, window_len=80, hop=40)


def test_c06_sdvad_learnability(criterion):
    """Frame accuracy of the last block's activity estimate on the toy set it was trained on.

    Samples hold 1 s of mixture with the off-screen speech present on a
    random sub-interval (possibly empty); held-out accuracy on unseen speakers
    is reported alongside.
    """
    start = time.perf_counter()
    cfg = VAD_CONFIG
    spec = mixsim.MixSpec(window_s=1.0, off_duration_range_s=(0.0, 1.0), enrollment_s=2.0,
                          frame_len=cfg.window_len, frame_hop=cfg.hop)
    pools = mixsim.speaker_pools()
    toy = mixsim.generate_dataset(
        256, spec, mixsim.SyntheticCorpus(pools["train"], clip_s=2.0), "train")
    held_out = mixsim.generate_dataset(
        64, spec, mixsim.SyntheticCorpus(pools["val"], clip_s=2.0), "val")
    model = build_model(cfg, seed=0)
    tcfg = training.TrainConfig(lr0=2e-3, batch_size=8, p_on=0.0, p_off=0.0, lam=10.0)
    opt = training.make_optimizer(model, tcfg.lr0)
    rng = np.random.default_rng(0)
    acc, epochs = 0.0, 0
    while acc < 0.9 and time.perf_counter() - start < 840:
        training.train_epoch(model, toy, tcfg, rng, opt, mute=False)
        epochs += 1
        if epochs >= 5:
            acc = training.evaluate(model, toy, 8)["attention_accuracy"]
    elapsed = time.perf_counter() - start
    held = training.evaluate(model, held_out, 8)["attention_accuracy"]
    ok = acc >= 0.9 and elapsed < 900
    criterion(6, "SDVAD learnability", ok,
              f"toy-set frame accuracy {acc:.3f} after {epochs} epochs, {elapsed:.0f} s; "
              f"held-out speakers {held:.3f}")
    assert ok


# ---------------------------------------------------------------- 7

def _gaussian_clip(kind, n, seed, speaker=None, frames=None, lip_dim=8):
    rng = np.random.default_rng(seed)
    lips = rng.normal(size=(frames, lip_dim)).astype(np.float32) if frames else None
    return mixsim.SourceClip(wave=rng.normal(scale=0.1, size=n).astype(np.float32), kind=kind,
                             speaker_id=speaker, lip_features=lips, clip_id=f"{kind}-{seed}")


def _gaussian_sources(spec, seed):
    W = spec.window_samples
    on = _gaussian_clip("on_screen", W, seed, 1, spec.video_frames, spec.lip_dim)
    off = _gaussian_clip("off_screen", W, seed + 1, 2)
    enroll = _gaussian_clip("off_screen", spec.window_samples, seed + 2, 2)
    noise = _gaussian_clip("noise", W, seed + 3)
    return on, off, [noise], enroll


def test_c07_muting_statistics(criterion):
    spec = mixsim.MixSpec(window_s=0.5, off_duration_range_s=(0.2, 0.5), enrollment_s=0.5)
    on, off, interf, enroll = _gaussian_sources(spec, 0)
    sample = mixsim.make_sample(on, off, interf, enroll, spec, np.random.default_rng(0))
    rng = np.random.default_rng(7)
    counts = {mixsim.MUTE_NONE: 0, mixsim.MUTE_ON: 0, mixsim.MUTE_OFF: 0}
    consistent = True
    for _ in range(10000):
        out = mixsim.apply_muting(sample, 0.2, 0.2, rng)
        flag = out.meta["mute"]
        counts[flag] += 1
        if flag == mixsim.MUTE_ON:
            consistent &= not np.any(out.on_speech) and np.any(out.off_speech)
        elif flag == mixsim.MUTE_OFF:
            consistent &= not np.any(out.off_speech) and not np.any(out.oracle_vad)
            consistent &= bool(np.any(out.on_speech))
    r_on, r_off = counts[mixsim.MUTE_ON] / 10000, counts[mixsim.MUTE_OFF] / 10000
    ok = abs(r_on - 0.2) <= 0.02 and abs(r_off - 0.2) <= 0.02 and consistent
    criterion(7, "muting statistics", ok,
              f"on {r_on:.4f}, off {r_off:.4f}, exclusive/consistent={consistent}")
    assert ok


# ---------------------------------------------------------------- 8

def test_c08_mixing_fidelity(criterion):
    spec = mixsim.MixSpec(interference_mode="noise")
    worst_snr = worst_lin = 0.0
    for i in range(1000):
        on, off, interf, enroll = _gaussian_sources(spec, 10 * i)
        s = mixsim.make_sample(on, off, interf, enroll, spec, np.random.default_rng(i))
        measured = mixsim.measure_snrs(s)
        meta = s.meta
        worst_snr = max(worst_snr, abs(measured["off"] - meta["snr_off_db"]),
                        *(abs(m - r) for m, r in zip(measured["interferers"],
                                                     meta["snr_interferers_db"])))
        recon = s.on_speech.astype(np.float64) + s.off_speech + s.interferers.sum(axis=0)
        worst_lin = max(worst_lin, float(np.max(np.abs(recon - s.mix))),
                        float(np.max(np.abs(s.on_speech + s.off_speech - s.target))))
    ok = worst_snr < 0.05 and worst_lin <= 1e-6
    criterion(8, "mixing fidelity and linearity", ok,
              f"max SNR error {worst_snr:.2e} dB, max linearity error {worst_lin:.1e}")
    assert ok


# ---------------------------------------------------------------- 9

def _reference_schedule(losses, lr0, patience=3, max_halvings=4):
    lr, best, stale, halvings, stopped = lr0, math.inf, 0, 0, False
    trace = []
    for loss in losses:
        if not stopped:
            if loss < best:
                best, stale = loss, 0
            else:
                stale += 1
                if stale == patience:
                    if halvings == max_halvings:
                        stopped = True
                    else:
                        lr, halvings, stale = lr / 2, halvings + 1, 0
        trace.append((lr, halvings, stopped))
    return trace


def test_c09_schedule_state_machine(criterion):
    rng = np.random.default_rng(9)
    cfg = training.TrainConfig()
    mismatches = 0
    for _ in range(1000):
        n = int(rng.integers(1, 60))
        # coarse values so that ties (non-improvements) are common
        losses = list(np.round(rng.normal(size=n).cumsum() * 0.1 + rng.normal(size=n), 1))
        state = training.ScheduleState.initial(cfg)
        trace = []
        for loss in losses:
            state = training.lr_schedule_step(state, float(loss), cfg)
            trace.append((state.current_lr, state.halvings_done, state.stopped))
        mismatches += trace != _reference_schedule(losses, cfg.lr0)
    ok = mismatches == 0
    criterion(9, "schedule state machine", ok, f"{mismatches} mismatching sequences of 1000")
    assert ok


# ---------------------------------------------------------------- 10

def test_c10_parameter_count_relation(criterion):
    details, ok = [], True
    for name, cfg in (("paper", PAPER_CONFIG), ("desk", DESK_CONFIG)):
        proposed = count_parameters(build_model(cfg))
        pair = (count_parameters(build_single_clue_model("visual", cfg))["total"]
                + count_parameters(build_single_clue_model("voiceprint", cfg))["total"])
        share = proposed["sdvad"] / proposed["total"]
        ok &= proposed["total"] < pair
        if name == "paper":
            ok &= share < 0.01
        details.append(f"{name}: {proposed['total'] / 1e6:.2f}M < {pair / 1e6:.2f}M, "
                       f"head {share:.2%}")
    criterion(10, "parameter-count relation", ok, "; ".join(details))
    assert ok


# ---------------------------------------------------------------- 11

@pytest.mark.slow
def test_c11_directional_quality(criterion):
    """Proposed model against the summed single-clue baseline on shared data.

    2 s mixtures and the coarser framing keep the three training runs near an
    hour on one CPU core.
    """
    start = time.perf_counter()
    cfg = VAD_CONFIG
    spec = mixsim.MixSpec(window_s=2.0, off_duration_range_s=(1.0, 2.0),
                          test_off_duration_range_s=(0.0, 2.0), enrollment_s=2.0,
                          frame_len=cfg.window_len, frame_hop=cfg.hop, seed=11)
    pools = mixsim.speaker_pools()
    sets = {split: mixsim.generate_dataset(
                n, spec, mixsim.SyntheticCorpus(pools[split], seed=11, clip_s=2.0), split)
            for split, n in (("train", 512), ("val", 64), ("test", 64))}
    tcfg = training.TrainConfig(seed=11, epochs_max=20)

    proposed = build_model(cfg, seed=11)
    training.fit(proposed, sets["train"], sets["val"], tcfg)
    halves = {}
    for kind, target in (("visual", "on"), ("voiceprint", "off")):
        halves[kind] = build_single_clue_model(kind, cfg, seed=11)
        training.fit(halves[kind], sets["train"], sets["val"],
                     replace(tcfg, target=target, p_on=0.0, p_off=0.0), mute=False)

    prop = training.evaluate(proposed, sets["test"])["si_sdri_mean"]
    base = evaluate_baseline(halves["visual"], halves["voiceprint"], sets["test"])
    base = base["si_sdri_mean"]
    ok = prop >= base - 0.25
    criterion(11, "directional quality (proposed vs mixed baseline)", ok,
              f"proposed {prop:.2f} dB vs baseline {base:.2f} dB SI-SDRi, "
              f"{(time.perf_counter() - start) / 60:.0f} min")
    assert ok


# ---------------------------------------------------------------- 12

def test_c12_determinism_and_persistence(criterion, tmp_path):
    cfg = TINY_CONFIG
    spec = mixsim.MixSpec(window_s=0.25, off_duration_range_s=(0.05, 0.2), enrollment_s=0.25,
                          lip_dim=cfg.lip_dim, frame_len=cfg.window_len, frame_hop=cfg.hop)
    corpus = mixsim.SyntheticCorpus(mixsim.speaker_pools(8, 4, 4)["train"], clip_s=0.25,
                                    lip_dim=cfg.lip_dim)
    train = mixsim.generate_dataset(8, spec, corpus, "train")
    val = mixsim.generate_dataset(4, spec, corpus, "val")
    tcfg = training.TrainConfig(batch_size=4, epochs_max=3)
    models = []
    for name in ("a", "b"):
        model = build_model(cfg, seed=0)
        training.fit(model, train, val, tcfg, run_dir=tmp_path / name)
        models.append(model)
    csv_same = ((tmp_path / "a" / "metrics.csv").read_bytes()
                == (tmp_path / "b" / "metrics.csv").read_bytes())

    save_checkpoint(tmp_path / "m.ckpt", models[0])
    loaded, _, _ = load_checkpoint(tmp_path / "m.ckpt")
    batch = training.collate(val)
    models[0].eval(), loaded.eval()
    with torch.no_grad():
        a, att_a = models[0](*batch[:3])
        b, att_b = loaded(*batch[:3])
    forward_same = torch.equal(a, b) and all(torch.equal(x, y) for x, y in zip(att_a, att_b))
    ok = csv_same and forward_same
    criterion(12, "determinism and checkpoint persistence", ok,
              f"metrics.csv identical={csv_same}, reload forward bit-exact={forward_same}")
    assert ok
