"""Training loop, plateau learning-rate schedule, evaluation and the muting grid search.

Per step the objective is the negative SNR of the estimated target mixture,
plus ``lam`` times the activity cross-entropy averaged over extractor blocks
when the model has attention.  Muting is applied to training samples only.
The learning rate is halved after ``plateau_epochs`` epochs without a strict
improvement of the validation loss; training stops when a further halving
would exceed ``max_halvings``.
"""

import copy
import csv
import io
import json
import logging
import math
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

import numpy as np
import torch

from . import metrics
from .checkpoint import save_checkpoint
from .errors import ContractError, NumericalError
from .mixsim import apply_muting
from .model import component_of, count_parameters

log = logging.getLogger(__name__)

TARGETS = ("mixture", "on", "off")


@dataclass(frozen=True)
class TrainConfig:
    lr0: float = 1e-3
    plateau_epochs: int = 3
    max_halvings: int = 4
    epochs_max: int = 200
    batch_size: int = 4
    lam: float = 1.0
    p_on: float = 0.2
    p_off: float = 0.2
    seed: int = 0
    target: str = "mixture"
    grad_clip: float = 5.0
    max_steps: int = 0
    frozen: tuple = ()

    def __post_init__(self):
        if self.lr0 <= 0:
            raise ContractError("lr0 must be > 0")
        if self.lam < 0:
            raise ContractError("lam must be >= 0")
        if min(self.p_on, self.p_off) < 0 or self.p_on + self.p_off > 1:
            raise ContractError("need p_on, p_off >= 0 and p_on + p_off <= 1")
        if self.batch_size < 1 or self.plateau_epochs < 1 or self.max_halvings < 0:
            raise ContractError("batch_size and plateau_epochs must be >= 1, max_halvings >= 0")
        if self.target not in TARGETS:
            raise ContractError(f"target must be one of {TARGETS}")
        object.__setattr__(self, "frozen", tuple(self.frozen))

    def to_dict(self):
        d = asdict(self)
        d["frozen"] = list(self.frozen)
        return d

    @classmethod
    def from_dict(cls, data):
        unknown = set(data) - {f.name for f in fields(cls)}
        if unknown:
            raise ContractError(f"unknown TrainConfig keys: {sorted(unknown)}")
        return cls(**data)


@dataclass(frozen=True)
class ScheduleState:
    current_lr: float
    best_val_loss: float = math.inf
    epochs_since_improve: int = 0
    halvings_done: int = 0
    stopped: bool = False

    @classmethod
    def initial(cls, cfg):
        return cls(current_lr=cfg.lr0)

    def to_dict(self):
        d = asdict(self)
        if math.isinf(d["best_val_loss"]):
            d["best_val_loss"] = None
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if d.get("best_val_loss") is None:
            d["best_val_loss"] = math.inf
        return cls(**d)


def lr_schedule_step(state, val_loss, cfg):
    """Advance the plateau schedule by one epoch's validation loss."""
    if state.stopped:
        return state
    if val_loss < state.best_val_loss:
        return replace(state, best_val_loss=val_loss, epochs_since_improve=0)
    stale = state.epochs_since_improve + 1
    if stale < cfg.plateau_epochs:
        return replace(state, epochs_since_improve=stale)
    if state.halvings_done >= cfg.max_halvings:
        return replace(state, epochs_since_improve=stale, stopped=True)
    return replace(state, current_lr=state.current_lr / 2, epochs_since_improve=0,
                   halvings_done=state.halvings_done + 1)


def collate(samples, target="mixture"):
    """Stack samples into float32 tensors: mix, lips, enrollment, target, vad."""
    def stack(name):
        return torch.from_numpy(np.stack([getattr(s, name) for s in samples]).astype(np.float32))

    tgt = {"mixture": "target", "on": "on_speech", "off": "off_speech"}[target]
    return stack("mix"), stack("lip_features"), stack("enrollment"), stack(tgt), stack("oracle_vad")


def batch_loss(model, batch, lam):
    """Return (total, separation, cross-entropy or None) averaged over the batch."""
    mix, lips, enroll, target, vad = batch
    est, attentions = model(mix, lips, enroll)
    l_sep = metrics.loss_on_plus_off(est, target.to(est.dtype)).mean()
    if not attentions:
        return l_sep, l_sep, None
    vad = vad.to(est.dtype)
    l_ce = torch.stack([metrics.vad_cross_entropy(a, vad) for a in attentions]).mean()
    return metrics.total_loss(l_sep, l_ce, lam), l_sep, l_ce


def make_optimizer(model, lr):
    params = [p for p in model.parameters() if p.requires_grad]
    return torch.optim.Adam(params, lr=lr)


def freeze(model, components):
    """Disable gradients for parameters in the named components."""
    for name, p in model.named_parameters():
        if component_of(name) in components:
            p.requires_grad_(False)


def train_epoch(model, dataset, cfg, rng, optimizer, mute=True, step_callback=None):
    """One shuffled pass over ``dataset``; returns the mean training loss.

    Muting is applied per sample when ``mute`` and either probability is
    positive.  ``step_callback(step_loss)`` runs after every optimizer step and
    may return True to end the epoch early.
    """
    if not dataset:
        raise ContractError("empty training set")
    model.train()
    order = rng.permutation(len(dataset))
    losses = []
    for start in range(0, len(order), cfg.batch_size):
        items = [dataset[i] for i in order[start:start + cfg.batch_size]]
        if mute and (cfg.p_on > 0 or cfg.p_off > 0):
            items = [apply_muting(s, cfg.p_on, cfg.p_off, rng) for s in items]
        loss, _, _ = batch_loss(model, collate(items, cfg.target), cfg.lam)
        if not torch.isfinite(loss):
            raise NumericalError(f"non-finite loss {loss.item()}", [s.sample_id for s in items])
        optimizer.zero_grad()
        loss.backward()
        if cfg.grad_clip:
            torch.nn.utils.clip_grad_norm_(
                [p for p in model.parameters() if p.requires_grad], cfg.grad_clip)
        optimizer.step()
        losses.append(loss.item())
        if step_callback is not None and step_callback(loss.item()):
            break
    return float(np.mean(losses))


@torch.no_grad()
def validation_loss(model, dataset, cfg):
    model.eval()
    total = 0.0
    for start in range(0, len(dataset), cfg.batch_size):
        items = dataset[start:start + cfg.batch_size]
        loss, _, _ = batch_loss(model, collate(items, cfg.target), cfg.lam)
        total += loss.item() * len(items)
    return total / len(dataset)


@torch.no_grad()
def evaluate(model, dataset, batch_size=4, target="mixture"):
    """SI-SDRi and SDRi of the model's estimates against the chosen target.

    Returns a JSON-serializable report with means, a per-sample list, a
    per-condition breakdown and, when the model produces attention and the
    oracle is available, frame accuracy of each block's activity estimate
    (threshold 0.5).
    """
    if not dataset:
        raise ContractError("empty evaluation set")
    model.eval()
    rows = []
    correct = None
    n_frames = 0
    for start in range(0, len(dataset), batch_size):
        items = dataset[start:start + batch_size]
        mix, lips, enroll, tgt, vad = collate(items, target)
        est, attentions = model(mix, lips, enroll)
        est = est.double().numpy()
        for i, s in enumerate(items):
            ref = tgt[i].double().numpy()
            m = mix[i].double().numpy()
            rows.append({
                "id": s.sample_id,
                "condition": s.condition,
                "si_sdri": metrics.si_sdri(est[i], m, ref),
                "sdri": metrics.sdri(est[i], m, ref),
                "si_sdr": metrics.si_sdr_db(est[i], ref),
            })
        if attentions:
            hits = [((a >= 0.5).float() == vad).float().sum().item() for a in attentions]
            correct = hits if correct is None else [c + h for c, h in zip(correct, hits)]
            n_frames += vad.numel()
    report = {
        "n": len(rows),
        "si_sdri_mean": float(np.mean([r["si_sdri"] for r in rows])),
        "sdri_mean": float(np.mean([r["sdri"] for r in rows])),
        "si_sdr_mean": float(np.mean([r["si_sdr"] for r in rows])),
        "per_condition": {},
        "per_sample": rows,
        "attention_accuracy": None,
        "attention_accuracy_per_block": [],
    }
    for cond in sorted({r["condition"] for r in rows}):
        sel = [r for r in rows if r["condition"] == cond]
        report["per_condition"][cond] = {
            "n": len(sel),
            "si_sdri_mean": float(np.mean([r["si_sdri"] for r in sel])),
            "sdri_mean": float(np.mean([r["sdri"] for r in sel])),
        }
    if correct is not None:
        per_block = [c / n_frames for c in correct]
        report["attention_accuracy_per_block"] = per_block
        report["attention_accuracy"] = per_block[-1]
    return report


class NullModel(torch.nn.Module):
    """Returns the mixture unchanged; the zero-improvement reference."""

    def forward(self, mix, lips=None, enrollment=None):
        return mix, []


@dataclass
class FitResult:
    history: list
    schedule: ScheduleState
    best_epoch: int
    steps: int


_CSV_FIELDS = ("epoch", "steps", "lr", "train_loss", "val_loss", "best_val_loss", "halvings",
               "stopped")


def fit(model, train_set, val_set, cfg, run_dir=None, mute=True, optimizer=None,
        schedule=None, start_epoch=0):
    """Train until early stopping, ``epochs_max`` epochs or ``max_steps`` steps.

    The best-validation parameters are restored into ``model`` at the end.
    With ``run_dir`` the config snapshot, ``metrics.csv``, ``best.ckpt`` and
    ``last.ckpt`` are written there.
    """
    torch.manual_seed(cfg.seed)
    rng = np.random.default_rng(cfg.seed)
    freeze(model, cfg.frozen)
    schedule = schedule or ScheduleState.initial(cfg)
    optimizer = optimizer or make_optimizer(model, schedule.current_lr)
    if run_dir is not None:
        run_dir = Path(run_dir)
        run_dir.mkdir(parents=True, exist_ok=True)
        (run_dir / "train_config.json").write_text(json.dumps(
            {"model": model.cfg.to_dict(), "train": cfg.to_dict(), "mute": mute},
            indent=1, sort_keys=True))
    history = []
    best_state = copy.deepcopy(model.state_dict())
    best_epoch = start_epoch
    steps = 0

    def on_step(_):
        nonlocal steps
        steps += 1
        return bool(cfg.max_steps) and steps >= cfg.max_steps

    for epoch in range(start_epoch + 1, cfg.epochs_max + 1):
        for group in optimizer.param_groups:
            group["lr"] = schedule.current_lr
        train_loss = train_epoch(model, train_set, cfg, rng, optimizer, mute=mute,
                                 step_callback=on_step)
        val_loss = validation_loss(model, val_set, cfg)
        if not math.isfinite(val_loss):
            raise NumericalError(f"non-finite validation loss at epoch {epoch}")
        improved = val_loss < schedule.best_val_loss
        lr_used = schedule.current_lr
        schedule = lr_schedule_step(schedule, val_loss, cfg)
        if improved:
            best_state = copy.deepcopy(model.state_dict())
            best_epoch = epoch
        row = {"epoch": epoch, "steps": steps, "lr": lr_used, "train_loss": train_loss,
               "val_loss": val_loss, "best_val_loss": schedule.best_val_loss,
               "halvings": schedule.halvings_done, "stopped": schedule.stopped}
        history.append(row)
        log.info("epoch %d lr %.2e train %.4f val %.4f", epoch, lr_used, train_loss, val_loss)
        if run_dir is not None:
            if improved:
                save_checkpoint(run_dir / "best.ckpt", model, epoch=epoch,
                                schedule=schedule.to_dict(), rng_state=rng.bit_generator.state)
            save_checkpoint(run_dir / "last.ckpt", model, epoch=epoch,
                            schedule=schedule.to_dict(), rng_state=rng.bit_generator.state,
                            optimizer=optimizer)
            (run_dir / "metrics.csv").write_text(history_csv(history))
        if schedule.stopped or (cfg.max_steps and steps >= cfg.max_steps):
            break
    model.load_state_dict(best_state)
    return FitResult(history=history, schedule=schedule, best_epoch=best_epoch, steps=steps)


def history_csv(history):
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=_CSV_FIELDS, lineterminator="\n")
    writer.writeheader()
    for row in history:
        writer.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})
    return buf.getvalue()


def grid_search_muting(p_on_values, p_off_values, model_factory, train_set, val_set, test_set,
                       base_cfg):
    """Train one model per valid ``(p_on, p_off)`` pair and tabulate test SI-SDRi.

    Every cell starts from ``model_factory()`` (expected to be seeded) and
    sees the same data and training seed.  Pairs with ``p_on + p_off > 1`` are
    reported as invalid without training.
    """
    cells = []
    for p_on in p_on_values:
        for p_off in p_off_values:
            cell = {"p_on": float(p_on), "p_off": float(p_off)}
            if p_on < 0 or p_off < 0 or p_on + p_off > 1:
                cells.append({**cell, "valid": False, "si_sdri": None, "sdri": None})
                continue
            cfg = replace(base_cfg, p_on=float(p_on), p_off=float(p_off))
            model = model_factory()
            fit(model, train_set, val_set, cfg, mute=True)
            report = evaluate(model, test_set, cfg.batch_size)
            cells.append({**cell, "valid": True, "si_sdri": report["si_sdri_mean"],
                          "sdri": report["sdri_mean"]})
    return {"p_on_values": [float(v) for v in p_on_values],
            "p_off_values": [float(v) for v in p_off_values],
            "cells": cells,
            "params": count_parameters(model_factory())["total"]}


def grid_csv(grid):
    """Rows are p_on, columns p_off; invalid cells hold ``invalid``."""
    lookup = {(c["p_on"], c["p_off"]): c for c in grid["cells"]}
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["p_on\\p_off"] + [f"{v:g}" for v in grid["p_off_values"]])
    for p_on in grid["p_on_values"]:
        row = [f"{p_on:g}"]
        for p_off in grid["p_off_values"]:
            c = lookup[(p_on, p_off)]
            row.append(f"{c['si_sdri']:.4f}" if c["valid"] else "invalid")
        writer.writerow(row)
    return buf.getvalue()
