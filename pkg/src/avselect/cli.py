"""Command line interface.

Subcommands: ``synth``, ``train``, ``eval``, ``compare``, ``grid-mute``.  All
take a JSON run config (see ``RunConfig``) and resolve relative paths
against ``--workdir``.  Exit codes: 0 ok, 2 config error, 3 data error,
4 numeric failure.
"""

import argparse
import json
import logging
import sys
import warnings
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np
import torch

from . import mixsim, training
from .baseline import KIND_TARGET, MixedBaseline, build_single_clue_model, evaluate_baseline
from .checkpoint import load_checkpoint, save_checkpoint
from .errors import ContractError, DataError, NumericalError
from .model import DESK_CONFIG, ModelConfig, build_model, count_parameters

log = logging.getLogger("avselect")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4
DESK_SIZES = {"train": 512, "val": 64, "test": 64}
PAPER_SIZES = {"train": 20000, "val": 5000, "test": 3000}
SPLITS = ("train", "val", "test")
# mixture fields that must agree with the model's framing
_SHARED = {"sample_rate": "sample_rate", "video_fps": "video_fps", "lip_dim": "lip_dim",
           "frame_len": "window_len", "frame_hop": "hop"}


class ConfigError(ContractError):
    pass


@dataclass
class RunConfig:
    model: ModelConfig = DESK_CONFIG
    mix: mixsim.MixSpec = field(default_factory=mixsim.MixSpec)
    train: training.TrainConfig = field(default_factory=training.TrainConfig)
    condition: str = "noise"
    data_dir: str = "data"
    run_dir: str = "runs/run"
    sizes: dict = field(default_factory=lambda: dict(DESK_SIZES))
    speakers: dict = field(default_factory=lambda: {"train": 64, "val": 16, "test": 16})
    manifests: dict = None

    def to_dict(self):
        return {
            "model": self.model.to_dict(),
            "mix": self.mix.to_dict(),
            "train": self.train.to_dict(),
            "condition": self.condition,
            "paths": {"data_dir": self.data_dir, "run_dir": self.run_dir},
            "sizes": dict(self.sizes),
            "speakers": dict(self.speakers),
            "manifests": self.manifests,
        }


_TOP_KEYS = {"model", "mix", "train", "condition", "paths", "sizes", "speakers", "manifests"}


def parse_run_config(data):
    """Validate a config mapping; unknown keys at any level are rejected."""
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object")
    unknown = set(data) - _TOP_KEYS
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    try:
        model = ModelConfig.from_dict(data.get("model", {}))
        mix = dict(data.get("mix", {}))
        for mkey, model_key in _SHARED.items():
            want = getattr(model, model_key)
            if mkey in mix and mix[mkey] != want:
                raise ConfigError(f"mix.{mkey}={mix[mkey]} conflicts with model.{model_key}={want}")
            mix[mkey] = want
        condition = data.get("condition", "noise")
        if "interference_mode" in mix and mix["interference_mode"] != condition:
            raise ConfigError("mix.interference_mode conflicts with condition")
        mix["interference_mode"] = condition
        mix = mixsim.MixSpec.from_dict(mix)
        train = training.TrainConfig.from_dict(data.get("train", {}))
    except ContractError as exc:
        raise ConfigError(str(exc)) from exc
    paths = data.get("paths", {})
    if set(paths) - {"data_dir", "run_dir"}:
        raise ConfigError(f"unknown paths keys: {sorted(set(paths) - {'data_dir', 'run_dir'})}")
    sizes = dict(DESK_SIZES, **data.get("sizes", {}))
    speakers = dict({"train": 64, "val": 16, "test": 16}, **data.get("speakers", {}))
    for name, table in (("sizes", sizes), ("speakers", speakers)):
        if set(table) != set(SPLITS):
            raise ConfigError(f"{name} must have exactly the keys {SPLITS}")
        if any(not isinstance(v, int) or v < 1 for v in table.values()):
            raise ConfigError(f"{name} values must be positive integers")
    manifests = data.get("manifests")
    if manifests is not None and set(manifests) != set(SPLITS):
        raise ConfigError(f"manifests must map each of {SPLITS} to a manifest path")
    return RunConfig(model=model, mix=mix, train=train, condition=condition,
                     data_dir=paths.get("data_dir", "data"),
                     run_dir=paths.get("run_dir", "runs/run"), sizes=sizes,
                     speakers=speakers, manifests=manifests)


def load_run_config(path):
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file {path} does not exist")
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    return parse_run_config(data)


def _resolve(workdir, p):
    p = Path(p)
    return p if p.is_absolute() else Path(workdir) / p


def _corpus(cfg, split, workdir):
    if cfg.manifests:
        return mixsim.ClipCorpus(mixsim.load_corpus(_resolve(workdir, cfg.manifests[split]),
                                                    cfg.mix.sample_rate))
    pools = mixsim.speaker_pools(cfg.speakers["train"], cfg.speakers["val"],
                                 cfg.speakers["test"])
    return mixsim.SyntheticCorpus(pools[split], seed=cfg.mix.seed,
                                  clip_s=max(cfg.mix.window_s, cfg.mix.enrollment_s),
                                  sample_rate=cfg.mix.sample_rate, video_fps=cfg.mix.video_fps,
                                  lip_dim=cfg.mix.lip_dim)


def synthesize(cfg, data_dir, workdir=".", sizes=None):
    """Write train/val/test splits and a ``dataset.json`` snapshot under ``data_dir``."""
    data_dir = Path(data_dir)
    sizes = sizes or cfg.sizes
    for split in SPLITS:
        samples = mixsim.generate_dataset(sizes[split], cfg.mix, _corpus(cfg, split, workdir),
                                          split)
        mixsim.save_dataset(samples, data_dir / split, cfg.mix)
    snapshot = dict(cfg.to_dict(), sizes=sizes)
    (data_dir / "dataset.json").write_text(json.dumps(snapshot, indent=1, sort_keys=True))
    return data_dir


def cmd_synth(args):
    cfg = load_run_config(_resolve(args.workdir, args.config))
    sizes = cfg.sizes
    if args.paper_scale:
        warnings.warn("--paper-scale generates 28,000 four-second mixtures; this takes hours "
                      "and tens of GB", stacklevel=1)
        sizes = dict(PAPER_SIZES)
    out = _resolve(args.workdir, args.out or cfg.data_dir)
    synthesize(cfg, out, args.workdir, sizes)
    print(f"wrote {sum(sizes.values())} samples to {out}")
    return EXIT_OK


def _variant(cfg, no_attention=False, no_muting=False, baseline=None):
    """Model, train config and muting flag for one row of the comparison."""
    train = cfg.train
    if baseline:
        model = build_single_clue_model(baseline, cfg.model, seed=train.seed)
        train = replace(train, target=KIND_TARGET[baseline], p_on=0.0, p_off=0.0)
        return model, train, False
    mcfg = replace(cfg.model, use_attention=cfg.model.use_attention and not no_attention)
    if no_muting:
        train = replace(train, p_on=0.0, p_off=0.0)
    return build_model(mcfg, seed=train.seed), train, not no_muting


def _load_split(data_dir, split):
    path = Path(data_dir) / split
    if not (path / "index.json").exists():
        raise DataError(f"dataset split {path} not found; run `avselect synth` first")
    return mixsim.load_dataset(path)


def cmd_train(args):
    cfg = load_run_config(_resolve(args.workdir, args.config))
    data_dir = _resolve(args.workdir, args.data_dir or cfg.data_dir)
    run_dir = _resolve(args.workdir, args.run_dir or cfg.run_dir)
    model, train_cfg, mute = _variant(cfg, args.no_attention, args.no_muting, args.baseline)
    if args.resume_reinit:
        loaded, _, _ = load_checkpoint(_resolve(args.workdir, args.resume_reinit))
        if loaded.cfg != model.cfg:
            raise ConfigError("checkpoint config differs from the requested model")
        model.load_state_dict(loaded.state_dict())
    train_set = _load_split(data_dir, "train")
    val_set = _load_split(data_dir, "val")
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "config.json").write_text(json.dumps(
        dict(cfg.to_dict(), variant={"no_attention": args.no_attention, "muting": mute,
                                     "baseline": args.baseline,
                                     "resume_reinit": args.resume_reinit}),
        indent=1, sort_keys=True))
    result = training.fit(model, train_set, val_set, train_cfg, run_dir=run_dir, mute=mute)
    save_checkpoint(run_dir / "model.ckpt", model, epoch=result.best_epoch,
                    schedule=result.schedule.to_dict(),
                    extra={"target": train_cfg.target, "muting": mute})
    report = {
        "best_epoch": result.best_epoch,
        "epochs": len(result.history),
        "steps": result.steps,
        "final_schedule": result.schedule.to_dict(),
        "params": count_parameters(model),
        "attention": model.cfg.use_attention and model.cfg.clue == "both",
        "muting": mute,
        "target": train_cfg.target,
        "validation": training.evaluate(model, val_set, train_cfg.batch_size,
                                        train_cfg.target),
    }
    (run_dir / "report.json").write_text(json.dumps(report, indent=1, sort_keys=True))
    print(f"trained {len(result.history)} epochs; best epoch {result.best_epoch}; "
          f"val SI-SDRi {report['validation']['si_sdri_mean']:.2f} dB -> {run_dir}")
    return EXIT_OK


def _load_run(run_dir):
    ckpt = Path(run_dir) / "model.ckpt"
    if not ckpt.exists():
        raise DataError(f"no checkpoint at {ckpt}")
    model, meta, _ = load_checkpoint(ckpt)
    extra = meta.get("extra") or {}
    return model, extra


def _row(name, report, params, attention="-", muting="-"):
    return {"method": name, "attention": attention, "muting": muting, "params": params,
            "per_condition": report["per_condition"], "si_sdri_mean": report["si_sdri_mean"],
            "sdri_mean": report["sdri_mean"],
            "attention_accuracy": report.get("attention_accuracy")}


def format_table(rows):
    """Plain-text table: method, AM, MS, SI-SDRi/SDRi per condition, #Params."""
    conds = sorted({c for r in rows for c in r["per_condition"]})
    head = ["Method", "AM", "MS"]
    for c in conds:
        head += [f"{c} SI-SDRi", f"{c} SDRi"]
    head.append("#Params")
    lines = [head]
    for r in rows:
        line = [r["method"], r["attention"], r["muting"]]
        for c in conds:
            pc = r["per_condition"].get(c)
            line += ([f"{pc['si_sdri_mean']:.2f}", f"{pc['sdri_mean']:.2f}"] if pc
                     else ["-", "-"])
        line.append(f"{r['params'] / 1e6:.3f}M" if r["params"] else "0")
        lines.append(line)
    widths = [max(len(str(x[i])) for x in lines) for i in range(len(head))]
    out = []
    for k, line in enumerate(lines):
        out.append("  ".join(str(v).ljust(w) for v, w in zip(line, widths)))
        if k == 0:
            out.append("  ".join("-" * w for w in widths))
    return "\n".join(out)


def _mark(flag):
    return "x" if flag else "-"


def cmd_eval(args):
    data_dir = _resolve(args.workdir, args.data_dir)
    dataset = _load_split(data_dir, args.split)
    if args.null:
        report = training.evaluate(training.NullModel(), dataset)
        rows = [_row("null", report, 0)]
        out_dir = None
    else:
        run_dir = _resolve(args.workdir, args.run_dir)
        model, extra = _load_run(run_dir)
        report = training.evaluate(model, dataset, target=extra.get("target", "mixture"))
        name = {"both": "proposed", "visual": "visual-only", "voiceprint": "voiceprint-only"}
        rows = [_row(name[model.cfg.clue], report, count_parameters(model)["total"],
                     _mark(model.cfg.use_attention and model.cfg.clue == "both"),
                     _mark(extra.get("muting")))]
        out_dir = run_dir
    full = {"report": report, "table": rows}
    if out_dir is not None:
        (out_dir / f"eval_{args.split}.json").write_text(json.dumps(full, indent=1,
                                                                      sort_keys=True))
    if args.json:
        print(json.dumps(full, sort_keys=True))
    else:
        print(format_table(rows))
    return EXIT_OK


def cmd_compare(args):
    dataset = _load_split(_resolve(args.workdir, args.data_dir), args.split)
    proposed, p_extra = _load_run(_resolve(args.workdir, args.proposed))
    visual, _ = _load_run(_resolve(args.workdir, args.visual))
    voice, _ = _load_run(_resolve(args.workdir, args.voiceprint))
    if proposed.cfg.clue != "both" or visual.cfg.clue != "visual" or \
            voice.cfg.clue != "voiceprint":
        raise ConfigError("compare needs a proposed run, a visual run and a voiceprint run")
    base_report = evaluate_baseline(visual, voice, dataset)
    prop_report = training.evaluate(proposed, dataset)
    rows = [
        _row("Baseline", base_report, count_parameters(MixedBaseline(visual, voice))["total"]),
        _row("Proposed", prop_report, count_parameters(proposed)["total"],
             _mark(proposed.cfg.use_attention), _mark(p_extra.get("muting"))),
    ]
    result = {"rows": rows, "baseline": base_report, "proposed": prop_report}
    if args.out:
        _resolve(args.workdir, args.out).write_text(json.dumps(result, indent=1, sort_keys=True))
    print(json.dumps(result, sort_keys=True) if args.json else format_table(rows))
    return EXIT_OK


def _floats(text):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise ConfigError(f"bad probability list {text!r}") from exc


def cmd_grid_mute(args):
    cfg = load_run_config(_resolve(args.workdir, args.config))
    data_dir = _resolve(args.workdir, args.data_dir or cfg.data_dir)
    train_set = _load_split(data_dir, "train")
    val_set = _load_split(data_dir, "val")
    test_set = _load_split(data_dir, "test")
    grid = training.grid_search_muting(
        _floats(args.p_on), _floats(args.p_off),
        lambda: build_model(cfg.model, seed=cfg.train.seed),
        train_set, val_set, test_set, cfg.train)
    table = training.grid_csv(grid)
    out = _resolve(args.workdir, args.out or Path(cfg.run_dir) / "grid.csv")
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(table)
    out.with_suffix(".json").write_text(json.dumps(grid, indent=1, sort_keys=True))
    print(table, end="")
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(prog="avselect", description=__doc__.splitlines()[0])
    parser.add_argument("--workdir", default=".", help="root for relative paths")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="synthesize train/val/test mixtures")
    p.add_argument("--config", required=True)
    p.add_argument("--out", help="dataset directory (default: paths.data_dir)")
    p.add_argument("--paper-scale", action="store_true",
                   help="use the full 20000/5000/3000 split sizes")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train the proposed model or one baseline half")
    p.add_argument("--config", required=True)
    p.add_argument("--data-dir")
    p.add_argument("--run-dir")
    p.add_argument("--no-attention", action="store_true")
    p.add_argument("--no-muting", action="store_true")
    p.add_argument("--baseline", choices=sorted(KIND_TARGET))
    p.add_argument("--resume-reinit", metavar="CKPT",
                   help="start from CKPT's parameters with a fresh optimizer and schedule")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a trained run on a dataset split")
    p.add_argument("--run-dir")
    p.add_argument("--data-dir", required=True)
    p.add_argument("--split", default="test", choices=SPLITS)
    p.add_argument("--null", action="store_true", help="evaluate the identity (no-op) model")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("compare", help="proposed model versus the summed baseline")
    p.add_argument("--proposed", required=True)
    p.add_argument("--visual", required=True)
    p.add_argument("--voiceprint", required=True)
    p.add_argument("--data-dir", required=True)
    p.add_argument("--split", default="test", choices=SPLITS)
    p.add_argument("--out")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("grid-mute", help="grid search over muting probabilities")
    p.add_argument("--config", required=True)
    p.add_argument("--data-dir")
    p.add_argument("--p-on", required=True, help="comma-separated, e.g. 0,0.2,0.4")
    p.add_argument("--p-off", required=True)
    p.add_argument("--out", help="CSV path (default: <run_dir>/grid.csv)")
    p.set_defaults(func=cmd_grid_mute)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "eval" and not args.null and not args.run_dir:
        parser.error("eval needs --run-dir or --null")
    try:
        return args.func(args)
    except ContractError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        ids = ", ".join(exc.sample_ids) or "n/a"
        print(f"numeric failure: {exc} (samples: {ids})", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
