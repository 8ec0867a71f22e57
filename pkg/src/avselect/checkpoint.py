"""Checkpoint container.

A checkpoint is a zip archive holding ``meta.json`` and one raw
little-endian float32 file per tensor::

    meta.json                 format name/version, model config, epoch,
                              schedule state, rng state, tensor index
    params/<name>.f32         model parameters
    optim/<name>/<key>.f32    Adam moments (optional)

Entries are written with a fixed timestamp so identical contents give
identical bytes.
"""

import json
import zipfile
from pathlib import Path

import numpy as np
import torch

from .errors import DataError
from .model import AVSelectNet, ModelConfig

FORMAT_NAME = "avselect-checkpoint"
FORMAT_VERSION = 1
_EPOCH_ZERO = (1980, 1, 1, 0, 0, 0)


def _write(zf, name, data):
    info = zipfile.ZipInfo(name, date_time=_EPOCH_ZERO)
    info.compress_type = zipfile.ZIP_STORED
    zf.writestr(info, data)


def _tensor_bytes(t):
    return np.ascontiguousarray(t.detach().cpu().numpy(), dtype="<f4").tobytes()


def _read_tensor(zf, entry):
    arr = np.frombuffer(zf.read(entry["file"]), dtype="<f4")
    expected = int(np.prod(entry["shape"])) if entry["shape"] else 1
    if arr.size != expected:
        raise DataError(f"tensor {entry['name']} has {arr.size} values, expected {expected}")
    return torch.from_numpy(arr.reshape(entry["shape"]).astype(np.float32))


def save_checkpoint(path, model, epoch=0, schedule=None, rng_state=None, optimizer=None,
                    extra=None):
    """Write ``model`` (and optionally optimizer state) to ``path``.

    ``schedule`` and ``extra`` must be JSON-serializable; ``rng_state`` is
    typically ``numpy.random.Generator.bit_generator.state``.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    params = []
    blobs = []
    for name, tensor in model.state_dict().items():
        fname = f"params/{name}.f32"
        params.append({"name": name, "shape": list(tensor.shape), "file": fname})
        blobs.append((fname, _tensor_bytes(tensor)))
    optim_meta = None
    if optimizer is not None:
        optim_meta = _optimizer_meta(model, optimizer, blobs)
    meta = {
        "format": FORMAT_NAME,
        "version": FORMAT_VERSION,
        "config": model.cfg.to_dict(),
        "epoch": int(epoch),
        "schedule": schedule,
        "rng_state": rng_state,
        "params": params,
        "optimizer": optim_meta,
        "extra": extra,
    }
    tmp = path.with_suffix(path.suffix + ".tmp")
    with zipfile.ZipFile(tmp, "w") as zf:
        _write(zf, "meta.json", json.dumps(meta, indent=1, sort_keys=True))
        for fname, data in blobs:
            _write(zf, fname, data)
    tmp.replace(path)
    return path


def _optimizer_meta(model, optimizer, blobs):
    names = {id(p): n for n, p in model.named_parameters()}
    group = optimizer.param_groups[0]
    state = []
    for p, st in optimizer.state.items():
        name = names[id(p)]
        entry = {"name": name, "step": int(st["step"]), "tensors": {}}
        for key in ("exp_avg", "exp_avg_sq"):
            fname = f"optim/{name}/{key}.f32"
            entry["tensors"][key] = {"name": f"{name}:{key}", "shape": list(st[key].shape),
                                     "file": fname}
            blobs.append((fname, _tensor_bytes(st[key])))
        state.append(entry)
    return {
        "type": type(optimizer).__name__,
        "lr": group["lr"],
        "betas": list(group["betas"]),
        "eps": group["eps"],
        "weight_decay": group["weight_decay"],
        "state": sorted(state, key=lambda e: e["name"]),
    }


def read_meta(path):
    try:
        with zipfile.ZipFile(path) as zf:
            meta = json.loads(zf.read("meta.json"))
    except (OSError, KeyError, zipfile.BadZipFile, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read checkpoint {path}: {exc}") from exc
    if meta.get("format") != FORMAT_NAME:
        raise DataError(f"{path} is not an {FORMAT_NAME} file")
    if meta.get("version") != FORMAT_VERSION:
        raise DataError(f"unsupported checkpoint version {meta.get('version')}")
    return meta


def load_checkpoint(path, optimizer_factory=None):
    """Rebuild the model stored at ``path``.

    Returns:
        tuple: ``(model, meta, optimizer)``; ``optimizer`` is None unless
        ``optimizer_factory(params)`` is given and the file has optimizer state.
    """
    meta = read_meta(path)
    model = AVSelectNet(ModelConfig.from_dict(meta["config"]))
    with zipfile.ZipFile(path) as zf:
        state = {e["name"]: _read_tensor(zf, e) for e in meta["params"]}
        try:
            model.load_state_dict(state)
        except RuntimeError as exc:
            raise DataError(f"checkpoint parameters do not match its config: {exc}") from exc
        optimizer = None
        if optimizer_factory is not None and meta.get("optimizer"):
            optimizer = optimizer_factory([p for p in model.parameters() if p.requires_grad])
            params = dict(model.named_parameters())
            for entry in meta["optimizer"]["state"]:
                p = params[entry["name"]]
                optimizer.state[p] = {
                    "step": torch.tensor(float(entry["step"])),
                    "exp_avg": _read_tensor(zf, entry["tensors"]["exp_avg"]),
                    "exp_avg_sq": _read_tensor(zf, entry["tensors"]["exp_avg_sq"]),
                }
            for group in optimizer.param_groups:
                group["lr"] = meta["optimizer"]["lr"]
    return model, meta, optimizer
