"""Separation losses and evaluation metrics.

Evaluation metrics (``snr_db``, ``si_sdr_db``, ``improvement``) work on 1-D
numpy arrays and return Python floats.  Training losses
(``loss_on_plus_off``, ``vad_cross_entropy``, ``total_loss``) work on torch
tensors, are differentiable, and reduce over the last axis only so batched
inputs give one value per item.

All dB values are clamped to ``[-DB_CLAMP, DB_CLAMP]``.
"""

import numpy as np
import torch

from .errors import ContractError

DB_CLAMP = 60.0
REL_EPS = 1e-10
PROB_EPS = 1e-7


def _as_1d(x, name):
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 1 or arr.size == 0:
        raise ContractError(f"{name} must be a non-empty 1-D signal, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ContractError(f"{name} contains non-finite samples")
    return arr


def _check_pair(est, ref):
    est = _as_1d(est, "est")
    ref = _as_1d(ref, "ref")
    if est.shape != ref.shape:
        raise ContractError(f"length mismatch: est {est.shape[0]} vs ref {ref.shape[0]}")
    if not np.any(ref):
        raise ContractError("reference signal is all-zero")
    return est, ref


def _clamp_db(value):
    return float(np.clip(value, -DB_CLAMP, DB_CLAMP))


def snr_db(est, ref):
    """Scale-dependent SNR of ``est`` against ``ref`` in dB.

    ``10 log10(|ref|^2 / max(|est - ref|^2, eps))`` with ``eps = 1e-10 |ref|^2``.
    Rescaling ``est`` changes the value, unlike :func:`si_sdr_db`.
    """
    est, ref = _check_pair(est, ref)
    power = np.dot(ref, ref)
    err = est - ref
    return _clamp_db(10.0 * np.log10(power / max(np.dot(err, err), REL_EPS * power)))


def si_sdr_db(est, ref):
    """Scale-invariant SDR of ``est`` against ``ref`` in dB.

    ``est`` is projected onto ``ref``; the projection is the target part and
    the remainder the distortion.  No mean removal is applied.
    """
    est, ref = _check_pair(est, ref)
    alpha = np.dot(est, ref) / np.dot(ref, ref)
    target = alpha * ref
    residual = est - target
    num = np.dot(target, target)
    den = np.dot(residual, residual)
    # relative floor keeps the ratio exactly scale invariant
    eps = REL_EPS * max(num + den, np.finfo(np.float64).tiny)
    return _clamp_db(10.0 * np.log10(max(num, eps) / max(den, eps)))


_METRICS = {"snr": snr_db, "sdr": snr_db, "si_sdr": si_sdr_db}


def improvement(metric, est, mix, ref):
    """Gain of ``est`` over the unprocessed ``mix``: ``metric(est) - metric(mix)``.

    Args:
        metric: a metric callable or one of ``"si_sdr"``, ``"sdr"``, ``"snr"``.
            ``"sdr"`` is the scale-dependent SNR.
        est, mix, ref: equal-length 1-D signals.

    Returns:
        float: improvement in dB.
    """
    if isinstance(metric, str):
        try:
            metric = _METRICS[metric]
        except KeyError:
            raise ContractError(f"unknown metric {metric!r}") from None
    est = _as_1d(est, "est")
    mix = _as_1d(mix, "mix")
    if est.shape != mix.shape:
        raise ContractError(f"length mismatch: est {est.shape[0]} vs mix {mix.shape[0]}")
    return metric(est, ref) - metric(mix, ref)


def si_sdri(est, mix, ref):
    return improvement(si_sdr_db, est, mix, ref)


def sdri(est, mix, ref):
    return improvement(snr_db, est, mix, ref)


def _as_tensor(x):
    if isinstance(x, torch.Tensor):
        return x
    return torch.as_tensor(np.asarray(x, dtype=np.float64))


def snr_loss(est, ref):
    """Negative scale-dependent SNR, differentiable; reduces the last axis."""
    est = _as_tensor(est)
    ref = _as_tensor(ref)
    if est.shape != ref.shape:
        raise ContractError(f"shape mismatch: est {tuple(est.shape)} vs ref {tuple(ref.shape)}")
    if est.shape[-1] == 0:
        raise ContractError("empty signal")
    power = ref.pow(2).sum(-1)
    if bool((power == 0).any()):
        raise ContractError("reference signal is all-zero")
    err = (est - ref).pow(2).sum(-1)
    snr = 10.0 * torch.log10(power / torch.maximum(err, REL_EPS * power))
    return -snr.clamp(-DB_CLAMP, DB_CLAMP)


loss_on_plus_off = snr_loss


def vad_cross_entropy(pred, oracle):
    """Frame-averaged binary cross-entropy between predicted and oracle activity.

    ``pred`` is clamped to ``[1e-7, 1 - 1e-7]`` before taking logs.  The mean is
    over the last (frame) axis.
    """
    pred = _as_tensor(pred)
    oracle = _as_tensor(oracle).to(pred.dtype)
    if pred.shape != oracle.shape:
        raise ContractError(f"shape mismatch: pred {tuple(pred.shape)} vs oracle {tuple(oracle.shape)}")
    if pred.shape[-1] == 0:
        raise ContractError("empty activity sequence")
    p = pred.clamp(PROB_EPS, 1.0 - PROB_EPS)
    ce = -(oracle * torch.log(p) + (1.0 - oracle) * torch.log1p(-p))
    return ce.mean(-1)


def total_loss(l_sep, l_ce, lam=1.0):
    """Multi-task objective ``l_sep + lam * l_ce``."""
    if lam < 0:
        raise ContractError(f"lambda must be >= 0, got {lam}")
    return l_sep + lam * l_ce
