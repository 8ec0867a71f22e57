"""Training and evaluation mixtures for on-screen + off-screen target extraction.

Each sample mixes a window of on-screen speech (with lip features), a
randomly cropped and placed segment of off-screen target speech, and one or
more interferers (environmental noise and/or other talkers).  The target is
the sum of the two target speech signals.  Every source is level-set
relative to the on-screen speech with an SNR drawn uniformly from
``MixSpec.snr_range_db``.

The default corpus is synthetic: harmonic "speakers" whose fundamental and
formants are fixed per speaker id, with utterance-dependent syllable
envelopes and vowel changes, plus coloured-noise "environmental sounds".
Real audio can be ingested from a JSON-lines manifest with :func:`load_corpus`.

Random streams are derived from ``(seed, index)`` so samples can be
generated in any order or in parallel with identical results.
"""

import json
import math
import zlib
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np
from scipy import signal as sps
from scipy.io import wavfile

from .errors import ContractError, DataError
from .model import latent_frame_times

SAMPLE_RATE = 16000
VIDEO_FPS = 25.0
KINDS = ("on_screen", "off_screen", "noise")
INTERFERENCE = {
    "noise": ("noise",),
    "spk": ("speech",),
    "noise+spk": ("noise", "speech"),
    "2spk": ("speech", "speech"),
}
MUTE_NONE, MUTE_ON, MUTE_OFF = "none", "on", "off"


@dataclass
class SourceClip:
    wave: np.ndarray
    kind: str
    speaker_id: object = None
    lip_features: np.ndarray = None
    clip_id: str = ""
    sample_rate: int = SAMPLE_RATE
    video_fps: float = VIDEO_FPS

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ContractError(f"unknown clip kind {self.kind!r}")
        if self.kind == "on_screen" and self.lip_features is None:
            raise ContractError(f"on-screen clip {self.clip_id!r} has no lip features")
        if self.kind == "off_screen" and self.speaker_id is None:
            raise ContractError(f"off-screen clip {self.clip_id!r} has no speaker id")

    @property
    def duration_s(self):
        return len(self.wave) / self.sample_rate


@dataclass(frozen=True)
class MixSpec:
    window_s: float = 4.0
    snr_range_db: tuple = (-2.5, 2.5)
    off_duration_range_s: tuple = (2.0, 4.0)
    test_off_duration_range_s: tuple = (0.0, 4.0)
    interference_mode: str = "noise"
    enrollment_s: float = 3.0
    sample_rate: int = SAMPLE_RATE
    video_fps: float = VIDEO_FPS
    lip_dim: int = 8
    frame_len: int = 32
    frame_hop: int = 16
    seed: int = 0

    def __post_init__(self):
        for name in ("snr_range_db", "off_duration_range_s", "test_off_duration_range_s"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ContractError(f"{name}: lower bound {lo} exceeds upper bound {hi}")
            object.__setattr__(self, name, (float(lo), float(hi)))
        if self.window_s <= 0 or self.enrollment_s <= 0:
            raise ContractError("window_s and enrollment_s must be > 0")
        if self.off_duration_range_s[0] < 0 or self.test_off_duration_range_s[0] < 0:
            raise ContractError("off-screen durations must be >= 0")
        if self.interference_mode not in INTERFERENCE:
            raise ContractError(f"interference_mode must be one of {sorted(INTERFERENCE)}")

    @property
    def window_samples(self):
        return int(round(self.window_s * self.sample_rate))

    @property
    def video_frames(self):
        return int(round(self.window_s * self.video_fps))

    @property
    def num_latent_frames(self):
        return (self.window_samples - self.frame_len) // self.frame_hop + 1

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, data):
        unknown = set(data) - {f.name for f in fields(cls)}
        if unknown:
            raise ContractError(f"unknown MixSpec keys: {sorted(unknown)}")
        return cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in data.items()})


@dataclass
class MixtureSample:
    mix: np.ndarray
    lip_features: np.ndarray
    enrollment: np.ndarray
    target: np.ndarray
    oracle_vad: np.ndarray
    on_speech: np.ndarray
    off_speech: np.ndarray
    interferers: np.ndarray
    meta: dict = field(default_factory=dict)

    @property
    def sample_id(self):
        return self.meta.get("id", "")

    @property
    def condition(self):
        return self.meta.get("interference_mode", "")


def _power(x):
    x = np.asarray(x, dtype=np.float64)
    return float(np.mean(x * x)) if x.size else 0.0


def scale_to_snr(sig, reference, snr_db):
    """Return ``g * sig`` such that ``10 log10(P_reference / P_scaled) == snr_db``.

    Powers are mean squares over each array's own length.
    """
    p_sig = _power(sig)
    p_ref = _power(reference)
    if p_sig == 0 or p_ref == 0:
        raise ContractError("cannot set the SNR of a zero-power signal")
    gain = math.sqrt(p_ref / (p_sig * 10.0 ** (snr_db / 10.0)))
    return gain * np.asarray(sig, dtype=np.float64)


def crop_and_place(off, duration_range_s, window_s, rng, sample_rate=SAMPLE_RATE):
    """Crop a random-duration segment of ``off`` and place it at a random offset.

    The duration is uniform in ``duration_range_s`` (shortened to what the
    clip and window allow); the crop start inside ``off`` and the placement
    start inside the window are both uniform over feasible offsets.

    Returns:
        tuple: ``(placed, (start_s, end_s))``; ``placed`` is window-length and
        zero outside the interval.  A zero duration gives all zeros and the
        empty interval ``(0.0, 0.0)``.
    """
    off = np.asarray(off, dtype=np.float64)
    W = int(round(window_s * sample_rate))
    lo, hi = duration_range_s
    duration = rng.uniform(lo, hi) if hi > lo else float(lo)
    n = min(int(round(duration * sample_rate)), len(off), W)
    placed = np.zeros(W)
    if n <= 0:
        return placed, (0.0, 0.0)
    src = int(rng.integers(0, len(off) - n + 1))
    start = int(rng.integers(0, W - n + 1))
    placed[start:start + n] = off[src:src + n]
    return placed, (start / sample_rate, (start + n) / sample_rate)


def oracle_vad(interval, num_frames, frame_times):
    """Binary activity per latent frame: 1 where the frame span overlaps ``interval``.

    Args:
        interval: ``(start_s, end_s)``, half-open; empty when ``end_s <= start_s``.
        num_frames: number of latent frames T.
        frame_times: ``(starts, ends)`` arrays of frame spans in seconds.
    """
    if num_frames < 1:
        raise ContractError("need at least one frame")
    starts, ends = (np.asarray(a, dtype=np.float64)[:num_frames] for a in frame_times)
    a, b = interval
    if b <= a:
        return np.zeros(num_frames, dtype=np.float32)
    # half-open spans; a tiny tolerance absorbs float error in frame times
    tol = 1e-9
    return ((starts < b - tol) & (ends > a + tol)).astype(np.float32)


def _fit_length(x, n):
    x = np.asarray(x, dtype=np.float64)
    if len(x) >= n:
        return x[:n]
    return np.pad(x, (0, n - len(x)))


def _fit_frames(lips, n):
    if len(lips) >= n:
        return lips[:n]
    return np.concatenate([lips, np.repeat(lips[-1:], n - len(lips), axis=0)])


def _compose(on, off, interferers, with_on=True, with_off=True):
    target = np.zeros_like(on)
    if with_on:
        target = target + on
    if with_off:
        target = target + off
    mix = target + interferers.sum(axis=0) if len(interferers) else target.copy()
    return mix, target


def make_sample(on, off, interferers, enrollment, spec, rng, split="train", sample_id=""):
    """Mix one training/evaluation item.

    Args:
        on: on-screen ``SourceClip`` (must carry lip features).
        off: off-screen ``SourceClip`` of the enrolled speaker.
        interferers: list of ``SourceClip`` matching ``spec.interference_mode``.
        enrollment: another clip of ``off.speaker_id``.
        spec: ``MixSpec``.
        rng: ``numpy.random.Generator`` for SNRs and crop positions.
        split: ``"test"`` selects ``spec.test_off_duration_range_s``.
    """
    if enrollment.speaker_id != off.speaker_id:
        raise ContractError(
            f"enrollment speaker {enrollment.speaker_id!r} differs from off-screen "
            f"speaker {off.speaker_id!r}")
    if enrollment.clip_id == off.clip_id or enrollment is off:
        raise ContractError("enrollment must be a different utterance from the off-screen clip")
    roles = INTERFERENCE[spec.interference_mode]
    got = tuple("noise" if c.kind == "noise" else "speech" for c in interferers)
    if sorted(got) != sorted(roles):
        raise ContractError(
            f"mode {spec.interference_mode!r} needs interferers {roles}, got {got}")

    W = spec.window_samples
    sr = spec.sample_rate
    on_w = _fit_length(on.wave, W)
    if _power(on_w) == 0:
        raise ContractError(f"on-screen clip {on.clip_id!r} is silent in the window")
    lips = _fit_frames(np.asarray(on.lip_features, dtype=np.float32), spec.video_frames)
    if lips.shape[1] != spec.lip_dim:
        raise ContractError(f"lip features have {lips.shape[1]} dims, spec expects {spec.lip_dim}")

    lo, hi = spec.snr_range_db
    dur_range = spec.test_off_duration_range_s if split == "test" else spec.off_duration_range_s
    placed, interval = crop_and_place(off.wave, dur_range, spec.window_s, rng, sr)
    snr_off = None
    if interval[1] > interval[0]:
        snr_off = float(rng.uniform(lo, hi))
        i0, i1 = int(round(interval[0] * sr)), int(round(interval[1] * sr))
        placed[i0:i1] = scale_to_snr(placed[i0:i1], on_w, snr_off)

    ordered = sorted(interferers, key=lambda c: c.kind != "noise")
    interf = []
    snr_interf = []
    for clip in ordered:
        snr = float(rng.uniform(lo, hi))
        interf.append(scale_to_snr(_fit_length(clip.wave, W), on_w, snr))
        snr_interf.append(snr)
    interf = np.stack(interf) if interf else np.zeros((0, W))

    mix, target = _compose(on_w, placed, interf)
    T = spec.num_latent_frames
    vad = oracle_vad(interval, T, latent_frame_times(T, spec.frame_len, spec.frame_hop, sr))
    enroll = _fit_length(enrollment.wave, int(round(spec.enrollment_s * sr)))

    meta = {
        "id": sample_id,
        "split": split,
        "sample_rate": sr,
        "interference_mode": spec.interference_mode,
        "snr_off_db": snr_off,
        "snr_interferers_db": snr_interf,
        "interferer_kinds": [c.kind for c in ordered],
        "off_interval_s": [interval[0], interval[1]],
        "mute": MUTE_NONE,
        "on_clip": on.clip_id,
        "off_clip": off.clip_id,
        "enrollment_clip": enrollment.clip_id,
        "interferer_clips": [c.clip_id for c in ordered],
        "on_speaker": on.speaker_id,
        "off_speaker": off.speaker_id,
        "interferer_speakers": [c.speaker_id for c in ordered if c.kind != "noise"],
    }
    f32 = np.float32
    return MixtureSample(
        mix=mix.astype(f32), lip_features=lips.astype(f32), enrollment=enroll.astype(f32),
        target=target.astype(f32), oracle_vad=vad, on_speech=on_w.astype(f32),
        off_speech=placed.astype(f32), interferers=interf.astype(f32), meta=meta,
    )


def measure_snrs(sample):
    """Recompute the applied SNRs (dB) from a sample's stored components."""
    p_on = _power(sample.on_speech)
    out = {"interferers": [10 * math.log10(p_on / _power(x)) for x in sample.interferers],
           "off": None}
    a, b = sample.meta["off_interval_s"]
    if b > a:
        sr = sample.meta["sample_rate"]
        seg = sample.off_speech[int(round(a * sr)):int(round(b * sr))]
        out["off"] = 10 * math.log10(p_on / _power(seg))
    return out


def apply_muting(sample, p_on, p_off, rng):
    """Randomly remove one target speech from both input and target.

    A single uniform draw ``u`` decides: ``u < p_on`` mutes the on-screen
    speech, ``p_on <= u < p_on + p_off`` mutes the off-screen speech (and
    zeroes the oracle activity), otherwise the sample is returned unchanged.
    Lip features and enrollment are always kept; the muted component array is
    zeroed.  A mute that would leave an
    all-zero target (off-screen speech absent) is skipped.
    """
    if p_on < 0 or p_off < 0 or p_on + p_off > 1 + 1e-12:
        raise ContractError(f"need p_on, p_off >= 0 and p_on + p_off <= 1, got {p_on}, {p_off}")
    u = rng.random()
    if u < p_on:
        mode = MUTE_ON
    elif u < p_on + p_off:
        mode = MUTE_OFF
    else:
        return sample
    has_off = bool(np.any(sample.off_speech))
    if not has_off:
        return sample
    on = sample.on_speech.astype(np.float64)
    off = sample.off_speech.astype(np.float64)
    interf = sample.interferers.astype(np.float64)
    mix, target = _compose(on, off, interf, with_on=mode != MUTE_ON, with_off=mode != MUTE_OFF)
    # the muted component is zeroed too, so mix stays the sum of the stored parts
    if mode == MUTE_ON:
        changes = {"on_speech": np.zeros_like(sample.on_speech)}
    else:
        changes = {"off_speech": np.zeros_like(sample.off_speech),
                   "oracle_vad": np.zeros_like(sample.oracle_vad)}
    return replace(sample, mix=mix.astype(np.float32), target=target.astype(np.float32),
                   meta=dict(sample.meta, mute=mode), **changes)


# ---------------------------------------------------------------- synthetic corpus

_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0
_VOWELS = np.array([
    [730, 1090, 2440], [270, 2290, 3010], [300, 870, 2240], [530, 1840, 2480],
    [570, 840, 2410], [640, 1190, 2390], [440, 1020, 2240], [490, 1350, 1690],
], dtype=np.float64)


def _id_int(speaker_id):
    if isinstance(speaker_id, (int, np.integer)):
        if speaker_id < 0:
            raise ContractError("speaker ids must be non-negative")
        return int(speaker_id)
    return zlib.crc32(str(speaker_id).encode())


def speaker_profile(speaker_id):
    """Fixed voice parameters for a speaker id.

    The mean fundamental follows a golden-ratio sequence over integer ids, so
    distinct ids never share a fundamental.
    """
    k = _id_int(speaker_id)
    f0 = 90.0 + 150.0 * ((k * _GOLDEN) % 1.0)
    prng = np.random.default_rng([k, 0x5EED])
    return {
        "f0": f0,
        "formant_scale": float(prng.uniform(0.85, 1.2)),
        "bandwidth": float(prng.uniform(80.0, 160.0)),
        "tilt_db_per_khz": float(prng.uniform(-9.0, -3.0)),
        "vibrato_hz": float(prng.uniform(4.0, 6.5)),
        "syllable_rate": float(prng.uniform(3.0, 5.5)),
    }


def _syllable_track(n, sr, rate, rng):
    """Positive envelope with syllable bumps and a per-syllable vowel index."""
    env = np.full(n, 0.02)
    vowel = np.zeros(n, dtype=np.int64)
    t = 0
    while t < n:
        dur = int(sr * rng.uniform(0.6, 1.4) / rate)
        gap = int(sr * rng.uniform(0.0, 0.5) / rate) if rng.random() < 0.35 else 0
        end = min(t + dur, n)
        m = end - t
        if m > 0:
            env[t:end] += rng.uniform(0.5, 1.0) * np.sin(np.pi * (np.arange(m) + 0.5) / m) ** 0.7
            vowel[t:end] = rng.integers(len(_VOWELS))
        t = end + gap
    return env, vowel


def lip_features_from_envelope(env, formants, n_frames, sr, fps, lip_dim, rng):
    """Frame-rate mouth features correlated with the amplitude envelope."""
    centers = ((np.arange(n_frames) + 0.5) / fps * sr).astype(np.int64)
    centers = np.clip(centers, 0, len(env) - 1)
    e = env[centers]
    opening = formants[centers, 0] / 800.0
    spread = formants[centers, 1] / 2500.0
    de = np.gradient(e) if n_frames > 1 else np.zeros(1)
    base = np.stack([e, e * opening, e * spread, de], axis=1)
    mix = np.random.default_rng(0x11B).normal(size=(base.shape[1], lip_dim)) / 2.0
    mix[:, 0] = [1.0, 0.0, 0.0, 0.0]
    feats = base @ mix + 0.02 * rng.normal(size=(n_frames, lip_dim))
    return feats.astype(np.float32)


def synth_speaker_clip(speaker_id, duration_s, rng, kind="off_screen", sample_rate=SAMPLE_RATE,
                       video_fps=VIDEO_FPS, lip_dim=8, clip_id=None):
    """Synthesize one utterance of a harmonic speaker.

    The voice (fundamental, formant scale, tilt) depends only on
    ``speaker_id``; the syllable envelope, vowel sequence and pitch contour
    come from ``rng``.  Lip features are always produced.
    """
    if duration_s <= 0:
        raise ContractError("duration_s must be > 0")
    prof = speaker_profile(speaker_id)
    sr = sample_rate
    n = int(round(duration_s * sr))
    t = np.arange(n) / sr
    env, vowel = _syllable_track(n, sr, prof["syllable_rate"], rng)

    drift = np.cumsum(rng.normal(size=n // 400 + 2))
    drift = np.interp(np.arange(n), np.arange(len(drift)) * 400, drift)
    drift = 0.04 * drift / (np.abs(drift).max() + 1e-9)
    f0 = prof["f0"] * (1.0 + drift + 0.01 * np.sin(2 * np.pi * prof["vibrato_hz"] * t))
    phase = 2 * np.pi * np.cumsum(f0) / sr + rng.uniform(0, 2 * np.pi)

    formants = _VOWELS[vowel] * prof["formant_scale"]
    smooth = np.hanning(int(0.03 * sr))
    smooth /= smooth.sum()
    formants = np.stack([np.convolve(formants[:, i], smooth, mode="same") for i in range(3)], 1)
    edge = len(smooth) // 2
    formants[:edge] = formants[edge]
    formants[-edge:] = formants[-edge - 1]

    n_harm = int(min(sr / 2 - 200, 4000) // prof["f0"])
    # harmonic amplitudes vary slowly; evaluate them on a coarse grid
    step = 32
    coarse = np.arange(0, n, step)
    fk = np.arange(1, n_harm + 1)[:, None] * f0[coarse][None, :]
    bw = prof["bandwidth"] * np.arange(1, 4)
    resp = sum(np.exp(-0.5 * ((fk - formants[coarse, i]) / bw[i]) ** 2) * 0.9 ** i
               for i in range(3))
    amps = (resp + 0.05) * 10 ** (prof["tilt_db_per_khz"] * fk / 20000.0)
    amps = np.repeat(amps, step, axis=1)[:, :n]
    wave = np.einsum("kn,kn->n", amps, np.sin(np.arange(1, n_harm + 1)[:, None] * phase))
    wave *= env
    wave += 0.003 * env * rng.normal(size=n)
    wave *= 0.1 / math.sqrt(_power(wave))

    n_frames = max(1, int(round(duration_s * video_fps)))
    lips = lip_features_from_envelope(env, formants, n_frames, sr, video_fps, lip_dim, rng)
    return SourceClip(
        wave=wave.astype(np.float32), kind=kind, speaker_id=speaker_id, lip_features=lips,
        clip_id=clip_id or f"spk{speaker_id}", sample_rate=sr, video_fps=video_fps,
    )


def synth_noise_clip(duration_s, rng, sample_rate=SAMPLE_RATE, clip_id="noise"):
    """Coloured, slowly modulated noise with a few resonances."""
    n = int(round(duration_s * sample_rate))
    spec = np.fft.rfft(rng.normal(size=n))
    freqs = np.fft.rfftfreq(n, 1.0 / sample_rate)
    tilt = rng.uniform(-1.5, 0.0)
    shape = (1.0 + freqs / 200.0) ** tilt
    for _ in range(int(rng.integers(0, 4))):
        fc = rng.uniform(150, 5000)
        shape += rng.uniform(0.5, 3.0) * np.exp(-0.5 * ((freqs - fc) / rng.uniform(20, 200)) ** 2)
    wave = np.fft.irfft(spec * shape, n)
    mod_rate = rng.uniform(0.2, 3.0)
    wave *= 1.0 + rng.uniform(0.0, 0.8) * np.sin(
        2 * np.pi * mod_rate * np.arange(n) / sample_rate + rng.uniform(0, 2 * np.pi))
    wave *= 0.1 / math.sqrt(_power(wave))
    return SourceClip(wave=wave.astype(np.float32), kind="noise", clip_id=clip_id,
                      sample_rate=sample_rate)


class SyntheticCorpus:
    """Deterministic synthetic clip source over a pool of speaker ids.

    ``speech_clip(speaker, utt)`` is a pure function of ``(seed, speaker, utt)``,
    so any utterance index is available for enrollment.
    """

    def __init__(self, speaker_ids, seed=0, clip_s=4.0, sample_rate=SAMPLE_RATE,
                 video_fps=VIDEO_FPS, lip_dim=8, noise_pool=10_000):
        self.speaker_ids = list(speaker_ids)
        if len(self.speaker_ids) < 4:
            raise ContractError("a corpus needs at least 4 speakers")
        self.seed = seed
        self.clip_s = clip_s
        self.sample_rate = sample_rate
        self.video_fps = video_fps
        self.lip_dim = lip_dim
        self.noise_pool = noise_pool

    def speech_clip(self, speaker_id, utt, kind, duration_s=None):
        rng = np.random.default_rng([self.seed, _id_int(speaker_id), utt, 1])
        return synth_speaker_clip(
            speaker_id, duration_s or self.clip_s, rng, kind=kind, sample_rate=self.sample_rate,
            video_fps=self.video_fps, lip_dim=self.lip_dim, clip_id=f"spk{speaker_id}/u{utt}")

    def noise_clip(self, idx, duration_s=None):
        rng = np.random.default_rng([self.seed, idx, 2])
        return synth_noise_clip(duration_s or self.clip_s, rng, self.sample_rate,
                                clip_id=f"noise/{idx}")

    def draw_sources(self, rng, mode, window_s):
        roles = INTERFERENCE[mode]
        n_spk = 2 + sum(r == "speech" for r in roles)
        spk = rng.choice(len(self.speaker_ids), size=n_spk, replace=False)
        spk = [self.speaker_ids[i] for i in spk]
        utts = rng.integers(0, 1_000_000, size=n_spk + 1)
        if utts[-1] == utts[1]:
            utts[-1] += 1
        dur = max(window_s, self.clip_s)
        on = self.speech_clip(spk[0], int(utts[0]), "on_screen", dur)
        off = self.speech_clip(spk[1], int(utts[1]), "off_screen", dur)
        enrollment = self.speech_clip(spk[1], int(utts[-1]), "off_screen")
        interf = []
        k = 2
        for role in roles:
            if role == "noise":
                interf.append(self.noise_clip(int(rng.integers(self.noise_pool)), dur))
            else:
                interf.append(self.speech_clip(spk[k], int(utts[k]), "off_screen", dur))
                k += 1
        return on, off, interf, enrollment


class ClipCorpus:
    """Corpus over loaded clips, grouped by role."""

    def __init__(self, clips):
        self.on = [c for c in clips if c.kind == "on_screen"]
        self.noise = [c for c in clips if c.kind == "noise"]
        self.by_speaker = {}
        for c in clips:
            if c.kind == "off_screen":
                self.by_speaker.setdefault(c.speaker_id, []).append(c)
        self.off_speakers = sorted((s for s, cs in self.by_speaker.items() if len(cs) >= 2),
                                   key=str)

    def draw_sources(self, rng, mode, window_s):
        if not self.on or not self.off_speakers:
            raise DataError("corpus needs on-screen clips and an off-screen speaker with 2+ clips")
        on = self.on[int(rng.integers(len(self.on)))]
        spk = self.off_speakers[int(rng.integers(len(self.off_speakers)))]
        pair = rng.choice(len(self.by_speaker[spk]), size=2, replace=False)
        off, enrollment = (self.by_speaker[spk][i] for i in pair)
        interf = []
        for role in INTERFERENCE[mode]:
            if role == "noise":
                if not self.noise:
                    raise DataError("corpus has no noise clips")
                interf.append(self.noise[int(rng.integers(len(self.noise)))])
            else:
                pool = [c for c in self.on if c.speaker_id not in (on.speaker_id, spk)]
                pool += [c for s, cs in self.by_speaker.items() if s not in (on.speaker_id, spk)
                         for c in cs]
                if not pool:
                    raise DataError("corpus has no interfering speakers")
                interf.append(replace(pool[int(rng.integers(len(pool)))], kind="off_screen"))
        return on, off, interf, enrollment


SPLIT_CODES = {"train": 0, "val": 1, "test": 2}


def speaker_pools(n_train=64, n_val=16, n_test=16):
    """Disjoint integer speaker-id pools for train/val/test."""
    return {
        "train": list(range(0, n_train)),
        "val": list(range(100_000, 100_000 + n_val)),
        "test": list(range(200_000, 200_000 + n_test)),
    }


def generate_sample(corpus, spec, split, index):
    rng = np.random.default_rng([spec.seed, SPLIT_CODES[split], index])
    on, off, interf, enrollment = corpus.draw_sources(rng, spec.interference_mode, spec.window_s)
    return make_sample(on, off, interf, enrollment, spec, rng, split=split,
                       sample_id=f"{split}-{index:05d}")


def generate_dataset(n, spec, corpus, split="train"):
    """``n`` samples; item ``i`` depends only on ``(spec.seed, split, i)``."""
    return [generate_sample(corpus, spec, split, i) for i in range(n)]


# ---------------------------------------------------------------- file I/O

def write_lip_features(path, feats, fps=VIDEO_FPS):
    """Raw little-endian float32 matrix plus a ``<path>.json`` sidecar."""
    path = Path(path)
    feats = np.ascontiguousarray(feats, dtype="<f4")
    path.write_bytes(feats.tobytes())
    sidecar = {"frames": int(feats.shape[0]), "dims": int(feats.shape[1]), "fps": float(fps)}
    Path(str(path) + ".json").write_text(json.dumps(sidecar))


def read_lip_features(path):
    path = Path(path)
    side = Path(str(path) + ".json")
    if not path.exists() or not side.exists():
        raise DataError(f"lip features {path} or its sidecar {side} is missing")
    meta = json.loads(side.read_text())
    for key in ("frames", "dims", "fps"):
        if key not in meta:
            raise DataError(f"lip sidecar {side} lacks {key!r}")
    arr = np.frombuffer(path.read_bytes(), dtype="<f4")
    if arr.size != meta["frames"] * meta["dims"]:
        raise DataError(f"{path}: {arr.size} values, sidecar says {meta['frames']}x{meta['dims']}")
    return arr.reshape(meta["frames"], meta["dims"]).astype(np.float32), float(meta["fps"])


def read_wav(path, target_rate=SAMPLE_RATE):
    """Read a PCM16 or float WAV as mono float32 at ``target_rate``."""
    try:
        rate, data = wavfile.read(path)
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    if data.dtype == np.int16:
        data = data.astype(np.float64) / 32768.0
    elif data.dtype in (np.float32, np.float64):
        data = data.astype(np.float64)
    else:
        raise DataError(f"{path}: unsupported sample format {data.dtype}")
    if data.ndim == 2:
        data = data.mean(axis=1)
    if rate != target_rate:
        g = math.gcd(int(rate), int(target_rate))
        data = sps.resample_poly(data, target_rate // g, rate // g)
    return data.astype(np.float32)


def write_wav(path, wave, rate=SAMPLE_RATE):
    wavfile.write(path, rate, np.asarray(wave, dtype=np.float32))


_MANIFEST_KEYS = {"path", "speaker_id", "kind", "lip_path"}


def load_corpus(manifest_path, sample_rate=SAMPLE_RATE):
    """Load clips listed in a JSON-lines manifest.

    Each line is ``{"path", "speaker_id", "kind", "lip_path"?}``; relative paths
    resolve against the manifest's directory.  On-screen entries need
    ``lip_path``; off-screen entries need ``speaker_id``.
    """
    manifest_path = Path(manifest_path)
    if not manifest_path.exists():
        raise DataError(f"manifest {manifest_path} does not exist")
    root = manifest_path.parent
    clips = []
    for lineno, line in enumerate(manifest_path.read_text().splitlines(), 1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise DataError(f"{manifest_path}:{lineno}: invalid JSON ({exc})") from exc
        where = f"{manifest_path}:{lineno}"
        if not isinstance(rec, dict) or "path" not in rec or "kind" not in rec:
            raise DataError(f"{where}: records need 'path' and 'kind'")
        if set(rec) - _MANIFEST_KEYS:
            raise DataError(f"{where}: unknown keys {sorted(set(rec) - _MANIFEST_KEYS)}")
        kind = rec["kind"]
        if kind not in KINDS:
            raise DataError(f"{where}: unknown kind {kind!r}")
        if kind == "on_screen" and not rec.get("lip_path"):
            raise DataError(f"{where}: on_screen entry has no lip_path")
        if kind == "off_screen" and rec.get("speaker_id") is None:
            raise DataError(f"{where}: off_screen entry has no speaker_id")
        wav_path = root / rec["path"]
        if not wav_path.exists():
            raise DataError(f"{where}: missing audio file {wav_path}")
        wave = read_wav(wav_path, sample_rate)
        lips = None
        fps = VIDEO_FPS
        if rec.get("lip_path"):
            lips, fps = read_lip_features(root / rec["lip_path"])
        clips.append(SourceClip(wave=wave, kind=kind, speaker_id=rec.get("speaker_id"),
                                lip_features=lips, clip_id=rec["path"], sample_rate=sample_rate,
                                video_fps=fps))
    return clips


_ARRAYS = ("mix", "lip_features", "enrollment", "target", "oracle_vad", "on_speech",
           "off_speech", "interferers")


def save_dataset(samples, out_dir, spec=None):
    """Write ``sample_XXXXX.npz`` files plus ``index.json`` (all meta fields)."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for i, s in enumerate(samples):
        fname = f"sample_{i:05d}.npz"
        np.savez(out_dir / fname, **{k: getattr(s, k) for k in _ARRAYS})
        entries.append({"file": fname, **s.meta})
    index = {"spec": spec.to_dict() if spec is not None else None, "samples": entries}
    (out_dir / "index.json").write_text(json.dumps(index, indent=1, sort_keys=True))
    return out_dir / "index.json"


def load_dataset(data_dir):
    data_dir = Path(data_dir)
    index_path = data_dir / "index.json"
    if not index_path.exists():
        raise DataError(f"no index.json in {data_dir}")
    index = json.loads(index_path.read_text())
    samples = []
    for entry in index["samples"]:
        entry = dict(entry)
        path = data_dir / entry.pop("file")
        if not path.exists():
            raise DataError(f"missing sample file {path}")
        with np.load(path) as z:
            arrays = {k: z[k] for k in _ARRAYS}
        samples.append(MixtureSample(**arrays, meta=entry))
    return samples
