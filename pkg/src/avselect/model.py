"""Time-domain audio-visual extractor for on-screen plus selected off-screen speech.

The network follows a Conv-TasNet layout: a learned strided filterbank
encodes the mixture, ``num_blocks`` extractor blocks refine a latent
representation conditioned on an audio-visual clue, and the sigmoid of the
final latent is used as a mask on the encoded mixture before a transposed
convolution decodes it back to a waveform.

The clue combines a lip-driven visual embedding (time-variant, upsampled to
the latent frame rate) with a voiceprint embedding computed from an
enrollment utterance (time-invariant).  With attention enabled each block
predicts per-frame activity of the enrolled speaker and uses it to gate the
voiceprint term.

Tensor layout is channel-major, ``(batch, channels, frames)``, everywhere
inside the network.
"""

from dataclasses import asdict, dataclass, fields

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ContractError

CLUES = ("both", "visual", "voiceprint")


@dataclass(frozen=True)
class ModelConfig:
    window_len: int = 32
    hop: int = 16
    d_in: int = 64
    d_v: int = 64
    d_a: int = 64
    d_av: int = 64
    num_blocks: int = 2
    tcn_layers_per_block: int = 4
    tcn_channels: int = 128
    tcn_kernel: int = 3
    use_attention: bool = True
    video_fps: float = 25.0
    sample_rate: int = 16000
    lip_dim: int = 8
    visual_layers: int = 2
    voiceprint_window: int = 128
    voiceprint_layers: int = 2
    upsample: str = "nearest"
    clue: str = "both"
    head_context_layers: int = 7

    def __post_init__(self):
        ints = ("window_len", "hop", "d_in", "d_v", "d_a", "d_av", "num_blocks",
                "tcn_layers_per_block", "tcn_channels", "tcn_kernel", "sample_rate",
                "lip_dim", "visual_layers", "voiceprint_window", "voiceprint_layers")
        for name in ints:
            if int(getattr(self, name)) < 1:
                raise ContractError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.head_context_layers < 0:
            raise ContractError("head_context_layers must be >= 0")
        if self.hop > self.window_len:
            raise ContractError(f"hop ({self.hop}) must not exceed window_len ({self.window_len})")
        if self.tcn_kernel % 2 == 0:
            raise ContractError("tcn_kernel must be odd to keep frame alignment")
        if self.video_fps <= 0:
            raise ContractError("video_fps must be > 0")
        if self.upsample not in ("nearest", "linear"):
            raise ContractError(f"upsample must be 'nearest' or 'linear', got {self.upsample!r}")
        if self.clue not in CLUES:
            raise ContractError(f"clue must be one of {CLUES}, got {self.clue!r}")

    def num_frames(self, num_samples):
        """Latent frame count ``floor((N - L) / hop) + 1`` for ``N`` samples."""
        if num_samples < self.window_len:
            raise ContractError(
                f"input of {num_samples} samples is shorter than window_len={self.window_len}")
        return (num_samples - self.window_len) // self.hop + 1

    @property
    def frame_rate(self):
        return self.sample_rate / self.hop

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, data):
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ContractError(f"unknown ModelConfig keys: {sorted(unknown)}")
        return cls(**data)


# Extractor sizes reported for the full-scale system; encoders are our stand-ins.
PAPER_CONFIG = ModelConfig(
    window_len=40, hop=20, d_in=256, d_v=512, d_a=256, d_av=256, num_blocks=4,
    tcn_layers_per_block=8, tcn_channels=512, lip_dim=512, visual_layers=5,
    voiceprint_window=160, voiceprint_layers=3,
)
DESK_CONFIG = ModelConfig()
TINY_CONFIG = ModelConfig(
    d_in=8, d_v=8, d_a=8, d_av=8, num_blocks=1, tcn_layers_per_block=2,
    tcn_channels=8, lip_dim=4, visual_layers=1, voiceprint_window=32,
    voiceprint_layers=1,
)


def latent_frame_times(num_frames, window_len, hop, sample_rate):
    """Start and end time in seconds of each latent frame's analysis window."""
    starts = np.arange(num_frames) * hop / sample_rate
    return starts, starts + window_len / sample_rate


class GlobalLayerNorm(nn.Module):
    """Normalize each item over channels and time, then apply a per-channel affine map."""

    def __init__(self, channels, eps=1e-8):
        super().__init__()
        self.gamma = nn.Parameter(torch.ones(1, channels, 1))
        self.beta = nn.Parameter(torch.zeros(1, channels, 1))
        self.eps = eps

    def forward(self, x):
        mean = x.mean(dim=(1, 2), keepdim=True)
        var = (x - mean).pow(2).mean(dim=(1, 2), keepdim=True)
        return self.gamma * (x - mean) / torch.sqrt(var + self.eps) + self.beta


class TCNLayer(nn.Module):
    """1x1 conv, PReLU, gLN, dilated depthwise conv, PReLU, gLN, 1x1 conv."""

    def __init__(self, channels, hidden, kernel, dilation):
        super().__init__()
        pad = dilation * (kernel - 1) // 2
        self.net = nn.Sequential(
            nn.Conv1d(channels, hidden, 1),
            nn.PReLU(),
            GlobalLayerNorm(hidden),
            nn.Conv1d(hidden, hidden, kernel, dilation=dilation, padding=pad, groups=hidden),
            nn.PReLU(),
            GlobalLayerNorm(hidden),
            nn.Conv1d(hidden, channels, 1),
        )

    def forward(self, x):
        return x + self.net(x)


class VisualEncoder(nn.Module):
    """Temporal conv encoder over lip features followed by upsampling to latent frames."""

    def __init__(self, cfg):
        super().__init__()
        self.cfg = cfg
        self.inp = nn.Conv1d(cfg.lip_dim, cfg.d_v, 3, padding=1, padding_mode="replicate")
        self.act = nn.PReLU()
        self.layers = nn.ModuleList(
            nn.Sequential(
                nn.Conv1d(cfg.d_v, cfg.d_v, 3, padding=1, padding_mode="replicate"),
                nn.PReLU(),
            )
            for _ in range(cfg.visual_layers - 1)
        )

    def upsample(self, z, num_samples):
        cfg = self.cfg
        n_video = z.shape[-1]
        T = cfg.num_frames(num_samples)
        centers = (np.arange(T) * cfg.hop + cfg.window_len / 2) / cfg.sample_rate
        pos = centers * cfg.video_fps
        if cfg.upsample == "nearest":
            idx = np.clip(np.floor(pos).astype(np.int64), 0, n_video - 1)
            return z[..., torch.from_numpy(idx)]
        # linear: video frame k is centred at (k + 0.5) / fps
        pos = np.clip(pos - 0.5, 0.0, n_video - 1)
        lo = np.floor(pos).astype(np.int64)
        hi = np.minimum(lo + 1, n_video - 1)
        w = torch.as_tensor(pos - lo, dtype=z.dtype)
        return z[..., torch.from_numpy(lo)] * (1 - w) + z[..., torch.from_numpy(hi)] * w

    def forward(self, lips, num_samples):
        """Encode ``lips`` of shape (batch, video_frames, lip_dim) to (batch, d_v, T)."""
        cfg = self.cfg
        if lips.dim() != 3 or lips.shape[-1] != cfg.lip_dim:
            raise ContractError(
                f"lip features must be (batch, frames, {cfg.lip_dim}), got {tuple(lips.shape)}")
        n_video = lips.shape[1]
        audio_s = num_samples / cfg.sample_rate
        video_s = n_video / cfg.video_fps
        if n_video < 1 or abs(audio_s - video_s) > 1.0 / cfg.video_fps + 1e-9:
            raise ContractError(
                f"lip sequence lasts {video_s:.3f} s but audio lasts {audio_s:.3f} s")
        z = self.act(self.inp(lips.transpose(1, 2)))
        for layer in self.layers:
            z = z + layer(z)
        return self.upsample(z, num_samples)


class VoiceprintEncoder(nn.Module):
    """Framewise filterbank, pointwise MLP, mean pooling over time and L2 normalization."""

    def __init__(self, cfg):
        super().__init__()
        self.cfg = cfg
        w = cfg.voiceprint_window
        self.filterbank = nn.Conv1d(1, cfg.d_a, w, stride=w, bias=False)
        self.layers = nn.ModuleList(
            nn.Sequential(nn.Conv1d(cfg.d_a, cfg.d_a, 1), nn.PReLU())
            for _ in range(cfg.voiceprint_layers)
        )

    def forward(self, enrollment):
        """Map enrollment audio (batch, M) to unit-norm embeddings (batch, d_a)."""
        min_len = max(self.cfg.voiceprint_window, self.cfg.window_len)
        if enrollment.dim() != 2 or enrollment.shape[-1] < min_len:
            raise ContractError(
                f"enrollment must be (batch, >= {min_len} samples), got {tuple(enrollment.shape)}")
        h = torch.log1p(self.filterbank(enrollment.unsqueeze(1)).abs())
        for layer in self.layers:
            h = layer(h)
        return F.normalize(h.mean(-1), dim=-1)


class ActivityHead(nn.Module):
    """Frame-level activity of the enrolled speaker from ``z_a * proj(z_in)``.

    The product passes through a short stack of bias-free depthwise dilated
    convolutions (temporal context) before a pointwise readout and sigmoid.
    """

    def __init__(self, d_in, d_av, context_layers=7):
        super().__init__()
        # the product needs matching widths; only project when they differ
        self.proj = nn.Identity() if d_in == d_av else nn.Conv1d(d_in, d_av, 1)
        self.d_in = d_in
        self.d_av = d_av
        self.context = nn.ModuleList(
            nn.Sequential(
                nn.Conv1d(d_av, d_av, 3, dilation=2 ** i, padding=2 ** i, groups=d_av,
                          bias=False, padding_mode="replicate"),
                nn.PReLU(),
            )
            for i in range(context_layers)
        )
        self.out = nn.Conv1d(d_av, 1, 1)

    def forward(self, z_a, z_in):
        if z_a.shape[-1] != self.d_av or z_in.shape[1] != self.d_in:
            raise ContractError(
                f"activity head expects z_a width {self.d_av} and z_in width {self.d_in}, "
                f"got {z_a.shape[-1]} and {z_in.shape[1]}")
        h = z_a.unsqueeze(-1) * self.proj(z_in)
        for layer in self.context:
            h = h + layer(h)
        return torch.sigmoid(self.out(h)).squeeze(1)


def fuse_clues(zv, za, attention=None):
    """Combine normalized clues: ``zv(t) + a(t) * za``.

    Args:
        zv: visual embedding (batch, d_av, T) or None when only the voiceprint is used.
        za: voiceprint embedding (batch, d_av) or None when only the visual clue is used.
        attention: per-frame weights (batch, T) or None for a plain sum.
    """
    if za is None:
        return zv
    za = za.unsqueeze(-1)
    if zv is None:
        if attention is not None:
            raise ContractError("attention requires a visual clue to gate against")
        return za
    if zv.shape[1] != za.shape[1]:
        raise ContractError(f"clue width mismatch: {zv.shape[1]} vs {za.shape[1]}")
    if attention is None:
        return zv + za
    if attention.shape != (zv.shape[0], zv.shape[2]):
        raise ContractError(
            f"attention shape {tuple(attention.shape)} does not match frames {zv.shape[2]}")
    return zv + attention.unsqueeze(1) * za


class ExtractorBlock(nn.Module):
    """One refinement step of the latent mixture representation under the fused clue."""

    def __init__(self, cfg):
        super().__init__()
        self.cfg = cfg
        self.use_visual = cfg.clue in ("both", "visual")
        self.use_voiceprint = cfg.clue in ("both", "voiceprint")
        if self.use_visual:
            self.v_proj = nn.Conv1d(cfg.d_v, cfg.d_av, 1)
            self.v_norm = GlobalLayerNorm(cfg.d_av)
        if self.use_voiceprint:
            self.a_proj = nn.Linear(cfg.d_a, cfg.d_av)
            self.a_norm = GlobalLayerNorm(cfg.d_av)
        self.head = (ActivityHead(cfg.d_in, cfg.d_av, cfg.head_context_layers)
                     if self.has_attention else None)
        self.in_norm = GlobalLayerNorm(cfg.d_in)
        self.in_conv = nn.Conv1d(cfg.d_in + cfg.d_av, cfg.d_in, 1)
        self.tcn = nn.ModuleList(
            TCNLayer(cfg.d_in, cfg.tcn_channels, cfg.tcn_kernel, 2 ** i)
            for i in range(cfg.tcn_layers_per_block)
        )
        self.out_conv = nn.Conv1d(cfg.d_in, cfg.d_in, 1)

    @property
    def has_attention(self):
        return self.cfg.use_attention and self.cfg.clue == "both"

    def clue(self, z_in_prev, z_v, z_a):
        """Return the fused clue (batch, d_av, T) and the activity estimate or None."""
        zv = self.v_norm(self.v_proj(z_v)) if self.use_visual else None
        za = za_tilde = attention = None
        if self.use_voiceprint:
            za = self.a_proj(z_a)
            za_tilde = self.a_norm(za.unsqueeze(-1)).squeeze(-1)
        if self.head is not None:
            attention = self.head(za, z_in_prev)
        fused = fuse_clues(zv, za_tilde, attention)
        return fused.expand(-1, -1, z_in_prev.shape[-1]), attention

    def forward(self, z_in_prev, z_v, z_a):
        fused, attention = self.clue(z_in_prev, z_v, z_a)
        h = self.in_conv(torch.cat([fused, self.in_norm(z_in_prev)], dim=1))
        for layer in self.tcn:
            h = layer(h)
        return z_in_prev + self.out_conv(h), attention


class AVSelectNet(nn.Module):
    """Full extractor; ``cfg.clue`` selects the joint model or a single-clue variant."""

    def __init__(self, cfg=DESK_CONFIG):
        super().__init__()
        self.cfg = cfg
        self.encoder = nn.Conv1d(1, cfg.d_in, cfg.window_len, stride=cfg.hop, bias=False)
        self.visual_encoder = VisualEncoder(cfg) if cfg.clue in ("both", "visual") else None
        self.voiceprint_encoder = (
            VoiceprintEncoder(cfg) if cfg.clue in ("both", "voiceprint") else None)
        self.blocks = nn.ModuleList(ExtractorBlock(cfg) for _ in range(cfg.num_blocks))
        self.decoder = nn.ConvTranspose1d(cfg.d_in, 1, cfg.window_len, stride=cfg.hop, bias=False)

    def encode(self, mix):
        """(batch, N) waveform to (batch, d_in, T) nonnegative latents."""
        if mix.dim() != 2:
            raise ContractError(f"mix must be (batch, samples), got {tuple(mix.shape)}")
        self.cfg.num_frames(mix.shape[-1])
        return F.relu(self.encoder(mix.unsqueeze(1)))

    def decode(self, z, num_samples):
        """Overlap-add decode, then trim or zero-pad the tail to ``num_samples``."""
        y = self.decoder(z).squeeze(1)
        if y.shape[-1] >= num_samples:
            return y[..., :num_samples]
        return F.pad(y, (0, num_samples - y.shape[-1]))

    def estimate_mask(self, z0, mix_len, lips=None, enrollment=None):
        z_v = self.visual_encoder(lips, mix_len) if self.visual_encoder is not None else None
        z_a = self.voiceprint_encoder(enrollment) if self.voiceprint_encoder is not None else None
        z = z0
        attentions = []
        for block in self.blocks:
            z, a = block(z, z_v, z_a)
            if a is not None:
                attentions.append(a)
        return torch.sigmoid(z), attentions

    def forward(self, mix, lips=None, enrollment=None):
        """Estimate the target mixture.

        Args:
            mix: noisy input (batch, N).
            lips: lip features (batch, video_frames, lip_dim); ignored by voiceprint-only models.
            enrollment: enrollment audio (batch, M); ignored by visual-only models.

        Returns:
            tuple: estimate (batch, N) and the list of per-block activity
            estimates, each (batch, T); empty when attention is off.
        """
        z0 = self.encode(mix)
        mask, attentions = self.estimate_mask(z0, mix.shape[-1], lips, enrollment)
        return self.decode(z0 * mask, mix.shape[-1]), attentions


def build_model(cfg=DESK_CONFIG, seed=0):
    """Instantiate a model with parameters drawn from a seeded generator."""
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        return AVSelectNet(cfg)


_COMPONENTS = (
    ("encoder.", "audio_encoder"),
    ("decoder.", "audio_decoder"),
    ("visual_encoder.", "visual_encoder"),
    ("voiceprint_encoder.", "voiceprint_encoder"),
)


def component_of(param_name):
    """Component label used for parameter accounting and freezing."""
    for prefix, label in _COMPONENTS:
        if param_name.startswith(prefix):
            return label
    if ".head." in param_name:
        return "sdvad"
    return "extractor"


def count_parameters(module):
    """Scalar parameter count per component plus ``"total"``; absent components count 0."""
    counts = {label: 0 for _, label in _COMPONENTS}
    counts.update(extractor=0, sdvad=0)
    for name, p in module.named_parameters():
        label = component_of(name)
        counts[label] = counts.get(label, 0) + p.numel()
    counts["total"] = sum(counts.values())
    return counts
