"""Two-branch convolutional encoder-decoder with temporal self-attention."""

from dataclasses import asdict, dataclass, field

import torch
from torch import nn

from ..exceptions import InvalidConfig
from ..signal import Modality


@dataclass(frozen=True)
class ModelConfig:
    """Network shape.

    Each encoder block runs a local branch (two kernel-3 convolutions, the
    second dilated) and a global branch (a wide kernel followed by a
    kernel-3 convolution) side by side, concatenates them, adds a 1x1
    residual, then max-pools by 2 and applies self-attention and dropout.
    The decoder mirrors the resolutions with nearest-neighbour upsampling,
    residual kernel-3 convolution pairs and attention.
    """

    input_len: int = 400
    local_kernel: int = 3
    local_dilations: tuple = (1, 2, 4)
    global_kernel: int = 48
    channels_per_branch: int = 16
    encoder_blocks: int = 3
    dropout_p: float = 0.2
    attention_dim: int = 64
    output_channels: int = 1
    target_modality: str = Modality.SCG.value

    def __post_init__(self):
        object.__setattr__(self, "local_dilations", tuple(int(d) for d in self.local_dilations))
        object.__setattr__(self, "target_modality", Modality(self.target_modality).value)
        self.validate()

    def validate(self):
        dims = (self.input_len, self.local_kernel, self.global_kernel, self.channels_per_branch,
                self.encoder_blocks, self.attention_dim, self.output_channels)
        if min(dims) <= 0 or not self.local_dilations or min(self.local_dilations) <= 0:
            raise InvalidConfig("all model dimensions must be positive")
        if self.input_len % (2 ** self.encoder_blocks):
            raise InvalidConfig("input_len must be divisible by 2**encoder_blocks")
        if not 0 <= self.dropout_p < 1:
            raise InvalidConfig("dropout_p must lie in [0, 1)")
        if self.target_modality not in (Modality.SCG.value, Modality.GCG.value):
            raise InvalidConfig("target_modality must be SCG or GCG")
        return self

    @property
    def decoder_blocks(self):
        return self.encoder_blocks

    def to_dict(self):
        d = asdict(self)
        d["local_dilations"] = list(self.local_dilations)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d.pop("decoder_blocks", None)
        return cls(**d)


class SameConv1d(nn.Conv1d):
    """Length-preserving convolution; even kernels pad one extra on the right."""

    def __init__(self, cin, cout, k, dilation=1):
        super().__init__(cin, cout, k, dilation=dilation)
        total = dilation * (k - 1)
        self.pad = (total // 2, total - total // 2)

    def forward(self, x):
        return super().forward(nn.functional.pad(x, self.pad))


def _conv(cin, cout, k, dilation=1):
    return SameConv1d(cin, cout, k, dilation)


class TemporalAttention(nn.Module):
    """Single-head scaled dot-product self-attention over time, residual."""

    def __init__(self, channels, dim):
        super().__init__()
        self.q = nn.Linear(channels, dim)
        self.k = nn.Linear(channels, dim)
        self.v = nn.Linear(channels, dim)
        self.out = nn.Linear(dim, channels)
        self.scale = dim ** -0.5
        self.last_weights = None
        self.keep_weights = False

    def forward(self, x):
        h = x.transpose(1, 2)  # (batch, time, channels)
        scores = self.q(h) @ self.k(h).transpose(1, 2) * self.scale
        w = torch.softmax(scores, dim=-1)
        if self.keep_weights:
            self.last_weights = w.detach()
        return x + self.out(w @ self.v(h)).transpose(1, 2)


class TwoBranchBlock(nn.Module):
    """Local dilated branch and wide global branch, concatenated, residual."""

    def __init__(self, cin, c, local_kernel, dilation, global_kernel):
        super().__init__()
        self.local = nn.Sequential(
            _conv(cin, c, local_kernel), nn.BatchNorm1d(c), nn.ReLU(),
            _conv(c, c, local_kernel, dilation), nn.BatchNorm1d(c),
        )
        self.wide = nn.Sequential(
            _conv(cin, c, global_kernel), nn.BatchNorm1d(c), nn.ReLU(),
            _conv(c, c, local_kernel), nn.BatchNorm1d(c),
        )
        self.skip = nn.Conv1d(cin, 2 * c, 1)
        self.act = nn.ReLU()

    def forward(self, x):
        return self.act(torch.cat([self.local(x), self.wide(x)], dim=1) + self.skip(x))


class EncoderBlock(nn.Module):
    def __init__(self, cin, cfg, dilation):
        super().__init__()
        c = cfg.channels_per_branch
        self.conv = TwoBranchBlock(cin, c, cfg.local_kernel, dilation, cfg.global_kernel)
        self.pool = nn.MaxPool1d(2)
        self.attn = TemporalAttention(2 * c, cfg.attention_dim)
        self.drop = nn.Dropout(cfg.dropout_p)

    def forward(self, x):
        return self.drop(self.attn(self.pool(self.conv(x))))


class ResidualConvPair(nn.Module):
    """Two kernel-3 convolutions with batch-norm and an identity residual."""

    def __init__(self, c, k, dilation):
        super().__init__()
        self.body = nn.Sequential(
            _conv(c, c, k), nn.BatchNorm1d(c), nn.ReLU(),
            _conv(c, c, k, dilation), nn.BatchNorm1d(c),
        )
        self.act = nn.ReLU()

    def forward(self, x):
        return self.act(self.body(x) + x)


class DecoderBlock(nn.Module):
    def __init__(self, cfg, dilation, attend):
        super().__init__()
        c = cfg.channels_per_branch
        self.up = nn.Upsample(scale_factor=2, mode="nearest")
        self.conv = ResidualConvPair(2 * c, cfg.local_kernel, dilation)
        self.attn = TemporalAttention(2 * c, cfg.attention_dim) if attend else nn.Identity()

    def forward(self, x):
        return self.attn(self.conv(self.up(x)))


class ReconstructionNet(nn.Module):
    """Maps ``(batch, 1, L)`` ear cycles to ``(batch, out, L)`` target cycles."""

    def __init__(self, cfg=ModelConfig()):
        super().__init__()
        self.cfg = cfg.validate()
        c2 = 2 * cfg.channels_per_branch
        dil = cfg.local_dilations
        self.encoder = nn.ModuleList(
            EncoderBlock(1 if i == 0 else c2, cfg, dil[i % len(dil)])
            for i in range(cfg.encoder_blocks)
        )
        self.latent = nn.Sequential(
            _conv(c2, c2, cfg.local_kernel), nn.BatchNorm1d(c2), nn.ReLU(),
            TemporalAttention(c2, cfg.attention_dim),
        )
        n = cfg.encoder_blocks
        self.decoder = nn.ModuleList(
            DecoderBlock(cfg, dil[(n - 1 - i) % len(dil)], attend=i < n - 1)
            for i in range(n)
        )
        self.head = _conv(c2, cfg.output_channels, cfg.local_kernel)

    def attention_modules(self):
        return [m for m in self.modules() if isinstance(m, TemporalAttention)]

    def forward(self, x):
        for blk in self.encoder:
            x = blk(x)
        x = self.latent(x)
        for blk in self.decoder:
            x = blk(x)
        return self.head(x)


def build_model(cfg=ModelConfig(), seed=0):
    """Construct the network with initial weights drawn from ``seed``."""
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        return ReconstructionNet(cfg)


@dataclass
class ReconstructionModel:
    """A trained network plus its configuration and training metadata."""

    config: ModelConfig
    net: ReconstructionNet
    train_meta: dict = field(default_factory=dict)

    def named_weights(self):
        """Every parameter and buffer, in a fixed order, as float32 tensors."""
        return {k: v.detach().clone() for k, v in self.net.state_dict().items()}

    def n_parameters(self):
        return sum(p.numel() for p in self.net.parameters())
