"""SR-LA Res2Net classifier for the F0-subband feature."""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field, fields
from typing import Callable, Sequence

import torch
from torch import nn

from . import tensor as T
from .tensor import ConfigError, ConvSpec, ShapeError

log = logging.getLogger(__name__)

VARIANTS = ("sr-la", "sr-se", "sr", "la", "se", "plain", "resnet")

BONAFIDE, SPOOF = 0, 1


@dataclass
class ModelConfig:
    """Architecture hyperparameters.

    ``stage_channels[0]`` is the stem width; the remaining entries are the
    output widths of the four residual stages. Inside a block the 1x1 entry
    conv expands to ``scale * round(width_ratio * out / scale)`` channels,
    which are split into ``scale`` equal groups.
    """

    scale: int = 8
    stage_channels: tuple[int, ...] = (16, 32, 64, 128, 256)
    blocks_per_stage: int = 2
    width_ratio: float = 1.5
    sr_kernel: int = 3
    sr_dilation: int = 2
    la_kernel: int | None = None
    se_reduction: int = 16
    n_classes: int = 2
    margin: int = 4
    variant: str = "sr-la"
    input_shape: tuple[int, int] = (45, 600)

    def __post_init__(self):
        self.stage_channels = tuple(self.stage_channels)
        self.input_shape = tuple(self.input_shape)
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}; choose from {VARIANTS}")
        if self.scale < 1:
            raise ConfigError(f"scale must be >= 1, got {self.scale}")
        if len(self.stage_channels) != 5:
            raise ConfigError("stage_channels needs a stem width plus four stage widths")
        if not 0 <= self.margin <= 5:
            raise ConfigError(f"angular margin must be in 0..5, got {self.margin}")
        if self.sr_kernel % 2 == 0:
            raise ConfigError("SR kernel size must be odd")

    @property
    def use_sr(self) -> bool:
        return self.variant in ("sr-la", "sr-se", "sr")

    @property
    def attention(self) -> str | None:
        if self.variant in ("sr-la", "la"):
            return "la"
        if self.variant in ("sr-se", "se"):
            return "se"
        return None

    def block_width(self, out_channels: int) -> int:
        if self.variant == "resnet":
            return max(1, round(self.width_ratio * out_channels))
        return self.scale * max(1, round(self.width_ratio * out_channels / self.scale))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["stage_channels"] = list(self.stage_channels)
        d["input_shape"] = list(self.input_shape)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in known})


def eca_kernel_size(channels: int, gamma: int = 2, b: int = 1) -> int:
    t = int(abs((math.log2(channels) + b) / gamma))
    return t if t % 2 else t + 1


# Layers


class Conv2d(nn.Module):
    def __init__(self, spec: ConvSpec, bias: bool = False):
        super().__init__()
        self.spec = spec
        self.weight = nn.Parameter(torch.empty(spec.weight_shape))
        self.bias = nn.Parameter(torch.zeros(spec.out_channels)) if bias else None
        T.kaiming_uniform_(self.weight)

    def forward(self, x):
        return T.conv2d(x, self.spec, self.weight, self.bias)


class BatchNorm2d(nn.Module):
    def __init__(self, channels: int, momentum: float = T.BN_MOMENTUM, eps: float = T.BN_EPS):
        super().__init__()
        self.momentum, self.eps = momentum, eps
        self.weight = nn.Parameter(torch.ones(channels))
        self.bias = nn.Parameter(torch.zeros(channels))
        self.register_buffer("running_mean", torch.zeros(channels))
        self.register_buffer("running_var", torch.ones(channels))

    def forward(self, x):
        return T.batch_norm2d(
            x, self.weight, self.bias, self.running_mean, self.running_var,
            self.training, self.momentum, self.eps,
        )


class ConvBN(nn.Module):
    """Conv followed by batch norm, optionally ReLU."""

    def __init__(self, spec: ConvSpec, act: bool = True):
        super().__init__()
        self.conv = Conv2d(spec)
        self.bn = BatchNorm2d(spec.out_channels)
        self.act = act

    def forward(self, x):
        y = self.bn(self.conv(x))
        return T.relu(y) if self.act else y


class SRBlock(nn.Module):
    """Spatial reconstruction gate: x * sigmoid(dilated_conv(mean_c(x)))."""

    def __init__(self, kernel: int = 3, dilation: int = 2):
        super().__init__()
        if kernel % 2 == 0:
            raise ConfigError("SR kernel size must be odd")
        self.dilation = dilation
        self.weight = nn.Parameter(torch.empty(1, 1, kernel, kernel))
        self.bias = nn.Parameter(torch.zeros(1))
        T.kaiming_uniform_(self.weight)

    def gate(self, x):
        return T.sigmoid(T.depthwise_dilated_conv2d(T.channel_mean(x), self.weight, self.bias, self.dilation))

    def forward(self, x):
        return x * self.gate(x)


class LABlock(nn.Module):
    """Local channel attention: 1-D conv across the pooled channel descriptor."""

    def __init__(self, channels: int, kernel: int | None = None):
        super().__init__()
        k = eca_kernel_size(channels) if kernel is None else kernel
        if k % 2 == 0:
            raise ConfigError(f"LA kernel size must be odd, got {k}")
        self.weight = nn.Parameter(torch.empty(1, 1, k))
        self.bias = nn.Parameter(torch.zeros(1))
        T.kaiming_uniform_(self.weight)

    def gate(self, g):
        n, c = g.shape[:2]
        desc = T.global_avg_pool(g).view(n, 1, c)  # squeeze + transpose
        att = T.conv1d(desc, self.weight, self.bias)
        return T.sigmoid(att.view(n, c, 1, 1))  # transpose + unsqueeze

    def forward(self, g):
        return g * self.gate(g)


class SEBlock(nn.Module):
    """Squeeze-and-excitation gate with a two-layer bottleneck MLP."""

    def __init__(self, channels: int, reduction: int = 16):
        super().__init__()
        if channels % reduction:
            raise ConfigError(f"{channels} channels not divisible by reduction {reduction}")
        hidden = channels // reduction
        self.down_weight = nn.Parameter(torch.empty(hidden, channels))
        self.down_bias = nn.Parameter(torch.zeros(hidden))
        self.up_weight = nn.Parameter(torch.empty(channels, hidden))
        self.up_bias = nn.Parameter(torch.zeros(channels))
        T.kaiming_uniform_(self.down_weight)
        T.kaiming_uniform_(self.up_weight)

    def gate(self, g):
        n, c = g.shape[:2]
        z = T.global_avg_pool(g).view(n, c)
        h = T.relu(T.linear(z, self.down_weight, self.down_bias))
        return T.sigmoid(T.linear(h, self.up_weight, self.up_bias)).view(n, c, 1, 1)

    def forward(self, g):
        return g * self.gate(g)


def res2_transform(
    x: torch.Tensor,
    scale: int,
    kernels: Sequence[Callable[[torch.Tensor], torch.Tensor]],
    sr_gates: Sequence[Callable[[torch.Tensor], torch.Tensor]] | None = None,
    downsample: Callable[[torch.Tensor], torch.Tensor] | None = None,
) -> torch.Tensor:
    """Hierarchical channel-group transform.

    ``y1 = s1``, ``y2 = K2(s2)``, ``yi = Ki(si + SR(y{i-1}))`` for i >= 3,
    then the groups are concatenated back. ``kernels`` holds K2..Kn and
    ``sr_gates`` (optional) the n-2 hand-off gates. With ``downsample`` set
    the block changes resolution: s1 is pooled by ``downsample``, each
    kernel is expected to stride, and groups are transformed independently
    because the hand-offs no longer match the unstrided splits.
    """
    if x.shape[1] % scale:
        raise ConfigError(f"{x.shape[1]} channels not divisible by scale {scale}")
    if len(kernels) != scale - 1:
        raise ConfigError(f"need {scale - 1} group kernels, got {len(kernels)}")
    splits = torch.chunk(x, scale, dim=1)
    ys = [splits[0] if downsample is None else downsample(splits[0])]
    y = None
    for i in range(1, scale):
        s = splits[i]
        if y is not None and downsample is None:
            hand = y if sr_gates is None else sr_gates[i - 2](y)
            s = s + hand
        y = kernels[i - 1](s)
        ys.append(y)
    return torch.cat(ys, dim=1)


class Res2Block(nn.Module):
    def __init__(self, in_channels: int, out_channels: int, stride: int, cfg: ModelConfig):
        super().__init__()
        width = cfg.block_width(out_channels)
        self.stride = stride
        self.multiscale = cfg.variant != "resnet"
        self.scale = cfg.scale if self.multiscale else 1
        group = width // self.scale

        self.entry = ConvBN(ConvSpec(in_channels, width, kernel=1))
        n_kernels = self.scale - 1 if self.multiscale else 1
        self.kernels = nn.ModuleList(
            ConvBN(ConvSpec(group, group, kernel=3, stride=stride, padding=1)) for _ in range(n_kernels)
        )
        self.sr_gates = None
        if cfg.use_sr and self.multiscale and stride == 1 and self.scale > 2:
            self.sr_gates = nn.ModuleList(
                SRBlock(cfg.sr_kernel, cfg.sr_dilation) for _ in range(self.scale - 2)
            )
        self.exit = ConvBN(ConvSpec(width, out_channels, kernel=1), act=False)
        if cfg.attention == "la":
            self.gate = LABlock(out_channels, cfg.la_kernel)
        elif cfg.attention == "se":
            self.gate = SEBlock(out_channels, min(cfg.se_reduction, out_channels))
        else:
            self.gate = None
        self.shortcut = None
        if stride != 1 or in_channels != out_channels:
            self.shortcut = ConvBN(ConvSpec(in_channels, out_channels, kernel=1, stride=stride), act=False)

    def _pool(self, x):
        return T.avg_pool_downsample(x, self.stride)

    def forward(self, x):
        h = self.entry(x)
        if self.multiscale:
            h = res2_transform(
                h, self.scale, list(self.kernels),
                None if self.sr_gates is None else list(self.sr_gates),
                self._pool if self.stride != 1 else None,
            )
        else:
            h = self.kernels[0](h)
        h = self.exit(h)
        if self.gate is not None:
            h = self.gate(h)
        skip = x if self.shortcut is None else self.shortcut(x)
        return T.relu(h + skip)


class AngleLinear(nn.Module):
    """Angular-margin head (A-softmax).

    Eval scores are ``|x| cos(theta_c)`` against unit-norm class weights.
    In training, given labels, the target class score is blended towards
    ``|x| psi(theta)`` with ``psi(theta) = (-1)^k cos(m theta) - 2k``,
    weighted by ``1 / (1 + lam)``; ``lam`` is annealed by the trainer.
    """

    _cos_m = [
        lambda c: c**0,
        lambda c: c,
        lambda c: 2 * c**2 - 1,
        lambda c: 4 * c**3 - 3 * c,
        lambda c: 8 * c**4 - 8 * c**2 + 1,
        lambda c: 16 * c**5 - 20 * c**3 + 5 * c,
    ]

    def __init__(self, in_features: int, n_classes: int = 2, margin: int = 4):
        super().__init__()
        self.margin = margin
        self.lam = 1000.0
        self.weight = nn.Parameter(torch.empty(n_classes, in_features))
        with torch.no_grad():
            self.weight.uniform_(-1, 1)

    def cosine(self, x):
        w = self.weight / self.weight.norm(dim=1, keepdim=True)
        xnorm = x.norm(dim=1, keepdim=True)
        if bool((xnorm == 0).any()):
            log.warning("zero embedding in AngleLinear; its scores are set to 0")
        safe = torch.where(xnorm > 0, xnorm, torch.ones_like(xnorm))
        cos = (x @ w.t() / safe).clamp(-1, 1)
        return cos, xnorm

    def forward(self, x, labels: torch.Tensor | None = None):
        cos, xnorm = self.cosine(x)
        if labels is None or not self.training:
            return cos * xnorm
        with torch.no_grad():
            theta = torch.acos(cos)
            k = torch.floor(self.margin * theta / math.pi)
        psi = (-1) ** k * self._cos_m[self.margin](cos) - 2 * k
        onehot = torch.zeros_like(cos).scatter_(1, labels.view(-1, 1), 1.0)
        adjusted = cos + onehot * (psi - cos) / (1 + self.lam)
        return adjusted * xnorm


class SRLARes2Net(nn.Module):
    def __init__(self, cfg: ModelConfig | None = None, seed: int | None = None):
        super().__init__()
        self.cfg = cfg = cfg or ModelConfig()
        if seed is not None:
            torch.manual_seed(seed)
        c = cfg.stage_channels
        self.stem = ConvBN(ConvSpec(1, c[0], kernel=3, padding=1))
        stages = []
        in_c = c[0]
        for s, out_c in enumerate(c[1:]):
            blocks = []
            for b in range(cfg.blocks_per_stage):
                stride = 2 if (s > 0 and b == 0) else 1
                blocks.append(Res2Block(in_c, out_c, stride, cfg))
                in_c = out_c
            stages.append(nn.Sequential(*blocks))
        self.stages = nn.ModuleList(stages)
        self.head = AngleLinear(c[-1], cfg.n_classes, cfg.margin)

    def _check_input(self, x):
        want = (1, *self.cfg.input_shape)
        if x.dim() != 4 or tuple(x.shape[1:]) != want:
            raise ShapeError(f"model expects [N,{','.join(map(str, want))}], got {tuple(x.shape)}")

    def embed(self, x, trace: list | None = None):
        self._check_input(x)
        h = self.stem(x)
        if trace is not None:
            trace.append(tuple(h.shape[1:]))
        for stage in self.stages:
            h = stage(h)
            if trace is not None:
                trace.append(tuple(h.shape[1:]))
        h = T.global_avg_pool(h)
        if trace is not None:
            trace.append(tuple(h.shape[1:]))
        return h.flatten(1)

    def forward(self, x, labels: torch.Tensor | None = None):
        return self.head(self.embed(x), labels)

    def shape_trace(self, x) -> list[tuple[int, ...]]:
        """Per-stage output shapes (excluding batch) from stem to head."""
        trace: list = []
        out = self.head(self.embed(x, trace))
        trace.append((out.shape[1],))
        return trace


def cm_score(scores: torch.Tensor) -> torch.Tensor:
    """Countermeasure score: bonafide score minus spoof score (higher = more bonafide)."""
    return scores[:, BONAFIDE] - scores[:, SPOOF]


def count_parameters(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters())


def strip_gates(model: SRLARes2Net) -> SRLARes2Net:
    """Remove SR and LA/SE gates in place, leaving the plain Res2Net path."""
    for m in model.modules():
        if isinstance(m, Res2Block):
            m.sr_gates = None
            m.gate = None
    return model
