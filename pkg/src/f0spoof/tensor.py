"""Differentiable tensor ops used by the model, with shape checking and a finite-difference gradient checker.

Tensors are ``torch.Tensor`` and reverse-mode gradients come from torch
autograd. Every op validates its shapes against the closed-form output
extent before dispatching, so a silent broadcast or padding mistake
surfaces as a :class:`ShapeError` instead of a wrong shape downstream.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import torch
import torch.nn.functional as F

BN_EPS = 1e-5
BN_MOMENTUM = 0.1


class ShapeError(ValueError):
    """Operand shapes are incompatible with the requested op."""


class ConfigError(ValueError):
    """An op was configured with impossible hyperparameters."""


def _pair(v) -> tuple[int, int]:
    return (v, v) if isinstance(v, int) else tuple(v)


def conv_out_extent(size: int, kernel: int, stride: int = 1, padding: int = 0, dilation: int = 1) -> int:
    return (size + 2 * padding - dilation * (kernel - 1) - 1) // stride + 1


@dataclass(frozen=True)
class ConvSpec:
    in_channels: int
    out_channels: int
    kernel: int | tuple[int, int] = 3
    stride: int | tuple[int, int] = 1
    padding: int | tuple[int, int] = 0
    dilation: int | tuple[int, int] = 1
    groups: int = 1

    def __post_init__(self):
        if self.in_channels % self.groups or self.out_channels % self.groups:
            raise ConfigError(
                f"channels ({self.in_channels}->{self.out_channels}) not divisible by groups={self.groups}"
            )

    @property
    def weight_shape(self) -> tuple[int, int, int, int]:
        kh, kw = _pair(self.kernel)
        return (self.out_channels, self.in_channels // self.groups, kh, kw)

    def output_shape(self, n: int, h: int, w: int) -> tuple[int, int, int, int]:
        kh, kw = _pair(self.kernel)
        sh, sw = _pair(self.stride)
        ph, pw = _pair(self.padding)
        dh, dw = _pair(self.dilation)
        oh = conv_out_extent(h, kh, sh, ph, dh)
        ow = conv_out_extent(w, kw, sw, pw, dw)
        if oh < 1 or ow < 1:
            raise ConfigError(f"conv produces empty output ({oh}x{ow}) from {h}x{w}")
        return (n, self.out_channels, oh, ow)


def kaiming_uniform_(weight: torch.Tensor, generator: torch.Generator | None = None) -> torch.Tensor:
    """Fan-in Kaiming-uniform init (ReLU gain)."""
    fan_in = weight[0].numel()
    bound = math.sqrt(6.0 / fan_in)
    with torch.no_grad():
        weight.uniform_(-bound, bound, generator=generator)
    return weight


def conv2d(
    x: torch.Tensor,
    spec: ConvSpec,
    weight: torch.Tensor,
    bias: torch.Tensor | None = None,
) -> torch.Tensor:
    if x.dim() != 4 or x.shape[1] != spec.in_channels:
        raise ShapeError(f"conv2d expects [N,{spec.in_channels},H,W], got {tuple(x.shape)}")
    if tuple(weight.shape) != spec.weight_shape:
        raise ShapeError(f"weight shape {tuple(weight.shape)} != {spec.weight_shape}")
    if bias is not None and tuple(bias.shape) != (spec.out_channels,):
        raise ShapeError(f"bias shape {tuple(bias.shape)} != ({spec.out_channels},)")
    expected = spec.output_shape(x.shape[0], x.shape[2], x.shape[3])
    out = F.conv2d(
        x, weight, bias,
        stride=spec.stride, padding=spec.padding, dilation=spec.dilation, groups=spec.groups,
    )
    assert tuple(out.shape) == expected, (tuple(out.shape), expected)
    return out


def depthwise_dilated_conv2d(
    x: torch.Tensor,
    weight: torch.Tensor,
    bias: torch.Tensor | None = None,
    dilation: int = 2,
) -> torch.Tensor:
    """Shape-preserving dilated conv on a single-channel map (kernel k x k, k odd)."""
    if x.dim() != 4 or x.shape[1] != 1:
        raise ShapeError(f"depthwise dilated conv expects [N,1,H,W], got {tuple(x.shape)}")
    k = weight.shape[-1]
    if weight.shape[-2] != k or k % 2 == 0:
        raise ConfigError(f"kernel must be square with odd size, got {tuple(weight.shape[-2:])}")
    pad = dilation * (k - 1) // 2
    spec = ConvSpec(1, 1, kernel=k, padding=pad, dilation=dilation, groups=1)
    out = conv2d(x, spec, weight, bias)
    assert out.shape == x.shape
    return out


def conv1d(x: torch.Tensor, weight: torch.Tensor, bias: torch.Tensor | None = None) -> torch.Tensor:
    """Shape-preserving 1-D cross-correlation of ``[N,1,C]`` along C with zero padding."""
    if x.dim() != 3 or x.shape[1] != 1:
        raise ShapeError(f"conv1d expects [N,1,C], got {tuple(x.shape)}")
    k = weight.shape[-1]
    if tuple(weight.shape) != (1, 1, k):
        raise ShapeError(f"conv1d weight must be [1,1,k], got {tuple(weight.shape)}")
    if k % 2 == 0:
        raise ConfigError(f"conv1d kernel size must be odd, got {k}")
    out = F.conv1d(x, weight, bias, padding=(k - 1) // 2)
    assert out.shape == x.shape
    return out


def batch_norm2d(
    x: torch.Tensor,
    weight: torch.Tensor,
    bias: torch.Tensor,
    running_mean: torch.Tensor,
    running_var: torch.Tensor,
    training: bool,
    momentum: float = BN_MOMENTUM,
    eps: float = BN_EPS,
) -> torch.Tensor:
    """Per-channel batch norm; in training mode updates running stats in place."""
    if x.dim() != 4:
        raise ShapeError(f"batch_norm2d expects [N,C,H,W], got {tuple(x.shape)}")
    c = x.shape[1]
    for name, t in (("weight", weight), ("bias", bias), ("running_mean", running_mean), ("running_var", running_var)):
        if tuple(t.shape) != (c,):
            raise ShapeError(f"{name} has shape {tuple(t.shape)}, expected ({c},)")
    return F.batch_norm(x, running_mean, running_var, weight, bias, training, momentum, eps)


def relu(x: torch.Tensor) -> torch.Tensor:
    return torch.relu(x)


def sigmoid(x: torch.Tensor) -> torch.Tensor:
    return torch.sigmoid(x)


def activation(x: torch.Tensor, kind: str) -> torch.Tensor:
    if kind == "relu":
        return relu(x)
    if kind == "sigmoid":
        return sigmoid(x)
    raise ConfigError(f"unknown activation {kind!r}")


def global_avg_pool(x: torch.Tensor) -> torch.Tensor:
    """[N,C,H,W] -> [N,C,1,1] mean over the spatial extent."""
    if x.dim() != 4:
        raise ShapeError(f"global_avg_pool expects [N,C,H,W], got {tuple(x.shape)}")
    if x.shape[2] == 0 or x.shape[3] == 0:
        raise ShapeError("cannot pool an empty spatial extent")
    return x.mean(dim=(2, 3), keepdim=True)


def channel_mean(x: torch.Tensor) -> torch.Tensor:
    """[N,C,H,W] -> [N,1,H,W]."""
    if x.dim() != 4 or x.shape[1] == 0:
        raise ShapeError(f"channel_mean expects [N,C,H,W] with C>=1, got {tuple(x.shape)}")
    return x.mean(dim=1, keepdim=True)


def avg_pool_downsample(x: torch.Tensor, stride: int) -> torch.Tensor:
    """3x3 average pool (pad 1, zeros excluded from the count) used for strided pass-through groups."""
    return F.avg_pool2d(x, kernel_size=3, stride=stride, padding=1, count_include_pad=False)


def linear(x: torch.Tensor, weight: torch.Tensor, bias: torch.Tensor | None = None) -> torch.Tensor:
    if x.dim() != 2 or x.shape[1] != weight.shape[1]:
        raise ShapeError(f"linear expects [N,{weight.shape[1]}], got {tuple(x.shape)}")
    return F.linear(x, weight, bias)


# Gradient checking


@dataclass
class GradCheckResult:
    max_rel_error: float
    n_checked: int
    n_kinks: int
    worst: str

    def __bool__(self):
        raise TypeError("compare max_rel_error against a tolerance explicitly")


def grad_check(
    fn: Callable[..., torch.Tensor],
    inputs: Sequence[torch.Tensor],
    eps: float = 1e-5,
    max_coords: int | None = None,
    generator: torch.Generator | None = None,
    kink_tol: float = 1e-8,
) -> GradCheckResult:
    """Compare autograd gradients of ``sum(fn(*inputs))`` with central differences.

    ``inputs`` must be float64 leaves with ``requires_grad`` set (module
    parameters qualify). The relative error of a coordinate is
    ``|analytic - numeric| / max(1, |numeric|)``. A coordinate whose second
    difference is far above what a smooth function allows is treated as a
    kink (e.g. a ReLU input within ``eps`` of zero) and is counted in
    ``n_kinks`` rather than in the error. ``max_coords`` samples that many
    coordinates per input instead of visiting all of them.
    """
    for t in inputs:
        if t.dtype != torch.float64:
            raise ConfigError("grad_check needs float64 tensors")
        if not t.requires_grad:
            raise ConfigError("grad_check inputs must require grad")

    def scalar() -> float:
        with torch.no_grad():
            return float(fn(*inputs).sum())

    for t in inputs:
        t.grad = None
    out = fn(*inputs).sum()
    analytic = torch.autograd.grad(out, list(inputs), allow_unused=True)
    f0 = float(out.detach())

    worst, worst_at, n_checked, n_kinks = 0.0, "", 0, 0
    for idx, (t, g) in enumerate(zip(inputs, analytic)):
        g = torch.zeros_like(t) if g is None else g
        flat = t.detach().view(-1)
        gflat = g.reshape(-1)
        coords = range(flat.numel())
        if max_coords is not None and flat.numel() > max_coords:
            coords = torch.randperm(flat.numel(), generator=generator)[:max_coords].tolist()
        for i in coords:
            orig = float(flat[i])
            with torch.no_grad():
                flat[i] = orig + eps
                fp = scalar()
                flat[i] = orig - eps
                fm = scalar()
                flat[i] = orig
            if abs(fp - 2 * f0 + fm) > kink_tol * max(1.0, abs(f0)):
                n_kinks += 1
                continue
            numeric = (fp - fm) / (2 * eps)
            err = abs(float(gflat[i]) - numeric) / max(1.0, abs(numeric))
            n_checked += 1
            if err > worst:
                worst, worst_at = err, f"input {idx}[{i}]"
    return GradCheckResult(max_rel_error=worst, n_checked=n_checked, n_kinks=n_kinks, worst=worst_at)
