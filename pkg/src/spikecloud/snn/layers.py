"""Pointwise convolution, time-pooled batch norm and the two residual blocks.

All layers act on the last (channel) axis and share weights over every other
axis: timesteps, batch, groups and points.
"""

from __future__ import annotations

import torch
from torch import nn

from ..errors import ConfigError
from .neuron import NeuronConfig, SpikingNeuron

RESIDUAL_MODES = ("identity", "ann", "none")


def pointwise_conv(features: torch.Tensor, weight: torch.Tensor, bias: torch.Tensor | None = None) -> torch.Tensor:
    """Kernel-size-1 convolution: ``W f + b`` at every position of ``(..., Cin)``."""
    if features.shape[-1] != weight.shape[1]:
        raise ConfigError(f"input has {features.shape[-1]} channels, weight expects {weight.shape[1]}")
    return nn.functional.linear(features, weight, bias)


class SeqBatchNorm(nn.BatchNorm1d):
    """Batch norm over ``(..., C)``: statistics pool every axis but the last."""

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        shape = x.shape
        flat = x.reshape(-1, shape[-1])
        if self.training and flat.shape[0] == 1:
            # one value per channel: it normalizes to zero, and the unbiased
            # variance is undefined, so running statistics are left alone
            return (flat * 0 + self.bias).reshape(shape)
        return super().forward(flat).reshape(shape)


def batchnorm(features: torch.Tensor, bn: SeqBatchNorm, training: bool) -> torch.Tensor:
    bn.train(training)
    return bn(features)


class ConvBNLIF(nn.Module):
    def __init__(self, cin: int, cout: int, ncfg: NeuronConfig = NeuronConfig()):
        super().__init__()
        self.conv = nn.Linear(cin, cout)
        self.bn = SeqBatchNorm(cout)
        self.neuron = SpikingNeuron(ncfg)

    def pre(self, x: torch.Tensor) -> torch.Tensor:
        return self.bn(self.conv(x))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.neuron(self.pre(x))


class _ResidualBlock(nn.Module):
    """``neuron(BN(conv(inner(x)))) + x`` in identity mode.

    ``ann`` mode adds the skip before the neuron (``neuron(pre + x)``) and
    ``none`` drops it; both exist for the extractor ablation.
    """

    def __init__(self, d: int, inner: list[nn.Module], last: ConvBNLIF, residual: str):
        super().__init__()
        if residual not in RESIDUAL_MODES:
            raise ConfigError(f"unknown residual mode {residual!r}", "net.residual")
        self.dim = d
        self.residual = residual
        self.inner = nn.ModuleList(inner)
        self.last = last

    def branch_pre(self, x: torch.Tensor) -> torch.Tensor:
        h = x
        for layer in self.inner:
            h = layer(h)
        return self.last.pre(h)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.shape[-1] != self.dim:
            raise ConfigError(f"block expects {self.dim} channels, got {x.shape[-1]}")
        pre = self.branch_pre(x)
        if self.residual == "identity":
            return self.last.neuron(pre) + x
        if self.residual == "ann":
            return self.last.neuron(pre + x)
        return self.last.neuron(pre)


class ResF(_ResidualBlock):
    def __init__(self, d: int, ncfg: NeuronConfig = NeuronConfig(), residual: str = "identity"):
        super().__init__(d, [], ConvBNLIF(d, d, ncfg), residual)


class ResFB(_ResidualBlock):
    """Residual block with a half-width bottleneck (``d -> d/2 -> d``)."""

    def __init__(self, d: int, ncfg: NeuronConfig = NeuronConfig(), residual: str = "identity"):
        if d % 2:
            raise ConfigError(f"bottleneck block needs an even width, got {d}", "net.local_dim")
        super().__init__(d, [ConvBNLIF(d, d // 2, ncfg)], ConvBNLIF(d // 2, d, ncfg), residual)
