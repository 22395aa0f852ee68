"""Spike nonlinearity with an arctangent surrogate gradient, and the discrete
integrate-and-fire family (IF, LIF, parametric LIF) with soft reset."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
import torch
from torch import nn

from ..errors import ConfigError, NumericError

NEURON_KINDS = ("plif", "lif", "if")


def surrogate_sigma(x):
    """Smooth stand-in for the Heaviside step: ``atan(pi x) / pi + 1/2``."""
    return np.arctan(np.pi * np.asarray(x, dtype=np.float64)) / np.pi + 0.5


def surrogate_grad(x):
    """Derivative of :func:`surrogate_sigma`: ``1 / (1 + (pi x)^2)``, in (0, 1]."""
    x = np.asarray(x, dtype=np.float64)
    return 1.0 / (1.0 + (np.pi * x) ** 2)


def heaviside_spike(u_minus_vth):
    """1 where the membrane reaches threshold (``>= 0``), else 0."""
    return (np.asarray(u_minus_vth) >= 0).astype(np.uint8)


class ATanSpike(torch.autograd.Function):
    @staticmethod
    def forward(ctx, x):
        ctx.save_for_backward(x)
        return (x >= 0).to(x.dtype)

    @staticmethod
    def backward(ctx, grad_output):
        (x,) = ctx.saved_tensors
        return grad_output / (1.0 + (math.pi * x) ** 2)


def spike(x: torch.Tensor) -> torch.Tensor:
    return ATanSpike.apply(x)


@dataclass
class NeuronState:
    v: torch.Tensor  # membrane potential after the last reset
    i: torch.Tensor  # synaptic current (only used when synaptic filtering is on)

    @classmethod
    def zeros_like(cls, x: torch.Tensor) -> "NeuronState":
        return cls(torch.zeros_like(x), torch.zeros_like(x))


@dataclass(frozen=True)
class NeuronConfig:
    kind: str = "plif"
    v_th: float = 1.0
    tau_mem: float = 2.0
    tau_syn: float = 0.0  # 0 disables synaptic filtering
    dt: float = 1.0

    def __post_init__(self):
        if self.kind not in NEURON_KINDS:
            raise ConfigError(f"unknown neuron kind {self.kind!r}; choose from {NEURON_KINDS}", "net.neuron")
        if not self.v_th > 0:
            raise ConfigError("threshold must be positive", "net.v_th")
        if self.kind != "if" and not self.tau_mem > 1:
            raise ConfigError("membrane time constant must exceed 1", "net.tau_mem")
        if self.tau_syn < 0:
            raise ConfigError("synaptic time constant must be >= 0", "net.tau_syn")

    @property
    def syn_decay(self) -> float:
        return math.exp(-self.dt / self.tau_syn) if self.tau_syn > 0 else 0.0


def neuron_step(state: NeuronState, input_current: torch.Tensor, decay, v_th: float = 1.0,
                syn_decay: float = 0.0,
                spike_fn: Callable[[torch.Tensor], torch.Tensor] = spike,
                check: bool = True) -> tuple[torch.Tensor, NeuronState]:
    """Advance one timestep.

    ``I = syn_decay * I_prev + input``; ``H = decay * V_prev + I``; a spike is
    emitted where ``H >= v_th`` and ``v_th`` is subtracted from the membrane.
    """
    if check and not (torch.isfinite(state.v).all() and torch.isfinite(state.i).all()):
        raise NumericError("non-finite neuron state")
    i = syn_decay * state.i + input_current if syn_decay else input_current
    h = decay * state.v + i
    s = spike_fn(h - v_th)
    return s, NeuronState(h - s * v_th, i)


class MultiStepNeuron(torch.autograd.Function):
    """Whole-sequence neuron update with a hand-written BPTT backward.

    Same dynamics as repeated :func:`neuron_step` calls (gradient flows through
    the reset term too), but it keeps only the pre-reset membrane ``H`` for the
    backward pass instead of a per-step autograd graph.
    """

    @staticmethod
    def forward(ctx, x, decay, v_th: float, syn_decay: float):
        d = float(decay)
        T = x.shape[0]
        h = torch.empty_like(x)
        s = torch.empty_like(x)
        v = torch.zeros_like(x[0])
        i = torch.zeros_like(x[0]) if syn_decay else None
        for t in range(T):
            if syn_decay:
                i.mul_(syn_decay).add_(x[t])
                torch.add(i, v, alpha=d, out=h[t])
            else:
                torch.add(x[t], v, alpha=d, out=h[t])
            torch.ge(h[t], v_th, out=s[t])
            torch.sub(h[t], s[t], alpha=v_th, out=v)
        if not torch.isfinite(v).all():
            raise NumericError("non-finite membrane potential")
        ctx.save_for_backward(h, s)
        ctx.d, ctx.v_th, ctx.syn_decay = d, v_th, syn_decay
        ctx.decay_is_tensor = isinstance(decay, torch.Tensor) and decay.requires_grad
        return s

    @staticmethod
    def backward(ctx, grad_s):
        h, s = ctx.saved_tensors
        d, v_th, a = ctx.d, ctx.v_th, ctx.syn_decay
        sg = (h - v_th).mul_(math.pi).square_().add_(1.0).reciprocal_()  # surrogate slope
        grad_x = torch.empty_like(h)
        carry_v = torch.zeros_like(h[0])  # dL/dV[t] coming from H[t+1]
        carry_i = torch.zeros_like(h[0]) if a else None
        grad_d = torch.zeros((), dtype=h.dtype) if ctx.decay_is_tensor else None
        for t in range(h.shape[0] - 1, -1, -1):
            # V[t] = H[t] - v_th * S[t], S[t] = step(H[t] - v_th)
            gh = grad_s[t] * sg[t] + carry_v * (1.0 - v_th * sg[t])
            if grad_d is not None and t > 0:
                v_prev = h[t - 1] - v_th * s[t - 1]
                grad_d += (gh * v_prev).sum()
            if a:
                carry_i = gh + a * carry_i
                grad_x[t] = carry_i
            else:
                grad_x[t] = gh
            carry_v = d * gh
        return grad_x, grad_d, None, None


class SpikingNeuron(nn.Module):
    """Multi-step neuron layer: maps a ``(T, ...)`` current sequence to spikes.

    The parametric kind learns ``decay = sigmoid(w)``, initialised so that
    ``decay = 1 - 1/tau_mem``; the input is added undecayed.
    """

    def __init__(self, cfg: NeuronConfig = NeuronConfig()):
        super().__init__()
        self.cfg = cfg
        if cfg.kind == "plif":
            self.w = nn.Parameter(torch.tensor(math.log(cfg.tau_mem - 1.0)))
        self.last_rate: float | None = None
        self.fused = True

    def decay(self):
        if self.cfg.kind == "plif":
            return torch.sigmoid(self.w)
        if self.cfg.kind == "lif":
            return math.exp(-self.cfg.dt / self.cfg.tau_mem)
        return 1.0

    @property
    def tau(self) -> float:
        d = float(self.decay().detach())
        return math.inf if d >= 1 else 1.0 / (1.0 - d)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if self.fused:
            spikes = MultiStepNeuron.apply(x, self.decay(), self.cfg.v_th, self.cfg.syn_decay)
        else:
            spikes = self.unrolled(x)
        self.last_rate = float(spikes.detach().mean())
        return spikes

    def unrolled(self, x: torch.Tensor, spike_fn=spike) -> torch.Tensor:
        """Reference path: one :func:`neuron_step` per timestep under autograd."""
        decay = self.decay()
        state = NeuronState.zeros_like(x[0])
        out = []
        for t in range(x.shape[0]):
            s, state = neuron_step(state, x[t], decay, self.cfg.v_th, self.cfg.syn_decay,
                                   spike_fn=spike_fn, check=False)
            out.append(s)
        if not torch.isfinite(state.v).all():
            raise NumericError("non-finite membrane potential")
        return torch.stack(out)

    def extra_repr(self) -> str:
        return f"kind={self.cfg.kind}, v_th={self.cfg.v_th}, tau_mem={self.cfg.tau_mem}"
