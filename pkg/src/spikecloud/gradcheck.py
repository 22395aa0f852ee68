"""Finite-difference checks of the surrogate derivative and of BPTT gradients.

Three checks on a two-layer toy network in float64:

* ``surrogate``: the analytic surrogate slope against central differences of
  the smooth step it stands in for.
* ``pinned``: spikes of the hidden layer are recorded once and replayed as
  constants, so the loss is a smooth function of the read-out parameters.
* ``smooth``: the step is replaced by the smooth surrogate itself, so the
  backward pass should be the exact derivative of every parameter, through
  the membrane recursion and the soft reset.

A final entry compares the fused multi-step neuron against the step-by-step
reference path.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import torch

from .snn.neuron import NeuronConfig, NeuronState, SpikingNeuron, neuron_step, surrogate_grad, surrogate_sigma


@dataclass
class GradcheckReport:
    surrogate_max_abs_err: float
    rel_errors: dict[str, float] = field(default_factory=dict)
    fused_max_abs_diff: float = 0.0

    @property
    def max_rel_error(self) -> float:
        return max(self.rel_errors.values()) if self.rel_errors else 0.0

    def passed(self, tol: float = 1e-4, surrogate_tol: float = 1e-6) -> bool:
        return (self.max_rel_error < tol and self.surrogate_max_abs_err < surrogate_tol
                and self.fused_max_abs_diff < 1e-12)

    def lines(self) -> list[str]:
        out = [f"surrogate max abs err {self.surrogate_max_abs_err:.3e}"]
        out += [f"{k} rel err {v:.3e}" for k, v in sorted(self.rel_errors.items())]
        out.append(f"fused vs reference max abs diff {self.fused_max_abs_diff:.3e}")
        out.append(f"max relative gradient error {self.max_rel_error:.3e}")
        return out


def surrogate_fd_error(n: int = 100, h: float = 1e-5, seed: int = 0) -> float:
    x = np.random.default_rng(seed).uniform(-3, 3, n)
    fd = (surrogate_sigma(x + h) - surrogate_sigma(x - h)) / (2 * h)
    return float(np.max(np.abs(fd - surrogate_grad(x))))


def _smooth_step(x: torch.Tensor) -> torch.Tensor:
    return torch.atan(math.pi * x) / math.pi + 0.5


class ToyNet:
    """``x -> W1 -> PLIF -> W2 -> leaky read-out``; all tensors float64."""

    def __init__(self, n_in: int = 5, n_hidden: int = 6, n_out: int = 3, seed: int = 0):
        g = torch.Generator().manual_seed(seed)
        self.params = {
            "W1": torch.randn(n_hidden, n_in, generator=g, dtype=torch.float64) * 0.8,
            "b1": torch.randn(n_hidden, generator=g, dtype=torch.float64) * 0.3 + 0.4,
            "w1": torch.tensor(0.0, dtype=torch.float64),  # decay sigmoid(0) = 0.5
            "W2": torch.randn(n_out, n_hidden, generator=g, dtype=torch.float64) * 0.5,
            "b2": torch.randn(n_out, generator=g, dtype=torch.float64) * 0.1,
            "w2": torch.tensor(0.5, dtype=torch.float64),
        }

    def loss(self, x, y, spike_fn, params=None) -> torch.Tensor:
        p = params or self.params
        i1 = x @ p["W1"].T + p["b1"]
        state = NeuronState.zeros_like(i1[0])
        d1 = torch.sigmoid(p["w1"])
        d2 = torch.sigmoid(p["w2"])
        u = torch.zeros(x.shape[1], p["W2"].shape[0], dtype=x.dtype)
        total = 0.0
        for t in range(x.shape[0]):
            s, state = neuron_step(state, i1[t], d1, 1.0, spike_fn=lambda h, t=t: spike_fn(h, t))
            u = d2 * u + s @ p["W2"].T + p["b2"]
            total = total + ((u - y) ** 2).mean()
        return total / x.shape[0]

    def record_spikes(self, x) -> list[torch.Tensor]:
        rec = []

        def step(h, t):
            s = (h >= 0).to(h.dtype)
            rec.append(s.detach())
            return s

        with torch.no_grad():
            self.loss(x, torch.zeros(1, dtype=x.dtype), step)
        return rec


def _rel_error(analytic: torch.Tensor, numeric: torch.Tensor) -> float:
    a, f = analytic.reshape(-1), numeric.reshape(-1)
    scale = max(float(a.norm()), float(f.norm()), 1e-12)
    return float((a - f).norm()) / scale


def _fd_check(net: ToyNet, x, y, spike_fn, names, h: float = 1e-6) -> dict[str, float]:
    params = {k: v.clone().requires_grad_(k in names) for k, v in net.params.items()}
    loss = net.loss(x, y, spike_fn, params)
    grads = torch.autograd.grad(loss, [params[k] for k in names])
    out = {}
    for name, g in zip(names, grads):
        base = net.params[name]
        fd = torch.zeros_like(base)
        flat = fd.reshape(-1)
        for j in range(base.numel()):
            plus = {k: v.clone() for k, v in net.params.items()}
            minus = {k: v.clone() for k, v in net.params.items()}
            plus[name].reshape(-1)[j] += h
            minus[name].reshape(-1)[j] -= h
            with torch.no_grad():
                flat[j] = (net.loss(x, y, spike_fn, plus) - net.loss(x, y, spike_fn, minus)) / (2 * h)
        out[name] = _rel_error(g, fd)
    return out


def fused_vs_reference(seed: int = 0) -> float:
    g = torch.Generator().manual_seed(seed)
    worst = 0.0
    for kind, tau_syn in (("plif", 0.0), ("lif", 0.0), ("if", 0.0), ("plif", 3.0)):
        cfg = NeuronConfig(kind, 1.0, 2.0, tau_syn)
        x = torch.randn(10, 4, 7, generator=g, dtype=torch.float64) * 0.8 + 0.5
        up = torch.randn(10, 4, 7, generator=g, dtype=torch.float64)
        grads = []
        for fused in (True, False):
            n = SpikingNeuron(cfg).double()
            n.fused = fused
            xi = x.clone().requires_grad_(True)
            out = n(xi)
            (out * up).sum().backward()
            grads.append((out.detach(), xi.grad))
        worst = max(worst, float((grads[0][0] - grads[1][0]).abs().max()),
                    float((grads[0][1] - grads[1][1]).abs().max()))
    return worst


def run_gradcheck(seed: int = 0, T: int = 8, batch: int = 4) -> GradcheckReport:
    net = ToyNet(seed=seed)
    g = torch.Generator().manual_seed(seed + 1)
    x = torch.rand(T, batch, 5, generator=g, dtype=torch.float64)
    y = torch.rand(batch, 3, generator=g, dtype=torch.float64)

    pinned = net.record_spikes(x)
    rel = {f"pinned.{k}": v for k, v in
           _fd_check(net, x, y, lambda h, t: pinned[t], ["W2", "b2", "w2"]).items()}
    rel.update({f"smooth.{k}": v for k, v in
                _fd_check(net, x, y, lambda h, t: _smooth_step(h), list(net.params)).items()})
    return GradcheckReport(surrogate_fd_error(seed=seed), rel, fused_vs_reference(seed))
