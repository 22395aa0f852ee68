"""Operation counting, per-layer input fire rates and the energy model.

Dynamic energy prices synaptic operations (``fire_rate * T * MACs``) at the
accumulate cost for the spiking network, or plain MACs at the
multiply-accumulate cost for a conventional network. Static energy charges a
per-bit standby power for every parameter over the sample duration.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field

import torch
from torch import nn

from .errors import ConfigError
from .snn.network import NetworkConfig, SampleBatch, SpikeCloudNet, encode_batch, layer_specs

E_MAC = 4.6e-12  # J per multiply-accumulate
E_AC = 0.9e-12  # J per accumulate
SPP_BIT = 12.991e-12  # W of standby power per stored bit
REGIMES = ("snn", "ann")


@dataclass(frozen=True)
class EnergyConstants:
    e_mac: float = E_MAC
    e_ac: float = E_AC
    spp_bit: float = SPP_BIT
    bits_per_param: float = 32.0
    l_sample_s: float = 1.0

    def __post_init__(self):
        for k, v in asdict(self).items():
            if v < 0:
                raise ConfigError(f"must be non-negative, got {v}", f"energy.{k}")


@dataclass
class LayerOps:
    name: str
    flops: int
    firerate: float = 0.0

    def sops(self, T: int) -> float:
        return self.firerate * T * self.flops


@dataclass
class OpCount:
    layers: list[LayerOps]
    T: int

    @property
    def flops(self) -> int:
        return sum(l.flops for l in self.layers)

    @property
    def sops(self) -> float:
        return sum(l.sops(self.T) for l in self.layers)


def count_flops(cfg: NetworkConfig) -> list[tuple[str, int]]:
    """MACs per sample and timestep: ``positions * cin * cout`` for each conv/FC."""
    return [(name, p * cin * cout) for name, cin, cout, p in layer_specs(cfg)]


@torch.no_grad()
def measure_firerate(net: SpikeCloudNet, batch: SampleBatch, seeds=None) -> dict[str, float]:
    """Fraction of non-zero entries in each conv/FC layer's input over the batch.

    The first layer sees the encoded spikes; later layers see neuron outputs,
    where a residual sum of two spikes still counts as one event.
    """
    if seeds is None:
        seeds = list(range(len(batch)))
    counts: dict[str, list[float]] = {}
    hooks = []
    for name, mod in net.named_modules():
        if isinstance(mod, nn.Linear):
            def hook(_m, args, name=name):
                x = args[0]
                c = counts.setdefault(name, [0.0, 0.0])
                c[0] += float(torch.count_nonzero(x))
                c[1] += x.numel()
            hooks.append(mod.register_forward_pre_hook(hook))
    was_training = net.training
    net.eval()
    try:
        net(encode_batch(batch, net.cfg, seeds))
    finally:
        for h in hooks:
            h.remove()
        net.train(was_training)
    return {k: nz / n for k, (nz, n) in counts.items()}


def op_count(cfg: NetworkConfig, firerates: dict[str, float] | None = None) -> OpCount:
    rates = firerates or {}
    return OpCount([LayerOps(n, f, rates.get(n, 0.0)) for n, f in count_flops(cfg)], cfg.T)


def dynamic_energy(ops, regime: str = "snn", constants: EnergyConstants = EnergyConstants()) -> float:
    """Joules for an :class:`OpCount`, or for a bare operation total.

    A bare number is taken as already-counted SOPs (``snn``) or FLOPs (``ann``).
    """
    if regime not in REGIMES:
        raise ConfigError(f"unknown regime {regime!r}; choose snn or ann", "regime")
    if isinstance(ops, OpCount):
        total = ops.sops if regime == "snn" else ops.flops
    else:
        total = float(ops)
    return total * (constants.e_ac if regime == "snn" else constants.e_mac)


def static_energy(params: float, bits_per_param: float = 32.0, spp_bit: float = SPP_BIT,
                  l_sample_s: float = 1.0) -> float:
    if min(params, bits_per_param, spp_bit, l_sample_s) < 0:
        raise ConfigError("static energy inputs must be non-negative")
    return params * bits_per_param * spp_bit * l_sample_s


def calibrate_bit_seconds(params: float, static_j: float, spp_bit: float = SPP_BIT) -> float:
    """Bit-seconds per parameter that reproduce a reference ``(params, static_j)`` pair."""
    if not params > 0 or not spp_bit > 0:
        raise ConfigError("calibration needs positive params and spp")
    return static_j / (params * spp_bit)


def static_energy_calibrated(params: float, bit_seconds: float, spp_bit: float = SPP_BIT) -> float:
    return params * bit_seconds * spp_bit


@dataclass
class EnergyReport:
    sops: float
    flops: int
    dynamic_j: float
    ann_dynamic_j: float
    static_j: float
    params: int
    T: int
    constants: EnergyConstants
    layers: list[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "layers": self.layers,
            "totals": {"sops": self.sops, "flops": self.flops, "dynamic_j": self.dynamic_j,
                       "ann_dynamic_j": self.ann_dynamic_j, "static_j": self.static_j,
                       "params": self.params, "T": self.T},
            "constants": asdict(self.constants),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["name", "flops", "firerate", "sops"])
        for l in self.layers:
            w.writerow([l["name"], l["flops"], repr(l["firerate"]), repr(l["sops"])])
        w.writerow(["total", self.flops, "", repr(self.sops)])
        return buf.getvalue()


def build_report(ops: OpCount, params: int, constants: EnergyConstants = EnergyConstants()) -> EnergyReport:
    layers = [{"name": l.name, "flops": l.flops, "firerate": l.firerate, "sops": l.sops(ops.T)}
              for l in ops.layers]
    return EnergyReport(
        sops=ops.sops,
        flops=ops.flops,
        dynamic_j=dynamic_energy(ops, "snn", constants),
        ann_dynamic_j=dynamic_energy(ops, "ann", constants),
        static_j=static_energy(params, constants.bits_per_param, constants.spp_bit, constants.l_sample_s),
        params=params,
        T=ops.T,
        constants=constants,
        layers=layers,
    )


def report(net: SpikeCloudNet, batch: SampleBatch, constants: EnergyConstants = EnergyConstants(),
           seeds=None) -> EnergyReport:
    rates = measure_firerate(net, batch, seeds)
    return build_report(op_count(net.cfg, rates), net.param_count(), constants)


def fire_rate_bound_holds(rep: EnergyReport) -> bool:
    """Spiking energy cannot exceed the MAC price when every layer has
    ``firerate * T * e_ac <= e_mac``."""
    c = rep.constants
    ok = all(l["firerate"] * rep.T * c.e_ac <= c.e_mac for l in rep.layers)
    return (not ok) or rep.dynamic_j <= rep.ann_dynamic_j * (1 + 1e-12)

