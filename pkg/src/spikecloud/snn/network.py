"""The point-cloud spiking network: local extractor, global extractor and a
voting classifier, run in multi-step mode over ``T`` timesteps.

Tensor layout is time-major: ``(T, B, ...)`` with channels last.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields, replace

import numpy as np
import torch
from torch import nn

from ..coding import counter_uniform
from ..errors import ConfigError, EncodingError, UsageError
from ..pointcloud import GroupingVariant, parse_variant, variant_name
from .layers import RESIDUAL_MODES, ConvBNLIF, ResF, ResFB
from .neuron import NeuronConfig, SpikingNeuron

VARIANT_DIMS = {
    # local width, global widths, classifier hidden width
    "small": (32, (64, 128, 256), 256),
    "large": (64, (128, 256, 512), 512),
}
STRUCTURES = ("full", "local_only", "global_only", "pointnet")
POINTNET_DIMS = (64, 128, 256, 512, 1024)
VOTES_PER_CLASS = 10


@dataclass(frozen=True)
class NetworkConfig:
    variant: str = "small"
    classes: int = 4
    T: int = 16
    N: int = 1024
    M: int = 64
    K: int = 24
    structure: str = "full"
    grouping: str = "row6"
    residual: str = "identity"
    neuron: str = "plif"
    v_th: float = 1.0
    tau_mem: float = 2.0
    tau_syn: float = 0.0

    def __post_init__(self):
        if self.variant not in VARIANT_DIMS:
            raise ConfigError(f"unknown variant {self.variant!r}; choose small or large", "net.variant")
        if self.structure not in STRUCTURES:
            raise ConfigError(f"unknown structure {self.structure!r}; choose from {STRUCTURES}", "net.structure")
        if self.residual not in RESIDUAL_MODES:
            raise ConfigError(f"unknown residual mode {self.residual!r}", "net.residual")
        for key in ("classes", "T", "N", "M", "K"):
            if getattr(self, key) < 1:
                raise ConfigError("must be a positive integer", f"net.{key}")
        if self.classes < 2:
            raise ConfigError("need at least two classes", "net.classes")
        if self.M > self.N:
            raise ConfigError(f"cannot form {self.M} groups from {self.N} points", "group.M")
        if self.K > self.N:
            raise ConfigError(f"cannot take {self.K} neighbours from {self.N} points", "group.K")
        self.grouping_variant  # validates the name
        self.neuron_config  # validates neuron settings

    @property
    def local_dim(self) -> int:
        return VARIANT_DIMS[self.variant][0]

    @property
    def global_dims(self) -> tuple[int, int, int]:
        return VARIANT_DIMS[self.variant][1]

    @property
    def classifier_dims(self) -> tuple[int, int, int]:
        return (self.feature_dim, VARIANT_DIMS[self.variant][2], VOTES_PER_CLASS * self.classes)

    @property
    def grouping_variant(self) -> GroupingVariant:
        return parse_variant(self.grouping)

    @property
    def neuron_config(self) -> NeuronConfig:
        return NeuronConfig(self.neuron, self.v_th, self.tau_mem, self.tau_syn)

    @property
    def local_out_dim(self) -> int:
        v = self.grouping_variant
        return 2 * self.local_dim if (v.branches == "double" and v.fusion == "concat") else self.local_dim

    @property
    def feature_dim(self) -> int:
        """Width of the vector handed to the classifier."""
        if self.structure == "local_only":
            return self.local_out_dim
        if self.structure == "pointnet":
            return POINTNET_DIMS[-1]
        return self.global_dims[-1]

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown network keys {sorted(unknown)}", "net")
        return cls(**d)

    def with_(self, **kw) -> "NetworkConfig":
        return replace(self, **kw)


class LocalExtractor(nn.Module):
    """Per-point features pooled within each group, fused with a centroid branch."""

    def __init__(self, cfg: NetworkConfig):
        super().__init__()
        n, d = cfg.neuron_config, cfg.local_dim
        v = cfg.grouping_variant
        self.double = v.branches == "double"
        self.fusion = v.fusion
        self.embed1 = ConvBNLIF(6, d, n)
        self.res1 = ResFB(d, n, cfg.residual)
        if self.double:
            self.embed2 = ConvBNLIF(3, d, n)
            self.res2 = ResFB(d, n, cfg.residual)

    def forward(self, ch1: torch.Tensor, ch2: torch.Tensor | None = None) -> torch.Tensor:
        # ch1: (T, B, M, K, 6) -> pooled (T, B, M, D)
        pooled = self.res1(self.embed1(ch1)).amax(dim=-2)
        if not self.double:
            return pooled
        f2 = self.res2(self.embed2(ch2))
        if self.fusion == "add":
            return pooled + f2
        return torch.cat([pooled, f2], dim=-1)


class GlobalExtractor(nn.Module):
    """Two conv+ResF stages, a final conv, then max over the set axis."""

    def __init__(self, din: int, dims, cfg: NetworkConfig):
        super().__init__()
        n = cfg.neuron_config
        self.conv1 = ConvBNLIF(din, dims[0], n)
        self.res1 = ResF(dims[0], n, cfg.residual)
        self.conv2 = ConvBNLIF(dims[0], dims[1], n)
        self.res2 = ResF(dims[1], n, cfg.residual)
        self.conv3 = ConvBNLIF(dims[1], dims[2], n)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        # x: (T, B, M, din) -> (T, B, dims[2])
        h = self.res1(self.conv1(x))
        h = self.res2(self.conv2(h))
        return self.conv3(h).amax(dim=-2)


class VotingClassifier(nn.Module):
    def __init__(self, dims, classes: int, ncfg: NeuronConfig):
        super().__init__()
        din, hidden, dout = dims
        self.classes = classes
        self.fc1 = ConvBNLIF(din, hidden, ncfg)
        self.fc2 = ConvBNLIF(hidden, dout, ncfg)

    def forward(self, feature: torch.Tensor) -> torch.Tensor:
        spikes = self.fc2(self.fc1(feature))
        return vote(spikes, self.classes)


def vote(spikes: torch.Tensor, classes: int) -> torch.Tensor:
    """Average disjoint blocks of ``VOTES_PER_CLASS`` output neurons into class scores."""
    return spikes.reshape(*spikes.shape[:-1], classes, VOTES_PER_CLASS).mean(dim=-1)


class PointSetEncoder(nn.Module):
    """Ungrouped baselines for the structure ablation: per-point convs over the
    whole sampled cloud, max-pooled into one vector."""

    def __init__(self, cfg: NetworkConfig):
        super().__init__()
        n = cfg.neuron_config
        if cfg.structure == "pointnet":
            dims = (3,) + POINTNET_DIMS
            self.layers = nn.Sequential(*[ConvBNLIF(a, b, n) for a, b in zip(dims[:-1], dims[1:])])
            self.extractor = None
        else:
            self.layers = nn.Sequential(ConvBNLIF(3, cfg.local_dim, n))
            self.extractor = GlobalExtractor(cfg.local_dim, cfg.global_dims, cfg)

    def forward(self, pts: torch.Tensor) -> torch.Tensor:
        h = self.layers(pts)
        if self.extractor is None:
            return h.amax(dim=-2)
        return self.extractor(h)


class SpikeCloudNet(nn.Module):
    def __init__(self, cfg: NetworkConfig):
        super().__init__()
        self.cfg = cfg
        if cfg.structure in ("full", "local_only"):
            self.local = LocalExtractor(cfg)
            if cfg.structure == "full":
                self.global_ = GlobalExtractor(cfg.local_out_dim, cfg.global_dims, cfg)
        else:
            self.points = PointSetEncoder(cfg)
        self.classifier = VotingClassifier(cfg.classifier_dims, cfg.classes, cfg.neuron_config)

    @property
    def inputs(self) -> tuple[str, ...]:
        return ("ch1", "ch2") if self.cfg.structure in ("full", "local_only") else ("pts",)

    def features(self, spikes: dict[str, torch.Tensor]) -> torch.Tensor:
        s = self.cfg.structure
        if s in ("global_only", "pointnet"):
            return self.points(spikes["pts"])
        local = self.local(spikes["ch1"], spikes.get("ch2"))
        if s == "local_only":
            return local.amax(dim=-2)
        return self.global_(local)

    def forward(self, spikes: dict[str, torch.Tensor]) -> torch.Tensor:
        """Encoded spike inputs -> per-timestep class scores ``(T, B, classes)``."""
        return self.classifier(self.features(spikes))

    def neurons(self) -> list[tuple[str, SpikingNeuron]]:
        return [(n, m) for n, m in self.named_modules() if isinstance(m, SpikingNeuron)]

    def mean_fire_rate(self) -> float:
        rates = [m.last_rate for _, m in self.neurons() if m.last_rate is not None]
        return float(np.mean(rates)) if rates else 0.0

    def param_count(self) -> int:
        return sum(p.numel() for p in self.parameters())


# --------------------------------------------------------------------------- #
# Batches and encoding
# --------------------------------------------------------------------------- #
@dataclass
class SampleBatch:
    """Stacked grouped samples (numpy, float32) and their labels."""

    ch1: np.ndarray  # (B, M, K, 6)
    ch2: np.ndarray  # (B, M, 3)
    pts: np.ndarray  # (B, N, 3)
    labels: np.ndarray = field(default_factory=lambda: np.zeros(0, np.int64))

    def __len__(self) -> int:
        return len(self.ch1)

    def subset(self, idx) -> "SampleBatch":
        idx = np.asarray(idx)
        return SampleBatch(self.ch1[idx], self.ch2[idx], self.pts[idx],
                           self.labels[idx] if len(self.labels) else self.labels)

    @classmethod
    def from_grouped(cls, grouped, labels=None) -> "SampleBatch":
        return cls(
            np.stack([g.channel1 for g in grouped]).astype(np.float32),
            np.stack([g.channel2 for g in grouped]).astype(np.float32),
            np.stack([g.points for g in grouped]).astype(np.float32),
            np.asarray(labels if labels is not None else [], dtype=np.int64),
        )


def _encode(values: np.ndarray, T: int, seeds: np.ndarray, offset: int) -> torch.Tensor:
    B = values.shape[0]
    flat = np.clip(values.reshape(B, -1).astype(np.float64), 0.0, 1.0)
    d = offset + np.arange(flat.shape[1], dtype=np.uint64)
    u = counter_uniform(seeds.reshape(1, B, 1), np.arange(T, dtype=np.uint64).reshape(T, 1, 1), d[None, None, :])
    bits = (u < flat[None]).astype(np.float32)
    return torch.from_numpy(bits.reshape((T,) + values.shape))


def encode_batch(batch: SampleBatch, cfg: NetworkConfig, seeds) -> dict[str, torch.Tensor]:
    """Rate-code every input channel of a batch, one seed per sample.

    The element index of each value is its position in the per-sample
    concatenation ``[ch1, ch2, pts]``, so a sample's spikes depend only on its
    own seed, never on the batch it is in. Values are clamped to [0, 1]; with
    the absolute-value grouping a negative offset is an error.
    """
    seeds = np.asarray(seeds, dtype=object).reshape(-1)
    if len(seeds) != len(batch):
        raise UsageError(f"{len(seeds)} seeds for {len(batch)} samples")
    if cfg.grouping_variant.negative_handling == "absolute" and np.any(batch.ch1[..., :3] < 0):
        raise EncodingError("negative standardized offset in an absolute-value grouping")
    n1 = int(np.prod(batch.ch1.shape[1:]))
    n2 = int(np.prod(batch.ch2.shape[1:]))
    if cfg.structure in ("full", "local_only"):
        out = {"ch1": _encode(batch.ch1, cfg.T, seeds, 0)}
        if cfg.grouping_variant.branches == "double":
            out["ch2"] = _encode(batch.ch2, cfg.T, seeds, n1)
        return out
    return {"pts": _encode(batch.pts, cfg.T, seeds, n1 + n2)}


@dataclass
class ForwardResult:
    scores: torch.Tensor  # (T, B, classes)
    prediction: np.ndarray  # (B,)
    mean_scores: np.ndarray  # (B, classes)
    fire_rates: dict[str, float]


def forward(net: SpikeCloudNet, batch: SampleBatch, seeds) -> ForwardResult:
    spikes = encode_batch(batch, net.cfg, seeds)
    scores = net(spikes)
    mean = scores.detach().mean(dim=0).numpy()
    return ForwardResult(
        scores=scores,
        prediction=np.argmax(mean, axis=1),
        mean_scores=mean,
        fire_rates={n: m.last_rate for n, m in net.neurons()},
    )


def mse_loss(scores: torch.Tensor, labels, classes: int) -> torch.Tensor:
    """Mean over timesteps, samples and classes of ``(score - one_hot)^2``."""
    labels = torch.as_tensor(np.asarray(labels), dtype=torch.long)
    if labels.numel() and (labels.max() >= classes or labels.min() < 0):
        raise ConfigError(f"label out of range for {classes} classes")
    target = nn.functional.one_hot(labels, classes).to(scores.dtype)
    return ((scores - target) ** 2).mean()


def backward(net: nn.Module, loss: torch.Tensor) -> dict[str, torch.Tensor]:
    """Back-propagate through time and return ``{param name: gradient}``."""
    if not isinstance(loss, torch.Tensor) or loss.grad_fn is None:
        raise UsageError("loss carries no recorded graph; run a forward pass with gradients enabled")
    net.zero_grad(set_to_none=True)
    loss.backward()
    return {n: p.grad for n, p in net.named_parameters() if p.grad is not None}


def layer_specs(cfg: NetworkConfig) -> list[tuple[str, int, int, int]]:
    """``(name, cin, cout, positions)`` for every conv/FC layer, per sample and timestep.

    Mirrors the module tree of :class:`SpikeCloudNet`; positions is the number
    of points/groups the layer's weights are applied at.
    """
    M, K, N = cfg.M, cfg.K, cfg.N
    d = cfg.local_dim
    out: list[tuple[str, int, int, int]] = []

    def block(prefix, width, positions, bottleneck):
        if bottleneck:
            out.append((f"{prefix}.inner.0.conv", width, width // 2, positions))
            out.append((f"{prefix}.last.conv", width // 2, width, positions))
        else:
            out.append((f"{prefix}.last.conv", width, width, positions))

    def global_part(prefix, din, positions):
        g = cfg.global_dims
        out.append((f"{prefix}.conv1.conv", din, g[0], positions))
        block(f"{prefix}.res1", g[0], positions, False)
        out.append((f"{prefix}.conv2.conv", g[0], g[1], positions))
        block(f"{prefix}.res2", g[1], positions, False)
        out.append((f"{prefix}.conv3.conv", g[1], g[2], positions))

    if cfg.structure in ("full", "local_only"):
        out.append(("local.embed1.conv", 6, d, M * K))
        block("local.res1", d, M * K, True)
        if cfg.grouping_variant.branches == "double":
            out.append(("local.embed2.conv", 3, d, M))
            block("local.res2", d, M, True)
        if cfg.structure == "full":
            global_part("global_", cfg.local_out_dim, M)
    elif cfg.structure == "pointnet":
        dims = (3,) + POINTNET_DIMS
        for i, (a, b) in enumerate(zip(dims[:-1], dims[1:])):
            out.append((f"points.layers.{i}.conv", a, b, N))
    else:
        out.append(("points.layers.0.conv", 3, d, N))
        global_part("points.extractor", d, N)
    din, hidden, dout = cfg.classifier_dims
    out.append(("classifier.fc1.conv", din, hidden, 1))
    out.append(("classifier.fc2.conv", hidden, dout, 1))
    return out


def describe(cfg: NetworkConfig) -> str:
    return (f"{cfg.structure} {cfg.variant} net, grouping {variant_name(cfg.grouping_variant)}, "
            f"T={cfg.T}, N={cfg.N}, M={cfg.M}, K={cfg.K}, {cfg.neuron}")
