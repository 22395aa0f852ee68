"""Line-oriented ``key=value`` configuration with dotted section keys.

Example::

    # desk-scale run
    net.variant=small
    group.M=32
    train.lr=0.001

Unknown keys and unparsable values raise :class:`ConfigError` naming the key.
A resolved configuration prints back in the same grammar, so the echoed file
reproduces the run.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable

from .errors import ConfigError
from .synth import CLASS_NAMES, SynthSpec


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _names(text: str) -> tuple[str, ...]:
    return tuple(p.strip() for p in text.split(",") if p.strip())


def _fmt(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


# key -> (parser, default)
SCHEMA: dict[str, tuple[Callable[[str], Any], Any]] = {
    "seed": (int, 0),
    "data.classes": (_names, CLASS_NAMES),
    "data.streams_per_class": (int, 30),
    "data.duration_s": (float, 1.0),
    "data.rate_hz": (float, 20_000.0),
    "data.width": (int, 128),
    "data.height": (int, 128),
    "data.noise_rate_hz": (float, 0.0),
    "data.test_fraction": (float, 0.2),
    "window.L_us": (int, 500_000),
    "window.overlap_us": (int, 250_000),
    "denoise.enabled": (_bool, False),
    "denoise.radius_px": (int, 1),
    "denoise.dt_us": (int, 1000),
    "denoise.k_min": (int, 1),
    "group.N": (int, 1024),
    "group.M": (int, 64),
    "group.K": (int, 24),
    "group.variant": (str, "row6"),
    "net.variant": (str, "small"),
    "net.T": (int, 16),
    "net.structure": (str, "full"),
    "net.residual": (str, "identity"),
    "net.neuron": (str, "plif"),
    "net.v_th": (float, 1.0),
    "net.tau_mem": (float, 2.0),
    "net.tau_syn": (float, 0.0),
    "train.lr": (float, 1e-3),
    "train.max_epochs": (int, 300),
    "train.batch_size": (int, 12),
    "train.beta1": (float, 0.9),
    "train.beta2": (float, 0.999),
    "train.eps": (float, 1e-8),
    "train.grad_clip": (float, 0.0),
    "train.resample_encoding": (_bool, True),
    "energy.e_mac": (float, 4.6e-12),
    "energy.e_ac": (float, 0.9e-12),
    "energy.spp_bit": (float, 12.991e-12),
    "energy.bits_per_param": (float, 32.0),
    "energy.l_sample_s": (float, 1.0),
    "energy.samples": (int, 16),
}


@dataclass
class Settings:
    values: dict[str, Any]

    @classmethod
    def defaults(cls) -> "Settings":
        return cls({k: d for k, (_, d) in SCHEMA.items()})

    def __getitem__(self, key: str) -> Any:
        return self.values[key]

    def set(self, key: str, raw) -> None:
        if key not in SCHEMA:
            raise ConfigError("unknown configuration key", key)
        parser, _ = SCHEMA[key]
        if isinstance(raw, str):
            try:
                value = parser(raw.strip())
            except ValueError as exc:
                raise ConfigError(f"cannot parse {raw!r}: {exc}", key) from None
        elif parser in (int, float):
            value = parser(raw)
        else:
            value = raw
        self.values[key] = value

    def update(self, pairs: dict[str, Any]) -> "Settings":
        for k, v in pairs.items():
            self.set(k, v)
        return self

    def copy(self, **overrides) -> "Settings":
        out = Settings(dict(self.values))
        for k, v in overrides.items():
            out.set(k.replace("__", "."), v)
        return out

    def to_text(self) -> str:
        return "".join(f"{k}={_fmt(self.values[k])}\n" for k in SCHEMA)

    # typed views -----------------------------------------------------------
    def synth_spec(self) -> SynthSpec:
        spec = SynthSpec(
            classes=tuple(self["data.classes"]),
            streams_per_class=self["data.streams_per_class"],
            duration_s=self["data.duration_s"],
            rate_hz=self["data.rate_hz"],
            width=self["data.width"],
            height=self["data.height"],
            noise_rate_hz=self["data.noise_rate_hz"],
        )
        spec.validate()
        return spec

    def net_config(self, classes: int | None = None):
        from .snn.network import NetworkConfig

        return NetworkConfig(
            variant=self["net.variant"],
            classes=classes if classes is not None else len(self["data.classes"]),
            T=self["net.T"],
            N=self["group.N"],
            M=self["group.M"],
            K=self["group.K"],
            structure=self["net.structure"],
            grouping=self["group.variant"],
            residual=self["net.residual"],
            neuron=self["net.neuron"],
            v_th=self["net.v_th"],
            tau_mem=self["net.tau_mem"],
            tau_syn=self["net.tau_syn"],
        )

    def window_config(self):
        from .training import WindowConfig

        return WindowConfig(
            L_us=self["window.L_us"],
            overlap_us=self["window.overlap_us"],
            denoise=self["denoise.enabled"],
            radius_px=self["denoise.radius_px"],
            dt_us=self["denoise.dt_us"],
            k_min=self["denoise.k_min"],
        )

    def train_config(self):
        from .training import TrainConfig

        return TrainConfig(
            lr=self["train.lr"],
            max_epochs=self["train.max_epochs"],
            batch_size=self["train.batch_size"],
            beta1=self["train.beta1"],
            beta2=self["train.beta2"],
            eps=self["train.eps"],
            grad_clip=self["train.grad_clip"],
            resample_encoding=self["train.resample_encoding"],
            seed=self["seed"],
        )


def parse_config_text(text: str, base: Settings | None = None) -> Settings:
    settings = base if base is not None else Settings.defaults()
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"line {lineno}: expected key=value, got {raw.strip()!r}")
        settings.set(key.strip(), value)
    return settings


def load_config(path, base: Settings | None = None) -> Settings:
    return parse_config_text(Path(path).read_text(), base)
