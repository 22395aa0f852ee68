"""End-to-end experiment runner and the ablation suites built on it."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import Callable, Sequence

from .config import Settings
from .errors import ConfigError
from .events import EventStream
from .pointcloud import GROUPING_ROWS, variant_name
from .snn.network import STRUCTURES
from .snn.layers import RESIDUAL_MODES
from .synth import synth_generate
from .training import (
    EvalResult,
    TrainResult,
    WindowDataset,
    build_dataset,
    build_network,
    evaluate,
    split_streams,
    train,
)

TIMESTEPS = (2, 4, 8, 12, 16, 24, 32)
ABLATION_FIELDS = ("variant", "accuracy", "epochs", "wall_time")


def suite_variants(suite: str) -> list[tuple[str, dict]]:
    """``(row label, settings overrides)`` for every member of a suite."""
    if suite == "timestep":
        return [(f"T={t}", {"net.T": t}) for t in TIMESTEPS]
    if suite == "grouping":
        return [(f"{row}:{variant_name(v)}", {"group.variant": f"row{row}"})
                for row, v in sorted(GROUPING_ROWS.items())]
    if suite == "structure":
        return [(s, {"net.structure": s}) for s in STRUCTURES]
    if suite == "resf":
        return [(r, {"net.residual": r}) for r in RESIDUAL_MODES]
    raise ConfigError(f"unknown ablation suite {suite!r}; choose timestep, grouping, structure or resf",
                      "suite")


@dataclass
class Experiment:
    result: TrainResult
    evaluation: EvalResult
    train_ds: WindowDataset
    test_ds: WindowDataset

    @property
    def stream_accuracy(self) -> float:
        return self.evaluation.stream_accuracy


class DataCache:
    """Preprocessed datasets keyed by everything that affects preprocessing."""

    def __init__(self, streams: Sequence[EventStream] | None = None):
        self.streams = streams
        self._cache: dict[tuple, tuple[WindowDataset, WindowDataset, int]] = {}

    def get(self, s: Settings) -> tuple[WindowDataset, WindowDataset, int]:
        """Train split, test split and the number of classes."""
        key = tuple(sorted((k, v) for k, v in s.values.items()
                           if k.split(".")[0] in ("data", "window", "denoise", "group") or k == "seed"))
        if key not in self._cache:
            streams = self.streams if self.streams is not None else synth_generate(s.synth_spec(), s["seed"])
            labels = [int(x.label) for x in streams]
            tr, te = split_streams(labels, s["data.test_fraction"], s["seed"])
            classes = max(labels) + 1
            full = build_dataset(streams, s.window_config(), s.net_config(classes), s["seed"])
            self._cache[key] = (full.subset_streams(tr), full.subset_streams(te), classes)
        return self._cache[key]


def run_experiment(s: Settings, cache: DataCache | None = None, epochs: int | None = None,
                   log: Callable[[dict], None] | None = None) -> Experiment:
    cache = cache or DataCache()
    train_ds, test_ds, classes = cache.get(s)
    net = build_network(s.net_config(classes), s["seed"])
    res = train(net, train_ds, s.train_config(), test_ds, epochs=epochs, log=log)
    ev = res.final if res.final is not None else evaluate(net, test_ds, s["seed"])
    return Experiment(res, ev, train_ds, test_ds)


def ablate(suite: str, base: Settings, epochs: int | None = None, cache: DataCache | None = None,
           log: Callable[[str], None] | None = None) -> list[dict]:
    """Train every variant of ``suite`` from the same seed; one row per variant."""
    cache = cache or DataCache()
    rows = []
    for label, overrides in suite_variants(suite):
        exp = run_experiment(base.copy().update(overrides), cache, epochs)
        row = {"variant": label, "accuracy": exp.stream_accuracy, "epochs": exp.result.epochs,
               "wall_time": exp.result.wall_time_s}
        rows.append(row)
        if log is not None:
            log(f"{label}: accuracy {row['accuracy']:.4f} in {row['wall_time']:.1f}s")
    return rows


def ablation_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=ABLATION_FIELDS, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({"variant": r["variant"], "accuracy": repr(float(r["accuracy"])),
                    "epochs": r["epochs"], "wall_time": f"{r['wall_time']:.3f}"})
    return buf.getvalue()
