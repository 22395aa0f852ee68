"""Preprocessing into grouped samples, the training loop, and stream-level voting."""

from __future__ import annotations

import csv
import io
import math
import time
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np
import torch

from .coding import seed_key
from .errors import ConfigError, DegenerateInputError, TrainingDivergedError
from .events import EventStream, denoise, normalize_window, slice_windows
from .pointcloud import GroupedInput, group_points, random_sample
from .snn.network import NetworkConfig, SampleBatch, SpikeCloudNet, encode_batch, mse_loss

METRIC_FIELDS = ("epoch", "split", "loss", "accuracy", "lr", "mean_fire_rate")

# seed_key tags, so different random consumers never share a stream
_TAG_SAMPLE, _TAG_FPS, _TAG_TRAIN_ENC, _TAG_EVAL_ENC, _TAG_SHUFFLE, _TAG_SPLIT = range(1, 7)


@dataclass(frozen=True)
class WindowConfig:
    L_us: int = 500_000
    overlap_us: int = 250_000
    denoise: bool = False
    radius_px: int = 1
    dt_us: int = 1000
    k_min: int = 1


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-3
    max_epochs: int = 300
    batch_size: int = 12
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    grad_clip: float = 0.0  # 0 disables clipping
    resample_encoding: bool = True  # fresh Poisson spikes every epoch
    seed: int = 0

    def __post_init__(self):
        if not self.lr > 0:
            raise ConfigError(f"learning rate must be positive, got {self.lr}", "train.lr")
        if self.batch_size < 1:
            raise ConfigError(f"batch size must be >= 1, got {self.batch_size}", "train.batch_size")
        if self.max_epochs < 1:
            raise ConfigError(f"need at least one epoch, got {self.max_epochs}", "train.max_epochs")
        if self.grad_clip < 0:
            raise ConfigError("gradient clip must be >= 0", "train.grad_clip")

    def optimizer_header(self) -> dict:
        return {"name": "adam", "lr": self.lr, "betas": [self.beta1, self.beta2], "eps": self.eps,
                "schedule": "cosine", "max_epochs": self.max_epochs}


def cosine_lr(lr: float, epoch: int, max_epochs: int) -> float:
    """``lr * (1 + cos(pi * epoch / max_epochs)) / 2``."""
    return lr * (1.0 + math.cos(math.pi * epoch / max_epochs)) / 2.0


# --------------------------------------------------------------------------- #
# Preprocessing
# --------------------------------------------------------------------------- #
def preprocess_window(points: np.ndarray, cfg: NetworkConfig, seed: int) -> GroupedInput:
    """Normalized window points -> sampled, grouped and standardized sample."""
    sampled = random_sample(points, cfg.N, seed_key(seed, _TAG_SAMPLE))
    return group_points(sampled, cfg.M, cfg.K, cfg.grouping_variant, seed_key(seed, _TAG_FPS))


def stream_windows(stream: EventStream, wcfg: WindowConfig) -> list[np.ndarray]:
    if wcfg.denoise:
        stream = denoise(stream, wcfg.radius_px, wcfg.dt_us, wcfg.k_min)
    clips = slice_windows(stream, wcfg.L_us, wcfg.overlap_us)
    return [normalize_window(c, stream.width, stream.height) for c in clips if len(c)]


def preprocess_stream(stream: EventStream, wcfg: WindowConfig, cfg: NetworkConfig,
                      seed: int, source_id: int = 0) -> list[GroupedInput]:
    return [
        preprocess_window(pts, cfg, seed_key(seed, source_id, w))
        for w, pts in enumerate(stream_windows(stream, wcfg))
    ]


@dataclass
class WindowDataset:
    """Grouped windows with their labels and the stream each came from."""

    batch: SampleBatch
    stream_ids: np.ndarray  # (n,) index into the original stream list
    stream_labels: dict[int, int] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.batch)

    @property
    def labels(self) -> np.ndarray:
        return self.batch.labels

    def subset_streams(self, ids) -> "WindowDataset":
        ids = set(int(i) for i in ids)
        mask = np.array([int(s) in ids for s in self.stream_ids], dtype=bool)
        idx = np.flatnonzero(mask)
        return WindowDataset(self.batch.subset(idx), self.stream_ids[idx],
                             {k: v for k, v in self.stream_labels.items() if k in ids})


def build_dataset(streams: Sequence[EventStream], wcfg: WindowConfig, cfg: NetworkConfig,
                  seed: int, stream_ids: Sequence[int] | None = None) -> WindowDataset:
    ids = list(range(len(streams))) if stream_ids is None else list(stream_ids)
    grouped, labels, owners = [], [], []
    for sid, stream in zip(ids, streams):
        if stream.label is None:
            raise ConfigError(f"stream {sid} has no label")
        for g in preprocess_stream(stream, wcfg, cfg, seed, sid):
            grouped.append(g)
            labels.append(int(stream.label))
            owners.append(sid)
    if not grouped:
        raise DegenerateInputError("no stream spans a full window; shorten window.L_us")
    return WindowDataset(
        SampleBatch.from_grouped(grouped, labels),
        np.asarray(owners, dtype=np.int64),
        {sid: int(s.label) for sid, s in zip(ids, streams)},
    )


def split_streams(labels: Sequence[int], test_fraction: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Seeded random split of stream indices, stratified by class."""
    if not 0 < test_fraction < 1:
        raise ConfigError(f"test fraction must lie in (0, 1), got {test_fraction}", "data.test_fraction")
    labels = np.asarray(labels)
    rng = np.random.default_rng(seed_key(seed, _TAG_SPLIT))
    test = []
    for c in np.unique(labels):
        idx = np.flatnonzero(labels == c)
        k = int(round(test_fraction * len(idx)))
        test.extend(rng.permutation(idx)[:k].tolist())
    test = np.sort(np.asarray(test, dtype=np.int64))
    train = np.setdiff1d(np.arange(len(labels)), test)
    return train, test


# --------------------------------------------------------------------------- #
# Evaluation and voting
# --------------------------------------------------------------------------- #
def vote(predictions: Sequence[int], mean_scores: np.ndarray) -> int:
    """Majority label over windows; a tie goes to the tied label with the
    larger summed mean score."""
    predictions = np.asarray(predictions, dtype=np.int64)
    if predictions.size == 0:
        raise DegenerateInputError("cannot vote over zero windows")
    mean_scores = np.asarray(mean_scores, dtype=np.float64)
    counts = np.bincount(predictions, minlength=mean_scores.shape[1])
    tied = np.flatnonzero(counts == counts.max())
    if len(tied) == 1:
        return int(tied[0])
    totals = mean_scores.sum(axis=0)
    return int(tied[np.argmax(totals[tied])])


@dataclass
class EvalResult:
    loss: float
    accuracy: float  # window level
    predictions: np.ndarray
    mean_scores: np.ndarray
    mean_fire_rate: float
    stream_accuracy: float | None = None
    stream_predictions: dict[int, int] = field(default_factory=dict)


def eval_seeds(seed: int, stream_ids: Sequence[int]) -> list[int]:
    """Encoding seed per window, keyed by (stream, window ordinal within the stream),
    so a window is encoded the same way whichever set it is evaluated in."""
    seen: dict[int, int] = {}
    out = []
    for sid in stream_ids:
        k = seen.get(int(sid), 0)
        seen[int(sid)] = k + 1
        out.append(seed_key(seed, _TAG_EVAL_ENC, int(sid), k))
    return out


@torch.no_grad()
def evaluate(net: SpikeCloudNet, ds: WindowDataset, seed: int = 0, batch_size: int = 32) -> EvalResult:
    """Window-level loss/accuracy plus stream-level voted accuracy."""
    net.eval()
    seeds = eval_seeds(seed, ds.stream_ids)
    preds, means, losses, rates = [], [], [], []
    for a in range(0, len(ds), batch_size):
        sub = ds.batch.subset(np.arange(a, min(a + batch_size, len(ds))))
        scores = net(encode_batch(sub, net.cfg, seeds[a:a + len(sub)]))
        losses.append(float(mse_loss(scores, sub.labels, net.cfg.classes)) * len(sub))
        m = scores.mean(dim=0).numpy()
        means.append(m)
        preds.append(np.argmax(m, axis=1))
        rates.append(net.mean_fire_rate() * len(sub))
    pred = np.concatenate(preds)
    mean = np.concatenate(means)
    out = EvalResult(
        loss=sum(losses) / len(ds),
        accuracy=float(np.mean(pred == ds.labels)),
        predictions=pred,
        mean_scores=mean,
        mean_fire_rate=sum(rates) / len(ds),
    )
    voted = {}
    for sid in np.unique(ds.stream_ids):
        rows = ds.stream_ids == sid
        voted[int(sid)] = vote(pred[rows], mean[rows])
    out.stream_predictions = voted
    out.stream_accuracy = float(np.mean([voted[s] == ds.stream_labels[s] for s in voted]))
    return out


def evaluate_stream(net: SpikeCloudNet, stream: EventStream, wcfg: WindowConfig,
                    seed: int = 0, source_id: int = 0) -> int:
    """Classify every window of one stream and return the voted label."""
    grouped = preprocess_stream(stream, wcfg, net.cfg, seed, source_id)
    if not grouped:
        raise DegenerateInputError(
            f"stream spans {stream.span_us} us, shorter than one {wcfg.L_us} us window"
        )
    ds = WindowDataset(SampleBatch.from_grouped(grouped, [0] * len(grouped)),
                       np.full(len(grouped), source_id, dtype=np.int64), {source_id: 0})
    return evaluate(net, ds, seed).stream_predictions[source_id]


# --------------------------------------------------------------------------- #
# Training
# --------------------------------------------------------------------------- #
def build_network(cfg: NetworkConfig, seed: int) -> SpikeCloudNet:
    torch.manual_seed(seed_key(seed, 0) & 0x7FFF_FFFF_FFFF_FFFF)
    return SpikeCloudNet(cfg)


@dataclass
class TrainResult:
    net: SpikeCloudNet
    metrics: list[dict]
    epochs: int
    wall_time_s: float
    final: EvalResult | None = None

    def metrics_csv(self) -> str:
        return metrics_to_csv(self.metrics)


def metrics_to_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=METRIC_FIELDS, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})
    return buf.getvalue()


def train(net: SpikeCloudNet, train_ds: WindowDataset, cfg: TrainConfig,
          test_ds: WindowDataset | None = None, epochs: int | None = None,
          log: Callable[[dict], None] | None = None) -> TrainResult:
    """Adam + cosine schedule on the MSE-to-one-hot loss, BPTT over all timesteps.

    ``epochs`` stops early (the schedule still spans ``cfg.max_epochs``).
    """
    if len(train_ds) == 0:
        raise DegenerateInputError("empty training set")
    n_epochs = cfg.max_epochs if epochs is None else min(epochs, cfg.max_epochs)
    opt = torch.optim.Adam(net.parameters(), lr=cfg.lr, betas=(cfg.beta1, cfg.beta2), eps=cfg.eps)
    metrics: list[dict] = []
    start = time.perf_counter()
    final = None
    for epoch in range(n_epochs):
        lr = cosine_lr(cfg.lr, epoch, cfg.max_epochs)
        for group in opt.param_groups:
            group["lr"] = lr
        net.train()
        order = np.random.default_rng(seed_key(cfg.seed, _TAG_SHUFFLE, epoch)).permutation(len(train_ds))
        tot_loss = tot_correct = tot_rate = 0.0
        for a in range(0, len(order), cfg.batch_size):
            idx = order[a:a + cfg.batch_size]
            sub = train_ds.batch.subset(idx)
            enc_epoch = epoch if cfg.resample_encoding else 0
            seeds = [seed_key(cfg.seed, _TAG_TRAIN_ENC, enc_epoch, int(i)) for i in idx]
            scores = net(encode_batch(sub, net.cfg, seeds))
            loss = mse_loss(scores, sub.labels, net.cfg.classes)
            if not torch.isfinite(loss):
                raise TrainingDivergedError(epoch, float(loss.detach()))
            opt.zero_grad(set_to_none=True)
            loss.backward()
            if cfg.grad_clip > 0:
                torch.nn.utils.clip_grad_norm_(net.parameters(), cfg.grad_clip)
            opt.step()
            tot_loss += float(loss.detach()) * len(idx)
            tot_correct += float((scores.detach().mean(0).argmax(1).numpy() == sub.labels).sum())
            tot_rate += net.mean_fire_rate() * len(idx)
        n = len(order)
        rows = [dict(epoch=epoch, split="train", loss=tot_loss / n, accuracy=tot_correct / n,
                     lr=lr, mean_fire_rate=tot_rate / n)]
        if test_ds is not None and len(test_ds):
            final = evaluate(net, test_ds, cfg.seed)
            rows.append(dict(epoch=epoch, split="test", loss=final.loss, accuracy=final.accuracy,
                             lr=lr, mean_fire_rate=final.mean_fire_rate))
            rows.append(dict(epoch=epoch, split="test_stream", loss=final.loss,
                             accuracy=final.stream_accuracy, lr=lr,
                             mean_fire_rate=final.mean_fire_rate))
        metrics.extend(rows)
        if log is not None:
            for r in rows:
                log(r)
    return TrainResult(net, metrics, n_epochs, time.perf_counter() - start, final)


def config_snapshot(net_cfg: NetworkConfig, train_cfg: TrainConfig, wcfg: WindowConfig) -> dict:
    return {"net": net_cfg.to_dict(), "train": asdict(train_cfg), "window": asdict(wcfg)}
