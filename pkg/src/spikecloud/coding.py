"""Stateless Poisson (Bernoulli-per-step) rate coding and its error statistics.

Random numbers come from a counter-based hash of ``(seed, t, d)``: the bit at
timestep ``t`` for element ``d`` does not depend on how many other elements or
timesteps are generated, or in what order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, EncodingError

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_C1 = np.uint64(0xBF58476D1CE4E5B9)
_C2 = np.uint64(0x94D049BB133111EB)
_MASK = (1 << 64) - 1


def _mix(z: np.ndarray) -> np.ndarray:
    # splitmix64 finalizer
    z = (z ^ (z >> np.uint64(30))) * _C1
    z = (z ^ (z >> np.uint64(27))) * _C2
    return z ^ (z >> np.uint64(31))


def seed_key(*parts: int) -> int:
    """Fold integers into one 64-bit key (used to derive per-sample seeds)."""
    h = np.zeros(1, dtype=np.uint64)
    with np.errstate(over="ignore"):
        for p in parts:
            h = _mix(h + _GOLDEN + np.array([int(p) & _MASK], dtype=np.uint64))
    return int(h[0])


def counter_uniform(seed, t_idx, d_idx) -> np.ndarray:
    """Uniform [0, 1) values addressed by broadcastable seed, ``t`` and ``d`` indices."""
    t = np.asarray(t_idx, dtype=np.uint64)
    d = np.asarray(d_idx, dtype=np.uint64)
    if np.ndim(seed) == 0:
        key = np.array([int(seed) & _MASK], dtype=np.uint64)
    else:
        key = np.array([int(s) & _MASK for s in np.ravel(seed)], dtype=np.uint64).reshape(np.shape(seed))
    with np.errstate(over="ignore"):
        k = _mix(key + _GOLDEN)
        h = _mix(_mix(k ^ (t * _GOLDEN + _C1)) + d * _C2)
    return (h >> np.uint64(11)).astype(np.float64) * (1.0 / (1 << 53))


@dataclass
class SpikeTrain:
    bits: np.ndarray  # (T, ...) uint8 in {0, 1}

    @property
    def T(self) -> int:
        return self.bits.shape[0]


def bernoulli_bits(prob: np.ndarray, T: int, seed: int, d_offset: int = 0) -> np.ndarray:
    """``(T, *prob.shape)`` bits with ``P(bit) = prob``; no validation."""
    prob = np.asarray(prob, dtype=np.float64)
    d = d_offset + np.arange(prob.size, dtype=np.uint64).reshape(prob.shape)
    t = np.arange(T, dtype=np.uint64).reshape((T,) + (1,) * prob.ndim)
    return (counter_uniform(seed, t, d[None]) < prob[None]).astype(np.uint8)


def poisson_encode(values, T: int = 16, seed: int = 0) -> SpikeTrain:
    """Rate-code non-negative values over ``T`` steps; values above 1 saturate."""
    values = np.asarray(values, dtype=np.float64)
    if T < 1:
        raise ConfigError(f"need at least one timestep, got {T}", "net.T")
    if not np.all(np.isfinite(values)):
        raise EncodingError("cannot encode non-finite values")
    if np.any(values < 0):
        raise EncodingError(
            "negative value passed to the rate coder; take absolute values (or rescale) first"
        )
    return SpikeTrain(bernoulli_bits(np.minimum(values, 1.0), T, seed))


def decode_rate(train: SpikeTrain) -> np.ndarray:
    return train.bits.mean(axis=0)


def mre(raw_distances, sd: float, T: int = 16, trials: int = 1, seed: int = 0) -> dict[str, float]:
    """Mean relative reconstruction error of rate coding, raw versus rescaled.

    ``delta_raw`` codes each ``|d|`` directly; ``delta_rescaled`` codes
    ``|d| / sd`` and multiplies the decoded rate back by ``sd``. Zero distances
    are left out (relative error undefined).
    """
    if not sd > 0:
        raise ConfigError(f"sd must be positive, got {sd}", "sd")
    d = np.abs(np.asarray(raw_distances, dtype=np.float64)).ravel()
    d = d[d > 0]
    if d.size == 0:
        raise ConfigError("no non-zero distances to evaluate", "raw_distances")
    tiled = np.broadcast_to(d, (trials, d.size))
    raw = decode_rate(poisson_encode(tiled, T, seed_key(seed, 0)))
    rescaled = sd * decode_rate(poisson_encode(tiled / sd, T, seed_key(seed, 1)))
    return {
        "delta_raw": float(np.mean(np.abs(raw - d) / d)),
        "delta_rescaled": float(np.mean(np.abs(rescaled - d) / d)),
    }


def cv_closed_form(d: float) -> float:
    if not 0 < d <= 1:
        raise ConfigError(f"coded value must lie in (0, 1], got {d}", "d")
    return math.sqrt(1.0 / d - 1.0)


def cv_empirical(d: float, n: int, T: int = 16, seed: int = 0) -> dict[str, float]:
    """Code ``d`` in ``n`` independent trials of ``T`` steps.

    ``cv`` is the std/mean of all ``n * T`` per-step outcomes (population std),
    which is what ``sqrt(1/d - 1)`` describes; ``alpha`` is the mean decoded
    rate over trials divided by ``d``.
    """
    if not 0 < d <= 1:
        raise ConfigError(f"coded value must lie in (0, 1], got {d}", "d")
    if n < 1:
        raise ConfigError(f"need at least one trial, got {n}", "n")
    bits = poisson_encode(np.full(n, d), T, seed).bits.astype(np.float64)
    mean = bits.mean()
    cv = float(bits.std() / mean) if mean > 0 else math.inf
    return {"cv": cv, "alpha": float(mean / d)}


def alpha_distribution(d: float, n: int, T: int = 16, repeats: int = 200, seed: int = 0) -> tuple[float, float]:
    """Mean and std of the scale factor alpha over independent repetitions."""
    alphas = np.array([cv_empirical(d, n, T, seed_key(seed, r))["alpha"] for r in range(repeats)])
    return float(alphas.mean()), float(alphas.std(ddof=1))


@dataclass
class CodingReport:
    mre: float
    mre_raw: float
    cv_empirical: dict[float, float]
    alpha_mean: float
    alpha_std: float

    def rows(self) -> list[tuple[str, float]]:
        out = [("mre_rescaled", self.mre), ("mre_raw", self.mre_raw)]
        out += [(f"cv_d{d:g}", v) for d, v in self.cv_empirical.items()]
        out += [(f"cv_closed_d{d:g}", cv_closed_form(d)) for d in self.cv_empirical]
        out += [("alpha_mean", self.alpha_mean), ("alpha_std", self.alpha_std)]
        return out


def coding_report(raw_distances, sd: float, T: int = 16, trials: int = 4, n: int = 1152,
                  d_values=(0.2, 0.5, 0.8), repeats: int = 100, seed: int = 0) -> CodingReport:
    errs = mre(raw_distances, sd, T, trials, seed)
    cvs = {d: cv_empirical(d, n, T, seed_key(seed, 2, i))["cv"] for i, d in enumerate(d_values)}
    a_mean, a_std = alpha_distribution(0.5, n, T, repeats, seed_key(seed, 3))
    return CodingReport(errs["delta_rescaled"], errs["delta_raw"], cvs, a_mean, a_std)
