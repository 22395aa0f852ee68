"""Sampling, farthest-point centroids, k-nearest-neighbour groups and the
standardized, spike-encodable group representation.

Every group becomes two channels:

* channel 1, shape ``(M, K, 6)``: the member's offset from its centroid divided
  by a pooled standard deviation (absolute value by default, so it can be rate
  coded) followed by a corner point (the group's elementwise minimum by default);
* channel 2, shape ``(M, 3)``: the centroid itself.

Taking the absolute value of standardized offsets moves their mean from 0 to
``sqrt(2/pi)``; using the group's minimum corner instead of the centroid in the
last three columns compensates that upward shift.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DegenerateInputError

FOLDED_NORMAL_MEAN = math.sqrt(2.0 / math.pi)

NEGATIVE_HANDLING = ("absolute", "unit_normalize", "raw")
CORNERS = ("min_corner", "centroid", "centroid_shifted")


@dataclass(frozen=True)
class GroupingVariant:
    negative_handling: str = "absolute"
    corner: str = "min_corner"
    branches: str = "double"
    fusion: str = "add"

    def __post_init__(self):
        if self.negative_handling not in NEGATIVE_HANDLING:
            raise ConfigError(f"unknown negative handling {self.negative_handling!r}", "group.negative_handling")
        if self.corner not in CORNERS:
            raise ConfigError(f"unknown corner {self.corner!r}", "group.corner")
        if self.branches not in ("single", "double"):
            raise ConfigError(f"unknown branch mode {self.branches!r}", "group.branches")
        if self.fusion not in ("add", "concat"):
            raise ConfigError(f"unknown fusion {self.fusion!r}", "group.fusion")
        if self.branches == "single" and self.fusion != "add":
            raise ConfigError("fusion only applies to the double-branch extractor", "group.fusion")


# The ten rows of the grouping ablation, keyed by row number. ``raw`` rows keep
# signed offsets; the network clamps them to [0, 1] before rate coding.
GROUPING_ROWS: dict[int, GroupingVariant] = {
    1: GroupingVariant("raw", "centroid", "single"),
    2: GroupingVariant("unit_normalize", "centroid", "single"),
    3: GroupingVariant("unit_normalize", "min_corner", "single"),
    4: GroupingVariant("absolute", "min_corner", "single"),
    5: GroupingVariant("absolute", "centroid", "single"),
    6: GroupingVariant("absolute", "min_corner", "double", "add"),
    7: GroupingVariant("absolute", "min_corner", "double", "concat"),
    8: GroupingVariant("absolute", "centroid", "double", "add"),
    9: GroupingVariant("raw", "centroid", "double", "add"),
    10: GroupingVariant("unit_normalize", "centroid", "double", "add"),
}

DEFAULT_VARIANT = GROUPING_ROWS[6]

_SHORT = {"absolute": "abs", "unit_normalize": "unit", "raw": "raw",
          "min_corner": "min", "centroid": "cen", "centroid_shifted": "shift"}


def variant_name(v: GroupingVariant) -> str:
    parts = [_SHORT[v.negative_handling], _SHORT[v.corner], v.branches]
    if v.branches == "double":
        parts.append(v.fusion)
    return "-".join(parts)


def parse_variant(name: str | int) -> GroupingVariant:
    """Look up a grouping variant by row number (``6``, ``"row6"``) or by name
    (``"abs-min-double-add"``; also accepts ``"default"``)."""
    if isinstance(name, int) or (isinstance(name, str) and name.isdigit()):
        row = int(name)
        if row not in GROUPING_ROWS:
            raise ConfigError(f"no grouping row {row}; rows are 1..10", "group.variant")
        return GROUPING_ROWS[row]
    key = name.strip().lower()
    if key == "default":
        return DEFAULT_VARIANT
    if key.startswith("row") and key[3:].isdigit():
        return parse_variant(int(key[3:]))
    inverse = {v: k for k, v in _SHORT.items()}
    parts = key.split("-")
    if len(parts) in (3, 4) and parts[0] in inverse and parts[1] in inverse:
        try:
            return GroupingVariant(inverse[parts[0]], inverse[parts[1]], parts[2],
                                   parts[3] if len(parts) == 4 else "add")
        except ConfigError:
            pass
    raise ConfigError(f"unknown grouping variant {name!r}", "group.variant")


@dataclass
class GroupedInput:
    """One sample after grouping.

    ``offsets`` keeps the raw (un-standardized) member-minus-centroid vectors
    and ``points`` the sampled cloud they came from.
    """

    centroids: np.ndarray  # (M, 3)
    member_idx: np.ndarray  # (M, K)
    channel1: np.ndarray  # (M, K, 6)
    channel2: np.ndarray  # (M, 3)
    sd: float
    offsets: np.ndarray  # (M, K, 3)
    points: np.ndarray  # (N, 3)

    @property
    def M(self) -> int:
        return self.channel1.shape[0]

    @property
    def K(self) -> int:
        return self.channel1.shape[1]


def random_sample(points: np.ndarray, N: int, seed) -> np.ndarray:
    """Draw exactly ``N`` rows; without replacement when there are enough."""
    points = np.asarray(points)
    if len(points) == 0:
        raise DegenerateInputError("cannot sample from an empty point set")
    if N < 1:
        raise ConfigError(f"sample size must be positive, got {N}", "group.N")
    rng = np.random.default_rng(seed)
    idx = rng.choice(len(points), size=N, replace=len(points) < N)
    return points[idx]


def fps(points: np.ndarray, M: int, seed=None, first: int | None = None) -> np.ndarray:
    """Farthest point sampling: ``M`` indices, greedy maximin, lowest index on ties.

    The first index is drawn uniformly from ``seed`` unless ``first`` is given.
    """
    points = np.asarray(points, dtype=np.float64)
    n = len(points)
    if M > n:
        raise ConfigError(f"cannot pick {M} centroids from {n} points", "group.M")
    if M < 1:
        raise ConfigError(f"need at least one centroid, got {M}", "group.M")
    if first is None:
        first = int(np.random.default_rng(seed).integers(n))
    chosen = np.empty(M, dtype=np.int64)
    chosen[0] = first
    mind = np.full(n, np.inf)
    for i in range(1, M):
        d = points - points[chosen[i - 1]]
        np.minimum(mind, np.einsum("ij,ij->i", d, d), out=mind)
        mind[chosen[i - 1]] = -1.0  # never re-pick, even among duplicates
        chosen[i] = int(np.argmax(mind))
    return chosen


def knn(points: np.ndarray, centroid_idx: np.ndarray, K: int) -> np.ndarray:
    """``(M, K)`` member indices, nearest first, ties broken by lowest index."""
    points = np.asarray(points, dtype=np.float64)
    if K > len(points):
        raise ConfigError(f"cannot take {K} neighbours from {len(points)} points", "group.K")
    if K < 1:
        raise ConfigError(f"need at least one neighbour, got {K}", "group.K")
    d = points[None, :, :] - points[np.asarray(centroid_idx)][:, None, :]
    dist = np.einsum("mnk,mnk->mn", d, d)
    return np.argsort(dist, axis=1, kind="stable")[:, :K]


def standardize_groups(points: np.ndarray, centroid_idx: np.ndarray, member_idx: np.ndarray,
                       variant: GroupingVariant = DEFAULT_VARIANT) -> GroupedInput:
    points = np.asarray(points, dtype=np.float64)
    centroid_idx = np.asarray(centroid_idx)
    member_idx = np.asarray(member_idx)
    centroids = points[centroid_idx]
    members = points[member_idx]
    offsets = members - centroids[:, None, :]
    sd = float(np.std(offsets, ddof=1)) if offsets.size > 1 else 0.0
    if not sd > 0:
        spread = np.abs(offsets).reshape(len(offsets), -1).max(axis=1)
        g = int(np.flatnonzero(spread == 0)[0]) if (spread == 0).any() else 0
        raise DegenerateInputError(
            f"pooled offset standard deviation is zero: group {g} (and every other group) "
            "has all members on its centroid"
        )
    rel = offsets / sd
    if variant.negative_handling == "absolute":
        first3 = np.abs(rel)
    elif variant.negative_handling == "unit_normalize":
        lo, hi = rel.min(), rel.max()
        first3 = (rel - lo) / (hi - lo) if hi > lo else np.zeros_like(rel)
    else:
        first3 = rel
    if variant.corner == "min_corner":
        corner = members.min(axis=1)
    elif variant.corner == "centroid":
        corner = centroids
    else:
        corner = centroids - FOLDED_NORMAL_MEAN * sd
    M, K = member_idx.shape
    channel1 = np.concatenate([first3, np.broadcast_to(corner[:, None, :], (M, K, 3))], axis=2)
    return GroupedInput(
        centroids=centroids,
        member_idx=member_idx,
        channel1=channel1,
        channel2=centroids.copy(),
        sd=sd,
        offsets=offsets,
        points=points,
    )


def group_stats(grouped: GroupedInput) -> dict[str, float]:
    return {
        "sd": grouped.sd,
        "mean_abs_rel": float(np.mean(grouped.channel1[..., :3])),
        "mean_raw_offset": float(np.mean(np.abs(grouped.offsets))),
    }


def group_points(points: np.ndarray, M: int, K: int, variant: GroupingVariant = DEFAULT_VARIANT,
                 seed=None) -> GroupedInput:
    cidx = fps(points, M, seed)
    return standardize_groups(points, cidx, knn(points, cidx, K), variant)


def folded_normal_mean(mu: float, sigma: float) -> float:
    """Mean of ``|X|`` for ``X ~ N(mu, sigma^2)``."""
    if sigma == 0:
        return abs(mu)
    phi = 0.5 * (1 + math.erf((-mu / sigma) / math.sqrt(2)))
    return sigma * FOLDED_NORMAL_MEAN * math.exp(-mu * mu / (2 * sigma * sigma)) + mu * (1 - 2 * phi)
