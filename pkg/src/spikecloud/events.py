"""Event streams: parsing, serialization, denoising, windowing and normalization.

Events are held in a packed numpy structured array whose layout is exactly the
on-disk record of the binary format, so the packed writer is a header plus
``events.tobytes()``.
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass, field
from typing import Iterator, NamedTuple, Sequence

import numpy as np

from .errors import ConfigError, DegenerateInputError, ParseError

EVENT_DTYPE = np.dtype([("t", "<u8"), ("x", "<u2"), ("y", "<u2"), ("p", "u1")])
PACKED_MAGIC = b"EVS1"
_HEADER = struct.Struct("<4sHHQ")  # magic, width, height, event count
HEADER_SIZE = _HEADER.size  # 16

FORMATS = ("csv", "packed")


class Event(NamedTuple):
    t: int
    x: int
    y: int
    p: int


@dataclass
class EventStream:
    width: int
    height: int
    events: np.ndarray = field(default_factory=lambda: np.zeros(0, EVENT_DTYPE))
    label: int | None = None

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise ConfigError(f"sensor size must be positive, got {self.width}x{self.height}")
        self.events = np.ascontiguousarray(self.events, dtype=EVENT_DTYPE)

    @classmethod
    def from_events(cls, width: int, height: int, events: Sequence[Event], label=None) -> "EventStream":
        arr = np.array([tuple(e) for e in events], dtype=EVENT_DTYPE)
        return cls(width, height, arr, label)

    def __len__(self) -> int:
        return len(self.events)

    def __iter__(self) -> Iterator[Event]:
        for t, x, y, p in self.events.tolist():
            yield Event(t, x, y, p)

    def __eq__(self, other) -> bool:
        if not isinstance(other, EventStream):
            return NotImplemented
        return (
            self.width == other.width
            and self.height == other.height
            and self.label == other.label
            and np.array_equal(self.events, other.events)
        )

    @property
    def t(self) -> np.ndarray:
        return self.events["t"]

    @property
    def span_us(self) -> int:
        if len(self.events) == 0:
            return 0
        return int(self.events["t"][-1]) - int(self.events["t"][0])


@dataclass
class WindowClip:
    """Events with ``t_start <= t < t_end`` taken from one parent stream."""

    t_start: int
    t_end: int
    events: np.ndarray
    source_id: int | str | None = None

    @property
    def length_us(self) -> int:
        return self.t_end - self.t_start

    def __len__(self) -> int:
        return len(self.events)


def _validate(events: np.ndarray, width: int, height: int, offsets: np.ndarray) -> None:
    bad = (events["x"] >= width) | (events["y"] >= height) | (events["p"] > 1)
    if bad.any():
        i = int(np.flatnonzero(bad)[0])
        e = events[i]
        raise ParseError(
            f"event {i} out of bounds (x={e['x']}, y={e['y']}, p={e['p']}) for "
            f"{width}x{height} sensor",
            int(offsets[i]),
        )


def _sorted(events: np.ndarray) -> np.ndarray:
    t = events["t"]
    if len(t) > 1 and np.any(t[1:] < t[:-1]):
        return events[np.argsort(t, kind="stable")]
    return events


def _parse_csv(data: bytes, width: int | None, height: int | None) -> EventStream:
    rows: list[tuple[int, int, int, int]] = []
    offsets: list[int] = []
    offset = 0
    for raw in data.splitlines(keepends=True):
        line = raw.strip()
        start = offset
        offset += len(raw)
        if not line:
            continue
        if line.startswith(b"#"):
            # optional geometry line: "# width=128,height=128"
            for item in line[1:].replace(b",", b" ").split():
                key, _, val = item.partition(b"=")
                try:
                    if key == b"width":
                        width = int(val)
                    elif key == b"height":
                        height = int(val)
                except ValueError:
                    raise ParseError(f"bad geometry value {item!r}", start) from None
            continue
        if line.replace(b" ", b"") == b"t,x,y,p":
            continue
        parts = line.split(b",")
        if len(parts) != 4:
            raise ParseError(f"expected 4 fields 't,x,y,p', got {line!r}", start)
        try:
            t, x, y, p = (int(v) for v in parts)
        except ValueError:
            raise ParseError(f"non-integer field in {line!r}", start) from None
        if t < 0 or x < 0 or y < 0 or p not in (0, 1):
            raise ParseError(f"field out of range in {line!r}", start)
        rows.append((t, x, y, p))
        offsets.append(start)
    if width is None or height is None:
        raise ConfigError("csv input needs sensor width/height (argument or '# width=..,height=..' line)")
    if width <= 0 or height <= 0:
        raise ConfigError(f"sensor size must be positive, got {width}x{height}")
    try:
        events = np.array(rows, dtype=EVENT_DTYPE) if rows else np.zeros(0, EVENT_DTYPE)
    except OverflowError:
        raise ParseError("field does not fit the event record", offsets[0]) from None
    _validate(events, width, height, np.asarray(offsets))
    return EventStream(width, height, _sorted(events))


def _parse_packed(data: bytes) -> EventStream:
    if len(data) < HEADER_SIZE:
        raise ParseError(f"truncated header ({len(data)} of {HEADER_SIZE} bytes)", len(data))
    magic, width, height, count = _HEADER.unpack_from(data, 0)
    if magic != PACKED_MAGIC:
        raise ParseError(f"bad magic {magic!r}, expected {PACKED_MAGIC!r}", 0)
    if width == 0 or height == 0:
        raise ConfigError(f"sensor size must be positive, got {width}x{height}")
    expected = HEADER_SIZE + count * EVENT_DTYPE.itemsize
    if len(data) != expected:
        raise ParseError(
            f"payload size mismatch: header announces {count} events ({expected} bytes), "
            f"got {len(data)} bytes",
            min(len(data), expected),
        )
    events = np.frombuffer(data, dtype=EVENT_DTYPE, count=count, offset=HEADER_SIZE).copy()
    offsets = HEADER_SIZE + np.arange(count) * EVENT_DTYPE.itemsize
    _validate(events, width, height, offsets)
    return EventStream(width, height, _sorted(events))


def parse_events(data: bytes, format: str = "packed", width: int | None = None,
                 height: int | None = None) -> EventStream:
    """Parse a serialized event stream.

    ``csv`` is one ``t,x,y,p`` record per line (an optional ``t,x,y,p`` header
    and an optional ``# width=W,height=H`` line); sensor size comes from that
    line or from the ``width``/``height`` arguments. ``packed`` is the 16-byte
    ``EVS1`` header followed by 13-byte little-endian records. Unsorted input is
    stably sorted by timestamp.
    """
    if format == "csv":
        return _parse_csv(data, width, height)
    if format == "packed":
        return _parse_packed(data)
    raise ConfigError(f"unknown event format {format!r}; expected one of {FORMATS}")


def write_events(stream: EventStream, format: str = "packed") -> bytes:
    if format == "packed":
        header = _HEADER.pack(PACKED_MAGIC, stream.width, stream.height, len(stream.events))
        return header + stream.events.tobytes()
    if format == "csv":
        buf = io.StringIO()
        buf.write(f"# width={stream.width},height={stream.height}\n")
        buf.write("t,x,y,p\n")
        for t, x, y, p in stream.events.tolist():
            buf.write(f"{t},{x},{y},{p}\n")
        return buf.getvalue().encode()
    raise ConfigError(f"unknown event format {format!r}; expected one of {FORMATS}")


def read_event_file(path, format: str | None = None) -> EventStream:
    with open(path, "rb") as fh:
        data = fh.read()
    if format is None:
        format = "packed" if data[:4] == PACKED_MAGIC else "csv"
    return parse_events(data, format)


def window_count(span_us: int, L_us: int, overlap_us: int) -> int:
    stride = L_us - overlap_us
    if span_us < L_us:
        return 0
    return (span_us - L_us) // stride + 1


def slice_windows(stream: EventStream, L_us: int, overlap_us: int,
                  source_id: int | str | None = None) -> list[WindowClip]:
    """Cut a stream into fixed-length, possibly overlapping windows.

    Windows are anchored at the first event and advance by ``L_us - overlap_us``;
    only windows whose whole span lies inside ``[t_first, t_last]`` are kept.
    Intervals are half-open, so an event on a boundary belongs to the later window.
    """
    L_us, overlap_us = int(L_us), int(overlap_us)
    if L_us <= 0:
        raise ConfigError(f"window length must be positive, got {L_us}", "window.L_us")
    if not 0 <= overlap_us < L_us:
        raise ConfigError(
            f"overlap must satisfy 0 <= overlap < L ({overlap_us} vs {L_us})", "window.overlap_us"
        )
    if len(stream.events) == 0:
        return []
    t = stream.events["t"]
    t0 = int(t[0])
    n = window_count(int(t[-1]) - t0, L_us, overlap_us)
    stride = L_us - overlap_us
    starts = t0 + stride * np.arange(n, dtype=np.int64)
    lo = np.searchsorted(t, starts.astype(np.uint64), side="left")
    hi = np.searchsorted(t, (starts + L_us).astype(np.uint64), side="left")
    return [
        WindowClip(int(s), int(s) + L_us, stream.events[a:b], source_id)
        for s, a, b in zip(starts, lo, hi)
    ]


def normalize_window(clip: WindowClip, width: int, height: int) -> np.ndarray:
    """Map a clip's events into the unit cube as ``(x, y, z)`` rows.

    z is time relative to the clip's nominal bounds; polarity is dropped.
    """
    if len(clip.events) == 0:
        raise DegenerateInputError(f"window [{clip.t_start}, {clip.t_end}) contains no events")
    ev = clip.events
    out = np.empty((len(ev), 3), dtype=np.float64)
    out[:, 0] = ev["x"] / max(width - 1, 1)
    out[:, 1] = ev["y"] / max(height - 1, 1)
    out[:, 2] = (ev["t"].astype(np.int64) - clip.t_start) / (clip.t_end - clip.t_start)
    return out


def neighbor_counts(events: np.ndarray, radius_px: int, dt_us: int) -> np.ndarray:
    """For each event, the number of other events within the spatio-temporal box.

    Relies on the events being sorted by time: candidates for event i are the
    events i+1, i+2, ... until the time gap exceeds ``dt_us``.
    """
    n = len(events)
    counts = np.zeros(n, dtype=np.int64)
    if n < 2:
        return counts
    t = events["t"].astype(np.int64)
    x = events["x"].astype(np.int64)
    y = events["y"].astype(np.int64)
    reach = np.searchsorted(t, t + dt_us, side="right") - np.arange(n) - 1
    for lag in range(1, int(reach.max()) + 1):
        a = np.flatnonzero(reach >= lag)
        b = a + lag
        close = (np.abs(x[a] - x[b]) <= radius_px) & (np.abs(y[a] - y[b]) <= radius_px)
        np.add.at(counts, a[close], 1)
        np.add.at(counts, b[close], 1)
    return counts


def denoise(stream: EventStream, radius_px: int = 1, dt_us: int = 1000, k_min: int = 1,
            until_stable: bool = False) -> EventStream:
    """Drop events with fewer than ``k_min`` neighbours.

    A neighbour is another event within Chebyshev distance ``radius_px`` and
    time distance ``dt_us``. One pass by default; ``until_stable`` repeats the
    filter until nothing more is removed, which makes it idempotent for any
    ``k_min``.
    """
    if radius_px < 1 or dt_us <= 0 or k_min < 1:
        raise ConfigError(f"denoise needs radius>=1, dt>0, k_min>=1 (got {radius_px}, {dt_us}, {k_min})")
    events = stream.events
    while True:
        keep = neighbor_counts(events, radius_px, dt_us) >= k_min
        if keep.all() or not until_stable:
            events = events[keep]
            break
        events = events[keep]
    return EventStream(stream.width, stream.height, events, stream.label)
