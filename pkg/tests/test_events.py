import struct

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from spikecloud.errors import ConfigError, DegenerateInputError, ParseError
from spikecloud.events import (
    EVENT_DTYPE,
    Event,
    EventStream,
    WindowClip,
    denoise,
    normalize_window,
    parse_events,
    slice_windows,
    window_count,
    write_events,
)


def random_stream(rng, n, width=64, height=48, t_max=10_000):
    ev = np.zeros(n, dtype=EVENT_DTYPE)
    ev["t"] = np.sort(rng.integers(0, t_max, n))
    ev["x"] = rng.integers(0, width, n)
    ev["y"] = rng.integers(0, height, n)
    ev["p"] = rng.integers(0, 2, n)
    return EventStream(width, height, ev)


def stream_from_times(times, width=8, height=8):
    ev = np.zeros(len(times), dtype=EVENT_DTYPE)
    ev["t"] = times
    return EventStream(width, height, ev)


# --------------------------------------------------------------------------- parse / write
def test_empty_csv_body_with_geometry():
    s = parse_events(b"# width=128,height=128\nt,x,y,p\n", "csv")
    assert len(s) == 0
    assert (s.width, s.height) == (128, 128)


def test_csv_single_line_maps_fields():
    s = parse_events(b"5,3,7,1\n", "csv", width=16, height=16)
    assert list(s) == [Event(t=5, x=3, y=7, p=1)]


def test_csv_write_line():
    s = EventStream.from_events(16, 16, [Event(5, 3, 7, 1)])
    lines = write_events(s, "csv").decode().splitlines()
    assert lines[-1] == "5,3,7,1"


def test_csv_unsorted_input_is_stably_sorted():
    s = parse_events(b"t,x,y,p\n9,1,1,0\n2,0,0,1\n9,2,2,1\n", "csv", 4, 4)
    assert [e.t for e in s] == [2, 9, 9]
    assert [e.x for e in s] == [0, 1, 2]  # equal timestamps keep input order


def test_packed_round_trip_bytes(rng):
    b = write_events(random_stream(rng, 1000), "packed")
    assert write_events(parse_events(b, "packed"), "packed") == b


def test_empty_stream_writes_header_only():
    b = write_events(EventStream(32, 32), "packed")
    assert len(b) == 16
    magic, w, h, n = struct.unpack("<4sHHQ", b)
    assert (magic, w, h, n) == (b"EVS1", 32, 32, 0)


@given(st.integers(0, 200), st.integers(0, 2**32))
def test_parse_write_round_trip_random(n, seed):
    s = random_stream(np.random.default_rng(seed), n)
    assert parse_events(write_events(s, "packed"), "packed") == s
    assert parse_events(write_events(s, "csv"), "csv") == s


def test_out_of_bounds_reports_offset():
    with pytest.raises(ParseError) as exc:
        parse_events(b"t,x,y,p\n1,2,2,0\n3,9,0,1\n", "csv", 4, 4)
    assert exc.value.offset == len(b"t,x,y,p\n1,2,2,0\n")


def test_malformed_csv_line():
    with pytest.raises(ParseError):
        parse_events(b"1,2,x,0\n", "csv", 4, 4)


def test_packed_truncated_and_bad_magic(rng):
    b = write_events(random_stream(rng, 5), "packed")
    with pytest.raises(ParseError):
        parse_events(b[:-3], "packed")
    with pytest.raises(ParseError):
        parse_events(b"XXXX" + b[4:], "packed")


def test_zero_geometry_is_config_error():
    with pytest.raises(ConfigError):
        parse_events(b"", "csv", 0, 10)
    with pytest.raises(ConfigError):
        parse_events(struct.pack("<4sHHQ", b"EVS1", 0, 8, 0), "packed")


# --------------------------------------------------------------------------- windows
def test_ten_second_stream_gives_39_windows():
    s = stream_from_times(np.arange(0, 10_000_001, 1000))
    clips = slice_windows(s, 500_000, 250_000)
    assert len(clips) == 39
    assert clips[0].t_start == 0 and clips[-1].t_start == 9_500_000
    assert all(c.t_end - c.t_start == 500_000 for c in clips)


def test_short_stream_has_no_windows():
    assert slice_windows(stream_from_times([0, 10, 400]), 500, 0) == []


def test_exact_span_zero_overlap_one_window():
    times = [0, 3, 7, 10]
    clips = slice_windows(stream_from_times(times), 10, 0)
    assert len(clips) == 1
    # half-open window: the event at exactly t0 + L is excluded
    assert list(clips[0].events["t"]) == [0, 3, 7]


def test_overlap_not_less_than_length():
    with pytest.raises(ConfigError):
        slice_windows(stream_from_times([0, 100]), 10, 10)


def test_window_count_matches_enumeration(rng):
    for _ in range(1000):
        L = int(rng.integers(1, 200))
        overlap = int(rng.integers(0, L))
        span = int(rng.integers(0, 2000))
        stride = L - overlap
        brute = sum(1 for s in range(0, span + 1, stride) if s + L <= span)
        assert window_count(span, L, overlap) == brute


@given(st.integers(0, 2**32), st.integers(1, 3000), st.integers(0, 2999))
def test_clip_contents_are_exact(seed, L, overlap):
    overlap = overlap % L
    s = random_stream(np.random.default_rng(seed), 300)
    for c in slice_windows(s, L, overlap, source_id=7):
        t = s.events["t"]
        expect = s.events[(t >= c.t_start) & (t < c.t_end)]
        assert np.array_equal(c.events, expect)
        assert c.source_id == 7


# --------------------------------------------------------------------------- normalize
def test_normalize_bounds():
    ev = np.zeros(3, dtype=EVENT_DTYPE)
    ev["t"] = [100, 150, 199]
    ev["x"] = [0, 31, 10]
    ev["y"] = [0, 15, 20]
    pts = normalize_window(WindowClip(100, 200, ev), 32, 24)
    assert pts[0, 2] == 0.0
    assert 0.98 < pts[2, 2] < 1.0
    assert pts[1, 0] == 1.0
    assert pts.shape == (3, 3)


def test_normalize_empty_clip():
    with pytest.raises(DegenerateInputError):
        normalize_window(WindowClip(0, 10, np.zeros(0, EVENT_DTYPE)), 8, 8)


@given(st.integers(0, 2**32))
def test_normalized_points_in_unit_cube(seed):
    s = random_stream(np.random.default_rng(seed), 400)
    for c in slice_windows(s, 2000, 500):
        if len(c):
            pts = normalize_window(c, s.width, s.height)
            assert pts.min() >= 0 and pts.max() <= 1


# --------------------------------------------------------------------------- denoise
def brute_denoise(events, r, dt, k):
    keep = []
    for i in range(len(events)):
        n = 0
        for j in range(len(events)):
            if i == j:
                continue
            if (abs(int(events["x"][i]) - int(events["x"][j])) <= r
                    and abs(int(events["y"][i]) - int(events["y"][j])) <= r
                    and abs(int(events["t"][i]) - int(events["t"][j])) <= dt):
                n += 1
        keep.append(n >= k)
    return events[np.array(keep, dtype=bool)]


def test_isolated_event_removed():
    s = EventStream.from_events(16, 16, [Event(0, 1, 1, 0), Event(100_000, 10, 10, 1)])
    assert len(denoise(s, 1, 1000, 1)) == 0


def test_dense_burst_kept():
    s = EventStream.from_events(16, 16, [Event(i, 5, 5, 0) for i in range(10)])
    assert len(denoise(s, 1, 1000, 3)) == 10


@pytest.mark.parametrize("k", [1, 2, 3])
def test_denoise_matches_brute_force(rng, k):
    s = random_stream(rng, 500, width=20, height=20, t_max=20_000)
    out = denoise(s, 2, 800, k)
    assert np.array_equal(out.events, brute_denoise(s.events, 2, 800, k))


@given(st.integers(0, 2**32), st.integers(1, 4))
def test_denoise_until_stable_is_idempotent(seed, k):
    s = random_stream(np.random.default_rng(seed), 200, width=16, height=16, t_max=5000)
    once = denoise(s, 1, 500, k, until_stable=True)
    assert denoise(once, 1, 500, k, until_stable=True) == once


@given(st.integers(0, 2**32))
def test_single_pass_idempotent_for_k1(seed):
    s = random_stream(np.random.default_rng(seed), 200, width=16, height=16, t_max=5000)
    once = denoise(s, 1, 500, 1)
    assert denoise(once, 1, 500, 1) == once
