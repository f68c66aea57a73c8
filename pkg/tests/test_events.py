import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from evkit.events import (EventStream, diff_map, make_variant, polarity_image,
                          segment_stream, take_fixed_events, voxelize)
from evkit.events import GrayFrame
from evkit.evt_io import EvtFormatError, read_evt, write_evt

from conftest import make_stream


def empty_stream(width=32, height=32, t_end=1000):
    return EventStream(width, height, 0, t_end)


class TestSegmentStream:
    def test_empty_stream_gives_empty_segments(self):
        segs = segment_stream(empty_stream(), [0, 400, 1000])
        assert [len(s) for s in segs] == [0, 0]

    def test_uniform_split(self):
        t = np.arange(10, dtype=np.uint64)
        s = EventStream(4, 4, 0, 10, t,
                        np.zeros(10, np.uint16), np.zeros(10, np.uint16),
                        np.ones(10, np.int8))
        segs = segment_stream(s, [0, 5, 10])
        assert [len(x) for x in segs] == [5, 5]
        assert segs[0].t_start == 0 and segs[0].t_end == 5

    def test_counts_match_brute_force(self):
        s = make_stream(n=2000, t_end=90_000, seed=3)
        bounds = [0, 10_000, 35_000, 60_000, 90_000]
        segs = segment_stream(s, bounds)
        t = s.t.astype(np.int64)
        for i, seg in enumerate(segs):
            lo, hi = bounds[i], bounds[i + 1]
            if i == len(segs) - 1:
                expected = int(np.count_nonzero((t >= lo) & (t <= hi)))
            else:
                expected = int(np.count_nonzero((t >= lo) & (t < hi)))
            assert len(seg) == expected
        assert sum(len(seg) for seg in segs) == len(s)

    def test_unsorted_boundaries_rejected(self):
        with pytest.raises(ValueError):
            segment_stream(empty_stream(), [0, 500, 400])

    def test_out_of_range_boundaries_rejected(self):
        with pytest.raises(ValueError):
            segment_stream(empty_stream(t_end=100), [0, 50, 200])

    @settings(max_examples=40, deadline=None)
    @given(seed=st.integers(0, 10_000), n=st.integers(0, 300))
    def test_partition_preserves_event_multiset(self, seed, n):
        s = make_stream(n=n, t_end=50_000, seed=seed)
        segs = segment_stream(s, [0, 12_345, 30_000, 50_000])
        merged = np.concatenate([
            np.stack([seg.t, seg.x.astype(np.uint64),
                      seg.y.astype(np.uint64),
                      seg.p.astype(np.int64).astype(np.uint64)], axis=1)
            for seg in segs]) if n else np.empty((0, 4))
        original = np.stack([s.t, s.x.astype(np.uint64),
                             s.y.astype(np.uint64),
                             s.p.astype(np.int64).astype(np.uint64)], axis=1) \
            if n else np.empty((0, 4))
        key = lambda m: sorted(map(tuple, m.tolist()))
        assert key(merged) == key(original)


class TestVoxelize:
    def test_empty_segment_zero_voxel(self):
        v = voxelize(empty_stream(), bins=5)
        assert v.data.shape == (32, 32, 5)
        assert not v.data.any()

    def test_single_event_midway_lands_in_second_bin(self):
        s = EventStream(4, 4, 0, 1000, [500], [2], [1], [1])
        v = voxelize(s, bins=2)
        assert v.data[1, 2, 1] == 1.0
        assert v.data.sum() == 1.0

    def test_final_timestamp_clamped_into_last_bin(self):
        s = EventStream(4, 4, 0, 1000, [1000], [0], [0], [-1])
        v = voxelize(s, bins=4)
        assert v.data[0, 0, 3] == -1.0

    def test_random_events_match_brute_force_tally(self):
        s = make_stream(n=1000, width=16, height=12, t_end=80_000, seed=9)
        bins = 5
        v = voxelize(s, bins)
        expected = np.zeros((12, 16, bins))
        dur = s.t_end - s.t_start
        for t, x, y, p in zip(s.t, s.x, s.y, s.p):
            k = min(bins * (int(t) - s.t_start) // dur, bins - 1)
            expected[int(y), int(x), k] += int(p)
        assert np.array_equal(v.data, expected)

    def test_zero_bins_rejected(self):
        with pytest.raises(ValueError):
            voxelize(empty_stream(), bins=0)

    @settings(max_examples=40, deadline=None)
    @given(seed=st.integers(0, 10_000), n=st.integers(0, 500),
           bins=st.integers(1, 8))
    def test_conservation(self, seed, n, bins):
        s = make_stream(n=n, t_end=40_000, seed=seed)
        v = voxelize(s, bins)
        assert v.data.sum() == float(s.p.astype(np.int64).sum())


class TestDiffMap:
    def test_identical_frames_zero(self):
        f = GrayFrame.from_array(np.full((8, 8), 77.0))
        assert not diff_map(f, f).data.any()

    def test_full_range(self):
        a = GrayFrame.from_array(np.zeros((4, 4)))
        b = GrayFrame.from_array(np.full((4, 4), 255.0))
        assert np.array_equal(diff_map(a, b).data, np.full((4, 4), 255.0))

    def test_translated_pattern_matches_elementwise_oracle(self):
        rng = np.random.default_rng(4)
        base = rng.uniform(0, 255, (10, 12))
        shifted = np.roll(base, 2, axis=1)
        a, b = GrayFrame.from_array(base), GrayFrame.from_array(shifted)
        assert np.array_equal(diff_map(a, b).data, shifted - base)

    def test_dimension_mismatch_rejected(self):
        a = GrayFrame.from_array(np.zeros((4, 4)))
        b = GrayFrame.from_array(np.zeros((4, 5)))
        with pytest.raises(ValueError):
            diff_map(a, b)

    @settings(max_examples=30, deadline=None)
    @given(seed=st.integers(0, 1000))
    def test_antisymmetry(self, seed):
        rng = np.random.default_rng(seed)
        a = GrayFrame.from_array(rng.uniform(0, 255, (6, 6)))
        b = GrayFrame.from_array(rng.uniform(0, 255, (6, 6)))
        assert np.array_equal(diff_map(a, b).data, -diff_map(b, a).data)


class TestPolarityImage:
    def test_zero_voxel(self):
        v = voxelize(empty_stream(), 3)
        assert not polarity_image(v).data.any()

    def test_opposite_polarities_cancel(self):
        s = EventStream(4, 4, 0, 1000, [100, 900], [1, 1], [2, 2], [1, -1])
        img = polarity_image(voxelize(s, 4))
        assert img.data[2, 1] == 0.0

    def test_matches_brute_force_bin_sum(self):
        s = make_stream(n=400, width=8, height=8, seed=11)
        v = voxelize(s, 6)
        expected = np.zeros((8, 8))
        for yy in range(8):
            for xx in range(8):
                expected[yy, xx] = sum(v.data[yy, xx, k] for k in range(6))
        assert np.allclose(polarity_image(v).data, expected)


class TestTakeFixedEvents:
    def test_zero_keeps_nothing(self):
        s = make_stream(n=50)
        assert len(take_fixed_events(s, 0)) == 0

    def test_prefix_of_hundred(self):
        s = make_stream(n=100, seed=2)
        out = take_fixed_events(s, 30)
        assert len(out) == 30
        assert np.array_equal(out.t, s.t[:30])

    def test_large_stream_prefix_oracle(self):
        s = make_stream(n=30_000, width=128, height=128, t_end=400_000, seed=8)
        out = take_fixed_events(s, 15_000)
        assert len(out) == 15_000
        assert int(out.t.max()) <= int(s.t.max())
        assert np.array_equal(out.t, np.sort(s.t)[:15_000])

    def test_short_stream_passes_through(self):
        s = make_stream(n=10)
        assert take_fixed_events(s, 50) is s


def replay_noise_oracle(stream, noise_frac, seed):
    """Independent replay of the documented modification-log draw order."""
    rng = np.random.default_rng(seed)
    m = int(np.floor(noise_frac * len(stream) + 0.5))
    events = [list(e) for e in zip(stream.t.tolist(), stream.x.tolist(),
                                   stream.y.tolist(), stream.p.tolist())]
    deletions = insertions = 0
    for _ in range(m):
        if int(rng.integers(0, 2)) == 0 and events:
            del events[int(rng.integers(0, len(events)))]
            deletions += 1
        else:
            events.append([
                int(rng.integers(stream.t_start, stream.t_end + 1)),
                int(rng.integers(0, stream.width)),
                int(rng.integers(0, stream.height)),
                1 if int(rng.integers(0, 2)) else -1,
            ])
            insertions += 1
    events.sort(key=lambda e: e[0])
    return events, m, deletions, insertions


class TestMakeVariant:
    def test_zero_noise_frac_is_identity(self):
        s = make_stream(n=500, seed=5)
        out = make_variant(s, "noise", noise_frac=0.0, seed=3)
        assert np.array_equal(out.t, s.t)
        assert np.array_equal(out.x, s.x)
        assert np.array_equal(out.y, s.y)
        assert np.array_equal(out.p, s.p)

    def test_sparse_keeps_four_fifths(self):
        s = make_stream(n=1000, seed=6)
        assert len(make_variant(s, "sparse", seed=1)) == 800

    def test_sparse_ceiling(self):
        s = make_stream(n=999, seed=6)
        assert len(make_variant(s, "sparse", seed=1)) == 800  # ceil(4*999/5)

    def test_noise_count_and_replay_oracle(self):
        s = make_stream(n=10_000, width=100, height=80, t_end=500_000, seed=7)
        out = make_variant(s, "noise", noise_frac=0.01, seed=42)
        expected, m, dels, ins = replay_noise_oracle(s, 0.01, 42)
        assert m == 100
        assert len(out) == 10_000 - dels + ins
        assert 9_900 <= len(out) <= 10_100
        got = list(zip(out.t.tolist(), out.x.tolist(), out.y.tolist(),
                       out.p.tolist()))
        assert got == [tuple(e) for e in expected]

    def test_sparse_noise_composes(self):
        s = make_stream(n=1000, seed=12)
        out = make_variant(s, "sparse_noise", noise_frac=0.01, seed=9)
        # noise modifications are measured against the sparse count
        assert abs(len(out) - 800) <= 8

    def test_determinism(self):
        s = make_stream(n=2000, seed=13)
        a = make_variant(s, "sparse_noise", noise_frac=0.005, seed=77)
        b = make_variant(s, "sparse_noise", noise_frac=0.005, seed=77)
        assert a.t.tobytes() == b.t.tobytes()
        assert a.x.tobytes() == b.x.tobytes()
        assert a.y.tobytes() == b.y.tobytes()
        assert a.p.tobytes() == b.p.tobytes()

    def test_bad_kind_rejected(self):
        with pytest.raises(ValueError):
            make_variant(make_stream(), "shuffle")

    def test_noise_frac_out_of_range_rejected(self):
        with pytest.raises(ValueError):
            make_variant(make_stream(), "noise", noise_frac=0.02)


class TestEvt0Format:
    def test_round_trip(self, tmp_path):
        s = make_stream(n=1234, width=200, height=150, seed=21)
        path = tmp_path / "events.evt"
        write_evt(path, s, generator_config={"kind": "test"})
        back = read_evt(path)
        assert (back.width, back.height) == (200, 150)
        assert (back.t_start, back.t_end) == (s.t_start, s.t_end)
        for field in ("t", "x", "y", "p"):
            assert np.array_equal(getattr(back, field), getattr(s, field))

    def test_sidecar_written(self, tmp_path):
        path = tmp_path / "events.evt"
        write_evt(path, make_stream(n=5), generator_config={"a": 1})
        sidecar = tmp_path / "events.evt.meta.json"
        assert sidecar.exists()
        assert "config_hash" in sidecar.read_text()

    def test_empty_stream_round_trip(self, tmp_path):
        path = tmp_path / "empty.evt"
        write_evt(path, empty_stream())
        assert len(read_evt(path)) == 0

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "bad.evt"
        write_evt(path, make_stream(n=3))
        raw = bytearray(path.read_bytes())
        raw[:4] = b"NOPE"
        path.write_bytes(bytes(raw))
        with pytest.raises(EvtFormatError):
            read_evt(path)

    def test_truncated_payload_rejected(self, tmp_path):
        path = tmp_path / "short.evt"
        write_evt(path, make_stream(n=10))
        raw = path.read_bytes()
        path.write_bytes(raw[:-7])
        with pytest.raises(EvtFormatError):
            read_evt(path)
