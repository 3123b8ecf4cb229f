import io

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from apforecast import ingest
from apforecast.ingest import (
    Archetype,
    AssociationRecord,
    IngestError,
    SchemaError,
    SyntheticConfig,
    derive_load_series,
    generate_synthetic,
    parse_records,
    summarize,
)


def make_csv(rows, header="ap_id,client_id,start_time,end_time,bytes_up,bytes_down"):
    return io.StringIO(header + "\n" + "\n".join(rows) + ("\n" if rows else ""))


class TestParseRecords:
    def test_direct_field_mapping(self):
        result = parse_records(make_csv(["ap1,cl1,1000,2800,600,0"]))
        assert result.error_count == 0
        assert result.records == [AssociationRecord("ap1", "cl1", 1000.0, 2800.0, 600, 0)]

    def test_header_only_file(self):
        result = parse_records(make_csv([]))
        assert result.records == []
        assert result.error_count == 0

    def test_end_before_start_is_row_error(self):
        result = parse_records(make_csv(["ap1,cl1,2800,1000,600,0"]))
        assert result.records == []
        assert result.error_count == 1
        assert result.errors[0][0] == 2  # line number after header

    def test_negative_bytes_is_row_error(self):
        result = parse_records(make_csv(["ap1,cl1,0,10,-5,0"]))
        assert result.error_count == 1

    def test_unparseable_timestamp_skipped(self):
        result = parse_records(make_csv(["ap1,cl1,notatime,10,1,1", "ap2,cl2,0,10,1,1"]))
        assert result.error_count == 1
        assert [r.ap_id for r in result.records] == ["ap2"]

    def test_iso8601_timestamps(self):
        rows = ["ap1,cl1,1970-01-01T00:00:00Z,1970-01-01T01:00:00Z,10,20"]
        result = parse_records(make_csv(rows))
        assert result.records[0].start_time == 0.0
        assert result.records[0].end_time == 3600.0

    def test_missing_column_is_schema_error(self):
        bad = io.StringIO("ap_id,client_id,start_time,end_time,bytes_up\nap1,cl1,0,1,2\n")
        with pytest.raises(SchemaError):
            parse_records(bad)

    def test_schema_renames_columns(self):
        source = io.StringIO("ap,mac,t0,t1,up,down\nap9,cl9,5,10,1,2\n")
        schema = {
            "ap_id": "ap",
            "client_id": "mac",
            "start_time": "t0",
            "end_time": "t1",
            "bytes_up": "up",
            "bytes_down": "down",
        }
        result = parse_records(source, schema)
        assert result.records[0].ap_id == "ap9"
        assert result.records[0].total_bytes() == 3


class TestDeriveLoadSeries:
    def test_equal_spreading_over_three_windows(self):
        # 600 bytes over 30 min at w=10 min: three windows x 200 bytes
        rec = AssociationRecord("ap1", "cl1", 0, 1800, 600, 0)
        (series,) = derive_load_series([rec], 600, (0, 1800))
        assert series.load.tolist() == [200.0, 200.0, 200.0]
        assert series.active_users.tolist() == [1, 1, 1]

    def test_short_session_lands_in_single_window(self):
        # duration 5 min < w=10 min: n_steps = max(1, ceil(0.5)) = 1
        rec = AssociationRecord("ap1", "cl1", 0, 300, 600, 0)
        (series,) = derive_load_series([rec], 600, (0, 1200))
        assert series.load.tolist() == [600.0, 0.0]

    def test_zero_bytes_still_counts_presence(self):
        rec = AssociationRecord("ap1", "cl1", 0, 1200, 0, 0)
        (series,) = derive_load_series([rec], 600, (0, 1200))
        assert series.load.tolist() == [0.0, 0.0]
        assert series.active_users.tolist() == [1, 1]

    def test_zero_duration_occupies_start_window(self):
        rec = AssociationRecord("ap1", "cl1", 650, 650, 100, 0)
        (series,) = derive_load_series([rec], 600, (0, 1800))
        assert series.load.tolist() == [0.0, 100.0, 0.0]
        assert series.active_users.tolist() == [0, 1, 0]

    def test_record_outside_span_ignored(self):
        rec = AssociationRecord("ap1", "cl1", 5000, 6000, 100, 0)
        assert derive_load_series([rec], 600, (0, 1200)) == []

    def test_straddling_record_prorated(self):
        # half the 20-minute session falls before the span: half the bytes survive
        rec = AssociationRecord("ap1", "cl1", -600, 600, 400, 0)
        (series,) = derive_load_series([rec], 600, (0, 1200))
        assert series.load.sum() == pytest.approx(200.0)

    def test_distinct_clients_counted_once_per_window(self):
        records = [
            AssociationRecord("ap1", "cl1", 0, 600, 10, 0),
            AssociationRecord("ap1", "cl1", 0, 600, 10, 0),  # same client twice
            AssociationRecord("ap1", "cl2", 0, 600, 10, 0),
        ]
        (series,) = derive_load_series([records[0], records[1], records[2]], 600, (0, 600))
        assert series.active_users.tolist() == [2]

    def test_uplink_downlink_channels(self):
        rec = AssociationRecord("ap1", "cl1", 0, 600, 100, 300)
        (total,) = derive_load_series([rec], 600, (0, 600))
        (up,) = derive_load_series([rec], 600, (0, 600), channel="up")
        (down,) = derive_load_series([rec], 600, (0, 600), channel="down")
        assert total.load[0] == 400.0
        assert up.load[0] == 100.0
        assert down.load[0] == 300.0

    def test_alignment_across_aps(self):
        records = [
            AssociationRecord("ap1", "cl1", 0, 600, 10, 0),
            AssociationRecord("ap2", "cl2", 3000, 3600, 10, 0),
        ]
        series = derive_load_series(records, 600, (0, 3600))
        assert [s.ap_id for s in series] == ["ap1", "ap2"]
        assert all(len(s) == 6 and s.origin == 0 and s.step_w == 600 for s in series)

    def test_invalid_args_rejected(self):
        with pytest.raises(IngestError):
            derive_load_series([], 0, (0, 10))
        with pytest.raises(IngestError):
            derive_load_series([], 10, (10, 10))


record_strategy = st.tuples(
    st.sampled_from(["ap1", "ap2", "ap3"]),
    st.sampled_from(["c1", "c2", "c3", "c4"]),
    st.integers(min_value=0, max_value=5000),
    st.integers(min_value=0, max_value=4000),
    st.integers(min_value=0, max_value=10**9),
    st.integers(min_value=0, max_value=10**9),
).map(
    lambda t: AssociationRecord(t[0], t[1], float(t[2]), float(t[2] + t[3]), t[4], t[5])
)


class TestConservation:
    @given(st.lists(record_strategy, min_size=1, max_size=30))
    @settings(max_examples=60, deadline=None)
    def test_bytes_conserved_within_span(self, records):
        # span covers every record, so no proration anywhere
        span = (0.0, 10000.0)
        series = derive_load_series(records, 600, span)
        total = sum(s.load.sum() for s in series)
        expected = sum(r.total_bytes() for r in records)
        assert total == pytest.approx(expected, rel=1e-6)

    @given(st.lists(record_strategy, min_size=2, max_size=20), st.integers(0, 2**31))
    @settings(max_examples=30, deadline=None)
    def test_load_composition_over_arbitrary_split(self, records, seed):
        span = (0.0, 10000.0)
        rng = np.random.default_rng(seed)
        mask = rng.integers(0, 2, len(records)).astype(bool)
        first = [r for r, m in zip(records, mask) if m]
        second = [r for r, m in zip(records, mask) if not m]

        merged: dict[str, np.ndarray] = {}
        for batch in (first, second):
            for s in derive_load_series(batch, 600, span):
                if s.ap_id in merged:
                    merged[s.ap_id] = merged[s.ap_id] + s.load
                else:
                    merged[s.ap_id] = s.load
        single = {s.ap_id: s.load for s in derive_load_series(records, 600, span)}
        assert set(merged) == set(single)
        for ap_id in single:
            np.testing.assert_allclose(merged[ap_id], single[ap_id], rtol=1e-9, atol=1e-9)

    def test_full_composition_for_client_disjoint_batches(self):
        span = (0.0, 3600.0)
        first = [AssociationRecord("ap1", "c1", 0, 1200, 100, 0)]
        second = [AssociationRecord("ap1", "c2", 600, 1800, 50, 0)]
        merged_series = derive_load_series(first, 600, span) + derive_load_series(second, 600, span)
        load = sum(s.load for s in merged_series)
        users = sum(s.active_users for s in merged_series)
        (single,) = derive_load_series(first + second, 600, span)
        np.testing.assert_allclose(load, single.load)
        np.testing.assert_array_equal(users, single.active_users)


class TestSummarize:
    def test_counting(self):
        records = [
            AssociationRecord(f"ap{i % 2}", f"c{i}", i * 3600, (i + 1) * 3600, 10, 0) for i in range(10)
        ]
        series = derive_load_series(records, 3600, (0, 2 * 86400))
        summary = summarize(records, series)
        assert summary.ap_count == 2
        assert summary.record_count == 10
        assert summary.span_days == 2
        assert summary.window_count == 48

    def test_empty_input(self):
        summary = summarize([], [])
        assert (summary.ap_count, summary.record_count, summary.window_count) == (0, 0, 0)

    def test_single_record(self):
        records = [AssociationRecord("ap1", "c1", 0, 600, 10, 0)]
        series = derive_load_series(records, 600, (0, 600))
        assert summarize(records, series).ap_count == 1


class TestGenerateSynthetic:
    def base_config(self, **kwargs):
        archetypes = kwargs.pop(
            "archetypes",
            (
                Archetype("a", 20, 1e6, 0.5, 0.4, 0.1),
                Archetype("b", 20, 1e4, 0.2, 0.0, 0.05),
                Archetype("c", 20, 5e2, 0.1, 0.8, 0.02),
            ),
        )
        return SyntheticConfig(archetypes=archetypes, **kwargs)

    def test_counts_and_labels(self):
        series, labels = generate_synthetic(self.base_config(), seed=7)
        assert len(series) == 60
        assert len(labels) == 60
        assert sorted(set(labels.values())) == ["a", "b", "c"]

    def test_no_noise_no_amplitude_is_constant(self):
        config = SyntheticConfig(
            archetypes=(Archetype("flat", 2, 500.0, 0.0, 0.0, 0.0),), days=2
        )
        series, _ = generate_synthetic(config, seed=1)
        for s in series:
            np.testing.assert_allclose(s.load, 500.0)

    def test_determinism(self):
        config = self.base_config()
        first, labels_a = generate_synthetic(config, seed=42)
        second, labels_b = generate_synthetic(config, seed=42)
        assert labels_a == labels_b
        for a, b in zip(first, second):
            np.testing.assert_array_equal(a.load, b.load)
            np.testing.assert_array_equal(a.active_users, b.active_users)

    def test_different_seeds_differ(self):
        config = self.base_config()
        first, _ = generate_synthetic(config, seed=1)
        second, _ = generate_synthetic(config, seed=2)
        assert not np.array_equal(first[0].load, second[0].load)

    def test_nonpositive_count_rejected(self):
        with pytest.raises(IngestError):
            Archetype("bad", 0, 1.0, 0.0, 0.0, 0.0)


class TestSeriesCsvRoundTrip:
    def test_round_trip(self, tmp_path):
        config = SyntheticConfig(archetypes=(Archetype("a", 3, 1e5, 0.4, 0.3, 0.1),), days=2)
        series, _ = generate_synthetic(config, seed=5)
        path = tmp_path / "series.csv"
        ingest.write_series_csv(series, str(path))
        loaded = ingest.read_series_csv(str(path), origin=series[0].origin, step_w=series[0].step_w)
        assert [s.ap_id for s in loaded] == [s.ap_id for s in series]
        for a, b in zip(loaded, series):
            np.testing.assert_array_equal(a.load, b.load)
            np.testing.assert_array_equal(a.active_users, b.active_users)
