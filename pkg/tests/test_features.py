import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from apforecast.features import (
    FEATURE_NAMES,
    ByteTertiles,
    CalendarConfig,
    FeatureError,
    FeatureMatrix,
    FeatureVector,
    build_feature_matrix,
    compute_tertiles,
    extract_features,
    scale_features,
    transform_load,
)
from apforecast.ingest import LoadSeries

MONDAY = 4 * 86400  # epoch + 4 days


def series_of(loads, users=None, origin=MONDAY, step=3600.0, ap_id="ap1"):
    loads = np.asarray(loads, dtype=float)
    if users is None:
        users = np.zeros(loads.size, dtype=int)
    return LoadSeries(ap_id=ap_id, origin=origin, step_w=step, load=loads, active_users=users)


DEFAULT_TERTILES = ByteTertiles(low=0.0, high=0.0)
CALENDAR = CalendarConfig()


class TestTransformLoad:
    def test_cube_root_exact_cubes(self):
        out = transform_load(series_of([0, 8, 27]))
        np.testing.assert_allclose(out.load, [0.0, 2.0, 3.0])

    def test_log1p_zero(self):
        out = transform_load(series_of([0]), method="log1p")
        assert out.load.tolist() == [0.0]

    def test_users_unchanged(self):
        s = series_of([1, 2, 3], users=[4, 5, 6])
        out = transform_load(s)
        np.testing.assert_array_equal(out.active_users, [4, 5, 6])

    @given(st.lists(st.floats(min_value=0, max_value=1e12), min_size=2, max_size=50))
    @settings(max_examples=50, deadline=None)
    def test_monotone(self, values):
        for method in ("cube_root", "log1p"):
            out = transform_load(series_of(values), method=method).load
            order = np.argsort(values, kind="stable")
            assert np.all(np.diff(out[order]) >= -1e-12)

    def test_unknown_method(self):
        with pytest.raises(FeatureError):
            transform_load(series_of([1.0]), method="sqrt")


class TestComputeTertiles:
    def test_hand_quantiles_of_three(self):
        # linear interpolation at positions q*(n-1): 1/3*2 = 0.667 -> 1.667; 2/3*2 -> 2.333
        t = compute_tertiles(np.array([1.0, 2.0, 3.0]))
        assert t.low == pytest.approx(5.0 / 3.0, abs=1e-12)
        assert t.high == pytest.approx(7.0 / 3.0, abs=1e-12)

    def test_constant_pool(self):
        t = compute_tertiles(np.array([5.0, 5.0, 5.0]))
        assert t.low == t.high == 5.0

    def test_hundred_point_pool(self):
        t = compute_tertiles(np.arange(100.0))
        assert t.low == pytest.approx(33.0)
        assert t.high == pytest.approx(66.0)

    def test_accepts_list_of_arrays(self):
        t = compute_tertiles([np.array([1.0]), np.array([2.0, 3.0])])
        assert t.low == pytest.approx(5.0 / 3.0)

    def test_empty_pool_rejected(self):
        with pytest.raises(FeatureError):
            compute_tertiles(np.array([]))


class TestExtractFeatures:
    def test_exactly_35_named_features(self):
        assert len(FEATURE_NAMES) == 35
        week = series_of(np.ones(7 * 24), users=np.full(7 * 24, 3))
        vec = extract_features(week, CALENDAR, DEFAULT_TERTILES)
        assert vec.values.shape == (35,)
        assert vec.names == FEATURE_NAMES
        # category totals: 3 global bytes + 2 global users + 24 temporal + 6 usage
        assert len([n for n in FEATURE_NAMES if n.startswith("bytes_") and "_week" not in n and n.count("_") == 1]) == 3

    def test_constant_full_week_series(self):
        c, u = 7.0, 3
        week = series_of(np.full(7 * 24, c), users=np.full(7 * 24, u))
        vec = extract_features(week, CALENDAR, DEFAULT_TERTILES)
        named = dict(zip(vec.names, vec.values))
        assert named["bytes_mean"] == pytest.approx(c)
        assert named["bytes_std"] == 0.0
        assert named["users_mean"] == pytest.approx(u)
        for period in ("morning", "afternoon", "night"):
            for day in ("weekday", "weekend"):
                assert named[f"bytes_{period}_{day}_std"] == 0.0
                assert named[f"bytes_{period}_{day}_mean"] == pytest.approx(c)
        assert named["peak_to_mean_ratio"] == pytest.approx(1.0)
        assert named["zero_window_fraction"] == 0.0
        assert vec.coverage.all()

    def test_night_only_series(self):
        hours = np.arange(7 * 24)
        hour_of_day = hours % 24
        loads = np.where((hour_of_day >= 18) | (hour_of_day < 6), 5.0, 0.0)
        vec = extract_features(series_of(loads), CALENDAR, DEFAULT_TERTILES)
        named = dict(zip(vec.names, vec.values))
        assert named["night_load_ratio"] == 1.0

    def test_empty_stratum_masked(self):
        # a single Monday-morning window covers only the (morning, weekday) stratum
        one = series_of([4.0], origin=MONDAY + 7 * 3600, step=3600.0)
        vec = extract_features(one, CALENDAR, DEFAULT_TERTILES)
        assert vec.coverage.tolist() == [True, False, False, False, False, False]
        named = dict(zip(vec.names, vec.values))
        assert named["bytes_afternoon_weekday_mean"] == 0.0
        assert named["bytes_night_weekend_std"] == 0.0

    def test_peak_hour_ties_to_earliest(self):
        loads = np.zeros(24)
        loads[3] = loads[9] = 10.0
        vec = extract_features(series_of(loads), CALENDAR, DEFAULT_TERTILES)
        named = dict(zip(vec.names, vec.values))
        assert named["peak_hour"] == pytest.approx(3 / 23)

    def test_weekend_ratio_zero_when_no_weekday_load(self):
        # Saturday-only series (origin Monday + 5 days)
        sat = series_of(np.full(24, 2.0), origin=MONDAY + 5 * 86400)
        vec = extract_features(sat, CALENDAR, DEFAULT_TERTILES)
        named = dict(zip(vec.names, vec.values))
        assert named["weekend_weekday_ratio"] == 0.0

    def test_low_byte_fraction_uses_tertile(self):
        vec = extract_features(
            series_of([1.0, 2.0, 3.0, 4.0]), CALENDAR, ByteTertiles(low=2.5, high=3.5)
        )
        named = dict(zip(vec.names, vec.values))
        assert named["low_byte_fraction"] == pytest.approx(0.5)

    def test_stratum_consistency(self):
        rng = np.random.default_rng(3)
        loads = rng.uniform(0, 100, 7 * 24)
        # weekday + weekend totals equal the global total (raw bookkeeping)
        hours = np.arange(7 * 24)
        weekend_mask = (hours // 24 % 7) >= 5  # origin is a Monday
        assert loads[weekend_mask].sum() + loads[~weekend_mask].sum() == pytest.approx(
            loads.sum(), rel=1e-9
        )

    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=30, deadline=None)
    def test_ratio_bounds(self, seed):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(1, 200))
        loads = rng.uniform(0, 1000, n) * (rng.uniform(size=n) > 0.3)
        tertiles = compute_tertiles(loads)
        vec = extract_features(series_of(loads), CALENDAR, tertiles)
        named = dict(zip(vec.names, vec.values))
        for name in ("night_load_ratio", "zero_window_fraction", "low_byte_fraction"):
            assert 0.0 <= named[name] <= 1.0
        assert np.all(np.isfinite(vec.values))


class TestScaleFeatures:
    def matrix_from_columns(self, columns):
        values = np.column_stack(columns)
        values = np.hstack([values, np.zeros((values.shape[0], 35 - values.shape[1]))])
        return FeatureMatrix(ap_ids=[f"ap{i}" for i in range(values.shape[0])], values=values)

    def test_hand_zscore(self):
        scaled, scaler = scale_features(self.matrix_from_columns([np.array([1.0, 3.0])]))
        np.testing.assert_allclose(scaled.values[:, 0], [-1.0, 1.0])
        assert scaler.mean[0] == 2.0
        assert scaler.std[0] == 1.0

    def test_constant_column_flagged_zero(self):
        scaled, scaler = scale_features(self.matrix_from_columns([np.array([5.0, 5.0, 5.0])]))
        assert scaler.zero_std[0]
        np.testing.assert_array_equal(scaled.values[:, 0], 0.0)

    def test_scaled_columns_standardised(self):
        rng = np.random.default_rng(0)
        values = rng.normal(3.0, 2.5, size=(40, 35))
        scaled, _ = scale_features(FeatureMatrix(ap_ids=[str(i) for i in range(40)], values=values))
        np.testing.assert_allclose(scaled.values.mean(axis=0), 0.0, atol=1e-9)
        np.testing.assert_allclose(scaled.values.std(axis=0), 1.0, atol=1e-9)

    def test_scale_invariance(self):
        rng = np.random.default_rng(1)
        values = rng.normal(0, 1, size=(20, 35))
        scaled_a, _ = scale_features(FeatureMatrix(ap_ids=[str(i) for i in range(20)], values=values))
        doubled = values.copy()
        doubled[:, 4] *= 1e6
        scaled_b, _ = scale_features(FeatureMatrix(ap_ids=[str(i) for i in range(20)], values=doubled))
        np.testing.assert_allclose(scaled_a.values, scaled_b.values, atol=1e-9)

    def test_fewer_than_two_rows_rejected(self):
        with pytest.raises(FeatureError):
            scale_features(self.matrix_from_columns([np.array([1.0])]))

    def test_accepts_vector_sequence(self):
        vectors = [
            FeatureVector(ap_id="a", values=np.arange(35.0)),
            FeatureVector(ap_id="b", values=np.arange(35.0) * 2),
        ]
        scaled, _ = scale_features(vectors)
        assert scaled.ap_ids == ["a", "b"]


class TestBuildFeatureMatrix:
    def test_names_stable_and_rows_match(self):
        rng = np.random.default_rng(2)
        series = [
            series_of(rng.uniform(0, 10, 7 * 24), users=rng.integers(0, 5, 7 * 24), ap_id=f"ap{i}")
            for i in range(4)
        ]
        tertiles = compute_tertiles([s.load for s in series])
        matrix = build_feature_matrix(series, CALENDAR, tertiles)
        assert matrix.ap_ids == [f"ap{i}" for i in range(4)]
        assert matrix.values.shape == (4, 35)
        assert matrix.names == FEATURE_NAMES
