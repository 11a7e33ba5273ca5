import numpy as np
import pytest

from arousal_forge.trace import (
    ArousalTrace,
    dtw_distance,
    filter_outliers,
    median_trace,
    normalize_minmax,
    resample_zoh,
    trace_mean,
)

from _oracles import dtw_bruteforce


class TestNormalize:
    def test_simple_ramp(self):
        assert np.allclose(normalize_minmax([2, 4, 6]), [0, 0.5, 1])

    def test_constant_maps_to_half(self):
        assert np.allclose(normalize_minmax([7, 7, 7]), [0.5, 0.5, 0.5])

    def test_negative_values(self):
        assert np.allclose(normalize_minmax([-1, 0, 3]), [0, 0.25, 1])

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            normalize_minmax([])

    def test_nonconstant_attains_both_bounds(self, rng):
        for _ in range(50):
            raw = rng.standard_normal(rng.integers(2, 40)) * rng.uniform(0.1, 50)
            if raw.max() == raw.min():
                continue
            out = normalize_minmax(raw)
            assert out.min() == 0.0 and out.max() == 1.0


class TestResampleZoh:
    def test_hold_last_boundary(self):
        samples = np.array([[0.0, 0.2], [0.25, 0.6]])
        values = resample_zoh(samples, 15, 30.0)
        assert np.all(values[:8] == 0.2)   # frames 0..7 are before 0.25 s
        assert np.all(values[8:] == 0.6)

    def test_single_sample_everywhere(self):
        values = resample_zoh(np.array([[0.0, 0.3]]), 10, 30.0)
        assert np.all(values == 0.3)

    def test_samples_at_frame_times_preserved(self):
        fps = 30.0
        samples = np.array([[k / fps, float(k)] for k in range(0, 12, 3)])
        values = resample_zoh(samples, 12, fps)
        for k in range(0, 12, 3):
            assert values[k] == float(k)

    def test_frames_before_first_sample(self):
        values = resample_zoh(np.array([[0.5, 0.9]]), 30, 30.0)
        assert np.all(values == 0.9)

    def test_constant_samples_give_constant_trace(self, rng):
        times = np.cumsum(rng.uniform(0.1, 0.5, size=10))
        samples = np.column_stack([times, np.full(10, 0.4)])
        assert np.all(resample_zoh(samples, 50, 30.0) == 0.4)

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            resample_zoh(np.empty((0, 2)), 5, 30.0)


class TestDtw:
    def test_self_distance_zero(self, rng):
        for _ in range(10):
            x = rng.random(rng.integers(1, 20))
            assert dtw_distance(x, x) == 0.0

    def test_hand_computed_tables(self):
        assert dtw_distance([0, 0, 1], [0, 1]) == 0.0
        assert dtw_distance([0, 1], [1, 0]) == 2.0

    def test_symmetry_and_nonnegativity(self, rng):
        for _ in range(25):
            a = rng.random(rng.integers(1, 12))
            b = rng.random(rng.integers(1, 12))
            d = dtw_distance(a, b)
            assert d >= 0
            assert d == pytest.approx(dtw_distance(b, a), abs=1e-12)

    def test_matches_bruteforce_on_random_short_sequences(self, rng):
        for _ in range(150):
            a = rng.choice([0.0, 0.5, 1.0], size=rng.integers(1, 5))
            b = rng.choice([0.0, 0.5, 1.0], size=rng.integers(1, 5))
            assert dtw_distance(a, b) == dtw_bruteforce(a, b)

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            dtw_distance([], [1.0])


class TestMedianTrace:
    def test_identical_traces(self):
        t = [np.array([0.0, 1.0])] * 3
        assert np.array_equal(median_trace(t), [0.0, 1.0])

    def test_two_traces_average(self):
        assert np.allclose(median_trace([np.zeros(2), np.ones(2)]), [0.5, 0.5])

    def test_common_prefix_length(self):
        traces = [np.zeros(4), np.zeros(5), np.zeros(6)]
        assert len(median_trace(traces)) == 4

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            median_trace([])


class TestFilterOutliers:
    def test_identical_traces_all_kept(self):
        traces = [np.linspace(0, 1, 20)] * 4
        kept, distances = filter_outliers(["a", "b", "c", "d"], traces, 0.01)
        assert kept == ["a", "b", "c", "d"]
        assert np.all(distances == 0)

    def test_far_trace_dropped(self):
        base = np.linspace(0, 1, 40)
        off = np.clip(base + 0.4, 0, 1)
        kept, distances = filter_outliers(["a", "b", "c"], [base, base, off], 0.2)
        assert kept == ["a", "b"]
        assert distances[2] > 0.2

    def test_retained_set_monotone_in_threshold(self, rng):
        traces = [normalize_minmax(np.cumsum(rng.standard_normal(30))) for _ in range(8)]
        items = list(range(8))
        previous = set()
        for threshold in [0.05, 0.2, 0.8, 3.0, 50.0]:
            kept, _ = filter_outliers(items, traces, threshold)
            assert previous <= set(kept)
            previous = set(kept)

    def test_threshold_must_be_positive(self):
        with pytest.raises(ValueError):
            filter_outliers(["a"], [np.zeros(3)], 0.0)


class TestTraceMean:
    def test_examples(self):
        assert trace_mean(np.array([0.0, 1.0])) == 0.5
        assert trace_mean(np.full(7, 0.5)) == 0.5
        assert trace_mean(np.array([0.0, 0.25, 0.5, 1.0])) == 0.4375

    def test_accepts_trace_object(self):
        t = ArousalTrace(values=np.array([0.2, 0.4]), session_id="x")
        assert trace_mean(t) == pytest.approx(0.3)


class TestArousalTrace:
    def test_rejects_out_of_range(self):
        with pytest.raises(ValueError):
            ArousalTrace(values=np.array([0.0, 1.2]), session_id="x")

    def test_rejects_empty(self):
        with pytest.raises(ValueError):
            ArousalTrace(values=np.array([]), session_id="x")
