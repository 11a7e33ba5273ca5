import dataclasses
import json

import numpy as np
import pytest
import scipy.stats

from arousal_forge.experiment import (
    EarlyStopper,
    ExperimentConfig,
    baseline_accuracy,
    dataset_size_table,
    kendall_tau,
    lovo_splits,
    prepare_sessions,
    run_experiment,
    segment_dataset,
    stack_labeled,
    stack_pairs,
    sweep,
    train_with_early_stopping,
)
from arousal_forge.synth import SynthConfig, generate_session

from _oracles import kendall_tau_pairs

FAST = dict(window_s=0.5, epsilon=0.1, max_epochs=4, patience=2, batch_size=32,
            val_videos=2, learning_rate=1e-3)


def fast_config(**overrides):
    return ExperimentConfig(**{**FAST, **overrides})


class TestLovoSplits:
    def test_fold_structure(self):
        ids = [f"v{i:02d}" for i in range(37)]
        splits = lovo_splits(ids, val_videos=4, seed=3)
        assert len(splits) == 37
        for split in splits:
            assert len(split.train_ids) == 32
            assert len(split.val_ids) == 4
            assert set(split.train_ids) | set(split.val_ids) | {split.test_id} == set(ids)
            assert not set(split.train_ids) & set(split.val_ids)
            assert split.test_id not in split.train_ids + split.val_ids

    def test_every_session_tests_exactly_once(self):
        ids = ["a", "b", "c", "d", "e", "f", "g"]
        splits = lovo_splits(ids, val_videos=2, seed=0)
        assert [s.test_id for s in splits] == ids

    def test_same_seed_same_splits(self):
        ids = [f"v{i}" for i in range(9)]
        a = lovo_splits(ids, val_videos=3, seed=7)
        b = lovo_splits(ids, val_videos=3, seed=7)
        assert [(s.train_ids, s.val_ids, s.test_id) for s in a] == \
               [(s.train_ids, s.val_ids, s.test_id) for s in b]

    def test_different_seed_differs(self):
        ids = [f"v{i}" for i in range(12)]
        a = lovo_splits(ids, val_videos=4, seed=1)
        b = lovo_splits(ids, val_videos=4, seed=2)
        assert any(sa.val_ids != sb.val_ids for sa, sb in zip(a, b))

    def test_too_few_sessions_rejected(self):
        with pytest.raises(ValueError):
            lovo_splits(["a", "b", "c", "d", "e"], val_videos=4)


class TestEarlyStopper:
    def test_frozen_metric_stops_after_patience(self):
        stopper = EarlyStopper(patience=30)
        stopped_at = None
        for epoch in range(1, 100):
            if stopper.observe(epoch, 0.5):
                stopped_at = epoch
                break
        assert stopped_at == 31

    def test_monotone_improvement_never_stops(self):
        stopper = EarlyStopper(patience=5)
        assert not any(stopper.observe(e, e * 0.01) for e in range(1, 301))

    def test_stops_patience_epochs_after_last_improvement(self):
        stopper = EarlyStopper(patience=4)
        metrics = {1: 0.5, 2: 0.6, 3: 0.6, 4: 0.7}  # last improvement at epoch 4
        stopped_at = None
        for epoch in range(1, 50):
            if stopper.observe(epoch, metrics.get(epoch, 0.7)):
                stopped_at = epoch
                break
        assert stopped_at == 8

    def test_equal_metric_is_not_improvement(self):
        stopper = EarlyStopper(patience=2)
        assert not stopper.observe(1, 0.8)
        assert not stopper.observe(2, 0.8)
        assert stopper.observe(3, 0.8)


class TestBaseline:
    def test_majority_frequency_in_test(self):
        train = np.array([1] * 6 + [0] * 4)
        test = np.array([1] * 7 + [0] * 3)
        assert baseline_accuracy(train, test) == pytest.approx(0.7)

    def test_tie_breaks_to_class_zero(self):
        train = np.array([0, 1, 0, 1])
        test = np.array([0, 0, 1])
        assert baseline_accuracy(train, test) == pytest.approx(2 / 3)

    def test_empty_train_rejected(self):
        with pytest.raises(ValueError):
            baseline_accuracy(np.array([]), np.array([1]))


class TestKendallTau:
    def test_identical_orders(self):
        assert kendall_tau([1, 2, 3, 4], [10, 20, 30, 40]) == pytest.approx(1.0)

    def test_reversed_orders(self):
        assert kendall_tau([1, 2, 3, 4], [4, 3, 2, 1]) == pytest.approx(-1.0)

    def test_one_swap(self):
        # predicted order 1,3,2,4: one discordant pair out of six
        assert kendall_tau([1, 2, 3, 4], [1, 3, 2, 4]) == pytest.approx(4 / 6)

    def test_all_tied_is_undefined(self):
        assert kendall_tau([1, 1, 1], [1, 2, 3]) is None
        assert kendall_tau([1, 2, 3], [2, 2, 2]) is None

    def test_too_short_rejected(self):
        with pytest.raises(ValueError):
            kendall_tau([1.0], [1.0])

    def test_matches_pair_counting_oracle(self, rng):
        for _ in range(100):
            n = int(rng.integers(2, 51))
            x = rng.standard_normal(n)
            y = rng.standard_normal(n)
            if rng.random() < 0.5:  # inject ties
                x = np.round(x, 1)
                y = np.round(y, 1)
            ours = kendall_tau(x, y)
            oracle = kendall_tau_pairs(x, y)
            if oracle is None:
                assert ours is None
            else:
                assert ours == oracle

    def test_matches_scipy_tau_b(self, rng):
        for _ in range(40):
            n = int(rng.integers(3, 40))
            x = np.round(rng.standard_normal(n), 1)
            y = np.round(rng.standard_normal(n), 1)
            ours = kendall_tau(x, y)
            ref = scipy.stats.kendalltau(x, y, variant="b").statistic
            if ours is None:
                assert np.isnan(ref)
            else:
                assert ours == pytest.approx(ref, abs=1e-12)


@pytest.fixture(scope="module")
def tiny_segments(tiny_dataset):
    data, _ = tiny_dataset
    return segment_dataset(data, 0.5, with_mfcc=True)


class TestPrepareSessions:
    def test_traces_resampled_to_frame_rate(self, tiny_dataset):
        data, summary = tiny_dataset
        for d in data:
            assert len(d.trace.values) == len(d.session.frames)
            assert d.trace.values.min() >= 0.0 and d.trace.values.max() <= 1.0
        assert summary["dropped_short"] == []

    def test_nonconstant_traces_attain_bounds(self, tiny_dataset):
        data, _ = tiny_dataset
        for d in data:
            if d.trace_4hz.min() != d.trace_4hz.max():
                assert d.trace.values.min() == 0.0
                assert d.trace.values.max() == 1.0

    def test_duration_filter_applies(self):
        config = SynthConfig(sessions=2, duration_s=16.0, height=24, width=24, seed=1)
        raws = [generate_session(config, i).session for i in range(2)]
        data, summary = prepare_sessions(raws, min_duration_s=17.0)
        assert data == []
        assert summary["dropped_short"] == [s.id for s in raws]

    def test_outlier_filter_reports_distances(self):
        config = SynthConfig(sessions=5, duration_s=20.0, height=24, width=24, seed=2)
        raws = [generate_session(config, i).session for i in range(5)]
        # graft a wildly different trace onto one session
        times = raws[0].raw_trace[:, 0]
        sawtooth = np.abs((times * 2) % 2 - 1) * 40 - 10
        raws[0].raw_trace = np.column_stack([times, sawtooth])
        data, summary = prepare_sessions(raws, dtw_threshold=12.0)
        assert summary["dropped_outlier"] == [raws[0].id]
        assert [d.session.id for d in data] == [s.id for s in raws[1:]]
        assert summary["dtw_distances"][raws[0].id] > 12.0

    def test_no_outlier_filter_when_threshold_none(self, tiny_dataset):
        _, summary = tiny_dataset
        assert summary["dtw_threshold"] is None
        assert summary["dropped_outlier"] == []


class TestStacking:
    def test_labeled_stack_shapes(self, tiny_segments):
        ids = [ss.session_id for ss in tiny_segments[:3]]
        stacked = stack_labeled(tiny_segments, ids, 0.1, "both")
        assert stacked.frames_u8.shape[1:] == (15, 36, 36)
        assert stacked.mfcc.shape == (len(stacked), 165)
        assert set(stacked.session_ids) <= set(ids)

    def test_modality_selects_streams(self, tiny_segments):
        ids = [tiny_segments[0].session_id]
        visual = stack_labeled(tiny_segments, ids, 0.1, "visual")
        audio = stack_labeled(tiny_segments, ids, 0.1, "audio")
        assert visual.mfcc is None and visual.frames_u8 is not None
        assert audio.frames_u8 is None and audio.mfcc is not None

    def test_pair_stack_indices_valid(self, tiny_segments):
        ids = [ss.session_id for ss in tiny_segments[:3]]
        stacked = stack_pairs(tiny_segments, ids, 0.3, "both")
        n_unique = len(stacked.session_ids)
        if len(stacked) == 0:
            pytest.skip("no pairs at this threshold")
        assert stacked.pairs.min() >= 0
        assert stacked.pairs.max() < n_unique
        assert len(stacked.labels) == len(stacked.pairs)
        assert stacked.labels.sum() * 2 == len(stacked.labels)

    def test_unpaired_segments_dropped(self, tiny_segments):
        ids = [ss.session_id for ss in tiny_segments]
        stacked = stack_pairs(tiny_segments, ids, 0.3, "both")
        used = set(stacked.pairs.reshape(-1).tolist())
        assert used == set(range(len(stacked.session_ids)))


class TestTrainWithEarlyStopping:
    def test_plateau_stops_exactly_after_patience(self, tiny_dataset):
        # a vanishing learning rate freezes predictions, so the first epoch's
        # validation accuracy is never improved upon
        data, _ = tiny_dataset
        config = fast_config(mode="classify", modality="audio", max_epochs=50,
                             patience=3, learning_rate=1e-12)
        segments = segment_dataset(data, 0.5, with_mfcc=True)
        ids = [ss.session_id for ss in segments]
        train = stack_labeled(segments, ids[:3], config.epsilon, "audio")
        val = stack_labeled(segments, ids[3:5], config.epsilon, "audio")
        from arousal_forge.model import build_model
        net = build_model(15, (36, 36), "audio", "classify", seed=0)
        result = train_with_early_stopping(net, train, val, config,
                                           np.random.default_rng(0))
        assert result.epochs == 1 + config.patience
        assert len(set(result.history)) == 1

    def test_best_checkpoint_restored(self, tiny_dataset):
        data, _ = tiny_dataset
        config = fast_config(mode="classify", modality="audio", max_epochs=6,
                             patience=5, learning_rate=5e-3)
        segments = segment_dataset(data, 0.5, with_mfcc=True)
        ids = [ss.session_id for ss in segments]
        train = stack_labeled(segments, ids[:3], config.epsilon, "audio")
        val = stack_labeled(segments, ids[3:5], config.epsilon, "audio")
        from arousal_forge.experiment import classifier_accuracy
        from arousal_forge.model import build_model
        net = build_model(15, (36, 36), "audio", "classify", seed=0)
        result = train_with_early_stopping(net, train, val, config,
                                           np.random.default_rng(0))
        assert result.best_val == max(result.history)
        assert classifier_accuracy(net, val, config.batch_size) == pytest.approx(
            result.best_val
        )

    def test_fixed_seed_training_is_bit_reproducible(self, tiny_dataset):
        data, _ = tiny_dataset
        config = fast_config(mode="classify", modality="audio", max_epochs=3, patience=2)
        segments = segment_dataset(data, 0.5, with_mfcc=True)
        ids = [ss.session_id for ss in segments]
        train = stack_labeled(segments, ids[:3], config.epsilon, "audio")
        val = stack_labeled(segments, ids[3:5], config.epsilon, "audio")
        from arousal_forge.model import build_model
        states = []
        for _ in range(2):
            net = build_model(15, (36, 36), "audio", "classify", seed=3)
            train_with_early_stopping(net, train, val, config, np.random.default_rng(9))
            states.append(net.clone_state())
        for name in states[0]:
            assert np.array_equal(states[0][name], states[1][name]), name

    def test_empty_sets_rejected(self, tiny_dataset):
        data, _ = tiny_dataset
        config = fast_config(modality="audio")
        segments = segment_dataset(data, 0.5, with_mfcc=True)
        ids = [ss.session_id for ss in segments]
        full = stack_labeled(segments, ids[:2], 0.1, "audio")
        empty = stack_labeled(segments, [], 0.1, "audio")
        from arousal_forge.model import build_model
        net = build_model(15, (36, 36), "audio", "classify", seed=0)
        with pytest.raises(ValueError):
            train_with_early_stopping(net, empty, full, config, np.random.default_rng(0))
        with pytest.raises(ValueError):
            train_with_early_stopping(net, full, empty, config, np.random.default_rng(0))


class TestRunExperiment:
    def test_report_structure_and_aggregation(self, tiny_dataset):
        data, summary = tiny_dataset
        config = fast_config(mode="classify", modality="audio", max_epochs=2, patience=1)
        report = run_experiment(data, config, cleaning_summary=summary)
        assert len(report.folds) == len(data)
        accs = [f.accuracy for f in report.folds if f.error is None]
        assert report.summary["mean_accuracy"] == pytest.approx(np.mean(accs))
        expected_ci = 1.96 * np.std(accs, ddof=1) / np.sqrt(len(accs))
        assert report.summary["ci95_accuracy"] == pytest.approx(expected_ci)
        assert report.summary["n_folds"] == len(data)
        assert report.cleaning == summary
        payload = json.loads(report.to_json())
        assert set(payload) == {"config", "folds", "summary", "dataset_sizes", "cleaning"}

    def test_fixed_seed_reruns_bit_identical(self, tiny_dataset):
        data, _ = tiny_dataset
        config = fast_config(mode="classify", modality="audio", max_epochs=2, patience=1)
        a = run_experiment(data, config)
        b = run_experiment(data, config)
        assert a.to_json() == b.to_json()

    def test_jobs_do_not_change_results(self, tiny_dataset):
        data, _ = tiny_dataset
        config = fast_config(mode="classify", modality="audio", max_epochs=2, patience=1)
        serial = run_experiment(data, config, jobs=1)
        parallel = run_experiment(data, config, jobs=2)
        assert serial.to_json() == parallel.to_json()

    def test_ranker_baseline_is_exactly_half(self, tiny_dataset):
        data, _ = tiny_dataset
        config = fast_config(mode="rank", modality="audio", window_s=2.0, delta=0.3,
                             max_epochs=2, patience=1)
        report = run_experiment(data, config)
        for fold in report.folds:
            if fold.error is None:
                assert fold.baseline == 0.5

    def test_dataset_size_tables_trend(self, tiny_dataset):
        data, _ = tiny_dataset
        segments = segment_dataset(data, 0.5, with_mfcc=False)
        table = dataset_size_table(segments, "classify")
        sizes = [table["per_threshold"][k] for k in ("0.0", "0.05", "0.1", "0.2")]
        assert sizes == sorted(sizes, reverse=True)
        pair_table = dataset_size_table(segments, "rank")
        pair_sizes = [pair_table["per_threshold"][k]
                      for k in ("0.0", "0.2", "0.4", "0.6", "0.75")]
        assert pair_sizes == sorted(pair_sizes, reverse=True)
        assert all(s % 2 == 0 for s in pair_sizes)

    def test_decoupled_labels_score_near_baseline(self):
        # traces shuffled across sessions: the footage carries no label signal
        config = SynthConfig(sessions=6, duration_s=20.0, height=36, width=36,
                             coupling="both", seed=21)
        raws = [generate_session(config, i).session for i in range(6)]
        shifted = [raws[(i + 3) % 6].raw_trace for i in range(6)]
        for session, trace in zip(raws, shifted):
            session.raw_trace = trace
        data, _ = prepare_sessions(raws)
        cfg = fast_config(mode="classify", modality="audio", max_epochs=3, patience=2)
        report = run_experiment(data, cfg)
        acc = report.summary["mean_accuracy"]
        base = report.summary["mean_baseline"]
        assert abs(acc - base) <= 0.1

    def test_perfect_scorer_has_tau_one(self, tiny_segments):
        truth = np.array([s.mean_arousal for s in tiny_segments[0].segments])
        assert kendall_tau(truth, truth.copy()) == pytest.approx(1.0)


class TestSweep:
    def test_modality_sweep_emits_three_reports(self, tiny_dataset):
        data, _ = tiny_dataset
        config = fast_config(mode="classify", modality="both", max_epochs=1, patience=1,
                             window_s=1.0)
        reports, curve = sweep(data, "modality", None, config)
        assert len(reports) == 3
        assert [row["value"] for row in curve] == ["visual", "audio", "both"]

    def test_window_sweep_segment_counts_halve(self, tiny_dataset):
        data, _ = tiny_dataset
        config = fast_config(mode="classify", modality="audio", max_epochs=1, patience=1)
        reports, _ = sweep(data, "window", [0.5, 1.0, 2.0], config)
        counts = [r.dataset_sizes["segments"] for r in reports]
        assert counts[0] == pytest.approx(2 * counts[1], abs=len(data))
        assert counts[1] == pytest.approx(2 * counts[2], abs=len(data))

    def test_unknown_axis_rejected(self, tiny_dataset):
        data, _ = tiny_dataset
        with pytest.raises(ValueError):
            sweep(data, "gamma", [1], fast_config())

    def test_epsilon_sweep_sizes_non_increasing(self, tiny_dataset):
        data, _ = tiny_dataset
        config = fast_config(mode="classify", modality="audio", max_epochs=1, patience=1)
        reports, curve = sweep(data, "epsilon", [0.0, 0.1, 0.2], config)
        labeled = [sum(f.n_train + f.n_val + f.n_test for f in r.folds[:1])
                   for r in reports]
        assert labeled == sorted(labeled, reverse=True)


class TestConfigValidation:
    def test_bad_values_rejected(self):
        for bad in (
            dict(mode="cluster"),
            dict(modality="smell"),
            dict(patience=0),
            dict(val_videos=0),
            dict(epsilon=-0.1),
            dict(learning_rate=0.0),
        ):
            with pytest.raises(ValueError):
                dataclasses.replace(fast_config(), **bad).validate()
