import numpy as np
import pytest

from arousal_forge.ingest import load_dataset, load_manifest
from arousal_forge.synth import SynthConfig, generate_session, write_dataset
from arousal_forge.trace import normalize_minmax


def small_config(**overrides):
    base = dict(sessions=2, duration_s=16.0, height=24, width=24, seed=99)
    base.update(overrides)
    return SynthConfig(**base)


class TestDeterminism:
    def test_same_seed_and_index_bit_identical(self):
        config = small_config()
        a = generate_session(config, 1)
        b = generate_session(config, 1)
        assert np.array_equal(a.session.frames, b.session.frames)
        assert np.array_equal(a.session.audio, b.session.audio)
        assert np.array_equal(a.session.raw_trace, b.session.raw_trace)

    def test_distinct_indices_differ(self):
        config = small_config()
        a = generate_session(config, 0)
        b = generate_session(config, 1)
        assert not np.array_equal(a.event_times, b.event_times)
        assert not np.array_equal(a.session.frames, b.session.frames)


class TestGroundTruth:
    def test_zero_event_rate_gives_constant_half_trace(self):
        synth = generate_session(small_config(event_rate=0.0), 0)
        assert len(synth.event_times) == 0
        assert np.all(synth.truth == 0.5)

    def test_truth_is_normalized_raw_signal(self):
        synth = generate_session(small_config(), 0)
        assert np.array_equal(synth.truth, normalize_minmax(synth.raw_signal))
        assert synth.truth.min() >= 0.0 and synth.truth.max() <= 1.0

    def test_durations_consistent(self):
        config = small_config(duration_s=17.0)
        synth = generate_session(config, 0)
        s = synth.session
        assert len(s.frames) == round(17.0 * config.fps)
        assert len(s.audio) == round(17.0 * config.sample_rate)
        assert len(s.raw_trace) == round(17.0 * 4)
        assert np.all(np.diff(s.raw_trace[:, 0]) > 0)

    def test_event_windows_outrank_quiet_windows(self):
        config = small_config(duration_s=40.0, event_rate=0.12, kernel_tau_s=1.5, seed=5)
        synth = generate_session(config, 0)
        if len(synth.event_times) == 0:
            pytest.skip("no events drawn for this seed")
        t4 = np.arange(len(synth.truth)) / 4.0
        window = 2.0
        starts = np.arange(0.0, config.duration_s - window, window)
        event_means, quiet_means = [], []
        for s0 in starts:
            in_window = (t4 >= s0) & (t4 < s0 + window)
            has_event = np.any((synth.event_times >= s0) & (synth.event_times < s0 + window))
            last_before = synth.event_times[synth.event_times < s0]
            long_after = len(last_before) == 0 or (
                s0 - last_before.max() >= 3 * config.kernel_tau_s
            )
            if has_event:
                event_means.append(synth.truth[in_window].mean())
            elif long_after and not np.any(
                (synth.event_times >= s0 - window) & (synth.event_times < s0 + window)
            ):
                quiet_means.append(synth.truth[in_window].mean())
        if not event_means or not quiet_means:
            pytest.skip("seed produced no contrasting windows")
        assert min(event_means) > max(quiet_means)


class TestCoupling:
    @staticmethod
    def per_window_audio_energy(session, window_s=1.0):
        n = int(window_s * session.sample_rate)
        usable = (len(session.audio) // n) * n
        chunks = session.audio[:usable].astype(np.float64).reshape(-1, n)
        return np.sqrt((chunks**2).mean(axis=1))

    @staticmethod
    def per_window_truth(synth, window_s=1.0):
        n = int(window_s * 4)
        usable = (len(synth.truth) // n) * n
        return synth.truth[:usable].reshape(-1, n).mean(axis=1)

    def mean_energy_truth_correlation(self, coupling, n=6, seed=12):
        corrs = []
        for i in range(n):
            config = small_config(duration_s=60.0, coupling=coupling, seed=seed)
            synth = generate_session(config, i)
            energy = self.per_window_audio_energy(synth.session)
            truth = self.per_window_truth(synth)
            k = min(len(energy), len(truth))
            corrs.append(np.corrcoef(energy[:k], truth[:k])[0, 1])
        return float(np.mean(corrs))

    def test_visual_only_audio_is_uninformative(self):
        # the noise bed has slow 1/f structure, so per-session sample
        # correlations wander; the mean over sessions must stay near zero
        # and far below the coupled case
        decoupled = self.mean_energy_truth_correlation("visual_only")
        coupled = self.mean_energy_truth_correlation("both")
        assert abs(decoupled) < 0.25
        assert coupled > decoupled + 0.2

    def test_both_coupling_audio_tracks_events(self):
        assert self.mean_energy_truth_correlation("both") > 0.3

    def test_audio_only_removes_visual_signatures(self):
        on = generate_session(small_config(duration_s=30.0, coupling="both", seed=3), 0)
        off = generate_session(small_config(duration_s=30.0, coupling="audio_only", seed=3), 0)
        if len(on.event_times) == 0:
            pytest.skip("no events drawn")
        # same event stream, but the visual track stays near the background level
        assert np.array_equal(on.event_times, off.event_times)
        frame_means_on = on.session.frames.mean(axis=(1, 2))
        frame_means_off = off.session.frames.mean(axis=(1, 2))
        assert frame_means_on.max() > frame_means_off.max() + 10
        assert frame_means_off.std() < frame_means_on.std()

    def test_bad_coupling_rejected(self):
        with pytest.raises(ValueError):
            generate_session(small_config(coupling="none"), 0)

    def test_short_duration_rejected(self):
        with pytest.raises(ValueError):
            generate_session(small_config(duration_s=10.0), 0)


class TestDatasetOnDisk:
    def test_written_dataset_reloads_identically(self, tmp_path):
        config = small_config()
        manifest_path = write_dataset(config, tmp_path)
        manifest = load_manifest(manifest_path)
        assert manifest.target_hw == (config.height, config.width)
        sessions = load_dataset(manifest)
        assert len(sessions) == config.sessions
        for i, loaded in enumerate(sessions):
            reference = generate_session(config, i).session
            assert loaded.id == reference.id
            assert np.array_equal(loaded.frames, reference.frames)
            assert np.array_equal(loaded.audio, reference.audio)
            assert np.array_equal(loaded.raw_trace, reference.raw_trace)

    def test_truth_sidecar_written(self, tmp_path):
        config = small_config()
        write_dataset(config, tmp_path)
        assert (tmp_path / "synth-000" / "truth.csv").exists()
