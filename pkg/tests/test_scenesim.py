"""Scene simulator: event signals, spatialisation, annotations, datasets."""

from __future__ import annotations

import numpy as np
import pytest

from regiontag.geometry import (
    DirectionOfArrival,
    default_geometry,
    pair_delay,
)
from regiontag.scenesim import (
    CLASS_NAMES,
    CLASS_RECIPES,
    EventSpec,
    SceneSpec,
    annotate_scene,
    event_bank,
    generate_dataset,
    read_annotation,
    read_manifest,
    render_scene,
    sample_scene_spec,
    spatialize,
    split_counts,
    write_annotation,
)

FS = 24000


def physical_peak_lag(a: np.ndarray, b: np.ndarray, max_lag: int = 5) -> int:
    """Cross-correlation argmax restricted to physically possible lags.

    The array aperture bounds true inter-channel delays to a few samples;
    band-limited signals have correlation lobes far outside that range.
    """
    r = np.correlate(a, b, mode="full")
    centre = len(b) - 1
    window = r[centre - max_lag : centre + max_lag + 1]
    return int(window.argmax()) - max_lag


class TestEventBank:
    def test_thirteen_distinct_classes(self):
        assert len(CLASS_NAMES) == 13
        assert len(set(CLASS_NAMES)) == 13
        assert len(CLASS_RECIPES) == 13

    def test_deterministic(self):
        a = event_bank(3, 0.5, FS, seed=42)
        b = event_bank(3, 0.5, FS, seed=42)
        np.testing.assert_array_equal(a, b)

    def test_seed_changes_signal(self):
        a = event_bank(3, 0.5, FS, seed=1)
        b = event_bank(3, 0.5, FS, seed=2)
        assert not np.array_equal(a, b)

    def test_peak_normalised(self):
        for cls in range(13):
            sig = event_bank(cls, 0.4, FS, seed=cls)
            assert np.abs(sig).max() == pytest.approx(0.5, rel=1e-6)

    def test_length(self):
        sig = event_bank(0, 0.73, FS, seed=9)
        assert len(sig) == int(round(0.73 * FS))

    def test_rejects_bad_class(self):
        with pytest.raises(ValueError):
            event_bank(13, 0.5, FS, seed=0)

    def test_classes_spectrally_distinct(self):
        # Mean one-sided spectra should separate classes: a nearest-centroid
        # classifier over held-out draws must beat chance by a wide margin.
        def spectrum(cls, seed):
            sig = event_bank(cls, 0.5, FS, seed=seed)
            mag = np.abs(np.fft.rfft(sig))
            return mag / (np.linalg.norm(mag) + 1e-12)

        train = {cls: np.mean([spectrum(cls, s) for s in range(4)], axis=0)
                 for cls in range(13)}
        hits = 0
        total = 0
        for cls in range(13):
            for seed in range(4, 8):
                probe = spectrum(cls, seed)
                scores = {c: float(probe @ ref) for c, ref in train.items()}
                best = max(scores, key=scores.get)
                hits += best == cls
                total += 1
        assert hits / total >= 0.9


class TestSpatialize:
    def test_four_channels_and_tail(self):
        g = default_geometry()
        sig = event_bank(0, 0.2, FS, seed=5)
        seg = spatialize(sig, DirectionOfArrival(30.0, 10.0), 1.5, g)
        assert seg.shape[0] == 4
        assert seg.shape[1] > len(sig)

    def test_pair_delays_match_geometry(self):
        g = default_geometry()
        rng = np.random.default_rng(111)
        noise = rng.normal(size=FS // 2)
        for az, el in [(-135.0, -20.0), (-40.0, 30.0), (0.0, 0.0), (120.0, 15.0)]:
            doa = DirectionOfArrival(az, el)
            seg = spatialize(noise, doa, 2.0, g)
            for pair in [(0, 1), (0, 2), (1, 3), (2, 3)]:
                expected = pair_delay(g, pair, doa) * FS
                lag = physical_peak_lag(seg[pair[0]], seg[pair[1]])
                # Channel pair[0] leading by tau means its copy sits tau
                # samples earlier, showing up as a -tau correlation lag.
                assert -lag == pytest.approx(expected, abs=0.5)

    def test_inverse_distance_gain(self):
        g = default_geometry()
        sig = event_bank(8, 0.3, FS, seed=3)
        near = spatialize(sig, DirectionOfArrival(75.0, 0.0), 1.0, g)
        far = spatialize(sig, DirectionOfArrival(75.0, 0.0), 2.0, g)
        ratio = np.sqrt((near**2).sum() / (far**2).sum())
        assert ratio == pytest.approx(2.0, rel=0.01)

    def test_rejects_too_close(self):
        g = default_geometry()
        with pytest.raises(ValueError):
            spatialize(np.ones(100), DirectionOfArrival(0.0, 0.0), 0.1, g)


class TestRenderScene:
    def test_linear_in_events(self):
        ev_a = EventSpec(0, 0.1, 0.4, 30.0, 0.0, 1.0, gain=0.3, signal_seed=1)
        ev_b = EventSpec(5, 0.6, 0.4, -120.0, 10.0, 2.0, gain=0.3, signal_seed=2)
        both, _ = render_scene(SceneSpec(1.5, (ev_a, ev_b), snr_db=None))
        only_a, _ = render_scene(SceneSpec(1.5, (ev_a,), snr_db=None))
        only_b, _ = render_scene(SceneSpec(1.5, (ev_b,), snr_db=None))
        np.testing.assert_allclose(both, only_a + only_b, atol=1e-12)

    def test_clip_shape(self):
        ev = EventSpec(1, 0.0, 0.5, 0.0, 0.0, 1.0, signal_seed=7)
        clip, annotation = render_scene(SceneSpec(2.0, (ev,), snr_db=None))
        assert clip.shape == (4, 48000)
        assert annotation.n_frames == 20

    def test_snr_calibration(self):
        ev = EventSpec(9, 0.0, 2.0, 45.0, 0.0, 1.0, gain=0.4, signal_seed=11)
        spec_clean = SceneSpec(2.0, (ev,), snr_db=None)
        spec_noisy = SceneSpec(2.0, (ev,), snr_db=20.0, noise_seed=5)
        clean, _ = render_scene(spec_clean)
        noisy, _ = render_scene(spec_noisy)
        noise = noisy - clean
        measured = 10.0 * np.log10(np.mean(clean**2) / np.mean(noise**2))
        assert measured == pytest.approx(20.0, abs=0.5)

    def test_noise_seed_changes_noise(self):
        ev = EventSpec(2, 0.0, 0.5, 0.0, 0.0, 1.0, signal_seed=3)
        a, _ = render_scene(SceneSpec(1.0, (ev,), snr_db=20.0, noise_seed=1))
        b, _ = render_scene(SceneSpec(1.0, (ev,), snr_db=20.0, noise_seed=2))
        assert not np.array_equal(a, b)

    def test_peak_limited(self):
        events = tuple(
            EventSpec(6, 0.0, 0.5, az, 0.0, 0.5, gain=5.0, signal_seed=s)
            for s, az in enumerate((0.0, 10.0, -10.0, 20.0))
        )
        clip, _ = render_scene(SceneSpec(0.6, events, snr_db=None))
        assert np.abs(clip).max() <= 0.99 + 1e-12

    def test_deterministic(self):
        spec = sample_scene_spec(3.0, 13, seed=77)
        a, _ = render_scene(spec)
        b, _ = render_scene(spec)
        np.testing.assert_array_equal(a, b)


class TestAnnotation:
    def test_grid_frames(self):
        ev = EventSpec(4, 0.25, 0.5, 10.0, 5.0, 1.2, signal_seed=1)
        annotation = annotate_scene(SceneSpec(2.0, (ev,), snr_db=None))
        frames = sorted(r[0] for r in annotation.rows)
        assert frames == [2, 3, 4, 5, 6, 7]

    def test_exact_boundary(self):
        ev = EventSpec(0, 0.2, 0.4, 0.0, 0.0, 1.0, signal_seed=1)
        annotation = annotate_scene(SceneSpec(1.0, (ev,), snr_db=None))
        frames = sorted(r[0] for r in annotation.rows)
        assert frames == [2, 3, 4, 5]

    def test_round_trip(self, tmp_path):
        spec = sample_scene_spec(4.0, 13, seed=13)
        annotation = annotate_scene(spec)
        path = tmp_path / "scene.csv"
        write_annotation(path, annotation)
        back = read_annotation(path)
        assert back.rows == annotation.rows
        assert back.frame_hop_s == annotation.frame_hop_s

    def test_read_rejects_bad_header(self, tmp_path):
        path = tmp_path / "scene.csv"
        path.write_text("a,b,c\n1,2,3\n")
        with pytest.raises(ValueError):
            read_annotation(path)

    def test_active_in_window(self):
        ev1 = EventSpec(0, 0.0, 0.5, 10.0, 0.0, 1.0, signal_seed=1)
        ev2 = EventSpec(1, 1.0, 0.5, 20.0, 0.0, 1.0, signal_seed=2)
        annotation = annotate_scene(SceneSpec(2.0, (ev1, ev2), snr_db=None))
        active = annotation.active_in_window(0.0, 0.6)
        assert [e["class_index"] for e in active] == [0]
        active = annotation.active_in_window(0.9, 1.6)
        assert [e["class_index"] for e in active] == [1]
        active = annotation.active_in_window(0.0, 2.0)
        assert [e["class_index"] for e in active] == [0, 1]
        assert annotation.active_in_window(0.6, 0.9) == []

    def test_events_summary(self):
        ev = EventSpec(7, 0.3, 0.4, -55.0, 12.0, 2.5, signal_seed=4)
        annotation = annotate_scene(SceneSpec(1.0, (ev,), snr_db=None))
        summary = annotation.events()
        assert list(summary) == [0]
        assert summary[0]["class_index"] == 7
        assert summary[0]["azimuth_deg"] == pytest.approx(-55.0)
        assert summary[0]["distance_m"] == pytest.approx(2.5)


class TestSampleSceneSpec:
    def test_deterministic(self):
        a = sample_scene_spec(10.0, 13, seed=5)
        b = sample_scene_spec(10.0, 13, seed=5)
        assert a == b

    def test_fields_in_range(self):
        for seed in range(10):
            spec = sample_scene_spec(8.0, 6, seed=seed)
            for ev in spec.events:
                assert 0 <= ev.class_index < 6
                assert 0.0 <= ev.onset_s
                assert ev.offset_s <= 8.0 + 1e-9
                assert 0.5 <= ev.distance_m <= 3.5
                assert -40.0 <= ev.elevation_deg <= 40.0
                assert -180.0 <= ev.azimuth_deg < 180.0

    def test_event_rate_statistics(self):
        counts = [
            len(sample_scene_spec(60.0, 13, seed=s).events) for s in range(300)
        ]
        assert 23.5 <= np.mean(counts) <= 26.5
        assert np.std(counts) > 1.0

    def test_short_clip_still_has_event(self):
        spec = sample_scene_spec(1.0, 13, seed=3)
        assert len(spec.events) >= 1


class TestDataset:
    def test_generate_and_read(self, tmp_path):
        manifest = generate_dataset(
            tmp_path / "data", n_clips=6, clip_length_s=2.0, n_classes=4, seed=1
        )
        entries = read_manifest(manifest)
        assert len(entries) == 6
        splits = [e[0] for e in entries]
        n_train, n_val, n_test = split_counts(6, (0.8, 0.1, 0.1))
        assert splits.count("train") == n_train
        assert splits.count("val") == n_val
        assert splits.count("test") == n_test
        for _, wav, csv_path in entries:
            assert wav.exists() and csv_path.exists()
            annotation = read_annotation(csv_path)
            assert len(annotation.rows) >= 1

    def test_parallel_render_matches_serial(self, tmp_path):
        m1 = generate_dataset(
            tmp_path / "serial", n_clips=4, clip_length_s=1.0, n_classes=3,
            seed=9, jobs=1,
        )
        m2 = generate_dataset(
            tmp_path / "parallel", n_clips=4, clip_length_s=1.0, n_classes=3,
            seed=9, jobs=2,
        )
        for (_, w1, c1), (_, w2, c2) in zip(read_manifest(m1), read_manifest(m2)):
            assert w1.read_bytes() == w2.read_bytes()
            assert c1.read_text() == c2.read_text()

    def test_split_counts_validation(self):
        with pytest.raises(ValueError):
            split_counts(10, (0.0, 0.5, 0.5))
        with pytest.raises(ValueError):
            split_counts(10, (0.5, 0.2, 0.2))

    def test_manifest_rejects_garbage(self, tmp_path):
        path = tmp_path / "manifest.csv"
        path.write_text("nope\n")
        with pytest.raises(ValueError):
            read_manifest(path)


class TestRenderedDelays:
    def test_clip_ipd_matches_source_direction(self):
        # A rendered single-event clip must carry the geometric delays of
        # its annotated direction.  Use a broadband noise class; harmonic
        # classes have periodic correlation peaks that alias the lag.
        g = default_geometry()
        ev = EventSpec(3, 0.0, 1.0, -60.0, 0.0, 1.5, signal_seed=21)
        clip, _ = render_scene(SceneSpec(1.0, (ev,), snr_db=None))
        for pair in [(0, 1), (0, 2), (0, 3)]:
            expected = pair_delay(g, pair, ev.doa) * FS
            lag = physical_peak_lag(clip[pair[0]], clip[pair[1]])
            assert -lag == pytest.approx(expected, abs=0.5)
