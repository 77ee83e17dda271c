"""Forward-model generator: spectra, mixing, determinism, learnability."""

import hashlib
from pathlib import Path

import numpy as np
import pytest

from eegmatch.core import ConfigError, load_manifest
from eegmatch.preprocess import preprocess_recording
from eegmatch.sampling import SamplingConfig, build_dataset
from eegmatch.synthgen import (
    AR_COEFF,
    SynthConfig,
    _band_power,
    _pink_noise,
    generate_corpus,
    generate_subject,
    generate_track,
    latent_drive,
    mixing_template,
    probe_accuracy,
    response_kernel,
    shared_projection,
    subject_id,
)


def _small_cfg(**kw):
    base = dict(
        n_subjects=3, duration_s=30.0, seed=0, n_train=1, n_val=1, n_test=1
    )
    base.update(kw)
    return SynthConfig(**base)


class TestConfig:
    def test_validation(self):
        with pytest.raises(ConfigError):
            _small_cfg(fs=999)  # not divisible by fps
        with pytest.raises(ConfigError):
            _small_cfg(snr=0.0)
        with pytest.raises(ConfigError):
            _small_cfg(mixing_jitter=1.5)
        with pytest.raises(ConfigError):
            _small_cfg(stimulus_channels=(70,))
        with pytest.raises(ConfigError):
            _small_cfg(n_train=5)
        with pytest.raises(ConfigError):
            _small_cfg(subject_confound_strength=-1.0)

    def test_derived_sizes(self):
        cfg = SynthConfig(duration_s=210.0)
        assert cfg.n_frames == 5250
        assert cfg.n_samples == 210000

    def test_subject_id(self):
        assert subject_id(3) == "s03"
        assert subject_id(11) == "s11"


class TestTrack:
    def test_shape_and_determinism(self):
        cfg = _small_cfg()
        a = generate_track(cfg)
        b = generate_track(cfg)
        assert a.features.shape == (768, 750)
        np.testing.assert_array_equal(a.features, b.features)
        c = generate_track(_small_cfg(seed=1))
        assert not np.array_equal(a.features, c.features)

    def test_ar_coefficient(self):
        track = generate_track(SynthConfig(n_subjects=3, duration_s=210.0, n_train=1, n_val=1, n_test=1))
        x = track.features.astype(np.float64)
        x = x - x.mean(axis=1, keepdims=True)
        num = np.sum(x[:, 1:] * x[:, :-1], axis=1)
        den = np.sum(x[:, :-1] ** 2, axis=1)
        rho = num / den
        assert abs(rho.mean() - AR_COEFF) < 0.02

    def test_unit_variance(self):
        track = generate_track(SynthConfig(n_subjects=3, duration_s=210.0, n_train=1, n_val=1, n_test=1))
        v = track.features.var(axis=1)
        assert abs(v.mean() - 1.0) < 0.1


class TestKernelAndMixing:
    def test_kernel_delay_and_mass(self):
        cfg = _small_cfg()
        k = response_kernel(cfg)
        delay = int(round(cfg.response_latency_s * cfg.fs))
        np.testing.assert_array_equal(k[:delay], 0.0)
        assert k.sum() == pytest.approx(1.0)
        assert (k >= 0).all()
        assert k.argmax() > delay

    def test_projection_and_template_deterministic(self):
        cfg = _small_cfg()
        np.testing.assert_array_equal(shared_projection(cfg), shared_projection(cfg))
        t = mixing_template(cfg)
        np.testing.assert_array_equal(t, mixing_template(cfg))
        assert t.shape == (8, cfg.latent_dim)
        np.testing.assert_allclose(np.linalg.norm(t, axis=1), 1.0, rtol=1e-12)

    def test_drive_shape(self):
        cfg = _small_cfg()
        drive = latent_drive(cfg, generate_track(cfg))
        assert drive.shape == (cfg.latent_dim, cfg.n_samples)
        assert np.isfinite(drive).all()


class TestPinkNoise:
    def test_equal_power_per_octave(self):
        rng = np.random.default_rng(0)
        x = _pink_noise(rng, 16, 60000, 1000.0)
        lo = _band_power(x, 1000.0, band=(4.0, 8.0))
        hi = _band_power(x, 1000.0, band=(64.0, 128.0))
        assert lo / hi == pytest.approx(1.0, rel=0.25)

    def test_unit_variance_rows(self):
        rng = np.random.default_rng(1)
        x = _pink_noise(rng, 4, 5000, 1000.0)
        np.testing.assert_allclose(x.std(axis=-1), 1.0, rtol=1e-9)


class TestSubject:
    def test_shape_and_determinism(self):
        cfg = _small_cfg()
        track = generate_track(cfg)
        a = generate_subject(cfg, track, 1)
        b = generate_subject(cfg, track, 1)
        assert a.data.shape == (64, cfg.n_samples)
        assert a.data.dtype == np.float32
        np.testing.assert_array_equal(a.data, b.data)
        c = generate_subject(cfg, track, 2)
        assert not np.array_equal(a.data, c.data)
        assert a.subject_id == "s01"

    def test_index_bounds(self):
        cfg = _small_cfg()
        track = generate_track(cfg)
        with pytest.raises(ConfigError):
            generate_subject(cfg, track, 3)

    def test_clean_channel_correlates_with_drive(self):
        # noise off, confound off, no subject jitter: stimulus channels are
        # exact unit-norm combinations of the delayed latent drive
        cfg = _small_cfg(snr=1e12, subject_confound_strength=0.0, mixing_jitter=0.0)
        track = generate_track(cfg)
        drive = latent_drive(cfg, track)
        rec = generate_subject(cfg, track, 0, drive)
        template = mixing_template(cfg)
        for row, ch in enumerate(cfg.stimulus_channels[:3]):
            target = template[row] @ drive
            r = np.corrcoef(rec.data[ch].astype(np.float64), target)[0, 1]
            assert r > 0.99

    def test_non_stimulus_channels_lack_drive(self):
        cfg = _small_cfg(subject_confound_strength=0.0)
        track = generate_track(cfg)
        drive = latent_drive(cfg, track)
        rec = generate_subject(cfg, track, 0, drive)
        target = mixing_template(cfg)[0] @ drive
        r = np.corrcoef(rec.data[40].astype(np.float64), target)[0, 1]
        assert abs(r) < 0.1

    def test_snr_power_ratio(self):
        # artifacts off: the ratio is defined against the baseline noise
        for snr in (1.0, 4.0):
            cfg = _small_cfg(
                duration_s=60.0,
                snr=snr,
                subject_confound_strength=0.0,
                artifact_rate_per_min=0.0,
            )
            track = generate_track(cfg)
            rec = generate_subject(cfg, track, 0)
            d = rec.data.astype(np.float64)
            stim = _band_power(d[list(cfg.stimulus_channels)], cfg.fs)
            noise = _band_power(d[20:40], cfg.fs)
            # stimulus channels carry signal + noise; the rest only noise
            assert stim / noise == pytest.approx(1.0 + snr, rel=0.2)

    def test_artifact_bursts_raise_local_variance(self):
        base = _small_cfg(duration_s=60.0, subject_confound_strength=0.0)
        quiet = _small_cfg(
            duration_s=60.0, subject_confound_strength=0.0, artifact_rate_per_min=0.0
        )
        track = generate_track(base)
        with_bursts = generate_subject(base, track, 0).data[40].astype(np.float64)
        without = generate_subject(quiet, track, 0).data[40].astype(np.float64)
        # peak 1-s-window variance should stand far above the median with
        # bursts present and stay near it without them
        win = int(base.fs)
        var = lambda x: np.var(x[: len(x) // win * win].reshape(-1, win), axis=1)
        assert np.max(var(with_bursts)) > 3.0 * np.median(var(with_bursts))
        assert np.max(var(without)) < 2.0 * np.median(var(without))

    def test_artifact_times_shared_across_subjects(self):
        # stimulus-evoked schedule: the variance profiles of two subjects
        # should spike at (nearly) the same times
        cfg = _small_cfg(
            duration_s=60.0,
            subject_confound_strength=0.0,
            artifact_gain=8.0,
            artifact_rate_per_min=5.0,
        )
        track = generate_track(cfg)
        win = int(cfg.fs)
        profiles = []
        for idx in range(2):
            x = generate_subject(cfg, track, idx).data[40].astype(np.float64)
            v = np.var(x[: len(x) // win * win].reshape(-1, win), axis=1)
            profiles.append(v / np.median(v))
        r = np.corrcoef(profiles[0], profiles[1])[0, 1]
        assert r > 0.5

    def test_artifact_config_validation(self):
        with pytest.raises(ConfigError):
            _small_cfg(artifact_gain=0.5)
        with pytest.raises(ConfigError):
            _small_cfg(artifact_rate_per_min=-1.0)
        with pytest.raises(ConfigError):
            _small_cfg(artifact_width_s=0.0)

    def test_confound_raises_alpha_power(self):
        cfg_off = _small_cfg(subject_confound_strength=0.0)
        cfg_on = _small_cfg(subject_confound_strength=2.0)
        track = generate_track(cfg_off)
        off = generate_subject(cfg_off, track, 0)
        on = generate_subject(cfg_on, track, 0)
        a_off = _band_power(off.data.astype(np.float64)[20:40], cfg_off.fs, band=(8.0, 13.0))
        a_on = _band_power(on.data.astype(np.float64)[20:40], cfg_on.fs, band=(8.0, 13.0))
        assert a_on > 2.0 * a_off


class TestCorpus:
    def test_manifest_and_files(self, tmp_path):
        cfg = _small_cfg()
        manifest = generate_corpus(cfg, tmp_path)
        assert len(manifest.subjects) == 3
        assert manifest.metadata["preprocessed"] is False
        manifest.validate(check_files=True)
        loaded = load_manifest(tmp_path / "manifest.json")
        assert [s.subject_id for s in loaded.subjects] == ["s00", "s01", "s02"]
        split = loaded.split
        assert len(split.train) == 1 and len(split.val) == 1 and len(split.test) == 1

    def test_byte_identical_reruns(self, tmp_path):
        cfg = _small_cfg(seed=9)
        a_dir, b_dir = tmp_path / "a", tmp_path / "b"
        generate_corpus(cfg, a_dir)
        generate_corpus(cfg, b_dir)
        for path_a in sorted(a_dir.iterdir()):
            path_b = b_dir / path_a.name
            ha = hashlib.sha256(path_a.read_bytes()).hexdigest()
            hb = hashlib.sha256(path_b.read_bytes()).hexdigest()
            assert ha == hb, path_a.name

    def test_seed_changes_corpus(self, tmp_path):
        generate_corpus(_small_cfg(seed=1), tmp_path / "a")
        generate_corpus(_small_cfg(seed=2), tmp_path / "b")
        a = (tmp_path / "a" / "eeg_s00.f32").read_bytes()
        b = (tmp_path / "b" / "eeg_s00.f32").read_bytes()
        assert a != b


class TestProbe:
    def test_probe_beats_chance(self):
        cfg = SynthConfig(
            n_subjects=3, duration_s=60.0, seed=5, n_train=2, n_val=0, n_test=1
        )
        track = generate_track(cfg)
        drive = latent_drive(cfg, track)
        recs = [
            preprocess_recording(generate_subject(cfg, track, i, drive))
            for i in range(3)
        ]
        scfg = SamplingConfig(rng_seed=0)
        train = build_dataset(recs[:2], track, scfg)
        test = build_dataset(recs[2:], track, scfg)
        assert probe_accuracy(train, test, track, cfg) > 0.75

    def test_probe_rejects_one_way(self):
        cfg = _small_cfg()
        track = generate_track(cfg)
        from eegmatch.sampling import build_one_way_dataset

        recs = [generate_subject(cfg, track, 0)]
        samples = build_one_way_dataset(recs, track, SamplingConfig())
        with pytest.raises(ConfigError):
            probe_accuracy(samples, samples, track, cfg)
