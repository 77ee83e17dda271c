"""Synthetic (video-feature, EEG) corpora with a planted stimulus response.

Forward model per subject s:

    EEG_s = M_s (h * up(P f)) + noise + confound

where f is the shared 768-dim AR(1) feature track, P a shared 768 -> K
projection, up() linear-interpolation upsampling from frame rate to EEG rate,
h a gamma-shaped response kernel delayed by the response latency, M_s a
subject-specific mixing matrix whose nonzero rows are confined to the
configured stimulus channels, noise 1/f-shaped with baseline power fixed by
the snr and brief amplitude bursts riding on top (the artifact_* fields;
real recordings are never artifact-free, and segments that overlap a burst
are effectively undecodable from the EEG alone).  Burst times follow a
corpus-wide schedule because film-watching artifacts are largely
stimulus-evoked -- every viewer blinks at the same startling cut -- with
per-subject latency and strength jitter on top.  The confound is a
subject-specific amplitude-modulated alpha-band (8-13 Hz) oscillation that
creates subject clusters in hand-crafted feature space without carrying
stimulus information.

snr is the total stimulus power over the baseline (between-burst) noise
power, both taken across the whole recorded spectrum.  The upsampled AR(1)
drive concentrates its variance at low
frequencies while the 1/f noise spreads across the full bandwidth, so the
ratio inside the narrow band the decoders actually exploit is far below the
headline figure; the default snr of 1.0 therefore lands in the single-trial
regime where match decisions stay well above chance but far from ceiling,
instead of the saturated setting a band-limited definition would produce.

Mixing matrices share a template: subject rows interpolate between a common
unit-norm row (drawn once per corpus) and a private random direction, so
subjects differ without being mutually orthogonal.  Cross-subject decoding
only works when scalp topography generalizes across heads; fully independent
mixings would make every held-out subject an unsolvable cipher.

Every draw comes from named child streams of the corpus seed, so a corpus is
a pure function of its config: track [seed,0], projection [seed,1], subject i
[seed,2,i], split [seed,3], mixing template [seed,4], artifact schedule
[seed,5].  Recordings are
materialized as float32 so the in-memory corpus equals its on-disk round
trip bit for bit.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from scipy import signal as spsignal

from .core import (
    CHANNEL_NAMES_64,
    ConfigError,
    DatasetManifest,
    EEGRecording,
    SubjectEntry,
    TrackEntry,
    TrialSample,
    VideoFeatureTrack,
    config_hash,
    save_array,
    save_manifest,
)
from .sampling import split_by_subject

VIDEO_DIM = 768
AR_COEFF = 0.97
EEG_SCALE = 10.0  # plausible raw-amplitude scale; removed by normalization


@dataclass
class SynthConfig:
    n_subjects: int = 10
    duration_s: float = 210.0
    fs: int = 1000
    fps: int = 25
    latent_dim: int = 8
    response_latency_s: float = 0.2
    response_kernel_s: float = 0.5
    snr: float = 1.0
    subject_confound_strength: float = 1.0
    seed: int = 0
    stimulus_channels: tuple[int, ...] = tuple(range(8))
    mixing_jitter: float = 0.35  # 0 = identical heads, 1 = unrelated heads
    artifact_rate_per_min: float = 4.0
    artifact_width_s: float = 1.0
    artifact_gain: float = 4.0  # peak noise amplitude multiplier inside a burst
    n_train: int = 7
    n_val: int = 1
    n_test: int = 2

    def __post_init__(self) -> None:
        self.stimulus_channels = tuple(int(c) for c in self.stimulus_channels)
        positives = (
            self.n_subjects,
            self.duration_s,
            self.fs,
            self.fps,
            self.latent_dim,
            self.response_latency_s,
            self.response_kernel_s,
            self.snr,
        )
        if any(v <= 0 for v in positives):
            raise ConfigError("corpus dimensions, rates, and snr must be positive")
        if self.subject_confound_strength < 0:
            raise ConfigError("subject_confound_strength must be >= 0")
        if self.fs % self.fps != 0:
            raise ConfigError(f"fs ({self.fs}) must be divisible by fps ({self.fps})")
        if not 0.0 <= self.mixing_jitter <= 1.0:
            raise ConfigError(f"mixing_jitter must lie in [0, 1], got {self.mixing_jitter}")
        if self.artifact_rate_per_min < 0 or self.artifact_width_s <= 0:
            raise ConfigError("artifact rate must be >= 0 and width positive")
        if self.artifact_gain < 1.0:
            raise ConfigError(f"artifact_gain must be >= 1, got {self.artifact_gain}")
        if not self.stimulus_channels:
            raise ConfigError("need at least one stimulus channel")
        if min(self.stimulus_channels) < 0 or max(self.stimulus_channels) >= 64:
            raise ConfigError("stimulus channels must lie in [0, 64)")
        if self.n_train + self.n_val + self.n_test > self.n_subjects:
            raise ConfigError("split sizes exceed subject count")

    @property
    def n_frames(self) -> int:
        return int(round(self.duration_s * self.fps))

    @property
    def n_samples(self) -> int:
        return int(round(self.duration_s * self.fs))


def subject_id(index: int) -> str:
    return f"s{index:02d}"


def generate_track(cfg: SynthConfig) -> VideoFeatureTrack:
    """Shared feature track: 768 independent AR(1) rows, coefficient 0.97,
    unit stationary variance."""
    rng = np.random.default_rng([cfg.seed, 0])
    n = cfg.n_frames
    innovations = rng.standard_normal((VIDEO_DIM, n)) * np.sqrt(1.0 - AR_COEFF**2)
    x0 = rng.standard_normal(VIDEO_DIM)
    # lfilter realizes y[t] = e[t] + AR_COEFF * y[t-1], seeded at the
    # stationary draw x0 via the filter's initial state.
    zi = (AR_COEFF * x0)[:, None]
    track, _ = spsignal.lfilter([1.0], [1.0, -AR_COEFF], innovations, axis=-1, zi=zi)
    return VideoFeatureTrack(
        track_id="track", fps=float(cfg.fps), features=track.astype(np.float32)
    )


def shared_projection(cfg: SynthConfig) -> np.ndarray:
    """768 -> K projection shared by all subjects; rows scaled to give the
    projected latents roughly unit variance."""
    rng = np.random.default_rng([cfg.seed, 1])
    return rng.standard_normal((cfg.latent_dim, VIDEO_DIM)) / np.sqrt(VIDEO_DIM)


def mixing_template(cfg: SynthConfig) -> np.ndarray:
    """Corpus-wide unit-norm mixing rows, one per stimulus channel."""
    rng = np.random.default_rng([cfg.seed, 4])
    rows = rng.standard_normal((len(cfg.stimulus_channels), cfg.latent_dim))
    return rows / np.linalg.norm(rows, axis=1, keepdims=True)


def response_kernel(cfg: SynthConfig) -> np.ndarray:
    """Gamma-shaped impulse response (shape 2), delayed by the latency,
    normalized to unit area."""
    delay = int(round(cfg.response_latency_s * cfg.fs))
    width = max(int(round(cfg.response_kernel_s * cfg.fs)), 2)
    t = np.arange(width) / cfg.fs
    theta = cfg.response_kernel_s / 5.0
    body = t * np.exp(-t / theta)
    kernel = np.concatenate([np.zeros(delay), body])
    return kernel / kernel.sum()


def latent_drive(cfg: SynthConfig, track: VideoFeatureTrack) -> np.ndarray:
    """Subject-independent response drive [K x n_samples]: project, upsample
    to the EEG rate by linear interpolation, convolve with the kernel."""
    P = shared_projection(cfg)
    latents = P @ track.features.astype(np.float64)
    t_frames = np.arange(cfg.n_frames) / cfg.fps
    t_samples = np.arange(cfg.n_samples) / cfg.fs
    up = np.stack([np.interp(t_samples, t_frames, row) for row in latents])
    kernel = response_kernel(cfg)
    drive = spsignal.fftconvolve(up, kernel[None, :], mode="full", axes=-1)
    return drive[:, : cfg.n_samples]


def _band_power(x: np.ndarray, fs: float, band: tuple[float, float] | None = None) -> float:
    """Mean per-row power of ``x``, restricted to ``band`` when one is given
    (computed via Parseval); total mean-square power otherwise."""
    if band is None:
        return float(np.mean(x.astype(np.float64) ** 2))
    n = x.shape[-1]
    spectrum = np.fft.rfft(x, axis=-1)
    freqs = np.fft.rfftfreq(n, d=1.0 / fs)
    # interior rfft bins carry both halves of the two-sided spectrum
    weights = np.full(freqs.shape, 2.0)
    weights[0] = 1.0
    if n % 2 == 0:
        weights[-1] = 1.0
    mask = (freqs >= band[0]) & (freqs <= band[1])
    power = np.sum((np.abs(spectrum) ** 2 * weights)[..., mask], axis=-1) / n**2
    return float(np.mean(power))


def _pink_noise(rng: np.random.Generator, n_channels: int, n: int, fs: float) -> np.ndarray:
    """Unit-variance 1/f-shaped rows (spectrum flattened below the lowest
    resolvable frequency so the DC bin stays finite)."""
    white = rng.standard_normal((n_channels, n))
    spectrum = np.fft.rfft(white, axis=-1)
    freqs = np.fft.rfftfreq(n, d=1.0 / fs)
    f_lo = freqs[1]
    spectrum /= np.sqrt(np.maximum(freqs, f_lo))
    pink = np.fft.irfft(spectrum, n=n, axis=-1)
    return pink / pink.std(axis=-1, keepdims=True)


def artifact_schedule(cfg: SynthConfig) -> np.ndarray:
    """Corpus-wide burst times (stream [seed, 5]), sorted, in seconds.

    Artifacts in film watching are largely stimulus-evoked -- blinks and
    startles recur at the same movie moments for every viewer -- so the
    schedule is drawn once per corpus and shared across subjects; each
    subject then jitters the timing and strength individually.
    """
    rng = np.random.default_rng([cfg.seed, 5])
    n_events = rng.poisson(cfg.artifact_rate_per_min * cfg.duration_s / 60.0)
    return np.sort(rng.uniform(0.0, cfg.duration_s, size=n_events))


def _artifact_envelope(rng: np.random.Generator, cfg: SynthConfig, n: int) -> np.ndarray:
    """(64, n) multiplicative envelope with Hann-shaped amplitude bursts.

    Burst centers come from the shared corpus schedule with a per-subject
    latency jitter; bursts hit all channels the way motion/EMG artifacts
    do, with per-event and per-channel strength jitter.  No events (or
    rate 0) leaves the envelope identically 1.
    """
    centers = artifact_schedule(cfg)
    latency = rng.uniform(-0.4, 0.4, size=centers.size)
    event_scale = rng.uniform(0.5, 1.5, size=centers.size)
    chan_jitter = rng.uniform(0.5, 1.5, size=64)
    bump = np.zeros(n)
    width = max(int(round(cfg.artifact_width_s * cfg.fs)), 2)
    window = np.hanning(width)
    for c, dt, scale in zip(centers, latency, event_scale):
        start = int(round((c + dt) * cfg.fs)) - width // 2
        lo, hi = max(start, 0), min(start + width, n)
        if hi > lo:
            bump[lo:hi] = np.maximum(bump[lo:hi], scale * window[lo - start : hi - start])
    return 1.0 + (cfg.artifact_gain - 1.0) * chan_jitter[:, None] * bump[None, :]


def generate_subject(
    cfg: SynthConfig,
    track: VideoFeatureTrack,
    subject_index: int,
    drive: np.ndarray | None = None,
) -> EEGRecording:
    """One subject's raw EEG.  ``drive`` may be precomputed once per corpus
    (it does not depend on the subject)."""
    if not 0 <= subject_index < cfg.n_subjects:
        raise ConfigError(f"subject index {subject_index} outside 0..{cfg.n_subjects - 1}")
    if drive is None:
        drive = latent_drive(cfg, track)
    rng = np.random.default_rng([cfg.seed, 2, subject_index])
    n = cfg.n_samples
    stim = list(cfg.stimulus_channels)

    # Mixing matrix: unit-norm rows on stimulus channels, zero elsewhere.
    # Rows blend the corpus-wide template with a subject-private direction.
    template = mixing_template(cfg)
    private = rng.standard_normal((len(stim), cfg.latent_dim))
    private /= np.linalg.norm(private, axis=1, keepdims=True)
    rows = (1.0 - cfg.mixing_jitter) * template + cfg.mixing_jitter * private
    mixing = np.zeros((64, cfg.latent_dim))
    mixing[stim] = rows / np.linalg.norm(rows, axis=1, keepdims=True)
    eeg = mixing @ drive

    # Total powers over the full spectrum; see the module docstring.
    stim_power = _band_power(eeg[stim], cfg.fs)
    noise = _pink_noise(rng, 64, n, cfg.fs)
    noise *= np.sqrt(stim_power / cfg.snr / _band_power(noise, cfg.fs))
    # Confound amplitude references the noise floor inside its own alpha
    # band: it must dominate alpha-band features (subject signature) without
    # touching the broadband stimulus-to-interference budget.
    alpha_floor = _band_power(noise, cfg.fs, band=(8.0, 13.0))

    t = np.arange(n) / cfg.fs
    f_alpha = rng.uniform(8.0, 13.0)
    phase = rng.uniform(0.0, 2 * np.pi)
    amp_factor = rng.uniform(0.7, 1.3)
    f_env = rng.uniform(0.05, 0.2)
    phase_env = rng.uniform(0.0, 2 * np.pi)
    gains = rng.uniform(0.5, 1.5, size=64)
    envelope = 1.0 + 0.3 * np.sin(2 * np.pi * f_env * t + phase_env)
    confound = (
        cfg.subject_confound_strength
        * amp_factor
        * np.sqrt(alpha_floor)
        * gains[:, None]
        * envelope
        * np.sin(2 * np.pi * f_alpha * t + phase)
    )

    # Artifact bursts ride on the baseline noise after the snr and the
    # confound floor are fixed, so they locally bury the stimulus without
    # redefining either budget.
    noise *= _artifact_envelope(rng, cfg, n)

    data = ((eeg + noise + confound) * EEG_SCALE).astype(np.float32)
    return EEGRecording(
        subject_id=subject_id(subject_index),
        channel_names=CHANNEL_NAMES_64,
        fs=float(cfg.fs),
        data=data,
    )


def generate_corpus(cfg: SynthConfig, out_dir: str | Path) -> DatasetManifest:
    """Write track + per-subject recordings + manifest; returns the manifest.

    Deterministic per config: two runs with the same seed produce
    byte-identical files.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    track = generate_track(cfg)
    drive = latent_drive(cfg, track)

    track_path = "video_track.f32"
    save_array(out_dir / track_path, track.features)
    subjects = []
    for i in range(cfg.n_subjects):
        rec = generate_subject(cfg, track, i, drive)
        rel = f"eeg_{rec.subject_id}.f32"
        save_array(out_dir / rel, rec.data)
        subjects.append(
            SubjectEntry(
                subject_id=rec.subject_id,
                eeg_path=rel,
                shape=rec.data.shape,
                fs=rec.fs,
            )
        )

    split = split_by_subject(
        [s.subject_id for s in subjects],
        cfg.n_train,
        cfg.n_val,
        cfg.n_test,
        seed=[cfg.seed, 3],
    )
    manifest = DatasetManifest(
        subjects=subjects,
        video_tracks=[
            TrackEntry(
                track_id=track.track_id,
                path=track_path,
                shape=track.features.shape,
                fps=track.fps,
            )
        ],
        split=split,
        metadata={
            "generator": "synthetic-forward-model",
            "synth_config": asdict(cfg),
            "config_hash": config_hash(cfg),
            "preprocessed": False,
        },
    )
    save_manifest(manifest, out_dir / "manifest.json")
    return manifest


# ---------------------------------------------------------------------------
# Learnability probe
# ---------------------------------------------------------------------------

def _probe_features(
    samples: list[TrialSample],
    drive: np.ndarray,
    cfg: SynthConfig,
) -> np.ndarray:
    """Port-difference correlation features for two-way samples.

    For each sample and port, correlate each stimulus-channel EEG trace with
    each latent drive trace over the candidate's source window; the feature
    vector is the (port a - port b) difference, flattened over
    (stimulus channel, latent).
    """
    stim = list(cfg.stimulus_channels)
    feats = []
    for s in samples:
        if s.video_b is None:
            raise ConfigError("probe needs two-way samples")
        n = s.eeg_segment.shape[-1]
        eeg = np.asarray(s.eeg_segment[stim], dtype=np.float64)
        eeg = eeg - eeg.mean(axis=-1, keepdims=True)
        eeg /= np.linalg.norm(eeg, axis=-1, keepdims=True) + 1e-12

        segment_s = n / cfg.fs
        match_i0 = int(round(s.start_s * cfg.fs))
        imp_i0 = int(round((s.start_s + segment_s + s.imposter_offset_s) * cfg.fs))
        # Reconstruct which window feeds which port from the label.
        a_i0, b_i0 = (match_i0, imp_i0) if s.label == 1 else (imp_i0, match_i0)
        per_port = []
        for i0 in (a_i0, b_i0):
            d = np.asarray(drive[:, i0 : i0 + n], dtype=np.float64)
            d = d - d.mean(axis=-1, keepdims=True)
            d /= np.linalg.norm(d, axis=-1, keepdims=True) + 1e-12
            per_port.append(eeg @ d.T)  # [n_stim x K] correlations
        feats.append((per_port[0] - per_port[1]).reshape(-1))
    return np.stack(feats)


def probe_accuracy(
    train_samples: list[TrialSample],
    test_samples: list[TrialSample],
    track: VideoFeatureTrack,
    cfg: SynthConfig,
) -> float:
    """Accuracy of a least-squares linear probe on correlation features.

    A generator self-check: fit w on the training samples' features against
    +-1 labels, classify held-out samples by sign(x @ w).  Well above chance
    means the planted response survives end to end, so the deep models have
    signal to find.
    """
    drive = latent_drive(cfg, track)
    X_tr = _probe_features(train_samples, drive, cfg)
    X_te = _probe_features(test_samples, drive, cfg)
    y_tr = np.array([1.0 if s.label == 1 else -1.0 for s in train_samples])
    y_te = np.array([1 if s.label == 1 else 0 for s in test_samples])
    A = np.concatenate([X_tr, np.ones((len(X_tr), 1))], axis=1)
    w, *_ = np.linalg.lstsq(A, y_tr, rcond=None)
    scores = np.concatenate([X_te, np.ones((len(X_te), 1))], axis=1) @ w
    pred = (scores > 0).astype(int)
    return float(np.mean(pred == y_te))
