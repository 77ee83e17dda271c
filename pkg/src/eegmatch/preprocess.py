"""EEG conditioning: power-line notch, broad band-pass, amplitude normalization.

All filtering is zero-phase (forward-backward), applied per channel.  The
normalization applies one global scale per recording so inter-channel
amplitude ratios survive for topographic analysis.  Filters compute in
float64 internally; :func:`preprocess_recording` returns the input dtype.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import signal

from .core import ConfigError, DataError, EEGRecording


@dataclass
class PreprocessConfig:
    notch_hz: float = 50.0
    notch_q: float = 30.0
    bp_lo_hz: float = 1.0
    bp_hi_hz: float = 200.0
    bp_order: int = 4
    norm_target: float = 0.8

    def __post_init__(self) -> None:
        if self.notch_hz <= 0 or self.notch_q <= 0:
            raise ConfigError("notch_hz and notch_q must be positive")
        if self.bp_order < 1:
            raise ConfigError(f"bp_order must be >= 1, got {self.bp_order}")
        if self.norm_target <= 0:
            raise ConfigError(f"norm_target must be positive, got {self.norm_target}")


def notch_filter(data: np.ndarray, fs: float, f0: float = 50.0, q: float = 30.0) -> np.ndarray:
    """Zero-phase IIR notch at ``f0`` Hz with quality factor ``q``.

    ``data`` is ``[channels x samples]``; each channel filtered independently.
    """
    if fs <= 2 * f0:
        raise ConfigError(f"need fs > 2*f0, got fs={fs}, f0={f0}")
    data = np.atleast_2d(np.asarray(data, dtype=np.float64))
    b, a = signal.iirnotch(f0, q, fs=fs)
    padlen = 3 * max(len(a), len(b))
    if data.shape[-1] <= padlen:
        raise DataError(
            f"signal too short for notch warm-up: {data.shape[-1]} samples <= {padlen}"
        )
    return signal.filtfilt(b, a, data, axis=-1)


def bandpass_filter(
    data: np.ndarray, fs: float, lo: float = 1.0, hi: float = 200.0, order: int = 4
) -> np.ndarray:
    """Zero-phase Butterworth band-pass of the given order, per channel."""
    if not (0 < lo < hi < fs / 2):
        raise ConfigError(f"need 0 < lo < hi < fs/2, got lo={lo}, hi={hi}, fs={fs}")
    data = np.atleast_2d(np.asarray(data, dtype=np.float64))
    sos = signal.butter(order, [lo, hi], btype="bandpass", output="sos", fs=fs)
    # sosfiltfilt's default padlen is 3x the effective filter order, matching
    # the edge-handling contract of filtfilt above.
    n_sections = sos.shape[0]
    padlen = 3 * (2 * n_sections + 1)
    if data.shape[-1] <= padlen:
        raise DataError(
            f"signal too short for band-pass warm-up: {data.shape[-1]} samples <= {padlen}"
        )
    return signal.sosfiltfilt(sos, data, axis=-1)


def normalize_amplitude(data: np.ndarray, target: float = 0.8) -> np.ndarray:
    """Scale the whole array so its global maximum magnitude equals ``target``."""
    data = np.asarray(data)
    peak = np.max(np.abs(data))
    if not np.isfinite(peak):
        raise DataError("cannot normalize: data contains NaN/Inf")
    if peak == 0:
        raise DataError("cannot normalize an all-zero recording (scale undefined)")
    return data * (target / peak)


def preprocess_recording(rec: EEGRecording, cfg: PreprocessConfig | None = None) -> EEGRecording:
    """Notch -> band-pass -> normalize, returning a new recording.

    Output dtype matches the input recording's dtype (filters run in float64
    internally), so corpora stored as float32 stay float32 after conditioning.
    """
    if cfg is None:
        cfg = PreprocessConfig()
    out = notch_filter(rec.data, rec.fs, cfg.notch_hz, cfg.notch_q)
    out = bandpass_filter(out, rec.fs, cfg.bp_lo_hz, cfg.bp_hi_hz, cfg.bp_order)
    out = normalize_amplitude(out, cfg.norm_target)
    out = np.ascontiguousarray(out, dtype=rec.data.dtype)
    processed = EEGRecording(
        subject_id=rec.subject_id,
        channel_names=rec.channel_names,
        fs=rec.fs,
        data=out,
    )
    processed.validate(require_finite=True)
    return processed
