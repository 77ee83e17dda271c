"""Independent reference implementations used to check the package.

Everything here is deliberately naive: plain loops and textbook formulas,
sharing no code with the package under test, so agreement is meaningful.
"""

import math

import numpy as np


def fft_amplitude(x: np.ndarray, fs: float, freq: float) -> float:
    """Single-sided FFT amplitude of ``x`` at the bin nearest ``freq``."""
    x = np.asarray(x, dtype=np.float64)
    n = len(x)
    spectrum = np.abs(np.fft.rfft(x)) / n * 2.0
    freqs = np.fft.rfftfreq(n, d=1.0 / fs)
    return float(spectrum[int(np.argmin(np.abs(freqs - freq)))])


def attenuation_db(before: np.ndarray, after: np.ndarray, fs: float, freq: float) -> float:
    """Positive dB means the component at ``freq`` lost amplitude."""
    a0 = fft_amplitude(before, fs, freq)
    a1 = fft_amplitude(after, fs, freq)
    return 20.0 * math.log10(a0 / max(a1, 1e-300))


def rms(x: np.ndarray) -> float:
    x = np.asarray(x, dtype=np.float64)
    return float(np.sqrt(np.mean(x * x)))


# ---------------------------------------------------------------------------
# Signal features, straight from the formulas
# ---------------------------------------------------------------------------

def brute_variance(x) -> float:
    x = [float(v) for v in x]
    m = sum(x) / len(x)
    return sum((v - m) ** 2 for v in x) / len(x)


def brute_activity(x) -> float:
    return brute_variance(x)


def brute_mobility(x) -> float:
    dx = [x[i + 1] - x[i] for i in range(len(x) - 1)]
    va = brute_variance(x)
    if va == 0:
        return 0.0
    return math.sqrt(brute_variance(dx) / va)


def brute_complexity(x) -> float:
    dx = [x[i + 1] - x[i] for i in range(len(x) - 1)]
    mob = brute_mobility(x)
    if mob == 0:
        return 0.0
    return brute_mobility(dx) / mob


def brute_differential_entropy(x) -> float:
    va = brute_variance(x)
    if va == 0:
        return 0.0
    return 0.5 * math.log(2.0 * math.pi * math.e * va)


def brute_petrosian(x) -> float:
    x = [float(v) for v in x]
    n = len(x)
    dx = [x[i + 1] - x[i] for i in range(n - 1)]
    sign_changes = 0
    for i in range(len(dx) - 1):
        if dx[i] * dx[i + 1] < 0:
            sign_changes += 1
    log_n = math.log10(n)
    return log_n / (log_n + math.log10(n / (n + 0.4 * sign_changes)))


# ---------------------------------------------------------------------------
# Silhouette, naive O(n^2) double loop
# ---------------------------------------------------------------------------

def brute_silhouette(X, labels):
    """(overall mean, per-label means) with the mean-distance definition."""
    X = np.asarray(X, dtype=np.float64)
    n = len(X)

    def dist(i, j):
        return math.sqrt(sum((X[i, d] - X[j, d]) ** 2 for d in range(X.shape[1])))

    scores = []
    for i in range(n):
        same = [j for j in range(n) if labels[j] == labels[i] and j != i]
        if not same:
            scores.append(0.0)
            continue
        a = sum(dist(i, j) for j in same) / len(same)
        b = math.inf
        for lab in set(labels):
            if lab == labels[i]:
                continue
            members = [j for j in range(n) if labels[j] == lab]
            b = min(b, sum(dist(i, j) for j in members) / len(members))
        denom = max(a, b)
        scores.append((b - a) / denom if denom > 0 else 0.0)

    per_label = {}
    for lab in set(labels):
        members = [scores[i] for i in range(n) if labels[i] == lab]
        per_label[lab] = sum(members) / len(members)
    return sum(scores) / n, per_label


# ---------------------------------------------------------------------------
# Convolution arithmetic
# ---------------------------------------------------------------------------

def conv_out_len(length: int, kernel: int, stride: int, dilation: int = 1, padding: int = 0) -> int:
    return (length + 2 * padding - dilation * (kernel - 1) - 1) // stride + 1


def ecvg_parameter_count(feature_dim: int = 256, eeg_channels: int = 64, video_dim: int = 768) -> int:
    """Analytic parameter total for the conv-EEG / GRU-video two-way model."""
    conv = eeg_channels * feature_dim * 40 + feature_dim
    gru = 3 * feature_dim * video_dim + 3 * feature_dim * feature_dim + 6 * feature_dim
    fc = 2 * feature_dim + 1
    return conv + gru + fc
