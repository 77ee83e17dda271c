"""Post-training analyses: offset sweep, channel attribution, embeddings,
hand-crafted EEG features, and subject-silhouette scoring.

The attribution tap is the EEG branch's 64-channel activation nearest the
input (the input itself, or the point-wise convolution output when the
branch starts with one), so scores map one-to-one onto electrodes.
"""

from __future__ import annotations

import csv
import json
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
import torch
from scipy.spatial.distance import cdist

from .core import (
    CHANNEL_NAMES_64,
    Checkpoint,
    ConfigError,
    DataError,
    EEGRecording,
    SegmentRef,
    TrialSample,
    VideoFeatureTrack,
    save_array,
)
from .modelzoo import MatchModel, cosine_head, model_from_checkpoint
from .preprocess import bandpass_filter
from .sampling import SamplingConfig, build_offset_dataset
from .training import accuracy_from_logits, iter_batches


@dataclass(frozen=True)
class BandDef:
    name: str
    lo: float
    hi: float


#: Canonical EEG rhythm bands used for the hand-crafted feature set.
BANDS = (
    BandDef("delta", 1.0, 3.0),
    BandDef("theta", 4.0, 7.0),
    BandDef("alpha", 8.0, 13.0),
    BandDef("beta", 14.0, 30.0),
    BandDef("gamma", 31.0, 50.0),
    BandDef("high_gamma", 51.0, 100.0),
)

#: Left/right electrode pairs for the asymmetry coefficient.
ASYMMETRY_PAIRS = (
    ("F7", "F8"),
    ("F3", "F4"),
    ("C3", "C4"),
    ("P3", "P4"),
    ("O1", "O2"),
    ("T7", "T8"),
)

FEATURES_PER_CHANNEL = 5  # activity, mobility, complexity, DE, PFD


@dataclass
class ChannelScoreMap:
    """Per-electrode attribution scores aggregated over training runs."""

    channel_names: tuple[str, ...]
    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self) -> None:
        self.channel_names = tuple(self.channel_names)
        self.mean = np.asarray(self.mean, dtype=np.float64)
        self.std = np.asarray(self.std, dtype=np.float64)
        n = len(self.channel_names)
        if n != 64 or self.mean.shape != (64,) or self.std.shape != (64,):
            raise DataError(f"channel score map needs 64 entries, got {n}")
        for arr, what in ((self.mean, "mean"), (self.std, "std")):
            if not np.isfinite(arr).all():
                raise DataError(f"non-finite {what} channel scores")
            if arr.min() < 0 or arr.max() > 1:
                raise DataError(f"{what} channel scores outside [0, 1]")

    def top_channels(self, k: int = 8) -> list[str]:
        order = np.argsort(self.mean)[::-1]
        return [self.channel_names[i] for i in order[:k]]


# ---------------------------------------------------------------------------
# Offset sweep
# ---------------------------------------------------------------------------

def offset_sweep(
    checkpoint: Checkpoint | MatchModel,
    recordings: Sequence[EEGRecording],
    track: VideoFeatureTrack,
    offsets: Sequence[float],
    cfg: SamplingConfig | None = None,
    seed: int | None = None,
) -> list[tuple[float, float]]:
    """Accuracy as a function of imposter offset t_sep (seconds).

    Builds fresh evaluation samples per offset, with the imposter starting at
    matching_end + t_sep.  At t_sep = -segment_s the two candidate videos are
    identical, so accuracy sits at chance up to label noise.
    """
    if not offsets:
        raise ConfigError("offset sweep needs at least one offset")
    model = checkpoint
    if isinstance(model, Checkpoint):
        model = model_from_checkpoint(model)
    if cfg is None:
        cfg = SamplingConfig()
    curve: list[tuple[float, float]] = []
    for t in offsets:
        samples = build_offset_dataset(recordings, track, float(t), cfg, seed=seed)
        logits = _model_logits(model, samples)
        labels = np.array([s.label for s in samples])
        curve.append((float(t), accuracy_from_logits(logits, labels)))
    return curve


def _model_logits(model: MatchModel, samples: Sequence[TrialSample], batch_size: int = 256) -> np.ndarray:
    model.eval()
    out = []
    with torch.no_grad():
        for eeg, va, vb, _ in iter_batches(samples, batch_size):
            out.append(model(eeg, va) if vb is None else model(eeg, va, vb))
    return torch.cat(out).numpy()


# ---------------------------------------------------------------------------
# Grad-CAM channel attribution
# ---------------------------------------------------------------------------

def _gradcam_single_run(model: MatchModel, samples: Sequence[TrialSample], batch_size: int) -> np.ndarray:
    model.eval()
    total = np.zeros(model.eeg_channels)
    count = 0
    for eeg, va, vb, labels in iter_batches(samples, batch_size):
        eeg = eeg.requires_grad_(True)
        tap, ef = model.eeg_activation(eeg)
        sims = cosine_head(ef, model.video_branch(va))
        if vb is not None:
            sims = torch.cat([sims, cosine_head(ef, model.video_branch(vb))], dim=-1)
        logits = model.fc(sims).squeeze(-1)
        # Matching-class score: the logit for label-1 samples, its negation
        # for label-0 samples (sigma(-z) is the probability of class 0).
        sign = labels * 2.0 - 1.0
        grad = torch.autograd.grad((logits * sign).sum(), tap)[0]
        weights = grad.mean(dim=-1)
        pooled = tap.mean(dim=-1)
        scores = torch.relu(weights * pooled)
        total += scores.sum(dim=0).detach().numpy()
        count += len(labels)
    return total / count


def normalize_scores(scores: np.ndarray) -> np.ndarray:
    """Min-max to [0, 1]; flat score vectors are an error, not a divide-by-zero."""
    scores = np.asarray(scores, dtype=np.float64)
    span = scores.max() - scores.min()
    if span <= 0:
        raise DataError("channel scores have zero dynamic range")
    return (scores - scores.min()) / span


def gradcam_channel_scores(
    checkpoints: Checkpoint | Sequence[Checkpoint],
    samples: Sequence[TrialSample],
    batch_size: int = 64,
) -> ChannelScoreMap:
    """Electrode attribution map averaged over samples and training runs.

    Per sample, channel weights are the time-averaged gradient of the
    matching-class logit at the tap; the channel score is
    ReLU(weight * time-averaged activation).  Scores are averaged over
    samples, min-max normalized per run, then mean/std across runs.
    """
    if isinstance(checkpoints, Checkpoint):
        checkpoints = [checkpoints]
    if not checkpoints:
        raise ConfigError("need at least one checkpoint")
    if not samples:
        raise DataError("need a non-empty sample set")
    runs = []
    names: tuple[str, ...] | None = None
    for ck in checkpoints:
        model = model_from_checkpoint(ck)
        runs.append(normalize_scores(_gradcam_single_run(model, samples, batch_size)))
        if names is None:
            names = CHANNEL_NAMES_64[: model.eeg_channels]
    stacked = np.stack(runs)
    return ChannelScoreMap(
        channel_names=names,
        mean=stacked.mean(axis=0),
        std=stacked.std(axis=0),
    )


# ---------------------------------------------------------------------------
# Deep embeddings
# ---------------------------------------------------------------------------

def extract_embedding(model_or_checkpoint: MatchModel | Checkpoint, eeg_segment) -> np.ndarray:
    """Flattened EEG-branch output for one segment (length F * T_out)."""
    model = model_or_checkpoint
    if isinstance(model, Checkpoint):
        model = model_from_checkpoint(model)
    model.eval()
    x = torch.as_tensor(np.asarray(eeg_segment), dtype=torch.float32)
    if x.dim() == 2:
        x = x.unsqueeze(0)
    if x.dim() != 3 or x.shape[1] != model.eeg_channels:
        raise DataError(f"expected [channels x samples] EEG segment, got {tuple(x.shape)}")
    with torch.no_grad():
        feat = model.eeg_branch(x)
    return feat[0].reshape(-1).numpy()


def extract_embeddings(
    model_or_checkpoint: MatchModel | Checkpoint,
    segments: Sequence[np.ndarray],
    batch_size: int = 64,
) -> np.ndarray:
    model = model_or_checkpoint
    if isinstance(model, Checkpoint):
        model = model_from_checkpoint(model)
    model.eval()
    out = []
    with torch.no_grad():
        for lo in range(0, len(segments), batch_size):
            batch = np.stack([np.asarray(s) for s in segments[lo : lo + batch_size]])
            feat = model.eeg_branch(torch.as_tensor(batch, dtype=torch.float32))
            out.append(feat.reshape(feat.shape[0], -1).numpy())
    return np.concatenate(out, axis=0)


# ---------------------------------------------------------------------------
# Hand-crafted features
# ---------------------------------------------------------------------------

def _hjorth_block(x: np.ndarray) -> tuple[np.ndarray, ...]:
    """activity, mobility, complexity, DE, PFD for [channels x samples]."""
    act = x.var(axis=-1)
    dx = np.diff(x, axis=-1)
    ddx = np.diff(dx, axis=-1)
    var_dx = dx.var(axis=-1)
    var_ddx = ddx.var(axis=-1)
    with np.errstate(divide="ignore", invalid="ignore"):
        mob = np.where(act > 0, np.sqrt(var_dx / act), 0.0)
        mob_dx = np.where(var_dx > 0, np.sqrt(var_ddx / var_dx), 0.0)
        comp = np.where(mob > 0, mob_dx / mob, 0.0)
        de = np.where(act > 0, 0.5 * np.log(2 * np.pi * np.e * act), 0.0)
    n = x.shape[-1]
    n_delta = np.sum(dx[..., 1:] * dx[..., :-1] < 0, axis=-1)
    pfd = np.log10(n) / (np.log10(n) + np.log10(n / (n + 0.4 * n_delta)))
    return act, mob, comp, de, pfd


def reject_artifacts(
    rec: EEGRecording,
    segments: Sequence[SegmentRef],
    z_max: float = 3.0,
) -> list[SegmentRef]:
    """Drop segments contaminated by high-amplitude artifacts.

    A segment is rejected when any channel's variance inside it exceeds
    z_max times that channel's median variance over 1 s blocks of the whole
    recording -- the usual amplitude criterion applied before feature
    analysis.  Returns the surviving segments in order; raises if none
    survive (a threshold that rejects everything is a config problem, not
    an empty result).
    """
    if z_max <= 1.0:
        raise ConfigError(f"z_max must exceed 1, got {z_max}")
    block = int(round(rec.fs))
    n_blocks = rec.n_samples // block
    if n_blocks < 2:
        raise DataError("recording too short to estimate a variance baseline")
    blocks = rec.data[:, : n_blocks * block].reshape(rec.data.shape[0], n_blocks, block)
    baseline = np.median(blocks.var(axis=-1), axis=-1)  # per channel
    if np.any(baseline <= 0):
        raise DataError("flat channel: variance baseline is zero")
    kept = []
    for seg in segments:
        i0 = int(round(seg.start_s * rec.fs))
        i1 = i0 + int(round(seg.duration_s * rec.fs))
        if i0 < 0 or i1 > rec.n_samples:
            raise DataError(f"segment at {seg.start_s} s outside recording")
        ratio = rec.data[:, i0:i1].var(axis=-1) / baseline
        if np.max(ratio) <= z_max:
            kept.append(seg)
    if not kept:
        raise DataError(f"artifact rejection at z_max={z_max} removed every segment")
    return kept


def traditional_features(
    rec: EEGRecording,
    segments: Sequence[SegmentRef],
    bands: Sequence[BandDef] = BANDS,
) -> np.ndarray:
    """Per-segment hand-crafted feature matrix [n_segments x n_features].

    Per band (band-passed copy of the recording), per channel: Hjorth
    activity/mobility/complexity, differential entropy, Petrosian fractal
    dimension; then one asymmetry coefficient (P_L - P_R)/(P_L + P_R) of
    band power per symmetric electrode pair.  Feature length is
    len(bands) * (n_channels * 5 + n_pairs); 1956 at defaults.  Zero-variance
    channel/band combinations produce 0 features with a warning.
    """
    if not segments:
        raise DataError("need at least one segment")
    pair_idx = []
    for left, right in ASYMMETRY_PAIRS:
        try:
            pair_idx.append((rec.channel_names.index(left), rec.channel_names.index(right)))
        except ValueError as exc:
            raise DataError(f"montage lacks asymmetry electrode: {exc}") from exc
    bounds = []
    for seg in segments:
        i0 = int(round(seg.start_s * rec.fs))
        n = int(round(seg.duration_s * rec.fs))
        if i0 < 0 or i0 + n > rec.n_samples:
            raise DataError(f"segment at {seg.start_s} s outside recording")
        bounds.append((i0, i0 + n))

    blocks = []
    degenerate = 0
    for band in bands:
        filtered = bandpass_filter(rec.data, rec.fs, band.lo, band.hi)
        rows = []
        for i0, i1 in bounds:
            x = filtered[:, i0:i1]
            act, mob, comp, de, pfd = _hjorth_block(x)
            degenerate += int(np.sum(act == 0))
            per_channel = np.stack([act, mob, comp, de, pfd], axis=1).reshape(-1)
            power = np.mean(x**2, axis=-1)
            asym = []
            for li, ri in pair_idx:
                denom = power[li] + power[ri]
                asym.append((power[li] - power[ri]) / denom if denom > 0 else 0.0)
            rows.append(np.concatenate([per_channel, asym]))
        blocks.append(np.stack(rows))
    if degenerate:
        warnings.warn(
            f"{degenerate} zero-variance channel/band combinations; "
            f"their mobility/complexity/entropy features were set to 0"
        )
    return np.concatenate(blocks, axis=1)


# ---------------------------------------------------------------------------
# Silhouette
# ---------------------------------------------------------------------------

def silhouette(features: np.ndarray, labels: Sequence) -> tuple[float, dict]:
    """Mean silhouette of samples grouped by label, plus per-label means.

    s(i) = (b - a) / max(a, b) with a = mean distance to same-label others
    and b = the smallest mean distance to another label's samples.
    Singletons, and samples with a = b = 0, score 0.
    """
    X = np.asarray(features, dtype=np.float64)
    if X.ndim != 2:
        raise DataError(f"features must be [n x d], got shape {X.shape}")
    n = X.shape[0]
    labels = list(labels)
    if len(labels) != n:
        raise DataError(f"{n} feature rows but {len(labels)} labels")
    if n < 2:
        raise DataError("silhouette needs at least two samples")
    uniq = sorted(set(labels), key=str)
    if len(uniq) < 2:
        raise DataError("silhouette needs at least two distinct labels")

    D = cdist(X, X)
    groups = {lab: np.flatnonzero([l == lab for l in labels]) for lab in uniq}
    sums = np.stack([D[:, idx].sum(axis=1) for idx in groups.values()], axis=1)
    sizes = np.array([len(idx) for idx in groups.values()], dtype=np.float64)
    own = np.array([uniq.index(l) for l in labels])

    s = np.zeros(n)
    for i in range(n):
        g = own[i]
        if sizes[g] == 1:
            continue
        a = sums[i, g] / (sizes[g] - 1)
        others = [sums[i, h] / sizes[h] for h in range(len(uniq)) if h != g]
        b = min(others)
        denom = max(a, b)
        s[i] = (b - a) / denom if denom > 0 else 0.0

    per_label = {lab: float(s[idx].mean()) for lab, idx in groups.items()}
    return float(s.mean()), per_label


# ---------------------------------------------------------------------------
# Report export
# ---------------------------------------------------------------------------

def export_report(
    out_dir: str | Path,
    sweep: Sequence[tuple[float, float]] | None = None,
    channel_scores: ChannelScoreMap | None = None,
    silhouette_results: Mapping | None = None,
    accuracies: Mapping | None = None,
    embeddings: np.ndarray | None = None,
    embedding_labels: Sequence | None = None,
) -> dict[str, Path]:
    """Write whichever analysis artifacts are provided; returns name -> path."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written: dict[str, Path] = {}
    if sweep is not None:
        path = out_dir / "offset_sweep.csv"
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["t_sep_s", "accuracy"])
            for t, acc in sweep:
                writer.writerow([f"{t:g}", f"{acc:.6f}"])
        written["sweep"] = path
    if channel_scores is not None:
        path = out_dir / "channel_scores.csv"
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["channel", "name", "mean", "std"])
            for i, name in enumerate(channel_scores.channel_names):
                writer.writerow(
                    [i, name, f"{channel_scores.mean[i]:.6f}", f"{channel_scores.std[i]:.6f}"]
                )
        written["channel_scores"] = path
    if silhouette_results is not None:
        path = out_dir / "silhouette.json"
        with open(path, "w") as fh:
            json.dump(silhouette_results, fh, indent=2, sort_keys=True)
            fh.write("\n")
        written["silhouette"] = path
    if accuracies is not None:
        path = out_dir / "accuracy.json"
        with open(path, "w") as fh:
            json.dump(accuracies, fh, indent=2, sort_keys=True)
            fh.write("\n")
        written["accuracy"] = path
    if embeddings is not None:
        arr_path = out_dir / "embeddings.f32"
        save_array(arr_path, embeddings)
        meta = {
            "shape": list(np.asarray(embeddings).shape),
            "labels": [str(l) for l in embedding_labels] if embedding_labels is not None else None,
        }
        meta_path = out_dir / "embeddings.json"
        with open(meta_path, "w") as fh:
            json.dump(meta, fh, indent=2)
            fh.write("\n")
        written["embeddings"] = arr_path
        written["embeddings_meta"] = meta_path
    return written
