"""Segment enumeration, imposter pairing, dataset assembly, subject splits.

Conventions fixed here and relied on everywhere downstream:

* segments start on the shift grid (0, shift_s, 2*shift_s, ...);
* t_sep = imposter_start - matching_end, so the positive imposter sits at
  +pos_gap_s and the negative one at -(neg_lead_s + segment_s); identical
  matching/imposter videos occur at t_sep = -segment_s;
* a segment is emitted only when BOTH its imposters fit inside the recording
  (also in imbalanced mode, so the two modes share identical segment sets);
* the matching segment may touch the recording end, imposters may not.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .core import (
    ConfigError,
    DataError,
    DatasetManifest,
    EEGRecording,
    SegmentRef,
    SplitSpec,
    TrialSample,
    VideoFeatureTrack,
)

_EPS = 1e-9

MODES = ("balanced", "imbalanced")


@dataclass
class SamplingConfig:
    segment_s: float = 3.0
    shift_s: float = 1.0
    pos_gap_s: float = 1.0
    neg_lead_s: float = 4.0
    mode: str = "balanced"
    rng_seed: int = 0
    require_imposters: bool = True

    def __post_init__(self) -> None:
        if self.segment_s <= 0 or self.shift_s <= 0:
            raise ConfigError("segment_s and shift_s must be positive")
        if self.pos_gap_s < 0:
            raise ConfigError(f"pos_gap_s must be >= 0, got {self.pos_gap_s}")
        if self.neg_lead_s < self.segment_s:
            raise ConfigError(
                f"neg_lead_s ({self.neg_lead_s}) must be >= segment_s "
                f"({self.segment_s}) so the negative imposter cannot overlap"
            )
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")


def _imposter_fits(imp_start: float, segment_s: float, duration_s: float) -> bool:
    # Strict upper bound: an imposter flush against the recording end is
    # rejected, which is what pins the last feasible start at 202 s for a
    # 210 s recording under default gaps.
    return imp_start >= -_EPS and imp_start + segment_s < duration_s - _EPS


def enumerate_segments(duration_s: float, cfg: SamplingConfig) -> list[SegmentRef]:
    """All feasible matching-segment windows for one recording.

    Returns an empty list when nothing fits; never raises.
    """
    segments: list[SegmentRef] = []
    k = 0
    while True:
        start = k * cfg.shift_s
        if start + cfg.segment_s > duration_s + _EPS:
            break
        ok = True
        if cfg.require_imposters:
            pos_start = start + cfg.segment_s + cfg.pos_gap_s
            neg_start = start - cfg.neg_lead_s
            ok = _imposter_fits(pos_start, cfg.segment_s, duration_s) and _imposter_fits(
                neg_start, cfg.segment_s, duration_s
            )
        if ok:
            segments.append(SegmentRef(start_s=start, duration_s=cfg.segment_s))
        k += 1
    return segments


def make_imposter(
    seg: SegmentRef,
    side: str,
    cfg: SamplingConfig,
    duration_s: float | None = None,
) -> SegmentRef:
    """Imposter window for a matching segment; ``side`` is ``pos`` or ``neg``.

    ``pos`` starts pos_gap_s after the matching end (t_sep = +1 s at
    defaults); ``neg`` starts neg_lead_s before the matching start
    (t_sep = -(neg_lead_s + segment_s) = -7 s at defaults).
    """
    if side == "pos":
        start = seg.start_s + cfg.segment_s + cfg.pos_gap_s
    elif side == "neg":
        start = seg.start_s - cfg.neg_lead_s
    else:
        raise ConfigError(f"side must be 'pos' or 'neg', got {side!r}")
    if start < -_EPS:
        raise DataError(
            f"imposter start {start:.3f} s out of bounds for segment at {seg.start_s} s"
        )
    if duration_s is not None and not _imposter_fits(start, cfg.segment_s, duration_s):
        raise DataError(
            f"imposter [{start:.3f}, {start + cfg.segment_s:.3f}) s does not fit "
            f"inside a {duration_s} s recording"
        )
    return SegmentRef(start_s=start, duration_s=cfg.segment_s, source_id=seg.source_id)


def t_sep(seg: SegmentRef, imposter: SegmentRef) -> float:
    return imposter.start_s - seg.end_s


def _slice_eeg(rec: EEGRecording, seg: SegmentRef) -> np.ndarray:
    i0 = int(round(seg.start_s * rec.fs))
    n = int(round(seg.duration_s * rec.fs))
    if i0 < 0 or i0 + n > rec.n_samples:
        raise DataError(
            f"EEG slice [{i0}, {i0 + n}) outside recording of {rec.n_samples} samples"
        )
    return rec.data[:, i0 : i0 + n]


def _slice_video(track: VideoFeatureTrack, seg: SegmentRef) -> np.ndarray:
    j0 = int(round(seg.start_s * track.fps))
    n = int(round(seg.duration_s * track.fps))
    if j0 < 0 or j0 + n > track.n_frames:
        raise DataError(
            f"video slice [{j0}, {j0 + n}) outside track of {track.n_frames} frames"
        )
    return track.features[:, j0 : j0 + n]


def _check_coverage(rec: EEGRecording, track: VideoFeatureTrack) -> None:
    if track.duration_s + _EPS < rec.duration_s:
        raise DataError(
            f"video track covers {track.duration_s:.2f} s but recording "
            f"{rec.subject_id!r} lasts {rec.duration_s:.2f} s"
        )


def build_dataset(
    recordings: Sequence[EEGRecording],
    track: VideoFeatureTrack,
    cfg: SamplingConfig,
) -> list[TrialSample]:
    """Two-way samples for a set of recordings against one feature track.

    Balanced mode emits two samples per segment (positive and negative
    imposter); imbalanced emits the positive one only.  The matching video
    lands on port a or b by a seeded fair coin; label is 1 iff port a holds
    the matching video.  EEG/video arrays are views into the inputs.
    """
    rng = np.random.default_rng(cfg.rng_seed)
    sides = ("pos", "neg") if cfg.mode == "balanced" else ("pos",)
    samples: list[TrialSample] = []
    for rec in recordings:
        _check_coverage(rec, track)
        for seg in enumerate_segments(rec.duration_s, cfg):
            eeg = _slice_eeg(rec, seg)
            matching = _slice_video(track, seg)
            for side in sides:
                imp_ref = make_imposter(seg, side, cfg, rec.duration_s)
                imposter = _slice_video(track, imp_ref)
                match_on_a = bool(rng.random() < 0.5)
                samples.append(
                    TrialSample(
                        subject_id=rec.subject_id,
                        eeg_segment=eeg,
                        video_a=matching if match_on_a else imposter,
                        video_b=imposter if match_on_a else matching,
                        label=1 if match_on_a else 0,
                        imposter_offset_s=t_sep(seg, imp_ref),
                        start_s=seg.start_s,
                    )
                )
    return samples


def build_one_way_dataset(
    recordings: Sequence[EEGRecording],
    track: VideoFeatureTrack,
    cfg: SamplingConfig,
) -> list[TrialSample]:
    """Single-video samples: per segment one matching (label 1) plus one
    mismatching sample (label 0) per enabled imposter side.

    The matching sample records offset -segment_s (its video IS the matching
    window); imposter samples record their t_sep.
    """
    sides = ("pos", "neg") if cfg.mode == "balanced" else ("pos",)
    samples: list[TrialSample] = []
    for rec in recordings:
        _check_coverage(rec, track)
        for seg in enumerate_segments(rec.duration_s, cfg):
            eeg = _slice_eeg(rec, seg)
            samples.append(
                TrialSample(
                    subject_id=rec.subject_id,
                    eeg_segment=eeg,
                    video_a=_slice_video(track, seg),
                    video_b=None,
                    label=1,
                    imposter_offset_s=-cfg.segment_s,
                    start_s=seg.start_s,
                )
            )
            for side in sides:
                imp_ref = make_imposter(seg, side, cfg, rec.duration_s)
                samples.append(
                    TrialSample(
                        subject_id=rec.subject_id,
                        eeg_segment=eeg,
                        video_a=_slice_video(track, imp_ref),
                        video_b=None,
                        label=0,
                        imposter_offset_s=t_sep(seg, imp_ref),
                        start_s=seg.start_s,
                    )
                )
    return samples


def build_offset_dataset(
    recordings: Sequence[EEGRecording],
    track: VideoFeatureTrack,
    t_sep_s: float,
    cfg: SamplingConfig,
    seed: int | None = None,
) -> list[TrialSample]:
    """Two-way evaluation samples whose imposter sits at an arbitrary offset.

    The imposter starts at matching_end + t_sep_s; segments where it does not
    fit are skipped.  Raises if no segment is feasible at this offset.
    At t_sep_s = -segment_s the imposter equals the matching video exactly.
    """
    rng = np.random.default_rng(cfg.rng_seed if seed is None else seed)
    samples: list[TrialSample] = []
    base = SamplingConfig(
        segment_s=cfg.segment_s,
        shift_s=cfg.shift_s,
        pos_gap_s=cfg.pos_gap_s,
        neg_lead_s=cfg.neg_lead_s,
        mode=cfg.mode,
        rng_seed=cfg.rng_seed,
        require_imposters=False,
    )
    for rec in recordings:
        _check_coverage(rec, track)
        for seg in enumerate_segments(rec.duration_s, base):
            imp_start = seg.end_s + t_sep_s
            if not _imposter_fits(imp_start, cfg.segment_s, rec.duration_s):
                continue
            imp_ref = SegmentRef(start_s=imp_start, duration_s=cfg.segment_s)
            eeg = _slice_eeg(rec, seg)
            matching = _slice_video(track, seg)
            imposter = _slice_video(track, imp_ref)
            match_on_a = bool(rng.random() < 0.5)
            samples.append(
                TrialSample(
                    subject_id=rec.subject_id,
                    eeg_segment=eeg,
                    video_a=matching if match_on_a else imposter,
                    video_b=imposter if match_on_a else matching,
                    label=1 if match_on_a else 0,
                    imposter_offset_s=t_sep_s,
                    start_s=seg.start_s,
                )
            )
    if not samples:
        raise DataError(f"no feasible segments at t_sep = {t_sep_s} s")
    return samples


def split_by_subject(
    manifest: DatasetManifest | Sequence[str],
    n_train: int = 45,
    n_val: int = 5,
    n_test: int = 6,
    seed: int | Sequence[int] = 0,
) -> SplitSpec:
    """Random subject-level partition; no subject crosses splits."""
    if isinstance(manifest, DatasetManifest):
        ids = [s.subject_id for s in manifest.subjects]
    else:
        ids = list(manifest)
    need = n_train + n_val + n_test
    if min(n_train, n_val, n_test) < 0:
        raise ConfigError("split sizes must be non-negative")
    if len(ids) < need:
        raise ConfigError(f"need {need} subjects for a {n_train}/{n_val}/{n_test} split, have {len(ids)}")
    rng = np.random.default_rng(seed)
    order = [ids[i] for i in rng.permutation(len(ids))]
    split = SplitSpec(
        train=order[:n_train],
        val=order[n_train : n_train + n_val],
        test=order[n_train + n_val : need],
    )
    split.validate()
    return split


def datasets_by_split(
    recordings: Mapping[str, EEGRecording],
    track: VideoFeatureTrack,
    split: SplitSpec,
    cfg: SamplingConfig,
    one_way: bool = False,
) -> dict[str, list[TrialSample]]:
    """Per-split sample lists built with split-derived seeds."""
    builder = build_one_way_dataset if one_way else build_dataset
    out: dict[str, list[TrialSample]] = {}
    for i, name in enumerate(("train", "val", "test")):
        ids = split.subjects_for(name)
        missing = [s for s in ids if s not in recordings]
        if missing:
            raise DataError(f"{name} split references unloaded subjects: {missing}")
        sub_cfg = SamplingConfig(
            segment_s=cfg.segment_s,
            shift_s=cfg.shift_s,
            pos_gap_s=cfg.pos_gap_s,
            neg_lead_s=cfg.neg_lead_s,
            mode=cfg.mode,
            rng_seed=int(np.random.default_rng([cfg.rng_seed, i]).integers(2**31)),
            require_imposters=cfg.require_imposters,
        )
        out[name] = builder([recordings[s] for s in ids], track, sub_cfg)
    return out
