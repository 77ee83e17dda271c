"""Data model, dataset manifests, and bit-exact array persistence.

A corpus on disk is a directory containing ``manifest.json`` plus one raw
array file per EEG recording and per video feature track.  Array files are
header-free little-endian float32, row-major (``[channels x time]``: each
channel's samples contiguous), so fixtures can be read byte-exactly from any
language.  Shapes are stored only in the manifest, which is the single source
of truth; loading fails rather than truncates when a file size disagrees with
its declared shape.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np
import torch

MANIFEST_VERSION = 1

#: Canonical 64-electrode montage (extended 10-20 ordering). The corpus format
#: fixes this ordering so channel indices map one-to-one onto electrode names.
CHANNEL_NAMES_64 = (
    "Fp1", "Fpz", "Fp2", "AF7", "AF3", "AFz", "AF4", "AF8",
    "F7", "F5", "F3", "F1", "Fz", "F2", "F4", "F6", "F8",
    "FT7", "FC5", "FC3", "FC1", "FCz", "FC2", "FC4", "FC6", "FT8",
    "T7", "C5", "C3", "C1", "Cz", "C2", "C4", "C6", "T8",
    "TP7", "CP5", "CP3", "CP1", "CPz", "CP2", "CP4", "CP6", "TP8",
    "P7", "P5", "P3", "P1", "Pz", "P2", "P4", "P6", "P8",
    "PO7", "PO5", "PO3", "POz", "PO4", "PO6", "PO8",
    "O1", "Oz", "O2", "Iz",
)

N_CHANNELS = len(CHANNEL_NAMES_64)


class DataError(Exception):
    """Raised when files, shapes, or manifest contents are inconsistent."""


class ConfigError(Exception):
    """Raised for invalid configuration values or malformed config files."""


# ---------------------------------------------------------------------------
# Domain types
# ---------------------------------------------------------------------------

@dataclass
class EEGRecording:
    """One subject's multichannel EEG time series.

    ``data`` is ``[channels x samples]`` at sampling rate ``fs`` (Hz).
    """

    subject_id: str
    channel_names: tuple[str, ...]
    fs: float
    data: np.ndarray

    def __post_init__(self) -> None:
        self.channel_names = tuple(self.channel_names)
        if self.fs <= 0:
            raise ValueError(f"fs must be positive, got {self.fs}")
        if self.data.ndim != 2:
            raise ValueError(f"data must be 2-D, got shape {self.data.shape}")
        if self.data.shape[0] != len(self.channel_names):
            raise ValueError(
                f"{self.data.shape[0]} data rows but "
                f"{len(self.channel_names)} channel names"
            )

    @property
    def n_channels(self) -> int:
        return self.data.shape[0]

    @property
    def n_samples(self) -> int:
        return self.data.shape[1]

    @property
    def duration_s(self) -> float:
        return self.n_samples / self.fs

    def validate(self, require_finite: bool = True) -> None:
        if self.n_channels != N_CHANNELS:
            raise DataError(
                f"recording {self.subject_id!r} has {self.n_channels} channels, "
                f"expected {N_CHANNELS}"
            )
        if require_finite and not np.isfinite(self.data).all():
            raise DataError(f"recording {self.subject_id!r} contains NaN/Inf")


@dataclass
class VideoFeatureTrack:
    """Per-frame feature matrix for one video, ``[feature_dim x frames]``."""

    track_id: str
    fps: float
    features: np.ndarray

    def __post_init__(self) -> None:
        if self.fps <= 0:
            raise ValueError(f"fps must be positive, got {self.fps}")
        if self.features.ndim != 2:
            raise ValueError(f"features must be 2-D, got {self.features.shape}")

    @property
    def feature_dim(self) -> int:
        return self.features.shape[0]

    @property
    def n_frames(self) -> int:
        return self.features.shape[1]

    @property
    def duration_s(self) -> float:
        return self.n_frames / self.fps


@dataclass(frozen=True)
class SegmentRef:
    """A time window ``[start_s, start_s + duration_s)`` within a source signal."""

    start_s: float
    duration_s: float = 3.0
    source_id: str = ""

    @property
    def end_s(self) -> float:
        return self.start_s + self.duration_s


@dataclass
class TrialSample:
    """One classification example.

    ``eeg_segment`` is ``[channels x samples]``; ``video_a`` / ``video_b`` are
    ``[feature_dim x frames]`` candidate stimulus segments.  ``video_b`` is
    ``None`` for one-way samples.  ``label`` is 1 iff the port-a video is the
    matching one (for one-way samples: 1 iff the single video matches).
    ``imposter_offset_s`` records the imposter's start time minus the matching
    segment's end time (the signed separation offset).
    """

    subject_id: str
    eeg_segment: np.ndarray
    video_a: np.ndarray
    video_b: np.ndarray | None
    label: int
    imposter_offset_s: float
    start_s: float

    def __post_init__(self) -> None:
        if self.label not in (0, 1):
            raise ValueError(f"label must be 0 or 1, got {self.label}")


@dataclass
class SplitSpec:
    """Disjoint subject-id lists for train / validation / test."""

    train: list[str] = field(default_factory=list)
    val: list[str] = field(default_factory=list)
    test: list[str] = field(default_factory=list)

    def all_subjects(self) -> list[str]:
        return list(self.train) + list(self.val) + list(self.test)

    def validate(self) -> None:
        groups = [set(self.train), set(self.val), set(self.test)]
        total = sum(len(g) for g in groups)
        if len(set().union(*groups)) != total:
            raise DataError("split lists overlap: a subject appears in two splits")

    def subjects_for(self, split: str) -> list[str]:
        try:
            return list(getattr(self, split))
        except AttributeError:
            raise ConfigError(f"unknown split {split!r}, expected train/val/test")


@dataclass
class SubjectEntry:
    subject_id: str
    eeg_path: str
    shape: tuple[int, int]
    fs: float


@dataclass
class TrackEntry:
    track_id: str
    path: str
    shape: tuple[int, int]
    fps: float


@dataclass
class DatasetManifest:
    """Index of a corpus directory: subjects, video tracks, and the split.

    ``root`` is the directory the relative paths resolve against; it is set
    when the manifest is loaded or saved and never serialized.
    """

    version: int = MANIFEST_VERSION
    subjects: list[SubjectEntry] = field(default_factory=list)
    video_tracks: list[TrackEntry] = field(default_factory=list)
    split: SplitSpec = field(default_factory=SplitSpec)
    metadata: dict[str, Any] = field(default_factory=dict)
    root: Path | None = None

    def subject(self, subject_id: str) -> SubjectEntry:
        for entry in self.subjects:
            if entry.subject_id == subject_id:
                return entry
        raise DataError(f"subject {subject_id!r} not in manifest")

    def track(self, track_id: str | None = None) -> TrackEntry:
        if not self.video_tracks:
            raise DataError("manifest lists no video tracks")
        if track_id is None:
            return self.video_tracks[0]
        for entry in self.video_tracks:
            if entry.track_id == track_id:
                return entry
        raise DataError(f"track {track_id!r} not in manifest")

    def resolve(self, rel_path: str) -> Path:
        if self.root is None:
            raise DataError("manifest has no root directory; load or save it first")
        return Path(self.root) / rel_path

    def validate(self, check_files: bool = True) -> None:
        self.split.validate()
        subject_ids = {s.subject_id for s in self.subjects}
        if len(subject_ids) != len(self.subjects):
            raise DataError("duplicate subject ids in manifest")
        missing = set(self.split.all_subjects()) - subject_ids
        if missing:
            raise DataError(f"split references unknown subjects: {sorted(missing)}")
        if not check_files:
            return
        entries = [(s.eeg_path, s.shape) for s in self.subjects]
        entries += [(t.path, t.shape) for t in self.video_tracks]
        for rel_path, shape in entries:
            path = self.resolve(rel_path)
            if not path.is_file():
                raise DataError(f"manifest path does not resolve: {path}")
            expected = 4 * int(np.prod(shape))
            actual = path.stat().st_size
            if actual != expected:
                raise DataError(
                    f"{path}: file is {actual} bytes but shape {tuple(shape)} "
                    f"requires exactly {expected}"
                )


@dataclass
class Checkpoint:
    """A trained model snapshot.

    ``state`` holds the network weights; reloading a checkpoint reproduces
    identical forward outputs bit-for-bit on a fixed input.
    """

    model_spec: str
    state: dict[str, torch.Tensor]
    epoch: int
    best_val_accuracy: float
    rng_seed: int
    config_hash: str


# ---------------------------------------------------------------------------
# Raw array files
# ---------------------------------------------------------------------------

def save_array(path: str | Path, matrix: np.ndarray) -> None:
    """Write ``matrix`` as header-free little-endian float32, row-major.

    The file holds exactly ``4 * matrix.size`` bytes; the shape must be
    recorded in a manifest to read it back.  Non-finite values are refused so
    that every persisted fixture round-trips exactly.
    """
    arr = np.asarray(matrix)
    if not np.isfinite(arr).all():
        raise DataError(f"refusing to save non-finite values to {path}")
    arr = np.ascontiguousarray(arr, dtype="<f4")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(arr.tobytes())


def load_array(path: str | Path, shape: Sequence[int]) -> np.ndarray:
    """Read an array written by :func:`save_array`; fails on size mismatch."""
    path = Path(path)
    shape = tuple(int(n) for n in shape)
    expected = 4 * int(np.prod(shape))
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    if len(raw) != expected:
        raise DataError(
            f"{path}: got {len(raw)} bytes, shape {shape} requires exactly {expected}"
        )
    return np.frombuffer(raw, dtype="<f4").reshape(shape).copy()


# ---------------------------------------------------------------------------
# Manifest I/O
# ---------------------------------------------------------------------------

def save_manifest(manifest: DatasetManifest, path: str | Path) -> None:
    path = Path(path)
    manifest.root = path.parent
    manifest.validate(check_files=True)
    doc = {
        "version": manifest.version,
        "subjects": [asdict(s) for s in manifest.subjects],
        "video_tracks": [asdict(t) for t in manifest.video_tracks],
        "split": {
            "train": list(manifest.split.train),
            "val": list(manifest.split.val),
            "test": list(manifest.split.test),
        },
        "metadata": manifest.metadata,
    }
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_manifest(path: str | Path) -> DatasetManifest:
    path = Path(path)
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise DataError(f"cannot read manifest {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise DataError(f"manifest {path} is not valid JSON: {exc}") from exc
    try:
        manifest = DatasetManifest(
            version=int(doc["version"]),
            subjects=[
                SubjectEntry(
                    subject_id=s["subject_id"],
                    eeg_path=s["eeg_path"],
                    shape=tuple(s["shape"]),
                    fs=float(s["fs"]),
                )
                for s in doc["subjects"]
            ],
            video_tracks=[
                TrackEntry(
                    track_id=t["track_id"],
                    path=t["path"],
                    shape=tuple(t["shape"]),
                    fps=float(t["fps"]),
                )
                for t in doc["video_tracks"]
            ],
            split=SplitSpec(
                train=list(doc["split"]["train"]),
                val=list(doc["split"]["val"]),
                test=list(doc["split"]["test"]),
            ),
            metadata=doc.get("metadata", {}),
            root=path.parent,
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"manifest {path} is malformed: {exc}") from exc
    manifest.validate(check_files=True)
    return manifest


def load_recording(manifest: DatasetManifest, subject_id: str) -> EEGRecording:
    """Load one subject's EEG; shape comes from the manifest, never the file."""
    entry = manifest.subject(subject_id)
    data = load_array(manifest.resolve(entry.eeg_path), entry.shape)
    rec = EEGRecording(
        subject_id=subject_id,
        channel_names=CHANNEL_NAMES_64[: entry.shape[0]],
        fs=entry.fs,
        data=data,
    )
    rec.validate(require_finite=False)
    return rec


def load_track(manifest: DatasetManifest, track_id: str | None = None) -> VideoFeatureTrack:
    entry = manifest.track(track_id)
    features = load_array(manifest.resolve(entry.path), entry.shape)
    return VideoFeatureTrack(track_id=entry.track_id, fps=entry.fps, features=features)


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

def save_checkpoint(checkpoint: Checkpoint, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save(
        {
            "model_spec": checkpoint.model_spec,
            "state": checkpoint.state,
            "epoch": checkpoint.epoch,
            "best_val_accuracy": checkpoint.best_val_accuracy,
            "rng_seed": checkpoint.rng_seed,
            "config_hash": checkpoint.config_hash,
        },
        path,
    )


def load_checkpoint(path: str | Path) -> Checkpoint:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"checkpoint not found: {path}")
    doc = torch.load(path, map_location="cpu")
    try:
        return Checkpoint(
            model_spec=doc["model_spec"],
            state=doc["state"],
            epoch=int(doc["epoch"]),
            best_val_accuracy=float(doc["best_val_accuracy"]),
            rng_seed=int(doc["rng_seed"]),
            config_hash=doc["config_hash"],
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"checkpoint {path} is malformed: {exc}") from exc


def config_hash(config: Any) -> str:
    """Stable hash of a config dataclass or plain dict, for provenance."""
    if hasattr(config, "__dataclass_fields__"):
        config = asdict(config)
    blob = json.dumps(config, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]
