"""Command-line pipeline: synth -> preprocess -> train -> eval -> analyze.

Outputs are data files (checkpoints, JSONL histories, CSV/JSON tables) meant
for external plotting.  Exit codes: 0 success, 2 usage/config error,
3 I/O or data error.  Every command drops a JSON copy of its resolved
configuration into its output directory.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np

from .analysis import (
    export_report,
    extract_embeddings,
    gradcam_channel_scores,
    offset_sweep,
    silhouette,
    traditional_features,
)
from .core import (
    ConfigError,
    DataError,
    DatasetManifest,
    EEGRecording,
    TrackEntry,
    load_checkpoint,
    load_manifest,
    load_recording,
    load_track,
    save_array,
    save_checkpoint,
    save_manifest,
)
from .modelzoo import parse_spec
from .preprocess import PreprocessConfig, preprocess_recording
from .sampling import (
    SamplingConfig,
    build_dataset,
    build_one_way_dataset,
    datasets_by_split,
    enumerate_segments,
)
from .synthgen import SynthConfig, generate_corpus
from .training import TrainConfig, evaluate_accuracy, train

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3

logger = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# Shared helpers
# ---------------------------------------------------------------------------

def _load_json(path: str | Path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise DataError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError(f"config {path} must hold a JSON object")
    return doc


def _make_config(cls, doc: dict, overrides: dict):
    """Instantiate a config dataclass from JSON keys + flag overrides (flags win)."""
    known = set(cls.__dataclass_fields__)
    unknown = set(doc) - known
    if unknown:
        raise ConfigError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    merged = dict(doc)
    merged.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return cls(**merged)
    except TypeError as exc:
        raise ConfigError(f"bad {cls.__name__}: {exc}") from exc


def _prepare_out(path: str | Path, force: bool) -> Path:
    out = Path(path)
    if out.exists():
        if not out.is_dir():
            raise DataError(f"output path {out} exists and is not a directory")
        if any(out.iterdir()) and not force:
            raise DataError(f"output directory {out} is not empty (pass --force to reuse)")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_json(path: Path, doc) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True, default=str)
        fh.write("\n")


def _load_corpus(
    manifest_path: str | Path,
    pp_cfg: PreprocessConfig | None = None,
) -> tuple[DatasetManifest, dict[str, EEGRecording], "object"]:
    """Load every recording plus the feature track, conditioning the EEG
    first unless the manifest says it already is."""
    manifest = load_manifest(manifest_path)
    already = bool(manifest.metadata.get("preprocessed"))
    if not already:
        logger.info("manifest is raw; conditioning recordings in memory")
    recordings = {}
    for entry in manifest.subjects:
        rec = load_recording(manifest, entry.subject_id)
        recordings[entry.subject_id] = rec if already else preprocess_recording(rec, pp_cfg)
    track = load_track(manifest)
    return manifest, recordings, track


def _split_recordings(
    manifest: DatasetManifest, recordings: dict[str, EEGRecording], split_name: str
) -> list[EEGRecording]:
    ids = manifest.split.subjects_for(split_name)
    if not ids:
        raise DataError(f"manifest has no subjects in the {split_name!r} split")
    return [recordings[s] for s in ids]


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_synth(args) -> int:
    doc = _load_json(args.config) if args.config else {}
    overrides = {
        "n_subjects": args.subjects,
        "duration_s": args.duration,
        "seed": args.seed,
        "snr": args.snr,
        "subject_confound_strength": args.confound,
    }
    cfg = _make_config(SynthConfig, doc, overrides)
    out = _prepare_out(args.out, args.force)
    manifest = generate_corpus(cfg, out)
    _write_json(out / "synth_config.json", asdict(cfg))
    print(
        json.dumps(
            {
                "out": str(out),
                "subjects": cfg.n_subjects,
                "duration_s": cfg.duration_s,
                "split": {
                    "train": manifest.split.train,
                    "val": manifest.split.val,
                    "test": manifest.split.test,
                },
            }
        )
    )
    return EXIT_OK


def cmd_preprocess(args) -> int:
    doc = _load_json(args.config) if args.config else {}
    pcfg = _make_config(PreprocessConfig, doc, {})
    manifest = load_manifest(args.manifest)
    out = _prepare_out(args.out, args.force)
    subjects = []
    for entry in manifest.subjects:
        rec = load_recording(manifest, entry.subject_id)
        proc = preprocess_recording(rec, pcfg)
        save_array(out / entry.eeg_path, proc.data)
        subjects.append(replace(entry))
        logger.info("conditioned %s", entry.subject_id)
    tracks = []
    for tentry in manifest.video_tracks:
        features = load_track(manifest, tentry.track_id).features
        save_array(out / tentry.path, features)
        tracks.append(TrackEntry(tentry.track_id, tentry.path, tuple(tentry.shape), tentry.fps))
    new_manifest = DatasetManifest(
        subjects=subjects,
        video_tracks=tracks,
        split=manifest.split,
        metadata={
            **manifest.metadata,
            "preprocessed": True,
            "preprocess_config": asdict(pcfg),
        },
    )
    save_manifest(new_manifest, out / "manifest.json")
    _write_json(out / "preprocess_config.json", asdict(pcfg))
    print(json.dumps({"out": str(out), "subjects": len(subjects)}))
    return EXIT_OK


def cmd_train(args) -> int:
    doc = _load_json(args.config) if args.config else {}
    if isinstance(doc.get("train"), dict):
        doc = doc["train"]
    overrides = {
        "lr": args.lr,
        "batch_size": args.batch_size,
        "max_epochs": args.max_epochs,
        "seed": args.seed,
        "mode": args.mode,
    }
    tcfg = _make_config(TrainConfig, doc, overrides)
    spec = parse_spec(args.model)
    manifest, recordings, track = _load_corpus(args.manifest)
    if not manifest.split.train or not manifest.split.val:
        raise DataError("manifest needs non-empty train and val splits")
    out = _prepare_out(args.out, args.force)
    scfg = SamplingConfig(mode=tcfg.mode, rng_seed=tcfg.seed)
    datasets = datasets_by_split(
        recordings, track, manifest.split, scfg, one_way=spec.mode == "one_way"
    )
    seeds = [tcfg.seed + k for k in range(args.repeat)]
    results = []
    for k, seed in enumerate(seeds):
        run_cfg = replace(tcfg, seed=seed)
        checkpoint, history = train(spec.spec_string, datasets, run_cfg)
        if args.repeat == 1:
            ck_name, hist_name = "checkpoint.pt", "history.jsonl"
        else:
            ck_name, hist_name = f"checkpoint_{k:02d}.pt", f"history_{k:02d}.jsonl"
        save_checkpoint(checkpoint, out / ck_name)
        with open(out / hist_name, "w") as fh:
            for row in history:
                fh.write(json.dumps(row) + "\n")
        results.append(
            {
                "checkpoint": ck_name,
                "seed": seed,
                "best_val_accuracy": checkpoint.best_val_accuracy,
                "best_epoch": checkpoint.epoch,
                "epochs_run": len(history),
            }
        )
    _write_json(
        out / "train_config.json",
        {
            **asdict(tcfg),
            "model": spec.spec_string,
            "repeat": args.repeat,
            "seeds": seeds,
            # Repeats reseed weights/shuffles only; the subject split and
            # sample ports stay fixed across runs.
            "repeat_mode": "reseed-weights",
            "manifest": str(args.manifest),
        },
    )
    print(json.dumps({"out": str(out), "runs": results}))
    return EXIT_OK


def cmd_eval(args) -> int:
    checkpoint = load_checkpoint(args.checkpoint)
    spec = parse_spec(checkpoint.model_spec)
    manifest, recordings, track = _load_corpus(args.manifest)
    recs = _split_recordings(manifest, recordings, args.split)
    scfg = SamplingConfig(mode=args.mode, rng_seed=args.seed)
    builder = build_one_way_dataset if spec.mode == "one_way" else build_dataset
    samples = builder(recs, track, scfg)
    accuracy = evaluate_accuracy(checkpoint, samples)
    doc = {
        "accuracy": accuracy,
        "n_samples": len(samples),
        "split": args.split,
        "mode": scfg.mode,
        "seed": args.seed,
        "model_spec": checkpoint.model_spec,
        "checkpoint": str(args.checkpoint),
    }
    print(json.dumps(doc, indent=2))
    if args.out:
        _write_json(Path(args.out), doc)
    return EXIT_OK


def _unique_segment_slices(
    recs: list[EEGRecording], scfg: SamplingConfig
) -> tuple[list[np.ndarray], list[str], list[EEGRecording], list[list]]:
    slices, labels = [], []
    seg_lists = []
    for rec in recs:
        segs = enumerate_segments(rec.duration_s, scfg)
        seg_lists.append(segs)
        for seg in segs:
            i0 = int(round(seg.start_s * rec.fs))
            n = int(round(seg.duration_s * rec.fs))
            slices.append(rec.data[:, i0 : i0 + n])
            labels.append(rec.subject_id)
    if not slices:
        raise DataError("no feasible segments for silhouette/embedding analysis")
    return slices, labels, recs, seg_lists


def cmd_analyze(args) -> int:
    checkpoints = [load_checkpoint(p) for p in args.checkpoint]
    manifest, recordings, track = _load_corpus(args.manifest)
    recs = _split_recordings(manifest, recordings, args.split)
    out = _prepare_out(args.out, args.force)
    scfg = SamplingConfig(rng_seed=args.seed)
    summary: dict = {"what": args.what, "split": args.split, "out": str(out)}

    if args.what == "sweep":
        offsets = [float(x) for x in args.offsets.split(",") if x.strip()]
        if not offsets:
            raise ConfigError("--offsets must list at least one value")
        curve = offset_sweep(checkpoints[0], recs, track, offsets, cfg=scfg, seed=args.seed)
        export_report(out, sweep=curve)
        summary["curve"] = [{"t_sep_s": t, "accuracy": a} for t, a in curve]
    elif args.what == "gradcam":
        spec = parse_spec(checkpoints[0].model_spec)
        builder = build_one_way_dataset if spec.mode == "one_way" else build_dataset
        samples = builder(recs, track, scfg)
        score_map = gradcam_channel_scores(checkpoints, samples)
        export_report(out, channel_scores=score_map)
        summary["top_channels"] = score_map.top_channels(8)
        summary["n_runs"] = len(checkpoints)
    elif args.what == "silhouette":
        slices, labels, recs, seg_lists = _unique_segment_slices(recs, scfg)
        deep = extract_embeddings(checkpoints[0], slices)
        deep_overall, deep_per = silhouette(deep, labels)
        trad_blocks = [
            traditional_features(rec, segs) for rec, segs in zip(recs, seg_lists)
        ]
        trad_overall, trad_per = silhouette(np.concatenate(trad_blocks), labels)
        results = {
            "traditional": {"overall": trad_overall, "per_subject": trad_per},
            "deep": {"overall": deep_overall, "per_subject": deep_per},
        }
        export_report(out, silhouette_results=results)
        summary["silhouette"] = {
            "traditional": trad_overall,
            "deep": deep_overall,
        }
    elif args.what == "embed":
        slices, labels, _, _ = _unique_segment_slices(recs, scfg)
        emb = extract_embeddings(checkpoints[0], slices)
        export_report(out, embeddings=emb, embedding_labels=labels)
        summary["n_embeddings"] = int(emb.shape[0])
        summary["dim"] = int(emb.shape[1])
    else:  # unreachable: argparse restricts choices
        raise ConfigError(f"unknown analysis {args.what!r}")

    _write_json(
        out / "analyze_config.json",
        {
            "what": args.what,
            "split": args.split,
            "seed": args.seed,
            "checkpoints": [str(p) for p in args.checkpoint],
            "manifest": str(args.manifest),
            "offsets": getattr(args, "offsets", None),
        },
    )
    print(json.dumps(summary))
    return EXIT_OK


# ---------------------------------------------------------------------------
# Parser / entry point
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="eegmatch",
        description="Match-vs-mismatch EEG/video decoding pipeline",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic corpus")
    p.add_argument("--config", help="SynthConfig JSON file")
    p.add_argument("--out", required=True)
    p.add_argument("--force", action="store_true")
    p.add_argument("--subjects", type=int)
    p.add_argument("--duration", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--snr", type=float)
    p.add_argument("--confound", type=float)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("preprocess", help="condition a corpus (notch, band-pass, normalize)")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--force", action="store_true")
    p.add_argument("--config", help="PreprocessConfig JSON file")
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("train", help="train a model spec on a corpus")
    p.add_argument("--manifest", required=True)
    p.add_argument("--model", required=True, help="spec string, e.g. ECVG or ECD3VG-768")
    p.add_argument("--mode", choices=["balanced", "imbalanced"])
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.add_argument("--force", action="store_true")
    p.add_argument("--repeat", type=int, default=1)
    p.add_argument("--max-epochs", dest="max_epochs", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--config", help="TrainConfig JSON file (flat or under a 'train' key)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="accuracy of a checkpoint on one split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--split", choices=["train", "val", "test"], default="test")
    p.add_argument("--mode", choices=["balanced", "imbalanced"], default="balanced")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="optional JSON output file")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("analyze", help="offset sweep, Grad-CAM, silhouette, embeddings")
    p.add_argument("--checkpoint", action="append", required=True, help="repeatable")
    p.add_argument("--manifest", required=True)
    p.add_argument("--what", choices=["sweep", "gradcam", "silhouette", "embed"], required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--force", action="store_true")
    p.add_argument("--split", choices=["train", "val", "test"], default="test")
    p.add_argument("--offsets", default="-7,-5,-3,-1,1,3")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_analyze)

    return parser


def main(argv=None) -> int:
    if not logging.getLogger().handlers:
        logging.basicConfig(level=logging.INFO, format="%(message)s", stream=sys.stderr)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_CONFIG
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
