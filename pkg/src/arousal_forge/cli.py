"""Command-line front door: synth, preprocess, train, crossval, sweep, gcam.

Exit codes: 0 success, 1 usage error, 2 data error.  Every run writes a
resolved-config snapshot next to its outputs; re-running with
``--config <snapshot>`` reproduces the run.  Report JSON is byte-identical
across identical invocations; wall-clock metadata goes to a sidecar file.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__, nn
from .experiment import (
    ExperimentConfig,
    prepare_sessions,
    run_experiment,
    segment_dataset,
    stack_labeled,
    stack_pairs,
    sweep,
    train_with_early_stopping,
)
from .ingest import LoadError, load_dataset, load_manifest, write_pgm
from .model import build_model
from .synth import SynthConfig, write_dataset
from .windows import frames_per_window

SEED_ENV_VAR = "AROUSAL_FORGE_SEED"

USAGE_ERROR = 1
DATA_ERROR = 2


class CliError(Exception):
    def __init__(self, message: str, code: int = DATA_ERROR):
        super().__init__(message)
        self.code = code


class _Parser(argparse.ArgumentParser):
    """argparse with usage failures mapped to exit code 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(USAGE_ERROR)


def _env_seed() -> int:
    raw = os.environ.get(SEED_ENV_VAR)
    if raw is None:
        return 0
    try:
        return int(raw)
    except ValueError:
        raise CliError(f"{SEED_ENV_VAR} must be an integer, got {raw!r}", USAGE_ERROR) from None


def build_parser() -> tuple[_Parser, dict]:
    parser = _Parser(prog="arousal-forge", description=__doc__)
    command_defaults: dict[str, dict] = {}
    parser.add_argument("--version", action="version", version=f"arousal-forge {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add_common(p):
        # --manifest is checked after --config snapshot overlay, not by argparse
        p.add_argument("--manifest", default=None, help="dataset manifest JSON")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--force", action="store_true", help="allow writing into a non-empty directory")
        p.add_argument("--config", default=None, help="resolved-config snapshot to re-run from")
        p.add_argument("--seed", type=int, default=None,
                       help=f"RNG seed (default: ${SEED_ENV_VAR} or 0)")

    def add_experiment_flags(p):
        p.add_argument("--mode", choices=("classify", "rank"), default="classify")
        p.add_argument("--modality", choices=("visual", "audio", "both"), default="both")
        p.add_argument("--window", type=float, default=0.5, help="segment length in seconds")
        p.add_argument("--epsilon", type=float, default=0.2, help="classifier uncertainty band")
        p.add_argument("--delta", type=float, default=0.6, help="ranker preference threshold")
        p.add_argument("--optimizer", choices=("adam", "sgd"), default="adam")
        p.add_argument("--learning-rate", type=float, default=1e-3)
        p.add_argument("--batch-size", type=int, default=32)
        p.add_argument("--max-epochs", type=int, default=300)
        p.add_argument("--patience", type=int, default=30)
        p.add_argument("--val-videos", type=int, default=4)
        p.add_argument("--min-duration", type=float, default=15.0,
                       help="drop sessions shorter than this many seconds")
        p.add_argument("--dtw-threshold", type=float, default=None,
                       help="drop sessions whose trace is farther than this from the median")
        p.add_argument("--jobs", type=int, default=1, help="parallel fold workers")

    p_synth = sub.add_parser("synth", help="generate a synthetic dataset")
    p_synth.add_argument("--out", required=True)
    p_synth.add_argument("--force", action="store_true")
    p_synth.add_argument("--config", default=None)
    p_synth.add_argument("--seed", type=int, default=None)
    p_synth.add_argument("--sessions", type=int, default=10)
    p_synth.add_argument("--duration", type=float, default=60.0)
    p_synth.add_argument("--fps", type=int, default=30)
    p_synth.add_argument("--sample-rate", type=int, default=16000)
    p_synth.add_argument("--height", type=int, default=36)
    p_synth.add_argument("--width", type=int, default=48)
    p_synth.add_argument("--event-rate", type=float, default=0.35)
    p_synth.add_argument("--kernel-tau", type=float, default=3.0)
    p_synth.add_argument("--pixel-noise", type=float, default=3.0)
    p_synth.add_argument("--audio-noise", type=float, default=0.02)
    p_synth.add_argument("--coupling", choices=("visual_only", "audio_only", "both"),
                         default="both")
    p_synth.set_defaults(func=cmd_synth)

    p_prep = sub.add_parser("preprocess", help="run cleaning and print kept/dropped sessions")
    p_prep.add_argument("--manifest", required=True)
    p_prep.add_argument("--min-duration", type=float, default=15.0)
    p_prep.add_argument("--dtw-threshold", type=float, default=None)
    p_prep.add_argument("--out", default=None, help="optional summary JSON path")
    p_prep.set_defaults(func=cmd_preprocess)

    p_train = sub.add_parser("train", help="fit one model on a fixed split")
    add_common(p_train)
    add_experiment_flags(p_train)
    p_train.add_argument("--test-session", default=None,
                         help="held-out session id (default: first id)")
    p_train.set_defaults(func=cmd_train)

    p_cv = sub.add_parser("crossval", help="leave-one-video-out cross-validation")
    add_common(p_cv)
    add_experiment_flags(p_cv)
    p_cv.set_defaults(func=cmd_crossval)

    p_sweep = sub.add_parser("sweep", help="run a parameter sweep of full experiments")
    add_common(p_sweep)
    add_experiment_flags(p_sweep)
    p_sweep.add_argument("--axis", choices=("epsilon", "delta", "window", "modality"),
                         required=True)
    p_sweep.add_argument("--values", default=None,
                         help="comma-separated sweep values (default: the standard grid)")
    p_sweep.set_defaults(func=cmd_sweep)

    p_gcam = sub.add_parser("gcam", help="emit Grad-CAM heatmaps from a checkpoint")
    add_common(p_gcam)
    p_gcam.add_argument("--checkpoint", required=True)
    p_gcam.add_argument("--session", required=True, help="session id to visualize")
    p_gcam.add_argument("--segments", default="0", help="comma-separated segment indices")
    p_gcam.add_argument("--target", type=int, choices=(0, 1), default=1,
                        help="output neuron to explain")
    p_gcam.set_defaults(func=cmd_gcam)

    for name, sub_parser in sub.choices.items():
        command_defaults[name] = {
            a.dest: a.default for a in sub_parser._actions if a.dest != "help"
        }
    return parser, command_defaults


# ---------------------------------------------------------------------------
# Helpers
# ---------------------------------------------------------------------------

def _resolve_seed(args) -> int:
    return args.seed if args.seed is not None else _env_seed()


def _prepare_out_dir(args) -> Path:
    out = Path(args.out)
    if out.exists() and any(out.iterdir()) and not args.force:
        raise CliError(f"output directory {out} is not empty (pass --force to overwrite)",
                       USAGE_ERROR)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _apply_config_snapshot(args, parser_defaults: dict) -> None:
    """Overlay a resolved-config snapshot under any explicitly-set flags."""
    if not getattr(args, "config", None):
        return
    path = Path(args.config)
    try:
        snapshot = json.loads(path.read_text())
    except OSError as exc:
        raise CliError(f"cannot read config snapshot {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise CliError(f"config snapshot {path} is not valid JSON: {exc}") from None
    if snapshot.get("command") not in (None, args.command):
        raise CliError(
            f"snapshot was written by '{snapshot.get('command')}', not '{args.command}'",
            USAGE_ERROR,
        )
    for key, value in snapshot.items():
        if key in ("command", "version"):
            continue
        if not hasattr(args, key):
            continue
        if getattr(args, key) == parser_defaults.get(key):
            setattr(args, key, value)


def _snapshot_dict(args, fields: list[str]) -> dict:
    snap = {"command": args.command, "version": __version__}
    for f in fields:
        snap[f] = getattr(args, f)
    return snap


def _write_json(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _load_clean_dataset(args):
    if not args.manifest:
        raise CliError("--manifest is required", USAGE_ERROR)
    manifest_path = Path(args.manifest)
    if not manifest_path.exists():
        raise CliError(f"manifest not found: {manifest_path}")
    manifest = load_manifest(manifest_path)
    raw = load_dataset(manifest)
    data, summary = prepare_sessions(
        raw, min_duration_s=args.min_duration, dtw_threshold=args.dtw_threshold
    )
    if not data:
        raise CliError("no sessions survive cleaning")
    return data, summary


def _experiment_config(args, seed: int) -> ExperimentConfig:
    cfg = ExperimentConfig(
        mode=args.mode,
        modality=args.modality,
        window_s=args.window,
        epsilon=args.epsilon,
        delta=args.delta,
        optimizer=args.optimizer,
        learning_rate=args.learning_rate,
        batch_size=args.batch_size,
        max_epochs=args.max_epochs,
        patience=args.patience,
        val_videos=args.val_videos,
        seed=seed,
    )
    try:
        cfg.validate()
    except ValueError as exc:
        raise CliError(str(exc), USAGE_ERROR) from None
    return cfg


EXPERIMENT_SNAPSHOT_FIELDS = [
    "manifest", "mode", "modality", "window", "epsilon", "delta", "optimizer",
    "learning_rate", "batch_size", "max_epochs", "patience", "val_videos",
    "min_duration", "dtw_threshold", "jobs", "seed",
]


class _RunClock:
    def __enter__(self):
        self.started = time.time()
        return self

    def __exit__(self, *exc):
        self.finished = time.time()

    def meta(self, argv) -> dict:
        return {
            "started_unix": self.started,
            "finished_unix": self.finished,
            "duration_s": self.finished - self.started,
            "argv": list(argv),
        }


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_synth(args, argv) -> int:
    seed = _resolve_seed(args)
    out = _prepare_out_dir(args)
    config = SynthConfig(
        sessions=args.sessions,
        duration_s=args.duration,
        fps=args.fps,
        sample_rate=args.sample_rate,
        height=args.height,
        width=args.width,
        event_rate=args.event_rate,
        kernel_tau_s=args.kernel_tau,
        pixel_noise=args.pixel_noise,
        audio_noise=args.audio_noise,
        coupling=args.coupling,
        seed=seed,
    )
    try:
        config.validate()
    except ValueError as exc:
        raise CliError(str(exc), USAGE_ERROR) from None
    manifest_path = write_dataset(config, out)
    fields = ["sessions", "duration", "fps", "sample_rate", "height", "width",
              "event_rate", "kernel_tau", "pixel_noise", "audio_noise", "coupling"]
    snap = _snapshot_dict(args, fields)
    snap["seed"] = seed
    _write_json(out / "resolved_config.json", snap)
    print(f"wrote {config.sessions} sessions to {out} (manifest: {manifest_path})")
    return 0


def cmd_preprocess(args, argv) -> int:
    data, summary = _load_clean_dataset(args)
    distances = summary["dtw_distances"]
    print(f"{'session':<16} {'duration_s':>10} {'dtw_dist':>10}  status")
    for d in data:
        dist = distances.get(d.session.id)
        dist_s = f"{dist:.4f}" if dist is not None else "-"
        print(f"{d.session.id:<16} {d.session.duration_s:>10.2f} {dist_s:>10}  kept")
    for sid in summary["dropped_short"]:
        print(f"{sid:<16} {'-':>10} {'-':>10}  dropped (short)")
    for sid in summary["dropped_outlier"]:
        print(f"{sid:<16} {'-':>10} {distances[sid]:>10.4f}  dropped (outlier)")
    print(f"kept {len(data)} sessions, dropped {len(summary['dropped_short'])} short, "
          f"{len(summary['dropped_outlier'])} outliers")
    if args.out:
        _write_json(Path(args.out), summary)
    return 0


def _config_hash(payload: dict) -> str:
    return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()


def cmd_train(args, argv) -> int:
    seed = _resolve_seed(args)
    cfg = _experiment_config(args, seed)
    out = _prepare_out_dir(args)
    data, cleaning = _load_clean_dataset(args)
    ids = sorted(d.session.id for d in data)
    test_id = args.test_session or ids[0]
    if test_id not in ids:
        raise CliError(f"unknown test session {test_id!r}")
    rest = [s for s in ids if s != test_id]
    if len(rest) < cfg.val_videos + 1:
        raise CliError(f"need at least {cfg.val_videos + 2} sessions for a fixed split")
    rng = np.random.default_rng([seed, 0])
    val = set(rng.choice(np.array(rest, dtype=object), size=cfg.val_videos, replace=False))
    train_ids = [s for s in rest if s not in val]
    val_ids = [s for s in rest if s in val]

    seg_sessions = segment_dataset(data, cfg.window_s, with_mfcc=cfg.modality != "visual")
    if cfg.mode == "classify":
        train = stack_labeled(seg_sessions, train_ids, cfg.epsilon, cfg.modality)
        val_set = stack_labeled(seg_sessions, val_ids, cfg.epsilon, cfg.modality)
    else:
        train = stack_pairs(seg_sessions, train_ids, cfg.delta, cfg.modality)
        val_set = stack_pairs(seg_sessions, val_ids, cfg.delta, cfg.modality)
    if len(train) == 0 or len(val_set) == 0:
        raise CliError("empty training or validation set after thresholding")

    first = data[0].session
    resolution = first.frames.shape[1:]
    n_frames = frames_per_window(cfg.window_s, first.fps)
    seed_seq = np.random.SeedSequence([seed, 0])
    init_rng, shuffle_rng = [np.random.default_rng(s) for s in seed_seq.spawn(2)]
    net = build_model(n_frames, resolution, cfg.modality, cfg.mode, seed=init_rng,
                      audio_frames=frames_per_window(cfg.window_s, 30.0))
    print(f"training {cfg.mode} model ({net.param_count()} parameters, "
          f"{len(train)} train / {len(val_set)} val examples)")
    with _RunClock() as clock:
        result = train_with_early_stopping(net, train, val_set, cfg, shuffle_rng)

    model_meta = {
        "seed": seed,
        "model": {
            "n_frames": n_frames,
            "resolution": list(resolution),
            "modality": cfg.modality,
            "mode": cfg.mode,
            "audio_frames": net.audio_frames,
        },
        "experiment_config": cfg.to_dict(),
    }
    model_meta["config_hash"] = _config_hash(model_meta)
    nn.write_checkpoint(out / "checkpoint.bin", net.state_arrays(), model_meta)
    metrics = {
        "epochs": result.epochs,
        "best_val_accuracy": result.best_val,
        "val_history": result.history,
        "train_examples": len(train),
        "val_examples": len(val_set),
        "test_session": test_id,
        "train_sessions": train_ids,
        "val_sessions": val_ids,
        "cleaning": cleaning,
    }
    _write_json(out / "metrics.json", metrics)
    snap = _snapshot_dict(args, EXPERIMENT_SNAPSHOT_FIELDS + ["test_session"])
    snap["seed"] = seed
    _write_json(out / "resolved_config.json", snap)
    _write_json(out / "run_meta.json", clock.meta(argv))
    print(f"best validation accuracy {result.best_val:.4f} after {result.epochs} epochs; "
          f"checkpoint: {out / 'checkpoint.bin'}")
    return 0


def cmd_crossval(args, argv) -> int:
    seed = _resolve_seed(args)
    cfg = _experiment_config(args, seed)
    out = _prepare_out_dir(args)
    data, cleaning = _load_clean_dataset(args)
    if len(data) < cfg.val_videos + 2:
        raise CliError(
            f"need at least {cfg.val_videos + 2} sessions for leave-one-video-out, "
            f"got {len(data)}"
        )
    with _RunClock() as clock:
        report = run_experiment(
            data, cfg, cleaning_summary=cleaning, jobs=args.jobs,
            progress=lambda msg: print(msg, file=sys.stderr),
        )
    (out / "report.json").write_text(report.to_json())
    snap = _snapshot_dict(args, EXPERIMENT_SNAPSHOT_FIELDS)
    snap["seed"] = seed
    _write_json(out / "resolved_config.json", snap)
    _write_json(out / "run_meta.json", clock.meta(argv))
    s = report.summary
    acc = s["mean_accuracy"]
    base = s["mean_baseline"]
    print(f"mean accuracy {acc:.4f} +/- {s['ci95_accuracy']:.4f} "
          f"(baseline {base:.4f}) over {s['n_folds']} folds; report: {out / 'report.json'}")
    return 0


def _parse_sweep_values(axis: str, raw: str | None):
    if raw is None:
        return None
    parts = [p.strip() for p in raw.split(",") if p.strip()]
    if not parts:
        raise CliError("--values is empty", USAGE_ERROR)
    if axis == "modality":
        return parts
    try:
        return [float(p) for p in parts]
    except ValueError:
        raise CliError(f"--values for axis {axis} must be numbers", USAGE_ERROR) from None


def cmd_sweep(args, argv) -> int:
    seed = _resolve_seed(args)
    cfg = _experiment_config(args, seed)
    values = _parse_sweep_values(args.axis, args.values)
    out = _prepare_out_dir(args)
    data, cleaning = _load_clean_dataset(args)
    with _RunClock() as clock:
        reports, curve = sweep(
            data, args.axis, values, cfg, cleaning_summary=cleaning, jobs=args.jobs,
            progress=lambda msg: print(msg, file=sys.stderr),
        )
    for row, report in zip(curve, reports):
        tag = str(row["value"]).replace(".", "p")
        (out / f"report_{args.axis}_{tag}.json").write_text(report.to_json())
    with open(out / "curve.csv", "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=["value", "mean_acc", "ci", "baseline", "mean_tau"])
        writer.writeheader()
        writer.writerows(curve)
    snap = _snapshot_dict(args, EXPERIMENT_SNAPSHOT_FIELDS + ["axis", "values"])
    snap["seed"] = seed
    _write_json(out / "resolved_config.json", snap)
    _write_json(out / "run_meta.json", clock.meta(argv))
    print(f"swept {args.axis} over {len(curve)} values; curve: {out / 'curve.csv'}")
    return 0


def cmd_gcam(args, argv) -> int:
    seed = _resolve_seed(args)
    out = _prepare_out_dir(args)
    ckpt_path = Path(args.checkpoint)
    if not ckpt_path.exists():
        raise CliError(f"checkpoint not found: {ckpt_path}")
    try:
        meta, tensors = nn.read_checkpoint(ckpt_path)
    except (OSError, ValueError, KeyError, json.JSONDecodeError) as exc:
        raise CliError(f"cannot read checkpoint {ckpt_path}: {exc}") from None
    spec = meta["model"]
    if spec["modality"] == "audio":
        raise CliError("checkpoint is an audio-only model; Grad-CAM needs a visual stream")
    net = build_model(
        n_frames=spec["n_frames"],
        resolution=tuple(spec["resolution"]),
        modality=spec["modality"],
        mode=spec["mode"],
        seed=seed,
        audio_frames=spec["audio_frames"],
    )
    net.load_state(tensors)
    data, _ = _load_clean_dataset_for_gcam(args)
    match = [d for d in data if d.session.id == args.session]
    if not match:
        raise CliError(f"session {args.session!r} not found in manifest")
    session_data = match[0]
    window_s = meta["experiment_config"]["window_s"]
    seg_sessions = segment_dataset([session_data], window_s,
                                   with_mfcc=spec["modality"] != "visual")
    segments = seg_sessions[0].segments
    try:
        indices = [int(p) for p in args.segments.split(",") if p.strip()]
    except ValueError:
        raise CliError("--segments must be comma-separated integers", USAGE_ERROR) from None
    for idx in indices:
        if not 0 <= idx < len(segments):
            raise CliError(f"segment index {idx} out of range (0..{len(segments) - 1})")
        seg = segments[idx]
        cam = net.grad_cam(seg, target=args.target)
        stem = f"gcam_{args.session}_{idx:04d}"
        write_pgm(out / f"{stem}.pgm", np.floor(cam.heatmap * 255.0 + 0.5).astype(np.uint8))
        _write_json(out / f"{stem}.json", {
            "session": args.session,
            "segment_index": idx,
            "frame_span": [seg.start, seg.length],
            "target": cam.target,
            "score": cam.score,
        })
    print(f"wrote {len(indices)} heatmaps to {out}")
    return 0


def _load_clean_dataset_for_gcam(args):
    # gcam keeps every session: no duration or outlier filtering
    class _Args:
        manifest = args.manifest
        min_duration = 1e-9
        dtw_threshold = None
    return _load_clean_dataset(_Args)


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------

def dispatch(argv: list[str]) -> int:
    parser, command_defaults = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        _apply_config_snapshot(args, command_defaults[args.command])
        return args.func(args, argv)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except LoadError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return DATA_ERROR


def main() -> None:
    sys.exit(dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
