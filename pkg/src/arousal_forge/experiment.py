"""Leave-one-video-out evaluation: splits, training, metrics, reports, sweeps.

Every session serves once as the test video; a seeded draw of validation
videos from the remaining sessions drives early stopping.  Fold results are
aggregated into a report with 95% confidence intervals, the majority-class
baseline, and per-video Kendall's tau between ground-truth segment means and
model scores.  Reports serialize to deterministic JSON: two runs with the
same seed and inputs are byte-identical.
"""

from __future__ import annotations

import dataclasses
import json
import multiprocessing
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .ingest import RawSession, filter_short_sessions
from .model import ArousalNet, build_model
from .nn import OptimizerConfig, make_optimizer, softmax_nll
from .trace import (
    ArousalTrace,
    filter_outliers,
    normalize_minmax,
    resample_zoh,
    trace_mean,
)
from .windows import Segment, frames_per_window, label_segments, make_pairs, segment_session

EPSILON_SWEEP = (0.0, 0.05, 0.1, 0.2)
DELTA_SWEEP = (0.0, 0.2, 0.4, 0.6, 0.75)
WINDOW_SWEEP = (0.25, 0.5, 1.0, 2.0, 3.0)
MODALITY_SWEEP = ("visual", "audio", "both")

SWEEP_VALUES = {
    "epsilon": EPSILON_SWEEP,
    "delta": DELTA_SWEEP,
    "window": WINDOW_SWEEP,
    "modality": MODALITY_SWEEP,
}


@dataclass(frozen=True)
class ExperimentConfig:
    mode: str = "classify"          # classify | rank
    modality: str = "both"          # visual | audio | both
    window_s: float = 0.5
    epsilon: float = 0.2            # classifier uncertainty band half-width
    delta: float = 0.6              # ranker preference threshold
    optimizer: str = "adam"
    learning_rate: float = 1e-3
    batch_size: int = 32
    max_epochs: int = 300
    patience: int = 30
    val_videos: int = 4
    seed: int = 0

    def validate(self) -> None:
        if self.mode not in ("classify", "rank"):
            raise ValueError(f"mode must be classify or rank, got {self.mode!r}")
        if self.modality not in MODALITY_SWEEP:
            raise ValueError(f"unknown modality {self.modality!r}")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if self.val_videos < 1:
            raise ValueError("val_videos must be >= 1")
        if self.epsilon < 0 or self.delta < 0:
            raise ValueError("epsilon and delta must be >= 0")
        self.optimizer_config().validate()

    def optimizer_config(self) -> OptimizerConfig:
        return OptimizerConfig(
            kind=self.optimizer,
            learning_rate=self.learning_rate,
            batch_size=self.batch_size,
            max_epochs=self.max_epochs,
            seed=self.seed,
        )

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


# ---------------------------------------------------------------------------
# Dataset preparation
# ---------------------------------------------------------------------------

@dataclass(eq=False)
class SessionData:
    session: RawSession
    trace: ArousalTrace       # frame-rate, normalized
    trace_4hz: np.ndarray     # annotation-rate, normalized


def prepare_sessions(
    raw_sessions: Sequence[RawSession],
    min_duration_s: float = 15.0,
    dtw_threshold: float | None = None,
) -> tuple[list[SessionData], dict]:
    """Duration filter, per-session normalization, DTW outlier removal, resampling.

    Outlier distances are computed on annotation-rate traces, not the
    frame-resampled ones; resampling would inflate distances by roughly the
    frame/annotation rate ratio and change what a threshold means.
    """
    kept = filter_short_sessions(list(raw_sessions), min_duration_s)
    dropped_short = [s.id for s in raw_sessions if s not in kept]
    norm_traces = [normalize_minmax(s.raw_trace[:, 1]) for s in kept]
    distances: dict[str, float] = {}
    dropped_outlier: list[str] = []
    if dtw_threshold is not None and kept:
        retained, dists = filter_outliers(kept, norm_traces, dtw_threshold)
        distances = {s.id: float(d) for s, d in zip(kept, dists)}
        dropped_outlier = [s.id for s in kept if s not in retained]
        norm_traces = [t for s, t in zip(kept, norm_traces) if s in retained]
        kept = retained
    data = []
    for session, values in zip(kept, norm_traces):
        samples = np.column_stack([session.raw_trace[:, 0], values])
        frame_values = resample_zoh(samples, len(session.frames), session.fps)
        data.append(
            SessionData(
                session=session,
                trace=ArousalTrace(values=frame_values, session_id=session.id),
                trace_4hz=values,
            )
        )
    summary = {
        "kept": [d.session.id for d in data],
        "dropped_short": dropped_short,
        "dropped_outlier": dropped_outlier,
        "dtw_threshold": dtw_threshold,
        "dtw_distances": distances,
        "min_duration_s": min_duration_s,
    }
    return data, summary


@dataclass(eq=False)
class SegmentedSession:
    session_id: str
    segments: list[Segment]
    mu: float


def segment_dataset(
    data: Sequence[SessionData],
    window_s: float,
    with_mfcc: bool = True,
) -> list[SegmentedSession]:
    out = []
    for d in data:
        segments = segment_session(d.session, d.trace, window_s, with_mfcc=with_mfcc)
        out.append(SegmentedSession(d.session.id, segments, trace_mean(d.trace)))
    return out


# ---------------------------------------------------------------------------
# Cross-validation splits
# ---------------------------------------------------------------------------

@dataclass
class FoldSplit:
    train_ids: list[str]
    val_ids: list[str]
    test_id: str


def lovo_splits(session_ids: Sequence[str], val_videos: int = 4, seed: int = 0) -> list[FoldSplit]:
    """One fold per session as test; validation videos drawn seeded per fold."""
    ids = list(session_ids)
    if len(set(ids)) != len(ids):
        raise ValueError("session ids must be unique")
    if len(ids) < val_videos + 2:
        raise ValueError(
            f"need at least {val_videos + 2} sessions "
            f"({val_videos} validation + 1 train + 1 test), got {len(ids)}"
        )
    splits = []
    for i, test_id in enumerate(ids):
        rest = [s for s in ids if s != test_id]
        rng = np.random.default_rng([seed, i])
        val = set(rng.choice(np.array(rest, dtype=object), size=val_videos, replace=False))
        splits.append(
            FoldSplit(
                train_ids=[s for s in rest if s not in val],
                val_ids=[s for s in rest if s in val],
                test_id=test_id,
            )
        )
    return splits


# ---------------------------------------------------------------------------
# Training-set assembly
# ---------------------------------------------------------------------------

@dataclass(eq=False)
class ClassifierData:
    frames_u8: np.ndarray | None
    mfcc: np.ndarray | None
    labels: np.ndarray
    session_ids: list[str]

    def __len__(self) -> int:
        return len(self.labels)


@dataclass(eq=False)
class RankerData:
    frames_u8: np.ndarray | None   # unique segments
    mfcc: np.ndarray | None
    pairs: np.ndarray              # (P, 2) indices into the unique segments
    labels: np.ndarray             # (P,)
    session_ids: list[str]         # one per unique segment

    def __len__(self) -> int:
        return len(self.labels)


def _stack_segments(segments: Sequence[Segment], modality: str):
    frames = None
    mfcc = None
    if modality != "audio":
        frames = np.stack([s.frames_u8 for s in segments]) if segments else None
    if modality != "visual":
        mfcc = np.stack([s.mfcc.flattened() for s in segments]) if segments else None
    return frames, mfcc


def stack_labeled(
    seg_sessions: Sequence[SegmentedSession],
    ids: Sequence[str],
    epsilon: float,
    modality: str,
) -> ClassifierData:
    by_id = {ss.session_id: ss for ss in seg_sessions}
    examples = []
    for sid in ids:
        ss = by_id[sid]
        examples += label_segments(ss.segments, {sid: ss.mu}, epsilon)
    segments = [ex.segment for ex in examples]
    frames, mfcc = _stack_segments(segments, modality)
    return ClassifierData(
        frames_u8=frames,
        mfcc=mfcc,
        labels=np.array([ex.label for ex in examples], dtype=np.int64),
        session_ids=[s.session_id for s in segments],
    )


def stack_pairs(
    seg_sessions: Sequence[SegmentedSession],
    ids: Sequence[str],
    delta: float,
    modality: str,
) -> RankerData:
    """Pairs plus the unique segments they reference (unpaired segments are dropped)."""
    by_id = {ss.session_id: ss for ss in seg_sessions}
    segments: list[Segment] = []
    index: dict[tuple[str, int], int] = {}

    def seg_index(seg: Segment) -> int:
        key = (seg.session_id, seg.start)
        if key not in index:
            index[key] = len(segments)
            segments.append(seg)
        return index[key]

    pair_rows = []
    labels = []
    for sid in ids:
        for pair in make_pairs(by_id[sid].segments, delta):
            pair_rows.append((seg_index(pair.first), seg_index(pair.second)))
            labels.append(pair.label)
    frames, mfcc = _stack_segments(segments, modality)
    return RankerData(
        frames_u8=frames,
        mfcc=mfcc,
        pairs=np.array(pair_rows, dtype=np.int64).reshape(-1, 2),
        labels=np.array(labels, dtype=np.int64),
        session_ids=[s.session_id for s in segments],
    )


# ---------------------------------------------------------------------------
# Training with early stopping
# ---------------------------------------------------------------------------

class EarlyStopper:
    """Stop when the metric has not strictly improved for ``patience`` epochs."""

    def __init__(self, patience: int):
        if patience < 1:
            raise ValueError("patience must be >= 1")
        self.patience = patience
        self.best = -np.inf
        self.best_epoch = 0

    def observe(self, epoch: int, metric: float) -> bool:
        """Record epoch metric (1-based epochs); returns True when training should stop."""
        if metric > self.best:
            self.best = metric
            self.best_epoch = epoch
        return epoch - self.best_epoch >= self.patience


def _batch_slices(n: int, batch_size: int):
    for lo in range(0, n, batch_size):
        yield lo, min(lo + batch_size, n)


def _classifier_logits(net: ArousalNet, data: ClassifierData, idx: np.ndarray) -> np.ndarray:
    frames = data.frames_u8[idx] if data.frames_u8 is not None else None
    mfcc = data.mfcc[idx] if data.mfcc is not None else None
    return net.logits(frames, mfcc, frames_u8=frames is not None)


def classifier_accuracy(net: ArousalNet, data: ClassifierData, batch_size: int) -> float:
    if len(data) == 0:
        raise ValueError("cannot evaluate on an empty set")
    hits = 0
    for lo, hi in _batch_slices(len(data), batch_size):
        frames = data.frames_u8[lo:hi] if data.frames_u8 is not None else None
        mfcc = data.mfcc[lo:hi] if data.mfcc is not None else None
        logits = net.logits(frames, mfcc, frames_u8=frames is not None)
        hits += int((logits.argmax(axis=1) == data.labels[lo:hi]).sum())
    return hits / len(data)


def _unique_scores(net: ArousalNet, data: RankerData, batch_size: int) -> np.ndarray:
    """Logit difference f1 - f0 for every unique segment."""
    n = len(data.session_ids)
    scores = np.empty(n)
    for lo, hi in _batch_slices(n, batch_size):
        frames = data.frames_u8[lo:hi] if data.frames_u8 is not None else None
        mfcc = data.mfcc[lo:hi] if data.mfcc is not None else None
        logits = net.logits(frames, mfcc, frames_u8=frames is not None)
        scores[lo:hi] = logits[:, 1] - logits[:, 0]
    return scores


def ranker_accuracy(net: ArousalNet, data: RankerData, batch_size: int) -> float:
    if len(data) == 0:
        raise ValueError("cannot evaluate on an empty pair set")
    scores = _unique_scores(net, data, batch_size)
    pred = (scores[data.pairs[:, 0]] > scores[data.pairs[:, 1]]).astype(np.int64)
    return float((pred == data.labels).mean())


def _train_epoch_classifier(net, data, optimizer, batch_size, rng):
    perm = rng.permutation(len(data))
    for lo, hi in _batch_slices(len(data), batch_size):
        idx = perm[lo:hi]
        logits = _classifier_logits(net, data, idx)
        _, dlogits = softmax_nll(logits, data.labels[idx])
        net.zero_grad()
        net.backward(dlogits / len(idx))
        optimizer.step(net.parameters())


def _train_epoch_ranker(net, data, optimizer, batch_size, rng):
    perm = rng.permutation(len(data))
    for lo, hi in _batch_slices(len(data), batch_size):
        batch = perm[lo:hi]
        pair_idx = data.pairs[batch]
        uniq, inv = np.unique(pair_idx.reshape(-1), return_inverse=True)
        inv = inv.reshape(-1, 2)
        frames = data.frames_u8[uniq] if data.frames_u8 is not None else None
        mfcc = data.mfcc[uniq] if data.mfcc is not None else None
        logits = net.logits(frames, mfcc, frames_u8=frames is not None)
        diff = logits[inv[:, 0]] - logits[inv[:, 1]]
        _, ddiff = softmax_nll(diff, data.labels[batch])
        ddiff /= len(batch)
        dlogits = np.zeros_like(logits)
        np.add.at(dlogits, inv[:, 0], ddiff)
        np.add.at(dlogits, inv[:, 1], -ddiff)
        net.zero_grad()
        net.backward(dlogits)
        optimizer.step(net.parameters())


@dataclass
class TrainResult:
    epochs: int
    best_val: float
    history: list[float] = field(default_factory=list)


def train_with_early_stopping(
    net: ArousalNet,
    train_data: ClassifierData | RankerData,
    val_data: ClassifierData | RankerData,
    config: ExperimentConfig,
    rng: np.random.Generator,
) -> TrainResult:
    """Train up to max_epochs, restoring the best-validation parameters.

    The validation metric is classification accuracy in classifier mode and
    pairwise accuracy in ranker mode; stopping triggers once it fails to
    improve for ``patience`` consecutive epochs.
    """
    if len(train_data) == 0:
        raise ValueError("training data is empty")
    if len(val_data) == 0:
        raise ValueError("validation data is empty")
    is_rank = isinstance(train_data, RankerData)
    train_epoch = _train_epoch_ranker if is_rank else _train_epoch_classifier
    evaluate = ranker_accuracy if is_rank else classifier_accuracy
    optimizer = make_optimizer(config.optimizer_config())
    stopper = EarlyStopper(config.patience)
    best_state = net.clone_state()
    history = []
    epochs = 0
    for epoch in range(1, config.max_epochs + 1):
        train_epoch(net, train_data, optimizer, config.batch_size, rng)
        metric = evaluate(net, val_data, config.batch_size)
        history.append(metric)
        epochs = epoch
        if metric > stopper.best:
            best_state = net.clone_state()
        if stopper.observe(epoch, metric):
            break
    net.load_state(best_state)
    return TrainResult(epochs=epochs, best_val=stopper.best, history=history)


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------

def baseline_accuracy(train_labels: np.ndarray, test_labels: np.ndarray) -> float:
    """Accuracy of always predicting the training majority class (ties -> class 0)."""
    train_labels = np.asarray(train_labels)
    if train_labels.size == 0:
        raise ValueError("train labels are empty")
    test_labels = np.asarray(test_labels)
    if test_labels.size == 0:
        raise ValueError("test labels are empty")
    majority = 1 if (train_labels == 1).sum() > (train_labels == 0).sum() else 0
    return float((test_labels == majority).mean())


def kendall_tau(truth: np.ndarray, scores: np.ndarray) -> float | None:
    """Tie-corrected Kendall's tau-b; None when either ranking is fully tied."""
    x = np.asarray(truth, dtype=np.float64)
    y = np.asarray(scores, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("truth and scores must be 1-D and parallel")
    n = len(x)
    if n < 2:
        raise ValueError("kendall_tau needs at least 2 items")
    iu = np.triu_indices(n, 1)
    sx = np.sign(x[:, None] - x[None, :])[iu]
    sy = np.sign(y[:, None] - y[None, :])[iu]
    n0 = n * (n - 1) // 2
    ties_x = int((sx == 0).sum())
    ties_y = int((sy == 0).sum())
    if ties_x == n0 or ties_y == n0:
        return None
    concordant_minus_discordant = float((sx * sy).sum())
    return concordant_minus_discordant / np.sqrt(float(n0 - ties_x) * float(n0 - ties_y))


def _ci95(values: Sequence[float]) -> float:
    vals = np.asarray([v for v in values if v is not None], dtype=np.float64)
    if len(vals) < 2:
        return 0.0
    return float(1.96 * vals.std(ddof=1) / np.sqrt(len(vals)))


# ---------------------------------------------------------------------------
# Fold execution
# ---------------------------------------------------------------------------

@dataclass
class FoldResult:
    test_session: str
    accuracy: float | None
    baseline: float | None
    kendall_tau: float | None
    epochs: int
    best_val: float | None
    n_train: int
    n_val: int
    n_test: int
    error: str | None = None

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass
class _FoldContext:
    seg_sessions: list[SegmentedSession]
    splits: list[FoldSplit]
    config: ExperimentConfig
    resolution: tuple[int, int]
    n_frames: int
    audio_frames: int


def _audit_no_leakage(split: FoldSplit, *stacked_sids: Sequence[str]) -> None:
    train, val, test = set(split.train_ids), set(split.val_ids), {split.test_id}
    if train & val or train & test or val & test:
        raise AssertionError(f"fold sets overlap for test session {split.test_id}")
    for sids, allowed in zip(stacked_sids, (train, val, test)):
        stray = set(sids) - allowed
        if stray:
            raise AssertionError(
                f"leakage: segments from {sorted(stray)} in the wrong fold set"
            )


def _run_fold(ctx: _FoldContext, fold_index: int) -> FoldResult:
    split = ctx.splits[fold_index]
    cfg = ctx.config
    try:
        if cfg.mode == "classify":
            train = stack_labeled(ctx.seg_sessions, split.train_ids, cfg.epsilon, cfg.modality)
            val = stack_labeled(ctx.seg_sessions, split.val_ids, cfg.epsilon, cfg.modality)
            test = stack_labeled(ctx.seg_sessions, [split.test_id], cfg.epsilon, cfg.modality)
        else:
            train = stack_pairs(ctx.seg_sessions, split.train_ids, cfg.delta, cfg.modality)
            val = stack_pairs(ctx.seg_sessions, split.val_ids, cfg.delta, cfg.modality)
            test = stack_pairs(ctx.seg_sessions, [split.test_id], cfg.delta, cfg.modality)
        _audit_no_leakage(split, train.session_ids, val.session_ids, test.session_ids)
        if len(train) == 0 or len(val) == 0 or len(test) == 0:
            raise ValueError(
                f"empty train/val/test sets ({len(train)}/{len(val)}/{len(test)})"
            )
        seed_seq = np.random.SeedSequence([cfg.seed, fold_index])
        init_rng, shuffle_rng = [np.random.default_rng(s) for s in seed_seq.spawn(2)]
        net = build_model(
            n_frames=ctx.n_frames,
            resolution=ctx.resolution,
            modality=cfg.modality,
            mode=cfg.mode,
            seed=init_rng,
            audio_frames=ctx.audio_frames,
        )
        result = train_with_early_stopping(net, train, val, cfg, shuffle_rng)
        if cfg.mode == "classify":
            accuracy = classifier_accuracy(net, test, cfg.batch_size)
            baseline = baseline_accuracy(train.labels, test.labels)
        else:
            accuracy = ranker_accuracy(net, test, cfg.batch_size)
            baseline = 0.5
        tau = _test_video_tau(ctx, net, split.test_id)
        return FoldResult(
            test_session=split.test_id,
            accuracy=accuracy,
            baseline=baseline,
            kendall_tau=tau,
            epochs=result.epochs,
            best_val=result.best_val,
            n_train=len(train),
            n_val=len(val),
            n_test=len(test),
        )
    except Exception as exc:  # fold failures are recorded, the run continues
        return FoldResult(
            test_session=split.test_id,
            accuracy=None,
            baseline=None,
            kendall_tau=None,
            epochs=0,
            best_val=None,
            n_train=0,
            n_val=0,
            n_test=0,
            error=f"{type(exc).__name__}: {exc}",
        )


def _test_video_tau(ctx: _FoldContext, net: ArousalNet, test_id: str) -> float | None:
    """Kendall's tau between segment truth means and model scores on the test video."""
    segments = next(ss for ss in ctx.seg_sessions if ss.session_id == test_id).segments
    if len(segments) < 2:
        return None
    frames, mfcc = None, None
    if ctx.config.modality != "audio":
        frames = np.stack([s.frames_u8 for s in segments])
    if ctx.config.modality != "visual":
        mfcc = np.stack([s.mfcc.flattened() for s in segments])
    n = len(segments)
    scores = np.empty(n)
    for lo, hi in _batch_slices(n, ctx.config.batch_size):
        scores[lo:hi] = net.score_batch(
            frames[lo:hi] if frames is not None else None,
            mfcc[lo:hi] if mfcc is not None else None,
            frames_u8=frames is not None,
        )
    truth = np.array([s.mean_arousal for s in segments])
    return kendall_tau(truth, scores)


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------

@dataclass
class ExperimentReport:
    config: dict
    folds: list[FoldResult]
    summary: dict
    dataset_sizes: dict
    cleaning: dict | None = None

    def to_dict(self) -> dict:
        return {
            "config": self.config,
            "folds": [f.to_dict() for f in self.folds],
            "summary": self.summary,
            "dataset_sizes": self.dataset_sizes,
            "cleaning": self.cleaning,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


def dataset_size_table(seg_sessions: Sequence[SegmentedSession], mode: str) -> dict:
    """Counts of usable examples per threshold at the current window."""
    sizes: dict[str, int] = {}
    if mode == "classify":
        for eps in EPSILON_SWEEP:
            total = 0
            for ss in seg_sessions:
                means = np.array([s.mean_arousal for s in ss.segments])
                total += int(((means > ss.mu + eps) | (means < ss.mu - eps)).sum())
            sizes[f"{eps}"] = total
    else:
        for delta in DELTA_SWEEP:
            total = 0
            for ss in seg_sessions:
                means = np.array([s.mean_arousal for s in ss.segments])
                gaps = np.abs(means[:, None] - means[None, :])
                total += int((np.triu(gaps > delta, k=1)).sum()) * 2
            sizes[f"{delta}"] = total
    return {
        "segments": sum(len(ss.segments) for ss in seg_sessions),
        "per_threshold": sizes,
    }


def summarize_folds(folds: Sequence[FoldResult]) -> dict:
    ok = [f for f in folds if f.error is None]
    accs = [f.accuracy for f in ok]
    baselines = [f.baseline for f in ok]
    taus = [f.kendall_tau for f in ok if f.kendall_tau is not None]
    return {
        "n_folds": len(folds),
        "failed_folds": [f.test_session for f in folds if f.error is not None],
        "mean_accuracy": float(np.mean(accs)) if accs else None,
        "ci95_accuracy": _ci95(accs),
        "mean_baseline": float(np.mean(baselines)) if baselines else None,
        "mean_tau": float(np.mean(taus)) if taus else None,
        "ci95_tau": _ci95(taus),
        "mean_epochs": float(np.mean([f.epochs for f in ok])) if ok else None,
    }


# module-level context so forked fold workers inherit the prepared dataset
_POOL_CONTEXT: _FoldContext | None = None


def _pool_fold(fold_index: int) -> FoldResult:
    return _run_fold(_POOL_CONTEXT, fold_index)


def run_experiment(
    data: Sequence[SessionData],
    config: ExperimentConfig,
    cleaning_summary: dict | None = None,
    jobs: int = 1,
    progress: Callable[[str], None] | None = None,
) -> ExperimentReport:
    """Full leave-one-video-out run; fold failures are recorded, not raised."""
    config.validate()
    if not data:
        raise ValueError("dataset is empty")
    first = data[0].session
    resolution = first.frames.shape[1:]
    n_frames = frames_per_window(config.window_s, first.fps)
    audio_frames = frames_per_window(config.window_s, 30.0)
    seg_sessions = segment_dataset(data, config.window_s,
                                   with_mfcc=config.modality != "visual")
    splits = lovo_splits([d.session.id for d in data], config.val_videos, config.seed)
    ctx = _FoldContext(seg_sessions, splits, config, resolution, n_frames, audio_frames)
    if jobs > 1:
        global _POOL_CONTEXT
        _POOL_CONTEXT = ctx
        try:
            with multiprocessing.get_context("fork").Pool(jobs) as pool:
                folds = pool.map(_pool_fold, range(len(splits)))
        finally:
            _POOL_CONTEXT = None
    else:
        folds = []
        for k in range(len(splits)):
            result = _run_fold(ctx, k)
            folds.append(result)
            if progress is not None:
                progress(
                    f"fold {k + 1}/{len(splits)} test={result.test_session} "
                    f"acc={result.accuracy if result.accuracy is not None else 'n/a'} "
                    f"epochs={result.epochs}"
                )
    return ExperimentReport(
        config=config.to_dict(),
        folds=folds,
        summary=summarize_folds(folds),
        dataset_sizes=dataset_size_table(seg_sessions, config.mode),
        cleaning=cleaning_summary,
    )


def sweep(
    data: Sequence[SessionData],
    axis: str,
    values: Sequence | None,
    base_config: ExperimentConfig,
    cleaning_summary: dict | None = None,
    jobs: int = 1,
    progress: Callable[[str], None] | None = None,
) -> tuple[list[ExperimentReport], list[dict]]:
    """One full run per value of the chosen axis; emits (reports, curve rows)."""
    if axis not in SWEEP_VALUES:
        raise ValueError(f"axis must be one of {sorted(SWEEP_VALUES)}, got {axis!r}")
    if values is None:
        values = SWEEP_VALUES[axis]
    if len(values) == 0:
        raise ValueError("sweep needs at least one value")
    field_name = {"epsilon": "epsilon", "delta": "delta",
                  "window": "window_s", "modality": "modality"}[axis]
    reports = []
    curve = []
    for value in values:
        cfg = dataclasses.replace(base_config, **{field_name: value})
        if progress is not None:
            progress(f"sweep {axis}={value}")
        report = run_experiment(data, cfg, cleaning_summary, jobs=jobs, progress=progress)
        reports.append(report)
        curve.append(
            {
                "value": value,
                "mean_acc": report.summary["mean_accuracy"],
                "ci": report.summary["ci95_accuracy"],
                "baseline": report.summary["mean_baseline"],
                "mean_tau": report.summary["mean_tau"],
            }
        )
    return reports, curve
