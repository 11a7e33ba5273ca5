"""Annotation trace processing: normalization, resampling, DTW outlier removal.

Raw traces are unbounded annotation signals sampled at the annotation rate
(4 Hz by convention).  They are min-max normalized per session, compared to
the cohort median trace with dynamic time warping to drop outliers, and
zero-order-hold resampled to the video frame rate for labeling.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np


@dataclass(eq=False)
class ArousalTrace:
    """Per-frame arousal in [0, 1] at the session's video rate."""

    values: np.ndarray
    session_id: str

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.size == 0:
            raise ValueError(f"trace for {self.session_id} is empty")
        if self.values.min() < -1e-12 or self.values.max() > 1 + 1e-12:
            raise ValueError(f"trace for {self.session_id} leaves [0, 1]")


def normalize_minmax(raw: Sequence[float] | np.ndarray) -> np.ndarray:
    """Map a value sequence to [0, 1]; constant sequences become all 0.5."""
    raw = np.asarray(raw, dtype=np.float64)
    if raw.size == 0:
        raise ValueError("cannot normalize an empty sequence")
    lo, hi = raw.min(), raw.max()
    if hi == lo:
        return np.full_like(raw, 0.5)
    return (raw - lo) / (hi - lo)


def resample_zoh(samples: np.ndarray, n_frames: int, fps: float) -> np.ndarray:
    """Hold each annotation value until the next sample, one value per frame.

    Frame k (time k/fps) takes the latest sample with time <= k/fps; frames
    before the first sample take the first sample's value.
    """
    samples = np.asarray(samples, dtype=np.float64).reshape(-1, 2)
    if samples.size == 0:
        raise ValueError("cannot resample an empty sample set")
    if n_frames < 1:
        raise ValueError("n_frames must be >= 1")
    times, values = samples[:, 0], samples[:, 1]
    if np.any(np.diff(times) <= 0):
        raise ValueError("sample timestamps must be strictly increasing")
    frame_times = np.arange(n_frames, dtype=np.float64) / fps
    idx = np.searchsorted(times, frame_times, side="right") - 1
    return values[np.clip(idx, 0, len(values) - 1)]


def dtw_distance(a: Sequence[float] | np.ndarray, b: Sequence[float] | np.ndarray) -> float:
    """Dynamic time warping distance with |a_i - b_j| cost and no window constraint.

    D(i,j) = |a_i - b_j| + min(D(i-1,j), D(i,j-1), D(i-1,j-1)), D(1,1) = |a_1 - b_1|.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.size == 0 or b.size == 0:
        raise ValueError("dtw_distance requires non-empty sequences")
    n, m = len(a), len(b)
    prev = np.empty(m)
    cur = np.empty(m)
    row = np.abs(a[0] - b)
    np.cumsum(row, out=prev)
    for i in range(1, n):
        cost = np.abs(a[i] - b)
        cur[0] = cost[0] + prev[0]
        for j in range(1, m):
            cur[j] = cost[j] + min(prev[j], prev[j - 1], cur[j - 1])
        prev, cur = cur, prev
    return float(prev[m - 1])


def median_trace(traces: Sequence[np.ndarray]) -> np.ndarray:
    """Pointwise median over the common prefix (shortest trace length)."""
    if len(traces) == 0:
        raise ValueError("median_trace requires at least one trace")
    n = min(len(t) for t in traces)
    stacked = np.stack([np.asarray(t, dtype=np.float64)[:n] for t in traces])
    return np.median(stacked, axis=0)


def outlier_distances(traces: Sequence[np.ndarray]) -> np.ndarray:
    """DTW distance of each trace to the cohort median trace."""
    med = median_trace(traces)
    return np.array([dtw_distance(t, med) for t in traces])


def filter_outliers(items: Sequence, traces: Sequence[np.ndarray], threshold: float):
    """Keep items whose annotation-rate trace stays within ``threshold`` of the median.

    ``items`` is any sequence parallel to ``traces`` (typically sessions).
    Returns (kept items, per-item DTW distances).
    """
    if threshold <= 0:
        raise ValueError("threshold must be positive")
    if len(items) != len(traces):
        raise ValueError("items and traces must be parallel")
    distances = outlier_distances(traces)
    kept = [item for item, d in zip(items, distances) if d <= threshold]
    return kept, distances


def trace_mean(trace: ArousalTrace | np.ndarray) -> float:
    values = trace.values if isinstance(trace, ArousalTrace) else np.asarray(trace)
    if values.size == 0:
        raise ValueError("trace is empty")
    return float(values.mean())
