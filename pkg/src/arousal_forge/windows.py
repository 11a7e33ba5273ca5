"""Split sessions into non-overlapping segments; derive labels and preference pairs.

A segment is ``n = round(window_s * fps)`` consecutive frames (half-up
rounding), its MFCC block, and the mean arousal over its span.  Trailing
partial windows are dropped.  Classification labels use the band around the
session trace mean: segments within ``epsilon`` of the mean are ambiguous
and omitted.  Preference pairs are formed within a session only, in both
orders, whenever the mean-arousal gap exceeds ``delta``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from . import audio as audio_mod
from .ingest import RawSession, audio_span
from .nn import PIXEL_SCALE
from .trace import ArousalTrace


@dataclass(eq=False)
class Segment:
    session_id: str
    start: int                    # first frame index in the session
    length: int                   # frames in the window
    frames_u8: np.ndarray         # (length, h, w) uint8 view into the session
    mfcc: audio_mod.MfccBlock | None
    mean_arousal: float

    @property
    def frames(self) -> np.ndarray:
        """Frame stack scaled to [0, 1]."""
        return self.frames_u8 * PIXEL_SCALE

    @property
    def span(self) -> tuple[int, int]:
        return (self.start, self.length)


@dataclass(eq=False)
class LabeledExample:
    segment: Segment
    label: int  # 0 = low arousal, 1 = high arousal


@dataclass(eq=False)
class PreferencePair:
    first: Segment
    second: Segment
    label: int  # 1 = first has higher arousal


def frames_per_window(window_s: float, fps: float) -> int:
    """Half-up rounding of the fractional frame count."""
    return int(np.floor(window_s * fps + 0.5))


def segment_session(
    session: RawSession,
    trace: ArousalTrace,
    window_s: float,
    with_mfcc: bool = True,
) -> list[Segment]:
    """Tile the session with non-overlapping windows of ``window_s`` seconds."""
    if window_s <= 0:
        raise ValueError("window_s must be positive")
    if len(trace.values) != len(session.frames):
        raise ValueError(
            f"session {session.id}: trace has {len(trace.values)} values "
            f"for {len(session.frames)} frames"
        )
    n = frames_per_window(window_s, session.fps)
    if n < 1:
        raise ValueError(f"window {window_s}s yields no frames at {session.fps} fps")
    total = len(session.frames)
    segments = []
    for start in range(0, total - n + 1, n):
        mfcc = None
        if with_mfcc:
            span = audio_span(session, start, n)
            mfcc = audio_mod.mfcc_block(span, session.sample_rate, window_s)
        segments.append(
            Segment(
                session_id=session.id,
                start=start,
                length=n,
                frames_u8=session.frames[start:start + n],
                mfcc=mfcc,
                mean_arousal=float(trace.values[start:start + n].mean()),
            )
        )
    return segments


def label_segments(
    segments: Sequence[Segment],
    session_means: Mapping[str, float],
    epsilon: float,
) -> list[LabeledExample]:
    """Label segments high/low against their session trace mean.

    Segments with |mean_arousal - mu| <= epsilon are ambiguous and omitted;
    exact ties with mu are omitted even at epsilon = 0.
    """
    if epsilon < 0:
        raise ValueError("epsilon must be >= 0")
    labeled = []
    for seg in segments:
        mu = session_means[seg.session_id]
        if seg.mean_arousal > mu + epsilon:
            labeled.append(LabeledExample(seg, 1))
        elif seg.mean_arousal < mu - epsilon:
            labeled.append(LabeledExample(seg, 0))
    return labeled


def make_pairs(segments: Sequence[Segment], delta: float) -> list[PreferencePair]:
    """Within-session preference pairs with |mean gap| > delta, in both orders.

    For every qualifying unordered pair the mirrored pair with the flipped
    label is emitted too, so the result is exactly label-balanced.
    """
    if delta < 0:
        raise ValueError("delta must be >= 0")
    by_session: dict[str, list[Segment]] = {}
    order: list[str] = []
    for seg in segments:
        if seg.session_id not in by_session:
            order.append(seg.session_id)
        by_session.setdefault(seg.session_id, []).append(seg)
    pairs = []
    for sid in order:
        group = sorted(by_session[sid], key=lambda s: s.start)
        for i in range(len(group)):
            for j in range(i + 1, len(group)):
                a, b = group[i], group[j]
                if abs(a.mean_arousal - b.mean_arousal) > delta:
                    first_wins = 1 if a.mean_arousal > b.mean_arousal else 0
                    pairs.append(PreferencePair(a, b, first_wins))
                    pairs.append(PreferencePair(b, a, 1 - first_wins))
    return pairs
