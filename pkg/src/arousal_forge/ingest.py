"""Session loading: PGM/PPM frames, WAV audio, annotation traces and manifests.

A session directory looks like::

    <session>/
        frames/000000.pgm   # binary PGM (P5) or PPM (P6), maxval 255
        audio.wav           # RIFF WAVE, PCM16, mono
        trace.csv           # header "time_s,value"

Frames are converted to grayscale (Rec.601 luma) and bilinearly resized to
the manifest's target resolution at load time.  Pixel values stay uint8;
they are scaled to [0, 1] where the models consume them.
"""

from __future__ import annotations

import csv
import json
import wave
from dataclasses import dataclass
from pathlib import Path

import numpy as np

DEFAULT_FPS = 30.0

# Rec.601 luma weights for RGB -> grayscale.
LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114])


class LoadError(Exception):
    """A session file is missing or malformed."""


@dataclass(eq=False)
class RawSession:
    """One playthrough: frames, audio and the raw annotation trace."""

    id: str
    frames: np.ndarray      # (n_frames, h, w) uint8
    fps: float
    audio: np.ndarray       # int16 mono PCM
    sample_rate: int
    raw_trace: np.ndarray   # (k, 2): time_s, unbounded arousal value

    @property
    def duration_s(self) -> float:
        return len(self.frames) / self.fps

    def validate(self) -> None:
        if len(self.frames) == 0:
            raise LoadError(f"session {self.id}: no frames")
        if self.frames.ndim != 3:
            raise LoadError(f"session {self.id}: frames must share one resolution")
        audio_duration = len(self.audio) / self.sample_rate
        if audio_duration < self.duration_s - 1.0 / self.fps - 1e-9:
            raise LoadError(
                f"session {self.id}: audio covers {audio_duration:.3f}s "
                f"but frames span {self.duration_s:.3f}s"
            )
        times = self.raw_trace[:, 0]
        if len(times) == 0:
            raise LoadError(f"session {self.id}: empty annotation trace")
        if np.any(np.diff(times) <= 0):
            raise LoadError(f"session {self.id}: trace timestamps not strictly increasing")


@dataclass
class SessionManifest:
    entries: list[tuple[str, Path]]   # (session id, directory)
    target_hw: tuple[int, int]
    fps: float = DEFAULT_FPS


# ---------------------------------------------------------------------------
# PGM / PPM
# ---------------------------------------------------------------------------

def read_pnm(path: str | Path) -> np.ndarray:
    """Read a binary PGM (P5) or PPM (P6) image with maxval <= 255.

    Returns (h, w) uint8 for PGM and (h, w, 3) uint8 for PPM.
    """
    path = Path(path)
    try:
        buf = path.read_bytes()
    except OSError as exc:
        raise LoadError(f"cannot read image {path}: {exc}") from None
    magic = buf[:2]
    if magic not in (b"P5", b"P6"):
        raise LoadError(f"{path}: not a binary PGM/PPM (magic {magic!r})")
    fields, pos = _pnm_header_ints(buf, path)
    width, height, maxval = fields
    if maxval <= 0 or maxval > 255:
        raise LoadError(f"{path}: unsupported maxval {maxval}")
    channels = 3 if magic == b"P6" else 1
    need = width * height * channels
    if len(buf) - pos < need:
        raise LoadError(f"{path}: truncated pixel data")
    data = np.frombuffer(buf, dtype=np.uint8, count=need, offset=pos)
    if channels == 1:
        return data.reshape(height, width).copy()
    return data.reshape(height, width, 3).copy()


def _pnm_header_ints(buf: bytes, path: Path) -> tuple[tuple[int, int, int], int]:
    """Parse width/height/maxval after the magic, honouring '#' comments."""
    ints: list[int] = []
    i = 2
    try:
        while len(ints) < 3:
            c = buf[i]
            if c in b" \t\r\n":
                i += 1
            elif c == ord("#"):
                while buf[i] not in b"\r\n":
                    i += 1
            else:
                j = i
                while buf[j] not in b" \t\r\n":
                    j += 1
                ints.append(int(buf[i:j]))
                i = j
        # exactly one whitespace byte separates the header from the raster
        i += 1
    except (IndexError, ValueError):
        raise LoadError(f"{path}: malformed PNM header") from None
    return (ints[0], ints[1], ints[2]), i


def write_pgm(path: str | Path, image: np.ndarray) -> None:
    """Write a 2-D uint8 array as binary PGM (P5, maxval 255)."""
    image = np.asarray(image, dtype=np.uint8)
    if image.ndim != 2:
        raise ValueError("write_pgm expects a 2-D grayscale image")
    h, w = image.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        f.write(image.tobytes())


# ---------------------------------------------------------------------------
# WAV
# ---------------------------------------------------------------------------

def read_wav(path: str | Path) -> tuple[np.ndarray, int]:
    """Read a mono PCM16 WAV file. Returns (int16 samples, sample rate)."""
    try:
        with wave.open(str(path), "rb") as w:
            if w.getnchannels() != 1:
                raise LoadError(f"{path}: expected mono audio, got {w.getnchannels()} channels")
            if w.getsampwidth() != 2:
                raise LoadError(f"{path}: expected 16-bit PCM, got {8 * w.getsampwidth()}-bit")
            rate = w.getframerate()
            raw = w.readframes(w.getnframes())
    except (OSError, wave.Error) as exc:
        raise LoadError(f"cannot read audio {path}: {exc}") from None
    return np.frombuffer(raw, dtype="<i2"), rate


def write_wav(path: str | Path, samples: np.ndarray, sample_rate: int) -> None:
    samples = np.asarray(samples, dtype="<i2")
    with wave.open(str(path), "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(2)
        w.setframerate(sample_rate)
        w.writeframes(samples.tobytes())


# ---------------------------------------------------------------------------
# Annotation trace CSV
# ---------------------------------------------------------------------------

def read_trace_csv(path: str | Path) -> np.ndarray:
    """Read the annotation trace: header ``time_s,value`` then decimal rows."""
    try:
        with open(path, newline="") as f:
            rows = list(csv.reader(f))
    except OSError as exc:
        raise LoadError(f"cannot read trace {path}: {exc}") from None
    if not rows or [c.strip() for c in rows[0]] != ["time_s", "value"]:
        raise LoadError(f"{path}: expected header 'time_s,value'")
    try:
        data = np.array([[float(t), float(v)] for t, v in rows[1:]], dtype=np.float64)
    except ValueError as exc:
        raise LoadError(f"{path}: bad trace row: {exc}") from None
    if data.size == 0:
        raise LoadError(f"{path}: trace has no samples")
    return data.reshape(-1, 2)


def write_trace_csv(path: str | Path, trace: np.ndarray) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["time_s", "value"])
        for t, v in np.asarray(trace, dtype=np.float64):
            writer.writerow([repr(float(t)), repr(float(v))])


# ---------------------------------------------------------------------------
# Grayscale and resizing
# ---------------------------------------------------------------------------

def rgb_to_gray(image: np.ndarray) -> np.ndarray:
    """Rec.601 luma, rounded half-up to uint8."""
    if image.ndim == 2:
        return image.astype(np.uint8, copy=True)
    luma = image.astype(np.float64) @ LUMA_WEIGHTS
    return np.floor(luma + 0.5).astype(np.uint8)


def resize_bilinear(image: np.ndarray, target_hw: tuple[int, int]) -> np.ndarray:
    """Bilinear resampling with half-pixel-centre alignment.

    uint8 input is rounded back to uint8; float input stays float64.
    """
    out_h, out_w = target_hw
    in_h, in_w = image.shape
    if (in_h, in_w) == (out_h, out_w):
        return image.copy()
    if out_h < 1 or out_w < 1:
        raise ValueError("target resolution must be positive")
    src = image.astype(np.float64)
    ys = (np.arange(out_h) + 0.5) * (in_h / out_h) - 0.5
    xs = (np.arange(out_w) + 0.5) * (in_w / out_w) - 0.5
    y0 = np.floor(ys)
    x0 = np.floor(xs)
    fy = (ys - y0)[:, None]
    fx = (xs - x0)[None, :]
    y0i = np.clip(y0.astype(np.int64), 0, in_h - 1)
    y1i = np.clip(y0i + 1, 0, in_h - 1)
    x0i = np.clip(x0.astype(np.int64), 0, in_w - 1)
    x1i = np.clip(x0i + 1, 0, in_w - 1)
    top = (1.0 - fx) * src[np.ix_(y0i, x0i)] + fx * src[np.ix_(y0i, x1i)]
    bot = (1.0 - fx) * src[np.ix_(y1i, x0i)] + fx * src[np.ix_(y1i, x1i)]
    out = (1.0 - fy) * top + fy * bot
    if image.dtype == np.uint8:
        return np.floor(out + 0.5).astype(np.uint8)
    return out


# ---------------------------------------------------------------------------
# Session and dataset loading
# ---------------------------------------------------------------------------

def load_session(
    session_dir: str | Path,
    target_hw: tuple[int, int],
    fps: float = DEFAULT_FPS,
    session_id: str | None = None,
) -> RawSession:
    """Load one session directory, converting frames to grayscale at target size."""
    session_dir = Path(session_dir)
    frames_dir = session_dir / "frames"
    if not frames_dir.is_dir():
        raise LoadError(f"missing frames directory {frames_dir}")
    frame_files = sorted(frames_dir.glob("*.pgm")) + sorted(frames_dir.glob("*.ppm"))
    if not frame_files:
        raise LoadError(f"session {session_dir}: no frames")
    frames = np.empty((len(frame_files), *target_hw), dtype=np.uint8)
    for i, path in enumerate(frame_files):
        img = read_pnm(path)
        frames[i] = resize_bilinear(rgb_to_gray(img), target_hw)
    audio, rate = read_wav(session_dir / "audio.wav")
    raw_trace = read_trace_csv(session_dir / "trace.csv")
    session = RawSession(
        id=session_id or session_dir.name,
        frames=frames,
        fps=fps,
        audio=audio,
        sample_rate=rate,
        raw_trace=raw_trace,
    )
    session.validate()
    return session


def load_manifest(path: str | Path) -> SessionManifest:
    path = Path(path)
    try:
        spec = json.loads(path.read_text())
    except OSError as exc:
        raise LoadError(f"cannot read manifest {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise LoadError(f"manifest {path} is not valid JSON: {exc}") from None
    try:
        entries = [(e["id"], (path.parent / e["path"]).resolve()) for e in spec["sessions"]]
        target = (int(spec.get("height", 72)), int(spec.get("width", 96)))
        fps = float(spec.get("fps", DEFAULT_FPS))
    except (KeyError, TypeError) as exc:
        raise LoadError(f"manifest {path} missing field: {exc}") from None
    ids = [sid for sid, _ in entries]
    if len(set(ids)) != len(ids):
        raise LoadError(f"manifest {path}: session ids are not unique")
    return SessionManifest(entries=entries, target_hw=target, fps=fps)


def load_dataset(manifest: SessionManifest) -> list[RawSession]:
    return [
        load_session(directory, manifest.target_hw, manifest.fps, session_id=sid)
        for sid, directory in manifest.entries
    ]


def filter_short_sessions(sessions: list[RawSession], min_s: float = 15.0) -> list[RawSession]:
    """Drop sessions whose frame track is shorter than ``min_s`` seconds (inclusive keep)."""
    if min_s <= 0:
        raise ValueError("min_s must be positive")
    return [s for s in sessions if s.duration_s >= min_s]


def audio_span(session: RawSession, start_frame: int, n_frames: int) -> np.ndarray:
    """PCM span covering frames [start, start+n).

    Sessions may legally end up to one frame short of audio; the tail is
    zero-padded within that allowance.
    """
    sr = session.sample_rate
    a = int(round(start_frame * sr / session.fps))
    b = int(round((start_frame + n_frames) * sr / session.fps))
    span = session.audio[a:b]
    if len(span) < b - a:
        missing = (b - a) - len(span)
        if missing > int(np.ceil(sr / session.fps)):
            raise LoadError(
                f"session {session.id}: audio too short for frames "
                f"[{start_frame}, {start_frame + n_frames})"
            )
        span = np.concatenate([span, np.zeros(missing, dtype=span.dtype)])
    return span
