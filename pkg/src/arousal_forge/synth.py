"""Seeded synthetic sessions with a known audiovisual-event -> arousal link.

Each session shows a dark scene with a drifting bright sprite.  Game-like
"events" fire at Poisson times: a bright disc expands for 0.3 s, a score bar
grows, and an 880 Hz tone burst plays.  Ground-truth arousal is the event
train convolved with an exponential-decay kernel, sampled at the annotation
rate.  Coupling switches remove the visual or audio event signatures so
ablation experiments have a known answer.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .ingest import RawSession, write_pgm, write_trace_csv, write_wav
from .trace import normalize_minmax

ANNOTATION_HZ = 4.0
FLASH_S = 0.3
TONE_HZ = 880.0
TONE_S = 0.2
TONE_AMPLITUDE = 0.3
BACKGROUND_LEVEL = 18.0
SPRITE_LEVEL = 130
FLASH_LEVEL = 235.0
SCORE_BAR_ROWS = 2

COUPLINGS = ("visual_only", "audio_only", "both")


@dataclass
class SynthConfig:
    sessions: int = 10
    duration_s: float = 60.0
    fps: int = 30
    sample_rate: int = 16000
    height: int = 36
    width: int = 48
    event_rate: float = 0.35          # events per second
    kernel_amplitude: float = 1.0
    kernel_tau_s: float = 3.0
    pixel_noise: float = 3.0          # gaussian sigma in uint8 units
    audio_noise: float = 0.02         # pink-noise bed amplitude
    coupling: str = "both"
    seed: int = 0

    def validate(self) -> None:
        if self.duration_s < 15:
            raise ValueError("duration_s must be >= 15 s to survive the duration filter")
        if self.event_rate < 0:
            raise ValueError("event_rate must be >= 0")
        if self.coupling not in COUPLINGS:
            raise ValueError(f"coupling must be one of {COUPLINGS}")
        if self.sessions < 1:
            raise ValueError("sessions must be >= 1")


@dataclass(eq=False)
class SynthSession:
    session: RawSession
    truth: np.ndarray           # normalized ground-truth arousal at 4 Hz
    raw_signal: np.ndarray      # pre-normalization kernel signal at 4 Hz
    event_times: np.ndarray


def _poisson_times(rng: np.random.Generator, rate: float, duration: float) -> np.ndarray:
    if rate <= 0:
        return np.empty(0)
    times = []
    t = rng.exponential(1.0 / rate)
    while t < duration:
        times.append(t)
        t += rng.exponential(1.0 / rate)
    return np.array(times)


def _pink_noise(rng: np.random.Generator, n: int) -> np.ndarray:
    """1/f-shaped noise with unit peak amplitude."""
    white = rng.standard_normal(n)
    spectrum = np.fft.rfft(white)
    freqs = np.arange(len(spectrum), dtype=np.float64)
    freqs[0] = 1.0
    spectrum /= np.sqrt(freqs)
    pink = np.fft.irfft(spectrum, n=n)
    peak = np.abs(pink).max()
    return pink / peak if peak > 0 else pink


def _disc_mask(h: int, w: int, cy: float, cx: float, radius: float) -> np.ndarray:
    yy, xx = np.ogrid[:h, :w]
    return (yy - cy) ** 2 + (xx - cx) ** 2 <= radius**2


def generate_session(config: SynthConfig, index: int) -> SynthSession:
    """Render one synthetic session; pure function of (config, index)."""
    config.validate()
    rng = np.random.default_rng([config.seed, index])
    h, w = config.height, config.width
    n_frames = int(round(config.duration_s * config.fps))
    n_samples = int(round(config.duration_s * config.sample_rate))
    events = _poisson_times(rng, config.event_rate, config.duration_s)
    visual_on = config.coupling in ("visual_only", "both")
    audio_on = config.coupling in ("audio_only", "both")

    # ground-truth arousal: event train * exponential decay kernel, at 4 Hz
    t4 = np.arange(int(round(config.duration_s * ANNOTATION_HZ))) / ANNOTATION_HZ
    signal = np.zeros_like(t4)
    for te in events:
        active = t4 >= te
        signal[active] += config.kernel_amplitude * np.exp(-(t4[active] - te) / config.kernel_tau_s)
    truth = normalize_minmax(signal)

    # sprite drift path (always present; carries no event information)
    ph = rng.uniform(0, 2 * np.pi, size=4)
    frame_t = np.arange(n_frames) / config.fps
    sprite_y = h / 2 + (h / 3) * np.sin(2 * np.pi * 0.11 * frame_t + ph[0])
    sprite_x = w / 2 + (w / 3) * np.sin(2 * np.pi * 0.07 * frame_t + ph[1])

    flash_centers = np.column_stack([
        rng.uniform(h * 0.25, h * 0.75, size=len(events)),
        rng.uniform(w * 0.25, w * 0.75, size=len(events)),
    ]) if len(events) else np.empty((0, 2))
    max_radius = min(h, w) / 3.0
    expected_events = max(1.0, config.event_rate * config.duration_s)

    # each event's disc expands for 0.3 s at full brightness, then its glow
    # fades with the arousal kernel's time constant; invisible glows are skipped
    glow_range = FLASH_LEVEL - BACKGROUND_LEVEL
    glow_cutoff_s = FLASH_S + config.kernel_tau_s * np.log(glow_range / 4.0)
    full_masks = [
        _disc_mask(h, w, cy, cx, max_radius) for cy, cx in flash_centers
    ]
    frames = np.empty((n_frames, h, w), dtype=np.uint8)
    noise = rng.standard_normal((n_frames, h, w)) * config.pixel_noise
    for k in range(n_frames):
        t = frame_t[k]
        img = BACKGROUND_LEVEL + noise[k]
        if visual_on:
            for e, te in enumerate(events):
                if te <= t < te + FLASH_S:
                    radius = 2.0 + (t - te) / FLASH_S * max_radius
                    cy, cx = flash_centers[e]
                    img = np.where(_disc_mask(h, w, cy, cx, radius), FLASH_LEVEL, img)
                elif te + FLASH_S <= t < te + glow_cutoff_s:
                    level = BACKGROUND_LEVEL + glow_range * np.exp(
                        -(t - te - FLASH_S) / config.kernel_tau_s
                    )
                    img = np.where(full_masks[e], np.maximum(img, level), img)
            filled = int(round(w * min(1.0, (events <= t).sum() / expected_events)))
            if filled > 0:
                img[:SCORE_BAR_ROWS, :filled] = 255.0
        sy, sx = int(round(sprite_y[k])), int(round(sprite_x[k]))
        img[max(0, sy - 1):sy + 2, max(0, sx - 1):sx + 2] = SPRITE_LEVEL
        frames[k] = np.clip(img, 0, 255).astype(np.uint8)

    audio = _pink_noise(rng, n_samples) * config.audio_noise
    if audio_on:
        burst_len = int(round(TONE_S * config.sample_rate))
        envelope = np.hanning(burst_len)
        tone_t = np.arange(burst_len) / config.sample_rate
        burst = TONE_AMPLITUDE * envelope * np.sin(2 * np.pi * TONE_HZ * tone_t)
        for te in events:
            a = int(round(te * config.sample_rate))
            b = min(a + burst_len, n_samples)
            audio[a:b] += burst[:b - a]
    pcm = (np.clip(audio, -1.0, 1.0) * 32767.0).astype(np.int16)

    session = RawSession(
        id=f"synth-{index:03d}",
        frames=frames,
        fps=float(config.fps),
        audio=pcm,
        sample_rate=config.sample_rate,
        raw_trace=np.column_stack([t4, signal]),
    )
    session.validate()
    return SynthSession(session=session, truth=truth, raw_signal=signal, event_times=events)


def write_dataset(config: SynthConfig, out_dir: str | Path) -> Path:
    """Write all sessions in the ingest layout plus a manifest; returns manifest path."""
    config.validate()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for index in range(config.sessions):
        synth = generate_session(config, index)
        session = synth.session
        sdir = out_dir / session.id
        (sdir / "frames").mkdir(parents=True, exist_ok=True)
        for k, frame in enumerate(session.frames):
            write_pgm(sdir / "frames" / f"{k:06d}.pgm", frame)
        write_wav(sdir / "audio.wav", session.audio, session.sample_rate)
        write_trace_csv(sdir / "trace.csv", session.raw_trace)
        times = np.arange(len(synth.raw_signal)) / ANNOTATION_HZ
        write_trace_csv(sdir / "truth.csv", np.column_stack([times, synth.raw_signal]))
        entries.append({"id": session.id, "path": session.id})
    manifest = {
        "sessions": entries,
        "height": config.height,
        "width": config.width,
        "fps": config.fps,
    }
    manifest_path = out_dir / "manifest.json"
    manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest_path
