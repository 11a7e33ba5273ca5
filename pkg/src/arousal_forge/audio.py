"""MFCC blocks for footage segments: 11 coefficients per video-synchronized audio frame.

Audio frames are hopped at 1/30 s so they line up one-to-one with video
frames, giving 330 coefficients per second of footage (30 frames x 11
coefficients).  The rest of the pipeline is standard MFCC machinery:
pre-emphasis, 25 ms Hamming frames, power spectrum, a 26-filter mel bank,
log with a floor, then an orthonormal DCT-II.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.fft

AUDIO_FRAMES_PER_S = 30
N_COEFFS = 11
N_FILTERS = 26
FRAME_S = 0.025
PREEMPHASIS = 0.97
LOG_FLOOR = 1e-10
MIN_SAMPLE_RATE = 8000
PCM16_SCALE = 1.0 / 32768.0


@dataclass(eq=False)
class MfccBlock:
    """(audio frames x 11) cepstral coefficients for one footage segment."""

    coefficients: np.ndarray

    def flattened(self) -> np.ndarray:
        """Frame-major flattening: frame 0 c0..c10, frame 1 c0..c10, ..."""
        return self.coefficients.reshape(-1)

    def __len__(self) -> int:
        return self.coefficients.size


@dataclass(eq=False)
class MelFilterbank:
    filters: np.ndarray        # (26, fft_size // 2 + 1), unit peak
    center_freqs: np.ndarray   # peak frequency of each filter, Hz
    sample_rate: int
    fft_size: int


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def round_half_up(x: float) -> int:
    return int(np.floor(x + 0.5))


def next_pow2(n: int) -> int:
    p = 1
    while p < n:
        p *= 2
    return p


def mel_filterbank(sample_rate: int, fft_size: int, n_filters: int = N_FILTERS) -> MelFilterbank:
    """Triangular filters with unit peaks, mel-equispaced from 0 Hz to Nyquist."""
    if sample_rate <= 0:
        raise ValueError("sample_rate must be positive")
    if fft_size < 32:
        raise ValueError(f"fft_size {fft_size} too small (minimum 32)")
    if fft_size & (fft_size - 1):
        raise ValueError("fft_size must be a power of two")
    nyquist = sample_rate / 2.0
    mel_points = np.linspace(0.0, float(hz_to_mel(nyquist)), n_filters + 2)
    hz_points = mel_to_hz(mel_points)
    bins = np.floor((fft_size + 1) * hz_points / sample_rate).astype(np.int64)
    n_bins = fft_size // 2 + 1
    filters = np.zeros((n_filters, n_bins))
    for j in range(n_filters):
        left, center, right = bins[j], bins[j + 1], bins[j + 2]
        if not (left < center < right):
            raise ValueError(
                f"degenerate mel filter {j} (bins {left},{center},{right}); "
                "increase fft_size"
            )
        up = np.arange(left, center)
        filters[j, up] = (up - left) / (center - left)
        down = np.arange(center, right)
        filters[j, down] = (right - down) / (right - center)
    center_hz = bins[1:-1] * sample_rate / (fft_size + 1)
    return MelFilterbank(
        filters=filters,
        center_freqs=center_hz.astype(np.float64),
        sample_rate=sample_rate,
        fft_size=fft_size,
    )


def dct_matrix(n: int) -> np.ndarray:
    """Orthonormal DCT-II basis as an (n, n) matrix (rows are basis vectors)."""
    return scipy.fft.dct(np.eye(n), type=2, norm="ortho", axis=1).T


def mfcc_block(samples: np.ndarray, sample_rate: int, window_s: float) -> MfccBlock:
    """Compute the MFCC block for one footage segment.

    ``samples`` must cover the segment's frame span (n = round(window_s * 30)
    video-aligned audio frames, each 25 ms long).  int16 PCM is accepted and
    scaled to [-1, 1]; float input is used as-is.
    """
    if sample_rate < MIN_SAMPLE_RATE:
        raise ValueError(f"sample_rate {sample_rate} below minimum {MIN_SAMPLE_RATE}")
    n_frames = round_half_up(window_s * AUDIO_FRAMES_PER_S)
    if n_frames < 1:
        raise ValueError(f"window {window_s}s yields no audio frames")
    samples = np.asarray(samples)
    if samples.dtype.kind in "iu":
        x = samples.astype(np.float64) * PCM16_SCALE
    else:
        x = samples.astype(np.float64)
    frame_len = round_half_up(FRAME_S * sample_rate)
    starts = [round_half_up(i * sample_rate / AUDIO_FRAMES_PER_S) for i in range(n_frames)]
    needed = starts[-1] + frame_len
    if len(x) < needed:
        raise ValueError(f"audio span too short: {len(x)} samples, need {needed}")

    emphasized = np.empty_like(x)
    emphasized[0] = x[0]
    emphasized[1:] = x[1:] - PREEMPHASIS * x[:-1]

    window = np.hamming(frame_len)
    frames = np.stack([emphasized[s:s + frame_len] for s in starts]) * window

    nfft = next_pow2(frame_len)
    spectrum = np.fft.rfft(frames, n=nfft, axis=1)
    power = spectrum.real**2 + spectrum.imag**2

    bank = mel_filterbank(sample_rate, nfft)
    energies = power @ bank.filters.T
    log_e = np.log(np.maximum(energies, LOG_FLOOR))
    coeffs = scipy.fft.dct(log_e, type=2, norm="ortho", axis=1)[:, :N_COEFFS]
    return MfccBlock(coefficients=np.ascontiguousarray(coeffs))
