"""Signal-processing kernels: resampling, STFT, Butterworth low-pass, RMS.

Everything here is a pure function of its inputs.
"""
from __future__ import annotations

from dataclasses import dataclass
from math import gcd

import numpy as np
from scipy import signal

AUDIO_RATE = 16000
FT_RATE = 500
WINDOW_SAMPLES = 512  # 32 ms at 16 kHz
HOP_SAMPLES = 256  # 16 ms
N_BINS = WINDOW_SAMPLES // 2 + 1
FT_CHANNELS = ("fx", "fy", "fz", "tx", "ty", "tz")

RESAMPLE_TAPS_PER_PHASE = 64
RESAMPLE_KAISER_BETA = 8.6


@dataclass(frozen=True)
class Waveform:
    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        if self.sample_rate <= 0:
            raise ValueError("sample_rate must be positive")
        object.__setattr__(self, "samples", np.asarray(self.samples, dtype=np.float64))

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate

    def __len__(self):
        return len(self.samples)


@dataclass(frozen=True)
class FtSeries:
    """Six-channel force/torque stream, shape ``(6, n_samples)``."""

    channels: np.ndarray
    sample_rate: int = FT_RATE

    def __post_init__(self):
        ch = np.asarray(self.channels, dtype=np.float64)
        if ch.ndim != 2 or ch.shape[0] != 6:
            raise ValueError(f"expected 6 channels, got array of shape {ch.shape}")
        if self.sample_rate != FT_RATE:
            raise ValueError(f"force/torque series must be sampled at {FT_RATE} Hz")
        object.__setattr__(self, "channels", ch)

    @property
    def n_samples(self) -> int:
        return self.channels.shape[1]

    @property
    def duration(self) -> float:
        return self.n_samples / self.sample_rate

    def times(self) -> np.ndarray:
        return np.arange(self.n_samples) / self.sample_rate


def _resample_filter(up: int, down: int) -> np.ndarray:
    # windowed-sinc prototype, 64 taps per polyphase branch
    n_taps = RESAMPLE_TAPS_PER_PHASE * up + 1
    return signal.firwin(n_taps, 1.0 / max(up, down),
                         window=("kaiser", RESAMPLE_KAISER_BETA))


def resample(w: Waveform, target_rate: int) -> Waveform:
    """Band-limited polyphase resampling of ``w`` to ``target_rate``."""
    if target_rate <= 0:
        raise ValueError("target_rate must be positive")
    if len(w.samples) == 0:
        raise ValueError("empty waveform")
    if int(target_rate) == int(w.sample_rate):
        return Waveform(w.samples.copy(), w.sample_rate)
    g = gcd(int(target_rate), int(w.sample_rate))
    up, down = int(target_rate) // g, int(w.sample_rate) // g
    y = signal.resample_poly(w.samples, up, down, window=_resample_filter(up, down))
    return Waveform(y, int(target_rate))


def frame_count(n_samples: int) -> int:
    """Frame count of the centered STFT: ``floor(n / hop) + 1``."""
    return n_samples // HOP_SAMPLES + 1


def stft(w: Waveform) -> np.ndarray:
    """Magnitude spectrogram, shape ``(257, n_frames)``.

    Hann window of 512 samples, hop 256, FFT size equal to the window,
    frames centered on multiples of the hop with reflection at both edges.
    """
    if w.sample_rate != AUDIO_RATE:
        raise ValueError("expected 16 kHz input")
    x = w.samples
    if len(x) == 0:
        raise ValueError("empty waveform")
    half = WINDOW_SAMPLES // 2
    if len(x) == 1:
        padded = np.full(len(x) + 2 * half, x[0])
    else:
        padded = np.pad(x, half, mode="reflect")
    n = frame_count(len(x))
    frames = np.lib.stride_tricks.sliding_window_view(padded, WINDOW_SAMPLES)[::HOP_SAMPLES][:n]
    window = signal.get_window("hann", WINDOW_SAMPLES)
    return np.abs(np.fft.rfft(frames * window, axis=1)).T


def butterworth_lowpass(ft: FtSeries, cutoff: float = 5.0, order: int = 2) -> FtSeries:
    """Zero-phase (forward-backward) Butterworth low-pass on every channel."""
    nyquist = ft.sample_rate / 2
    if cutoff >= nyquist:
        raise ValueError("cutoff above Nyquist")
    if cutoff <= 0 or order < 1:
        raise ValueError("cutoff must be positive and order >= 1")
    return FtSeries(lowpass(ft.channels, cutoff, ft.sample_rate, order), ft.sample_rate)


def lowpass(x: np.ndarray, cutoff: float, fs: float, order: int = 2) -> np.ndarray:
    """Zero-phase Butterworth low-pass along the last axis."""
    if cutoff >= fs / 2:
        raise ValueError("cutoff above Nyquist")
    sos = signal.butter(order, cutoff, fs=fs, output="sos")
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[-1]
    default_pad = 3 * (2 * len(sos) + 1 - min((sos[:, 2] == 0).sum(), (sos[:, 5] == 0).sum()))
    return signal.sosfiltfilt(sos, x, axis=-1, padlen=min(default_pad, n - 1))


def rms(samples) -> float:
    x = np.asarray(samples, dtype=np.float64)
    if x.size == 0:
        raise ValueError("rms of empty sequence")
    return float(np.sqrt(np.mean(x * x)))
