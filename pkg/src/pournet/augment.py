"""SNR-controlled noise mixing and the augmentation grid."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy import signal

from .dsp import AUDIO_RATE, Waveform, resample, rms

log = logging.getLogger(__name__)

SNR_GRID = (-20, -15, -10, -5, 0, 5, 10, 15, 20)
CLIP_SECONDS = 4.0


@dataclass(frozen=True)
class SnrSpec:
    snr_db: float
    noise_name: str = "ego"
    noise_offset: int = 0

    def __post_init__(self):
        if not np.isfinite(self.snr_db):
            raise ValueError("snr_db must be finite")


@dataclass
class NoiseBank:
    entries: dict = field(default_factory=dict)

    def __post_init__(self):
        for name, w in self.entries.items():
            self._check(name, w)

    @staticmethod
    def _check(name, w):
        if w.sample_rate != AUDIO_RATE:
            raise ValueError(f"noise entry {name!r} is not 16 kHz")
        if rms(w.samples) <= 0:
            raise ValueError(f"noise entry {name!r} is silent")

    def add(self, name: str, w: Waveform):
        if w.sample_rate != AUDIO_RATE:
            w = resample(w, AUDIO_RATE)
        self._check(name, w)
        self.entries[name] = w

    def __getitem__(self, name) -> Waveform:
        try:
            return self.entries[name]
        except KeyError:
            raise KeyError(f"no noise entry named {name!r}; have {sorted(self.entries)}") from None

    def names(self):
        return sorted(self.entries)

    @classmethod
    def from_dir(cls, path) -> "NoiseBank":
        from .io import read_wav

        bank = cls()
        files = sorted(Path(path).glob("*.wav"))
        if not files:
            raise FileNotFoundError(f"no .wav files in {path}")
        for f in files:
            bank.add(f.stem, read_wav(f))
        return bank

    @classmethod
    def synthetic(cls, seed: int = 0, seconds: float = 30.0) -> "NoiseBank":
        """Seeded stand-in bank used when no noise recordings are supplied."""
        n = int(seconds * AUDIO_RATE)
        bank = cls()
        bank.entries["ego"] = Waveform(_ego_noise(n, seed), AUDIO_RATE)
        bank.entries["babble"] = Waveform(_babble(n, seed + 1), AUDIO_RATE)
        bank.entries["tones"] = Waveform(_tones(n, seed + 2), AUDIO_RATE)
        return bank


def pink_noise(n: int, rng: np.random.Generator) -> np.ndarray:
    spec = np.fft.rfft(rng.standard_normal(n))
    f = np.arange(len(spec), dtype=np.float64)
    f[0] = 1.0
    x = np.fft.irfft(spec / np.sqrt(f), n)
    return x / rms(x)


def _ego_noise(n, seed):
    # fan-like noise: band-limited pink floor, mains hum, and drifting motor whine
    rng = np.random.default_rng([seed, 101])
    t = np.arange(n) / AUDIO_RATE
    sos = signal.butter(2, [150, 4000], btype="bandpass", fs=AUDIO_RATE, output="sos")
    x = signal.sosfilt(sos, pink_noise(n, rng))
    x /= rms(x)
    hum = sum(0.3 / k * np.sin(2 * np.pi * 60 * k * t + rng.uniform(0, 2 * np.pi)) for k in (1, 2, 3, 5))
    whine = np.zeros(n)
    for _ in range(6):
        f0 = rng.uniform(300, 2200)
        drift = 1 + 0.15 * np.sin(2 * np.pi * rng.uniform(0.05, 0.3) * t + rng.uniform(0, 6.3))
        phase = 2 * np.pi * np.cumsum(f0 * drift) / AUDIO_RATE
        whine += rng.uniform(0.1, 0.3) * np.sin(phase)
    y = x + hum + whine
    return y / rms(y) * 0.1


def _babble(n, seed):
    rng = np.random.default_rng([seed, 202])
    t = np.arange(n) / AUDIO_RATE
    y = np.zeros(n)
    for _ in range(4):
        f0 = rng.uniform(100, 220) * (1 + 0.1 * np.sin(2 * np.pi * rng.uniform(2, 5) * t))
        phase = 2 * np.pi * np.cumsum(f0) / AUDIO_RATE
        env = np.clip(np.sin(2 * np.pi * rng.uniform(2, 4) * t + rng.uniform(0, 6.3)), 0, None)
        y += env * sum(np.sin(k * phase) / k for k in range(1, 12))
    return y / rms(y) * 0.1


def _tones(n, seed):
    rng = np.random.default_rng([seed, 303])
    y = np.zeros(n)
    note = int(0.25 * AUDIO_RATE)
    tt = np.arange(note) / AUDIO_RATE
    for start in range(0, n, note):
        f = 261.63 * 2 ** (rng.integers(-12, 19) / 12)
        seg = np.exp(-3 * tt) * (np.sin(2 * np.pi * f * tt) + 0.4 * np.sin(4 * np.pi * f * tt))
        stop = min(n, start + note)
        y[start:stop] += seg[: stop - start]
    return y / rms(y) * 0.1


def noise_factor(a_signal: float, a_noise: float, snr_db: float) -> float:
    """Scale for the noise so that 20*log10(a_signal / (factor * a_noise)) == snr_db."""
    if not (a_signal > 0 and a_noise > 0):
        raise ValueError("degenerate amplitude")
    return (a_signal / a_noise) * 10.0 ** (snr_db / -20.0)


def crop_noise(noise: Waveform, n: int, offset: int = 0) -> np.ndarray:
    """``n`` noise samples from ``offset``, looping the entry if needed."""
    idx = (offset + np.arange(n)) % len(noise.samples)
    return noise.samples[idx]


def mix(signal_w: Waveform, noise: Waveform, snr_db: float, offset: int = 0) -> Waveform:
    if signal_w.sample_rate != noise.sample_rate:
        raise ValueError("sample rate mismatch between signal and noise")
    a_signal = rms(signal_w.samples)
    if a_signal == 0:
        raise ValueError("silent signal cannot be mixed at a target SNR")
    seg = crop_noise(noise, len(signal_w.samples), offset)
    alpha = noise_factor(a_signal, rms(seg), snr_db)
    return Waveform(signal_w.samples + alpha * seg, signal_w.sample_rate)


def measured_snr(signal_samples, scaled_noise) -> float:
    return 20.0 * np.log10(rms(signal_samples) / rms(scaled_noise))


def parse_grid(text: str, noise_name: str = "ego") -> list:
    """Parse ``"clean,0:20:5"`` style grids into a list of ``SnrSpec | None``.

    ``None`` stands for the unmixed (clean) source.
    """
    grid: list = []
    for part in (p.strip() for p in text.split(",")):
        if not part:
            continue
        if part == "clean":
            grid.append(None)
        elif part == "full":
            grid.extend(SnrSpec(float(s), noise_name) for s in SNR_GRID)
        elif ":" in part:
            lo, hi, step = (float(v) for v in part.split(":"))
            vals = np.arange(lo, hi + step / 2, step)
            grid.extend(SnrSpec(float(v), noise_name) for v in vals)
        else:
            grid.append(SnrSpec(float(part), noise_name))
    return grid


def grid_label(spec: Optional[SnrSpec]) -> str:
    return "clean" if spec is None else f"{spec.snr_db:g}"


def build_augmented_set(recordings: Sequence, bank: Optional[NoiseBank], grid: Sequence,
                        clips_per_second: float = 0.25, rng_seed: int = 0,
                        ft_cutoff: float = 5.0) -> list:
    """Random 4 s clips per recording and grid point, each mixed at its SNR.

    Returns ``LabeledClip`` objects ordered by (recording, grid point, clip).
    """
    from .data import clip_from_recording, clip_starts, prefilter

    clips = []
    for ri, rec in enumerate(recordings):
        if rec.duration < CLIP_SECONDS:
            log.warning("recording %s shorter than %.0f s, skipped", rec.recording_id, CLIP_SECONDS)
            continue
        if rec.truth_ha is None:
            raise ValueError(f"recording {rec.recording_id} is not labeled")
        ft_f = prefilter(rec.ft, ft_cutoff)
        count = int(round(rec.duration * clips_per_second))
        for gi, spec in enumerate(grid):
            rng = np.random.default_rng([rng_seed, ri, gi])
            for t0 in clip_starts(rec, count, rng):
                if spec is None:
                    clips.append(clip_from_recording(rec, t0, ft_f))
                    continue
                noise = bank[spec.noise_name]
                offset = int(spec.noise_offset + rng.integers(0, len(noise.samples)))
                clip_spec = SnrSpec(spec.snr_db, spec.noise_name, offset)
                clips.append(clip_from_recording(rec, t0, ft_f, snr=clip_spec, bank=bank))
    return clips
