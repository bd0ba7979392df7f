"""Pouring-trial data model, weight-to-air-column calibration and feature assembly.

Units: air-column length in mm, weights in kg, times in seconds. Labels live
on the 16 ms slice grid, so slice ``k`` of a recording sits at ``k * 0.016`` s.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from . import dsp
from .dsp import AUDIO_RATE, FT_RATE, HOP_SAMPLES, FtSeries, Waveform

log = logging.getLogger(__name__)

SLICE_SECONDS = HOP_SAMPLES / AUDIO_RATE  # 0.016
FT_PER_SLICE = int(round(FT_RATE * SLICE_SECONDS))  # 8
CLIP_SAMPLES = 4 * AUDIO_RATE
CLIP_FRAMES = dsp.frame_count(CLIP_SAMPLES)  # 251
N_AUDIO_ROWS = dsp.N_BINS  # 257
N_FT_ROWS = 6 * FT_PER_SLICE  # 48
N_FEATURES = N_AUDIO_ROWS + N_FT_ROWS  # 305
LABEL_TOLERANCE_MM = 0.5


@dataclass
class PouringRecording:
    audio: Waveform
    ft: FtSeries
    scale: np.ndarray  # (k, 2): t [s], weight [kg]
    container_id: str
    container_height: float
    liquid_density: float = 1000.0
    truth_ha: Optional[np.ndarray] = None  # mm, one value per slice
    recording_id: str = ""
    meta: dict = field(default_factory=dict)

    @property
    def duration(self) -> float:
        return self.audio.duration

    @property
    def n_slices(self) -> int:
        return dsp.frame_count(len(self.audio.samples))

    def slice_times(self) -> np.ndarray:
        return np.arange(self.n_slices) * SLICE_SECONDS


@dataclass
class LabeledClip:
    features: np.ndarray  # (305, n)
    targets: np.ndarray  # (n,)
    meta: dict = field(default_factory=dict)

    @property
    def n_frames(self) -> int:
        return self.features.shape[1]


def interpolate_scale(scale, t_query, return_flags=False):
    """Piecewise-linear scale reading at ``t_query``; clamps outside the knots."""
    scale = np.asarray(scale, dtype=np.float64)
    if scale.ndim != 2 or len(scale) < 2:
        raise ValueError("need at least two scale readings")
    t, w = scale[:, 0], scale[:, 1]
    if np.any(np.diff(t) < 0):
        raise ValueError("scale readings must be sorted by time")
    q = np.asarray(t_query, dtype=np.float64)
    outside = (q < t[0]) | (q > t[-1])
    if np.any(outside):
        log.warning("scale query outside [%.3f, %.3f] s clamped", t[0], t[-1])
    val = np.interp(q, t, w)
    if np.ndim(t_query) == 0:
        val, outside = float(val), bool(outside)
    return (val, outside) if return_flags else val


@dataclass(frozen=True)
class Calibration:
    """Polynomial map from liquid weight (kg) to air-column length (mm)."""

    container_id: str
    coefficients: tuple  # ascending powers
    fit_degree: int
    fit_rmse: float
    valid_weight_range: tuple
    container_height: Optional[float] = None

    def __call__(self, weight, return_flags=False):
        w = np.asarray(weight, dtype=np.float64)
        lo, hi = self.valid_weight_range
        clamped = (w < lo) | (w > hi)
        ha = np.polynomial.polynomial.polyval(np.clip(w, lo, hi), self.coefficients)
        if self.container_height is not None:
            ha = np.clip(ha, 0.0, self.container_height)
        if np.ndim(weight) == 0:
            ha, clamped = float(ha), bool(clamped)
        return (ha, clamped) if return_flags else ha


def fit_calibration(samples, degree: int = 3, container_id: str = "",
                    container_height: Optional[float] = None) -> Calibration:
    samples = np.asarray(samples, dtype=np.float64)
    if samples.ndim != 2 or samples.shape[1] != 2:
        raise ValueError("calibration samples must be (weight, ha) pairs")
    if len(samples) < degree + 2:
        raise ValueError(f"need at least {degree + 2} samples for a degree-{degree} fit, "
                         f"got {len(samples)}")
    w, ha = samples[:, 0], samples[:, 1]
    if len(np.unique(w)) != len(w):
        raise ValueError("calibration weights must be distinct")
    coef = np.polynomial.polynomial.polyfit(w, ha, degree)
    grid = np.linspace(w.min(), w.max(), 512)
    slope = np.polynomial.polynomial.polyval(grid, np.polynomial.polynomial.polyder(coef))
    if np.any(slope >= 0):
        raise ValueError("calibration not monotone; lower degree or add samples")
    resid = np.polynomial.polynomial.polyval(w, coef) - ha
    return Calibration(container_id, tuple(float(c) for c in coef), degree,
                       float(np.sqrt(np.mean(resid ** 2))), (float(w.min()), float(w.max())),
                       container_height)


def label_recording(rec: PouringRecording, cal: Calibration) -> PouringRecording:
    if cal.container_id != rec.container_id:
        raise ValueError(f"calibration for {cal.container_id!r} applied to "
                         f"recording of {rec.container_id!r}")
    t = rec.slice_times()
    weight = interpolate_scale(rec.scale, np.clip(t, rec.scale[0, 0], rec.scale[-1, 0]))
    ha, clamped = cal(weight, return_flags=True)
    meta = dict(rec.meta, n_clamped_labels=int(np.sum(clamped)))
    return replace(rec, truth_ha=np.asarray(ha, dtype=np.float64), meta=meta)


def prefilter(ft: FtSeries, cutoff: Optional[float] = 5.0, order: int = 2) -> FtSeries:
    return ft if cutoff is None else dsp.butterworth_lowpass(ft, cutoff, order)


def ft_slices(ft: FtSeries, n: int, t0: float = 0.0, cutoff: Optional[float] = 5.0) -> np.ndarray:
    """Block of shape ``(6, 8, n)``: the 8 samples of each 16 ms slice, per channel.

    ``cutoff=None`` means ``ft`` is already low-pass filtered.
    """
    if ft.sample_rate != FT_RATE:
        raise ValueError("force/torque series must be 500 Hz")
    x = prefilter(ft, cutoff).channels
    start = int(round(t0 * FT_RATE))
    stop = start + FT_PER_SLICE * n
    if start < 0 or stop > x.shape[1]:
        raise ValueError("force/torque series too short")
    return x[:, start:stop].reshape(6, n, FT_PER_SLICE).transpose(0, 2, 1)


def assemble_features(spec: np.ndarray, ftblock: np.ndarray) -> np.ndarray:
    """Stack spectrogram rows over channel-major F/T rows into a ``(305, n)`` matrix."""
    spec = np.asarray(spec)
    ftblock = np.asarray(ftblock)
    if spec.shape[0] != N_AUDIO_ROWS or ftblock.shape[:2] != (6, FT_PER_SLICE):
        raise ValueError("unexpected spectrogram or F/T block shape")
    if spec.shape[1] != ftblock.shape[2]:
        raise ValueError(f"frame mismatch: spectrogram has {spec.shape[1]}, "
                         f"F/T block has {ftblock.shape[2]}")
    return np.vstack([spec, ftblock.reshape(N_FT_ROWS, -1)])


def featurize(audio: Waveform, ft_filtered: FtSeries, t0: float = 0.0) -> np.ndarray:
    spec = dsp.stft(audio)
    return assemble_features(spec, ft_slices(ft_filtered, spec.shape[1], t0, cutoff=None))


def max_clip_start(rec: PouringRecording) -> int:
    """Largest start slice for which a full 4 s clip fits in every modality."""
    by_audio = (len(rec.audio.samples) - CLIP_SAMPLES) // HOP_SAMPLES
    by_ft = (rec.ft.n_samples - FT_PER_SLICE * CLIP_FRAMES) // FT_PER_SLICE
    by_label = (len(rec.truth_ha) - CLIP_FRAMES) if rec.truth_ha is not None else by_audio
    return min(by_audio, by_ft, by_label)


def clip_starts(rec: PouringRecording, count: int, rng: np.random.Generator) -> list:
    """Uniform random clip starts snapped to the slice grid, in seconds."""
    kmax = max_clip_start(rec)
    if kmax < 0:
        raise ValueError(f"recording {rec.recording_id} shorter than a 4 s clip")
    return [int(k) * SLICE_SECONDS for k in rng.integers(0, kmax + 1, size=count)]


def clip_from_recording(rec: PouringRecording, t0: float, ft_filtered: FtSeries,
                        snr=None, bank=None) -> LabeledClip:
    from .augment import mix

    k0 = int(round(t0 / SLICE_SECONDS))
    a0 = k0 * HOP_SAMPLES
    audio = Waveform(rec.audio.samples[a0:a0 + CLIP_SAMPLES], AUDIO_RATE)
    if snr is not None:
        audio = mix(audio, bank[snr.noise_name], snr.snr_db, snr.noise_offset)
    feats = featurize(audio, ft_filtered, t0)
    meta = {
        "container_id": rec.container_id,
        "recording_id": rec.recording_id,
        "start_s": round(k0 * SLICE_SECONDS, 6),
        "snr_db": None if snr is None else snr.snr_db,
        "noise_name": None if snr is None else snr.noise_name,
        "noise_offset": None if snr is None else snr.noise_offset,
    }
    targets = rec.truth_ha[k0:k0 + feats.shape[1]]
    return LabeledClip(feats.astype(np.float32), targets.astype(np.float64), meta)


def extract_clips(rec: PouringRecording, count: int, rng_seed: int = 0,
                  ft_cutoff: Optional[float] = 5.0) -> list:
    if rec.duration < 4.0:
        raise ValueError(f"recording {rec.recording_id} shorter than 4 s")
    if rec.truth_ha is None:
        raise ValueError("recording has no air-column labels")
    rng = np.random.default_rng(rng_seed)
    ft_f = prefilter(rec.ft, ft_cutoff)
    return [clip_from_recording(rec, t0, ft_f) for t0 in clip_starts(rec, count, rng)]


def stack_clips(clips) -> tuple:
    """Arrays ``X (n_clips, 305, n)`` and ``y (n_clips, n)`` from a clip list."""
    X = np.stack([c.features for c in clips])
    y = np.stack([c.targets for c in clips])
    return X, y
