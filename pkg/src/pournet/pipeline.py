"""End-to-end steps shared by the command line and the acceptance suite."""
from __future__ import annotations

import logging
from typing import Optional, Sequence

import numpy as np

from . import synthsim
from .augment import NoiseBank, build_augmented_set, grid_label, parse_grid
from .data import fit_calibration, label_recording, stack_clips
from .evaluation import metric_rows
from .model.network import predict_batch, select_rows

log = logging.getLogger(__name__)

CALIBRATION_DEGREE = 3


def calibration_seed(rng_seed: int, container: str) -> int:
    digest = sum(ord(ch) * 131 ** i for i, ch in enumerate(container)) % (2 ** 31)
    return int(np.random.SeedSequence([rng_seed, digest]).generate_state(1)[0])


def simulate_suite(kind: str, rng_seed: int, count: Optional[int] = None):
    """Recordings of a scenario suite plus hand-calibration samples per container."""
    scenarios = synthsim.scenario_suite(kind, rng_seed, count)
    recs = [synthsim.simulate_pour(sc) for sc in scenarios]
    cal = {}
    for sc in scenarios:
        g = sc.geometry
        if g.name not in cal:
            cal[g.name] = synthsim.calibration_samples(g, sc.liquid_density,
                                                       seed=calibration_seed(rng_seed, g.name))
    return scenarios, recs, cal


def label_all(recordings: Sequence, cal_samples: dict) -> list:
    """Fit one calibration per container and label every recording with it."""
    fits = {}
    out = []
    for rec in recordings:
        if rec.container_id not in fits:
            if rec.container_id not in cal_samples:
                raise ValueError(f"missing calibration samples for container {rec.container_id!r}")
            fits[rec.container_id] = fit_calibration(cal_samples[rec.container_id],
                                                     CALIBRATION_DEGREE, rec.container_id,
                                                     rec.container_height)
        out.append(label_recording(rec, fits[rec.container_id]))
    return out


def dataset_arrays(recordings, bank: Optional[NoiseBank], grid, clips_per_second: float,
                   rng_seed: int):
    clips = build_augmented_set(recordings, bank, grid, clips_per_second, rng_seed)
    if not clips:
        raise ValueError("no clips produced; recordings may be shorter than 4 s")
    X, y = stack_clips(clips)
    groups = [c.meta["recording_id"] for c in clips]
    return X, y, groups, clips


def eval_sets(recordings, bank: NoiseBank, snr_text: str, clips_per_second: float, rng_seed: int):
    """``{snr_label: (X, y)}``, one clip set per grid point from identical clip starts."""
    out = {}
    for spec in parse_grid(snr_text):
        X, y, _, _ = dataset_arrays(recordings, bank, [spec], clips_per_second, rng_seed)
        out[grid_label(spec)] = (X, y)
    return out


def evaluate_models(models: dict, sets: dict) -> list:
    """Threshold-curve rows for every model on every SNR set."""
    rows = []
    for name, params in models.items():
        for label, (X, y) in sets.items():
            pred = predict_batch(params, select_rows(X, params.variant))
            rows += metric_rows(name, label, pred, y)
    return rows
