"""Error-threshold curves: the share of slices whose height error is below a bound."""
from __future__ import annotations

import csv

import numpy as np

DEFAULT_THRESHOLDS = np.round(np.arange(0.0, 20.0 + 1e-9, 0.5), 6)
CRITERION_MM = 5.0
METRIC_COLUMNS = ("variant", "snr_db", "threshold_mm", "fraction")


def abs_errors(pred, truth) -> np.ndarray:
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape:
        raise ValueError(f"prediction shape {pred.shape} differs from target shape {truth.shape}")
    return np.abs(pred - truth).ravel()


def fraction_below(pred, truth, threshold: float = CRITERION_MM) -> float:
    """Share of slices with ``|pred - truth| < threshold``."""
    e = abs_errors(pred, truth)
    return float(np.mean(e < threshold)) if e.size else float("nan")


def threshold_curve(pred, truth, thresholds=DEFAULT_THRESHOLDS) -> np.ndarray:
    """Fraction of slices under each threshold; a perfect predictor is 1 except at 0."""
    e = np.sort(abs_errors(pred, truth))
    th = np.asarray(thresholds, dtype=np.float64)
    return np.searchsorted(e, th, side="left") / max(len(e), 1)


def metric_rows(variant: str, snr_label, pred, truth, thresholds=DEFAULT_THRESHOLDS) -> list:
    curve = threshold_curve(pred, truth, thresholds)
    return [{"variant": variant, "snr_db": snr_label, "threshold_mm": float(t), "fraction": float(f)}
            for t, f in zip(thresholds, curve)]


def write_metrics_csv(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(METRIC_COLUMNS)
        for r in rows:
            wr.writerow([r["variant"], r["snr_db"], repr(float(r["threshold_mm"])),
                         repr(float(r["fraction"]))])


def read_metrics_csv(path) -> list:
    with open(path, newline="") as fh:
        return [{"variant": r["variant"], "snr_db": r["snr_db"],
                 "threshold_mm": float(r["threshold_mm"]), "fraction": float(r["fraction"])}
                for r in csv.DictReader(fh)]


def snr_table(rows, threshold: float = CRITERION_MM) -> dict:
    """``{variant: {snr_label: fraction}}`` at one threshold."""
    out: dict = {}
    for r in rows:
        if abs(r["threshold_mm"] - threshold) < 1e-9:
            out.setdefault(r["variant"], {})[r["snr_db"]] = r["fraction"]
    return out
