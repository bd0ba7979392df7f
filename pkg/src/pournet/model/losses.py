"""Height regression loss with the monotone-decrease penalty.

Per clip: ``mean_t (pred - truth)**2 + alpha * sum_t max(0, pred[t+1] - pred[t])``.
"""
from __future__ import annotations

import numpy as np

DEFAULT_ALPHA = 0.01


def loss_height(pred, truth) -> float:
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape:
        raise ValueError(f"length mismatch: {pred.shape} vs {truth.shape}")
    return float(np.mean((pred - truth) ** 2))


def loss_mono(pred) -> float:
    pred = np.asarray(pred, dtype=np.float64)
    if pred.size < 2:
        return 0.0
    return float(np.sum(np.maximum(0.0, np.diff(pred))))


def loss_total(pred, truth, alpha: float = DEFAULT_ALPHA) -> float:
    return loss_height(pred, truth) + alpha * loss_mono(pred)


def batch_loss_and_grad(pred: np.ndarray, truth: np.ndarray, alpha: float = DEFAULT_ALPHA):
    """Per-clip losses ``(B,)`` and the gradient of their mean w.r.t. ``pred`` ``(B, T)``.

    The hinge takes subgradient 0 at exactly zero rise.
    """
    B, T = pred.shape
    err = pred - truth
    rise = np.diff(pred, axis=1)
    per_clip = np.mean(err ** 2, axis=1) + alpha * np.maximum(rise, 0.0).sum(axis=1)
    up = (rise > 0).astype(np.float64)
    dmono = np.zeros_like(pred)
    dmono[:, 1:] += up
    dmono[:, :-1] -= up
    grad = (2.0 * err / T + alpha * dmono) / B
    return per_clip, grad
