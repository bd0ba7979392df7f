"""Backpropagation through time, Adam updates and the training loop."""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass
from typing import Optional, Sequence

import numpy as np

from .losses import DEFAULT_ALPHA, batch_loss_and_grad
from .network import (BN_MOMENTUM, PARAM_ORDER, ModelParams, backward_batch, fit_input_stats,
                      forward_batch, init_params, normalize, predict_batch, select_rows)

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    def __init__(self, message, history=None):
        super().__init__(message)
        self.history = history or []


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 32
    epochs: int = 30
    alpha: float = DEFAULT_ALPHA
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    clip_norm: float = 5.0
    rng_seed: int = 0
    validation_fraction: float = 0.1
    variant: str = "mp"
    precision: str = "float32"  # working precision of forward/backward passes

    def __post_init__(self):
        if self.alpha < 0:
            raise ValueError("alpha must be non-negative")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be non-negative")

    def to_dict(self):
        return asdict(self)


def gradients(params: ModelParams, X: np.ndarray, y: np.ndarray, alpha: float = DEFAULT_ALPHA,
              training: bool = True, clip_ids: Optional[Sequence] = None, dtype=np.float64):
    """Mean loss over the batch and its exact gradient for every trainable array.

    ``X`` holds raw clips ``(B, rows, n)`` already reduced to the variant's rows.
    Returns ``(loss, grads, cache)``; the cache carries batch-norm statistics.
    ``dtype`` is the working precision; gradients come back as float64.
    """
    X = np.asarray(X)
    if len(X) == 0:
        raise ValueError("empty batch")
    work = params if dtype == np.float64 else params.astype(dtype)
    x = normalize(work, X, dtype)
    ha, cache = forward_batch(work, x, training=training)
    per_clip, dha = batch_loss_and_grad(ha.astype(np.float64), np.asarray(y, dtype=np.float64), alpha)
    if not np.all(np.isfinite(per_clip)):
        bad = int(np.flatnonzero(~np.isfinite(per_clip))[0])
        name = clip_ids[bad] if clip_ids is not None else bad
        raise FloatingPointError(f"non-finite loss for clip {name}")
    grads = backward_batch(work, dha.astype(dtype), cache)
    grads = {k: g.astype(np.float64) for k, g in grads.items()}
    return float(per_clip.mean()), grads, cache


class Adam:
    def __init__(self, params: ModelParams, cfg: TrainConfig):
        self.cfg = cfg
        self.m = {k: np.zeros_like(v) for k, v in params.weights.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.weights.items()}
        self.t = 0

    def step(self, params: ModelParams, grads: dict) -> float:
        cfg = self.cfg
        norm = float(np.sqrt(sum(float(np.sum(grads[k] ** 2)) for k in PARAM_ORDER)))
        scale = min(1.0, cfg.clip_norm / (norm + 1e-12)) if cfg.clip_norm else 1.0
        self.t += 1
        lr_t = cfg.learning_rate * np.sqrt(1 - cfg.beta2 ** self.t) / (1 - cfg.beta1 ** self.t)
        for k in PARAM_ORDER:
            g = grads[k] * scale
            self.m[k] = cfg.beta1 * self.m[k] + (1 - cfg.beta1) * g
            self.v[k] = cfg.beta2 * self.v[k] + (1 - cfg.beta2) * g * g
            params.weights[k] -= lr_t * self.m[k] / (np.sqrt(self.v[k]) + cfg.adam_eps)
        return norm


def _update_bn(params: ModelParams, cache: dict) -> None:
    n = cache["xhat"].shape[0] * cache["xhat"].shape[1]
    unbiased = cache["var"] * n / max(n - 1, 1)
    st = params.stats
    st["bn_mean"] = (1 - BN_MOMENTUM) * st["bn_mean"] + BN_MOMENTUM * cache["mu"].astype(np.float64)
    st["bn_var"] = (1 - BN_MOMENTUM) * st["bn_var"] + BN_MOMENTUM * unbiased.astype(np.float64)


def evaluate(params: ModelParams, X, y, alpha: float = DEFAULT_ALPHA, threshold: float = 5.0):
    """(mean loss, fraction of slices within ``threshold`` mm) in inference mode."""
    pred = predict_batch(params, X)
    per_clip, _ = batch_loss_and_grad(pred, np.asarray(y, dtype=np.float64), alpha)
    return float(per_clip.mean()), float(np.mean(np.abs(pred - y) < threshold))


def split_groups(groups: Sequence, fraction: float, rng_seed: int):
    """Train/validation index split that keeps each group on one side."""
    groups = np.asarray([str(g) for g in groups])
    uniq = np.unique(groups)
    n_val = int(round(len(uniq) * fraction))
    if fraction <= 0 or n_val == 0 or n_val >= len(uniq):
        return np.arange(len(groups)), np.arange(0)
    rng = np.random.default_rng([rng_seed, 991])
    val_groups = set(rng.choice(uniq, size=n_val, replace=False))
    is_val = np.array([g in val_groups for g in groups])
    return np.flatnonzero(~is_val), np.flatnonzero(is_val)


def train_arrays(X: np.ndarray, y: np.ndarray, cfg: TrainConfig, groups: Optional[Sequence] = None,
                 params: Optional[ModelParams] = None, callback=None):
    """Fit on raw variant-row clips ``X (N, rows, n)`` and targets ``y (N, n)``.

    Returns ``(best_params, history)``; history rows are dicts with
    ``epoch, train_loss, val_loss, val_frac_under_5mm``.
    """
    if len(X) == 0:
        raise ValueError("empty training set")
    y = np.asarray(y, dtype=np.float64)
    groups = np.arange(len(X)) if groups is None else groups
    tr, va = split_groups(groups, cfg.validation_fraction, cfg.rng_seed)
    if params is None:
        params = init_params(cfg.variant, cfg.rng_seed)
        fit_input_stats(params, X[tr])
        params.stats["target_mean"] = np.array(y[tr].mean())
        params.stats["target_scale"] = np.array(max(y[tr].std(), 1.0))
    opt = Adam(params, cfg)
    rng = np.random.default_rng([cfg.rng_seed, 17])
    history = []
    best, best_score = params.copy(), np.inf
    for epoch in range(1, cfg.epochs + 1):
        order = tr[rng.permutation(len(tr))]
        losses = []
        for i in range(0, len(order), cfg.batch_size):
            idx = np.sort(order[i:i + cfg.batch_size])
            try:
                loss, grads, cache = gradients(params, X[idx], y[idx], cfg.alpha, clip_ids=idx,
                                               dtype=np.dtype(cfg.precision).type)
            except FloatingPointError as exc:
                raise TrainingDiverged(f"epoch {epoch}: {exc}", history) from exc
            opt.step(params, grads)
            _update_bn(params, cache)
            losses.append(loss * len(idx))
        train_loss = float(np.sum(losses) / len(tr))
        if len(va):
            val_loss, val_frac = evaluate(params, X[va], y[va], cfg.alpha)
        else:
            val_loss, val_frac = evaluate(params, X[tr], y[tr], cfg.alpha)
        if not (np.isfinite(train_loss) and np.isfinite(val_loss) and params.all_finite()):
            raise TrainingDiverged(f"epoch {epoch}: loss became non-finite", history)
        row = {"epoch": epoch, "train_loss": train_loss, "val_loss": val_loss,
               "val_frac_under_5mm": val_frac}
        history.append(row)
        log.info("epoch %d train %.3f val %.3f frac<5mm %.3f", epoch, train_loss, val_loss, val_frac)
        if callback is not None:
            callback(row)
        if val_loss < best_score:
            best, best_score = params.copy(), val_loss
    best.meta.update(train_config=cfg.to_dict(), best_val_loss=best_score,
                     n_train=int(len(tr)), n_val=int(len(va)))
    return best, history


def train(dataset: Sequence, cfg: TrainConfig):
    """Train a ``cfg.variant`` model on ``LabeledClip`` objects (full 305-row features)."""
    if not dataset:
        raise ValueError("empty dataset")
    X = select_rows(np.stack([c.features for c in dataset]), cfg.variant)
    y = np.stack([c.targets for c in dataset])
    groups = [c.meta.get("recording_id", i) for i, c in enumerate(dataset)]
    return train_arrays(X, y, cfg, groups)
