"""scikit-learn style wrapper around the recurrent height estimator."""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted

from ..data import N_FEATURES
from . import checkpoint
from .losses import DEFAULT_ALPHA
from .network import (HIDDEN, fit_input_stats, forward, init_params, predict_batch, select_rows,
                      variants)
from .training import TrainConfig, train_arrays


def check_clips(X, kind: str) -> np.ndarray:
    """Validate a clip stack ``(n, rows, frames)`` and reduce it to the rows ``kind`` reads.

    Accepts either full 305-row features or stacks already cut to the variant.
    """
    X = check_array(X, allow_nd=True, dtype=[np.float32, np.float64], ensure_all_finite=True)
    if X.ndim == 2:
        X = X[None]
    if X.ndim != 3:
        raise ValueError(f"expected clips shaped (n, rows, frames), got {X.shape}")
    width = variants(kind).width
    if X.shape[1] == width:
        return X
    if X.shape[1] == N_FEATURES:
        return select_rows(X, kind)
    raise ValueError(f"variant {kind!r} takes {width} or {N_FEATURES} feature rows, got {X.shape[1]}")


def check_targets(y, X: np.ndarray) -> np.ndarray:
    y = check_array(y, ensure_2d=False, dtype=np.float64)
    if y.ndim == 1:
        y = y[None]
    if y.shape != (X.shape[0], X.shape[2]):
        raise ValueError(f"targets {y.shape} do not match clips {X.shape[0]} x {X.shape[2]} frames")
    return y


class MPNetRegressor(RegressorMixin, BaseEstimator):
    """Per-slice air-column regressor.

    ``X`` is a stack of feature matrices ``(n_clips, rows, n_frames)`` and ``y``
    the matching targets ``(n_clips, n_frames)`` in mm.
    """

    def __init__(self, variant="mp", hidden_size=HIDDEN, learning_rate=1e-3, batch_size=32,
                 epochs=30, alpha=DEFAULT_ALPHA, clip_norm=5.0, validation_fraction=0.1,
                 precision="float32", random_state=0):
        self.variant = variant
        self.hidden_size = hidden_size
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.epochs = epochs
        self.alpha = alpha
        self.clip_norm = clip_norm
        self.validation_fraction = validation_fraction
        self.precision = precision
        self.random_state = random_state

    def _config(self) -> TrainConfig:
        return TrainConfig(learning_rate=self.learning_rate, batch_size=self.batch_size,
                           epochs=self.epochs, alpha=self.alpha, clip_norm=self.clip_norm,
                           rng_seed=int(self.random_state or 0),
                           validation_fraction=self.validation_fraction,
                           variant=self.variant, precision=self.precision)

    def fit(self, X, y, groups=None, callback=None):
        variants(self.variant)
        X = check_clips(X, self.variant)
        y = check_targets(y, X)
        params = None
        if self.hidden_size != HIDDEN:
            params = init_params(self.variant, int(self.random_state or 0), self.hidden_size)
            fit_input_stats(params, X)
            params.stats["target_mean"] = np.array(y.mean())
            params.stats["target_scale"] = np.array(max(y.std(), 1.0))
        self.params_, self.history_ = train_arrays(X, y, self._config(), groups, params, callback)
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X) -> np.ndarray:
        check_is_fitted(self, "params_")
        return predict_batch(self.params_, check_clips(X, self.variant))

    def predict_trace(self, features, state=None):
        """Streaming prediction on one ``(rows, n)`` matrix; see ``forward``."""
        check_is_fitted(self, "params_")
        return forward(self.params_, check_clips(features, self.variant)[0], state)

    def save(self, path, manifest=None):
        check_is_fitted(self, "params_")
        doc = {"estimator_params": self.get_params()}
        doc.update(manifest or {})
        return checkpoint.save(path, self.params_, doc)

    @classmethod
    def from_params(cls, params, **kwargs) -> "MPNetRegressor":
        est = cls(variant=params.variant, hidden_size=params.hidden, **kwargs)
        est.params_ = params
        est.history_ = []
        est.n_features_in_ = params.input_dim
        return est

    @classmethod
    def load(cls, path, variant=None) -> "MPNetRegressor":
        return cls.from_params(checkpoint.load(path, variant))
