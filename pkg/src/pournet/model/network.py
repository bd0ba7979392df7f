"""Two-layer LSTM encoder with an MLP height head, written out in numpy.

Arrays inside the network are time-major, ``(time, batch, features)``. Clips
on the public surface keep the feature-matrix layout ``(rows, frames)`` and
predictions come back as ``(batch, time)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ..data import N_AUDIO_ROWS, N_FEATURES

HIDDEN = 56
BN_EPS = 1e-5
BN_MOMENTUM = 0.1
PARAM_ORDER = ("W1", "U1", "b1", "W2", "U2", "b2", "Wh", "bh", "gamma", "beta", "Wo", "bo")
STAT_ORDER = ("feat_mean", "feat_std", "bn_mean", "bn_var", "target_mean", "target_scale")


@dataclass(frozen=True)
class Variant:
    kind: str
    rows: slice
    audio_rows: int  # leading rows that hold spectrogram magnitudes

    @property
    def width(self) -> int:
        return self.rows.stop - self.rows.start


VARIANTS = {
    "mp": Variant("mp", slice(0, N_FEATURES), N_AUDIO_ROWS),
    "ap": Variant("ap", slice(0, N_AUDIO_ROWS), N_AUDIO_ROWS),
    "ft": Variant("ft", slice(N_AUDIO_ROWS, N_FEATURES), 0),
}


def variants(kind: str) -> Variant:
    try:
        return VARIANTS[kind]
    except KeyError:
        raise ValueError(f"unknown variant {kind!r}; choose from {sorted(VARIANTS)}") from None


def select_rows(features: np.ndarray, kind: str) -> np.ndarray:
    """Rows of a full 305-row feature matrix (or stack of them) used by ``kind``."""
    v = variants(kind)
    if features.shape[-2] != N_FEATURES:
        raise ValueError(f"expected {N_FEATURES}-row features, got {features.shape[-2]}")
    return features[..., v.rows, :]


@dataclass
class ModelParams:
    variant: str
    weights: dict
    stats: dict
    hidden: int = HIDDEN
    version: int = 1
    meta: dict = field(default_factory=dict)

    @property
    def input_dim(self) -> int:
        return self.weights["W1"].shape[0]

    def copy(self) -> "ModelParams":
        return ModelParams(self.variant, {k: v.copy() for k, v in self.weights.items()},
                           {k: np.array(v, copy=True) for k, v in self.stats.items()},
                           self.hidden, self.version, dict(self.meta))

    def astype(self, dtype) -> "ModelParams":
        """Shallow working copy with weights and statistics cast to ``dtype``."""
        return ModelParams(self.variant, {k: v.astype(dtype) for k, v in self.weights.items()},
                           {k: np.asarray(v, dtype=dtype) for k, v in self.stats.items()},
                           self.hidden, self.version, self.meta)

    def n_params(self) -> int:
        return sum(w.size for w in self.weights.values())

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(w)) for w in self.weights.values())


@dataclass
class PredictionTrace:
    ha_hat: np.ndarray  # (n,) mm
    hidden_final: tuple  # (h1, c1, h2, c2), each (hidden,)
    recurrent: Optional[np.ndarray] = None  # (n, hidden) encoder output per slice


def _orthogonal(n, rng):
    q, r = np.linalg.qr(rng.standard_normal((n, n)))
    return q * np.sign(np.diag(r))


def init_params(kind: str = "mp", rng_seed: int = 0, hidden: int = HIDDEN) -> ModelParams:
    v = variants(kind)
    rng = np.random.default_rng(rng_seed)
    d, H = v.width, hidden

    def lstm(din):
        W = rng.uniform(-1, 1, (din, 4 * H)) * np.sqrt(3.0 / din)
        U = np.hstack([_orthogonal(H, rng) for _ in range(4)])
        b = np.zeros(4 * H)
        b[H:2 * H] = 1.0  # forget gate
        return W, U, b

    W1, U1, b1 = lstm(d)
    W2, U2, b2 = lstm(H)
    weights = {
        "W1": W1, "U1": U1, "b1": b1, "W2": W2, "U2": U2, "b2": b2,
        "Wh": rng.uniform(-1, 1, (H, H)) * np.sqrt(6.0 / H), "bh": np.zeros(H),
        "gamma": np.ones(H), "beta": np.zeros(H),
        "Wo": rng.uniform(-1, 1, (H, 1)) * np.sqrt(3.0 / H), "bo": np.zeros(1),
    }
    stats = {
        "feat_mean": np.zeros(d), "feat_std": np.ones(d),
        "bn_mean": np.zeros(H), "bn_var": np.ones(H),
        "target_mean": np.array(0.0), "target_scale": np.array(1.0),
    }
    return ModelParams(kind, weights, stats, H)


def zero_params(kind: str = "mp", hidden: int = HIDDEN) -> ModelParams:
    p = init_params(kind, 0, hidden)
    for w in p.weights.values():
        w[...] = 0.0
    return p


def _log_rows(x: np.ndarray, audio_rows: int) -> np.ndarray:
    x = np.array(x, dtype=np.float64)
    if audio_rows:
        x[..., :audio_rows, :] = np.log1p(x[..., :audio_rows, :])
    return x


def fit_input_stats(params: ModelParams, X: np.ndarray, chunk: int = 256) -> None:
    """Store per-row mean/std of the log-compressed training features."""
    v = variants(params.variant)
    d = X.shape[1]
    s1 = np.zeros(d)
    s2 = np.zeros(d)
    n = 0
    for i in range(0, len(X), chunk):
        x = _log_rows(X[i:i + chunk], v.audio_rows)
        s1 += x.sum(axis=(0, 2))
        s2 += (x * x).sum(axis=(0, 2))
        n += x.shape[0] * x.shape[2]
    mean = s1 / n
    std = np.sqrt(np.maximum(s2 / n - mean ** 2, 0.0))
    params.stats["feat_mean"] = mean
    params.stats["feat_std"] = np.where(std > 1e-8, std, 1.0)


def normalize(params: ModelParams, X: np.ndarray, dtype=np.float64) -> np.ndarray:
    """Raw clips ``(B, rows, n)`` to normalised network input ``(n, B, rows)``."""
    X = np.asarray(X)
    if X.ndim == 2:
        X = X[None]
    if X.shape[1] != params.input_dim:
        raise ValueError(f"variant {params.variant!r} expects {params.input_dim} feature rows, "
                         f"got {X.shape[1]}")
    if not np.all(np.isfinite(X)):
        raise ValueError("non-finite values in input features")
    x = _log_rows(X, variants(params.variant).audio_rows)
    x = (x - params.stats["feat_mean"][:, None]) / params.stats["feat_std"][:, None]
    return np.ascontiguousarray(x.transpose(2, 0, 1), dtype=dtype)


def _lstm_forward(x, W, U, b, h0, c0):
    # time-major: x is (T, B, D) so each step reads contiguous memory
    T, B, _ = x.shape
    H = U.shape[0]
    xp = x @ W + b
    hs = np.empty((T, B, H), dtype=x.dtype)
    cs = np.empty_like(hs)
    gates = xp  # overwritten in place with gate activations
    tcs = np.empty_like(hs)
    # sigmoid(z) = (1 + tanh(z / 2)) / 2, so one tanh call covers all four gates
    pre = np.full(4 * H, 0.5, dtype=x.dtype)
    pre[2 * H:3 * H] = 1.0
    post_shift = np.full(4 * H, 0.5, dtype=x.dtype)
    post_shift[2 * H:3 * H] = 0.0
    h, c = h0, c0
    for t in range(T):
        a = gates[t]
        a += h @ U
        a *= pre
        np.tanh(a, out=a)
        a *= pre
        a += post_shift
        c = a[:, H:2 * H] * c + a[:, :H] * a[:, 2 * H:3 * H]
        tc = np.tanh(c)
        h = a[:, 3 * H:] * tc
        hs[t], cs[t], tcs[t] = h, c, tc
    return hs, (x, hs, cs, gates, tcs, h0, c0)


def _lstm_backward(dh_out, cache, W, U):
    x, hs, cs, gates, tcs, h0, c0 = cache
    T, B, H = hs.shape
    i, f, g, o = (gates[..., k * H:(k + 1) * H] for k in range(4))
    c_prev = np.concatenate([c0[None], cs[:-1]], axis=0)
    # everything that does not depend on the recurrence, vectorised over time
    k_cell = np.concatenate([g * i * (1 - i), c_prev * f * (1 - f), i * (1 - g * g)], axis=2)
    k_out = tcs * o * (1 - o)
    k_dc = o * (1 - tcs * tcs)
    dZ = np.empty((T, B, 4 * H), dtype=hs.dtype)
    dh_next = np.zeros((B, H), dtype=hs.dtype)
    dc_next = np.zeros((B, H), dtype=hs.dtype)
    for t in range(T - 1, -1, -1):
        dh = dh_out[t] + dh_next
        dc = dh * k_dc[t] + dc_next
        dz = dZ[t]
        np.multiply(np.tile(dc, 3), k_cell[t], out=dz[:, :3 * H])
        np.multiply(dh, k_out[t], out=dz[:, 3 * H:])
        dc_next = dc * f[t]
        dh_next = dz @ U.T
    h_prev = np.concatenate([h0[None], hs[:-1]], axis=0)
    flat_dz = dZ.reshape(-1, 4 * H)
    dW = x.reshape(-1, x.shape[2]).T @ flat_dz
    dU = h_prev.reshape(-1, H).T @ flat_dz
    db = flat_dz.sum(axis=0)
    dx = dZ @ W.T
    return dx, dW, dU, db


def _zero_state(B, H, dtype=np.float64):
    return tuple(np.zeros((B, H), dtype=dtype) for _ in range(4))


def forward_batch(params: ModelParams, x: np.ndarray, training: bool = False,
                  state: Optional[tuple] = None):
    """Network pass on normalised input ``(T, B, D)``.

    Returns ``(ha_hat (B, T), cache)``. ``training`` selects batch statistics
    for batch normalisation.
    """
    w, st = params.weights, params.stats
    T, B, _ = x.shape
    H = params.hidden
    h1, c1, h2, c2 = _zero_state(B, H, x.dtype) if state is None else state
    a1, cache1 = _lstm_forward(x, w["W1"], w["U1"], w["b1"], h1, c1)
    a2, cache2 = _lstm_forward(a1, w["W2"], w["U2"], w["b2"], h2, c2)
    pre = a2 @ w["Wh"] + w["bh"]
    if training:
        mu = pre.mean(axis=(0, 1))
        var = pre.var(axis=(0, 1))
    else:
        mu, var = st["bn_mean"], st["bn_var"]
    inv_std = 1.0 / np.sqrt(var + BN_EPS)
    xhat = (pre - mu) * inv_std
    y = w["gamma"] * xhat + w["beta"]
    r = np.maximum(y, 0.0)
    z = (r @ w["Wo"])[..., 0] + w["bo"][0]
    ha = (st["target_mean"] + st["target_scale"] * z).T
    cache = dict(cache1=cache1, cache2=cache2, a2=a2, xhat=xhat, inv_std=inv_std, y=y, r=r,
                 mu=mu, var=var, training=training,
                 final=(cache1[1][-1], cache1[2][-1], cache2[1][-1], cache2[2][-1]))
    return ha, cache


def backward_batch(params: ModelParams, dha: np.ndarray, cache: dict) -> dict:
    w = params.weights
    H = params.hidden
    dz = dha.T * params.stats["target_scale"]
    r, y, xhat, inv_std = cache["r"], cache["y"], cache["xhat"], cache["inv_std"]
    g = {}
    g["Wo"] = r.reshape(-1, H).T @ dz.reshape(-1, 1)
    g["bo"] = np.array([dz.sum()])
    dy = dz[..., None] * w["Wo"][:, 0] * (y > 0)
    g["gamma"] = (dy * xhat).sum(axis=(0, 1))
    g["beta"] = dy.sum(axis=(0, 1))
    dxhat = dy * w["gamma"]
    if cache["training"]:
        n = dxhat.shape[0] * dxhat.shape[1]
        dpre = inv_std / n * (n * dxhat - dxhat.sum(axis=(0, 1))
                              - xhat * (dxhat * xhat).sum(axis=(0, 1)))
    else:
        dpre = dxhat * inv_std
    a2 = cache["a2"]
    g["Wh"] = a2.reshape(-1, H).T @ dpre.reshape(-1, H)
    g["bh"] = dpre.sum(axis=(0, 1))
    da2 = dpre @ w["Wh"].T
    da1, g["W2"], g["U2"], g["b2"] = _lstm_backward(da2, cache["cache2"], w["W2"], w["U2"])
    _, g["W1"], g["U1"], g["b1"] = _lstm_backward(da1, cache["cache1"], w["W1"], w["U1"])
    return g


def forward(params: ModelParams, features: np.ndarray, state: Optional[tuple] = None) -> PredictionTrace:
    """Inference on one feature matrix ``(rows, n)``, optionally continuing ``state``."""
    features = np.asarray(features)
    if features.ndim != 2:
        raise ValueError("forward expects a single (rows, n) feature matrix")
    x = normalize(params, features)
    st = None if state is None else tuple(np.asarray(s)[None] for s in state)
    ha, cache = forward_batch(params, x, training=False, state=st)
    final = tuple(s[0].copy() for s in cache["final"])
    return PredictionTrace(ha[0], final, cache["a2"][:, 0])


def predict_batch(params: ModelParams, X: np.ndarray, batch_size: int = 64) -> np.ndarray:
    """Inference-mode predictions ``(n_clips, n)`` for raw clips ``(n_clips, rows, n)``."""
    out = []
    for i in range(0, len(X), batch_size):
        ha, _ = forward_batch(params, normalize(params, X[i:i + batch_size]), training=False)
        out.append(ha)
    return np.concatenate(out) if out else np.zeros((0, X.shape[-1]))
