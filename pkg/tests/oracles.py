"""Independent reference computations used by several test modules."""
import numpy as np

from pournet.model.losses import loss_total
from pournet.model.network import PARAM_ORDER, forward_batch, init_params, normalize

EPS = 1e-4


KINK_MARGIN = 1e-2


def kink_distance(p, X):
    """Smallest distance of any ReLU input or hinge rise from its kink."""
    ha, cache = forward_batch(p, normalize(p, X), training=True)
    return min(np.abs(cache["y"]).min(), np.abs(np.diff(ha, axis=1)).min(initial=np.inf))


def micro_problem(seed, kind="mp", frames=8, batch=1, margin=KINK_MARGIN):
    """Random parameters, micro-clips and decreasing targets.

    Points with a kink closer than ``margin`` are redrawn from the next
    sub-seed, so central differences never straddle a corner.
    """
    for sub in range(100):
        p, X, y = _draw([seed, sub], kind, frames, batch)
        if margin <= 0 or kink_distance(p, X) > margin:
            return p, X, y
    raise RuntimeError("no kink-free point found")


def _draw(seed, kind, frames, batch):
    rng = np.random.default_rng(seed)
    p = init_params(kind, int(rng.integers(2 ** 31)))
    for w in p.weights.values():
        w += rng.normal(0, 0.05, w.shape)
    p.stats["target_mean"] = np.array(rng.uniform(20, 80))
    p.stats["target_scale"] = np.array(rng.uniform(5, 20))
    d = p.input_dim
    p.stats["feat_mean"] = rng.normal(0, 0.2, d)
    p.stats["feat_std"] = rng.uniform(0.5, 2.0, d)
    X = rng.random((batch, d, frames)) * 3
    y = np.sort(rng.uniform(10, 90, (batch, frames)), axis=1)[:, ::-1].copy()
    return p, X, y


def reference_loss(p, X, y, alpha):
    """Mean per-clip loss computed straight from the definitions (training-mode norm)."""
    ha, _ = forward_batch(p, normalize(p, X), training=True)
    return float(np.mean([loss_total(ha[b], y[b], alpha) for b in range(len(X))]))


def fd_entry(p, X, y, alpha, name, idx, eps=EPS):
    w = p.weights[name]
    old = w[idx]
    w[idx] = old + eps
    up = reference_loss(p, X, y, alpha)
    w[idx] = old - eps
    down = reference_loss(p, X, y, alpha)
    w[idx] = old
    return (up - down) / (2 * eps)


def fd_direction(p, X, y, alpha, name, v, eps=EPS):
    w = p.weights[name]
    old = w.copy()
    w += eps * v
    up = reference_loss(p, X, y, alpha)
    w[...] = old - eps * v
    down = reference_loss(p, X, y, alpha)
    w[...] = old
    return (up - down) / (2 * eps)


def rel_err(a, n, floor):
    return abs(a - n) / max(abs(a), abs(n), floor)


def gradient_check(seed, grads, alpha=0.01, per_array=4, kind="mp", frames=8):
    """Max relative error over sampled coordinates and one random direction per array."""
    p, X, y = micro_problem(seed, kind, frames)
    g = grads(p, X, y, alpha)
    # central differences of a loss L carry about ulp(L) / eps of rounding noise
    floor = 1e-6 * max(1.0, reference_loss(p, X, y, alpha))
    rng = np.random.default_rng([seed, 5])
    worst = 0.0
    for name in PARAM_ORDER:
        w = p.weights[name]
        v = rng.standard_normal(w.shape)
        v /= np.linalg.norm(v)
        worst = max(worst, rel_err(float(np.sum(g[name] * v)), fd_direction(p, X, y, alpha, name, v), floor))
        for flat in rng.choice(w.size, size=min(per_array, w.size), replace=False):
            idx = np.unravel_index(flat, w.shape)
            worst = max(worst, rel_err(g[name][idx], fd_entry(p, X, y, alpha, name, idx), floor))
    return worst
