"""Versioned binary checkpoints and the CSV training log."""
from __future__ import annotations

import csv
import json
import struct
from pathlib import Path

import numpy as np

from .network import PARAM_ORDER, STAT_ORDER, ModelParams, variants

MAGIC = b"PNMODEL\0"
VERSION = 1
_KINDS = ("mp", "ap", "ft")
_HEADER = struct.Struct("<8sIIII")  # magic, version, variant code, input dim, hidden


def _shapes(d: int, H: int) -> dict:
    return {
        "W1": (d, 4 * H), "U1": (H, 4 * H), "b1": (4 * H,),
        "W2": (H, 4 * H), "U2": (H, 4 * H), "b2": (4 * H,),
        "Wh": (H, H), "bh": (H,), "gamma": (H,), "beta": (H,), "Wo": (H, 1), "bo": (1,),
        "feat_mean": (d,), "feat_std": (d,), "bn_mean": (H,), "bn_var": (H,),
        "target_mean": (), "target_scale": (),
    }


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.generic):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    return x


def save(path, params: ModelParams, manifest: dict | None = None) -> Path:
    """Write ``path`` (binary) and ``path.json`` (training config, seed, metadata)."""
    path = Path(path)
    d, H = params.input_dim, params.hidden
    shapes = _shapes(d, H)
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, _KINDS.index(params.variant), d, H))
        for name in PARAM_ORDER:
            fh.write(np.asarray(params.weights[name], dtype="<f8").reshape(shapes[name]).tobytes())
        for name in STAT_ORDER:
            fh.write(np.asarray(params.stats[name], dtype="<f8").reshape(shapes[name]).tobytes())
    doc = {"variant": params.variant, "input_dim": d, "hidden": H, "format_version": VERSION,
           "meta": _jsonable(params.meta)}
    doc.update(_jsonable(manifest or {}))
    Path(str(path) + ".json").write_text(json.dumps(doc, indent=1, sort_keys=True))
    return path


def load(path, expect_variant: str | None = None) -> ModelParams:
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < _HEADER.size:
        raise ValueError(f"{path}: truncated checkpoint")
    magic, version, code, d, H = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise ValueError(f"{path}: not a model checkpoint")
    if version != VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    if code >= len(_KINDS):
        raise ValueError(f"{path}: unknown variant code {code}")
    kind = _KINDS[code]
    if expect_variant is not None and expect_variant != kind:
        raise ValueError(f"checkpoint {path} holds a {kind!r} model, not {expect_variant!r}")
    if variants(kind).width != d:
        raise ValueError(f"{path}: input dim {d} does not match variant {kind!r}")
    shapes = _shapes(d, H)
    off = _HEADER.size
    arrays = {}
    for name in PARAM_ORDER + STAT_ORDER:
        n = int(np.prod(shapes[name], dtype=np.int64))
        if off + 8 * n > len(raw):
            raise ValueError(f"{path}: truncated checkpoint")
        arrays[name] = np.frombuffer(raw, "<f8", n, off).reshape(shapes[name]).astype(np.float64)
        off += 8 * n
    if off != len(raw):
        raise ValueError(f"{path}: trailing bytes after checkpoint payload")
    meta = {}
    mpath = Path(str(path) + ".json")
    if mpath.exists():
        meta = json.loads(mpath.read_text()).get("meta", {})
    return ModelParams(kind, {k: arrays[k] for k in PARAM_ORDER},
                       {k: arrays[k] for k in STAT_ORDER}, H, VERSION, meta)


LOG_HEADER = ("epoch", "train_loss", "val_loss", "val_frac_under_5mm")


def write_log(path, history) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(LOG_HEADER)
        for row in history:
            wr.writerow([int(row["epoch"])] + [repr(float(row[k])) for k in LOG_HEADER[1:]])


def read_log(path) -> list:
    with open(path, newline="") as fh:
        return [{"epoch": int(r["epoch"]), **{k: float(r[k]) for k in LOG_HEADER[1:]}}
                for r in csv.DictReader(fh)]
