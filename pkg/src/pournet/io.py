"""On-disk formats: WAV, F/T CSV, recording bundles and the clip container."""
from __future__ import annotations

import csv
import json
import struct
from pathlib import Path
from typing import Optional

import numpy as np
from scipy.io import wavfile

from .augment import mix
from .data import CLIP_SAMPLES, SLICE_SECONDS, LabeledClip, PouringRecording
from .dsp import AUDIO_RATE, FT_CHANNELS, FT_RATE, HOP_SAMPLES, FtSeries, Waveform, rms

CLIP_MAGIC = b"PNCLIPS\0"
CLIP_VERSION = 1
_CLIP_HEADER = struct.Struct("<8sIIII")  # magic, version, n_clips, n_rows, n_frames


def read_wav(path) -> Waveform:
    rate, data = wavfile.read(path)
    if data.ndim != 1:
        raise ValueError(f"{path}: multichannel audio is not supported ({data.shape[1]} channels)")
    if data.dtype == np.int16:
        samples = data.astype(np.float64) / 32768.0
    elif data.dtype == np.float32:
        samples = data.astype(np.float64)
    else:
        raise ValueError(f"{path}: unsupported sample format {data.dtype}; use 16-bit or float32 PCM")
    return Waveform(samples, int(rate))


def write_wav(path, w: Waveform, fmt: str = "float32") -> None:
    if fmt == "int16":
        data = np.round(np.clip(w.samples, -1.0, 32767 / 32768) * 32768).astype("<i2")
    elif fmt == "float32":
        data = w.samples.astype("<f4")
    else:
        raise ValueError(f"unknown WAV format {fmt!r}")
    wavfile.write(path, int(w.sample_rate), data)


def _fmt(x) -> str:
    return repr(float(x))


def _write_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(header)
        wr.writerows(rows)


def _read_csv(path, header) -> np.ndarray:
    with open(path, newline="") as fh:
        rd = csv.reader(fh)
        got = next(rd, None)
        if got is None or [h.strip() for h in got] != list(header):
            raise ValueError(f"{path}: expected header {','.join(header)}, got {got}")
        rows = [[float(v) for v in r] for r in rd if r]
    return np.asarray(rows, dtype=np.float64).reshape(-1, len(header))


def write_ft_csv(path, ft: FtSeries) -> None:
    t = ft.times()
    _write_csv(path, ("t",) + FT_CHANNELS,
               ([_fmt(t[i])] + [_fmt(v) for v in ft.channels[:, i]] for i in range(ft.n_samples)))


def read_ft_csv(path) -> FtSeries:
    arr = _read_csv(path, ("t",) + FT_CHANNELS)
    if len(arr) < 2:
        raise ValueError(f"{path}: need at least two F/T samples")
    dt = np.diff(arr[:, 0])
    if np.any(dt < 0):
        raise ValueError(f"{path}: time column must be non-decreasing")
    rate = 1.0 / np.median(dt)
    if abs(rate - FT_RATE) > 1.0:
        raise ValueError(f"{path}: F/T data must be sampled at {FT_RATE} Hz, found {rate:.1f} Hz")
    return FtSeries(arr[:, 1:].T.copy(), FT_RATE)


def write_meta(path, meta: dict) -> None:
    with open(path, "w") as fh:
        for k in sorted(meta):
            fh.write(f"{k} = {meta[k]}\n")


def read_meta(path) -> dict:
    out = {}
    with open(path) as fh:
        for line in fh:
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}: malformed line {line!r}")
            k, v = (s.strip() for s in line.split("=", 1))
            out[k] = v
    return out


def write_calibration_samples(path, samples) -> None:
    _write_csv(path, ("weight_kg", "ha_mm"), ([_fmt(w), _fmt(h)] for w, h in np.asarray(samples)))


def read_calibration_samples(path) -> np.ndarray:
    return _read_csv(path, ("weight_kg", "ha_mm"))


def write_bundle(out_dir, rec: PouringRecording, calibration: Optional[np.ndarray] = None) -> Path:
    """Write one recording as ``audio.wav, ft.csv, scale.csv, meta.txt`` (+ truth, calibration)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_wav(out / "audio.wav", rec.audio)
    write_ft_csv(out / "ft.csv", rec.ft)
    _write_csv(out / "scale.csv", ("t", "weight_kg"), ([_fmt(t), _fmt(w)] for t, w in rec.scale))
    write_meta(out / "meta.txt", {
        "recording_id": rec.recording_id,
        "container_id": rec.container_id,
        "container_height_mm": _fmt(rec.container_height),
        "liquid_density": _fmt(rec.liquid_density),
    })
    if rec.truth_ha is not None:
        _write_csv(out / "truth.csv", ("slice", "ha_mm"),
                   ([str(i), _fmt(h)] for i, h in enumerate(rec.truth_ha)))
    if "scenario" in rec.meta:
        (out / "scenario.json").write_text(json.dumps(rec.meta["scenario"], indent=1, sort_keys=True))
    if calibration is not None:
        (out / "calibration").mkdir(exist_ok=True)
        write_calibration_samples(out / "calibration" / f"{rec.container_id}.csv", calibration)
    return out


def read_bundle(path) -> PouringRecording:
    path = Path(path)
    for name in ("audio.wav", "ft.csv", "scale.csv", "meta.txt"):
        if not (path / name).exists():
            raise FileNotFoundError(f"bundle {path} is missing {name}")
    meta = read_meta(path / "meta.txt")
    truth = None
    if (path / "truth.csv").exists():
        truth = _read_csv(path / "truth.csv", ("slice", "ha_mm"))[:, 1]
    extra = {"bundle": str(path)}
    if (path / "scenario.json").exists():
        extra["scenario"] = json.loads((path / "scenario.json").read_text())
    return PouringRecording(
        audio=read_wav(path / "audio.wav"),
        ft=read_ft_csv(path / "ft.csv"),
        scale=_read_csv(path / "scale.csv", ("t", "weight_kg")),
        container_id=meta["container_id"],
        container_height=float(meta["container_height_mm"]),
        liquid_density=float(meta.get("liquid_density", 1000.0)),
        truth_ha=truth,
        recording_id=meta.get("recording_id", path.name),
        meta=extra,
    )


def bundle_calibration(path, container_id: str) -> np.ndarray:
    f = Path(path) / "calibration" / f"{container_id}.csv"
    if not f.exists():
        raise FileNotFoundError(f"missing calibration samples for container {container_id!r} ({f})")
    return read_calibration_samples(f)


def write_clips(path, clips, manifest: Optional[dict] = None) -> Path:
    """Binary clip container plus a ``<path>.json`` manifest with per-clip metadata."""
    path = Path(path)
    n = len(clips)
    rows, frames = clips[0].features.shape if n else (0, 0)
    with open(path, "wb") as fh:
        fh.write(_CLIP_HEADER.pack(CLIP_MAGIC, CLIP_VERSION, n, rows, frames))
        for c in clips:
            if c.features.shape != (rows, frames):
                raise ValueError("all clips in a container must share one shape")
            fh.write(np.ascontiguousarray(c.features, dtype="<f4").tobytes())
        for c in clips:
            fh.write(np.ascontiguousarray(c.targets, dtype="<f4").tobytes())
    doc = dict(manifest or {})
    doc.update(n_clips=n, n_rows=int(rows), n_frames=int(frames), version=CLIP_VERSION,
               clips=[c.meta for c in clips])
    Path(str(path) + ".json").write_text(json.dumps(doc, indent=1, sort_keys=True))
    return path


def read_clip_arrays(path):
    """``(X, y, manifest)`` with ``X`` float32 ``(n, rows, frames)``."""
    path = Path(path)
    with open(path, "rb") as fh:
        head = fh.read(_CLIP_HEADER.size)
        if len(head) < _CLIP_HEADER.size:
            raise ValueError(f"{path}: truncated header")
        magic, version, n, rows, frames = _CLIP_HEADER.unpack(head)
        if magic != CLIP_MAGIC:
            raise ValueError(f"{path}: not a clip container")
        if version != CLIP_VERSION:
            raise ValueError(f"{path}: unsupported container version {version}")
        X = np.fromfile(fh, dtype="<f4", count=n * rows * frames)
        y = np.fromfile(fh, dtype="<f4", count=n * frames)
        if X.size != n * rows * frames or y.size != n * frames:
            raise ValueError(f"{path}: truncated payload")
        if fh.read(1):
            raise ValueError(f"{path}: trailing bytes after clip payload")
    X = X.reshape(n, rows, frames)
    y = y.reshape(n, frames)
    mpath = Path(str(path) + ".json")
    manifest = json.loads(mpath.read_text()) if mpath.exists() else {"clips": [{}] * n}
    return X.astype(np.float32, copy=False), y.astype(np.float64), manifest


def read_clips(path) -> list:
    X, y, manifest = read_clip_arrays(path)
    return [LabeledClip(X[i], y[i], dict(manifest["clips"][i])) for i in range(len(X))]


def render_clip_audio(rec: PouringRecording, meta: dict, bank=None) -> Waveform:
    """Rebuild the (mixed) 4 s audio of a clip from its source recording and metadata."""
    a0 = int(round(meta["start_s"] / SLICE_SECONDS)) * HOP_SAMPLES
    w = Waveform(rec.audio.samples[a0:a0 + CLIP_SAMPLES], AUDIO_RATE)
    if meta.get("snr_db") is not None:
        w = mix(w, bank[meta["noise_name"]], meta["snr_db"], int(meta["noise_offset"]))
    return w


def write_augmented_dir(out_dir, recordings, clips, bank=None, manifest: Optional[dict] = None) -> Path:
    """Directory of ``clip_NNNNN.wav`` + ``clip_NNNNN.csv`` label pairs plus ``manifest.json``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    by_id = {r.recording_id: r for r in recordings}
    for i, c in enumerate(clips):
        w = render_clip_audio(by_id[c.meta["recording_id"]], c.meta, bank)
        write_wav(out / f"clip_{i:05d}.wav", w)
        _write_csv(out / f"clip_{i:05d}.csv", ("slice", "ha_mm"),
                   ([str(k), _fmt(h)] for k, h in enumerate(c.targets)))
    doc = dict(manifest or {})
    doc["clips"] = [dict(c.meta, file=f"clip_{i:05d}.wav") for i, c in enumerate(clips)]
    (out / "manifest.json").write_text(json.dumps(doc, indent=1, sort_keys=True))
    return out


def write_noise_manifest(path, bank) -> None:
    _write_csv(path, ("name", "path", "rms"),
               ([n, f"{n}.wav", _fmt(rms(bank[n].samples))] for n in bank.names()))
