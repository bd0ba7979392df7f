import json

import numpy as np
import pytest

from pournet import io
from pournet.augment import NoiseBank, build_augmented_set, parse_grid
from pournet.data import extract_clips
from pournet.dsp import FtSeries, Waveform


def test_wav_float_round_trip(tmp_path):
    w = Waveform(np.linspace(-0.5, 0.5, 1000), 16000)
    io.write_wav(tmp_path / "a.wav", w)
    back = io.read_wav(tmp_path / "a.wav")
    assert back.sample_rate == 16000
    np.testing.assert_allclose(back.samples, w.samples, atol=1e-7)


def test_wav_int16_round_trip(tmp_path):
    w = Waveform(np.sin(np.arange(500) * 0.01) * 0.9, 44100)
    io.write_wav(tmp_path / "a.wav", w, fmt="int16")
    back = io.read_wav(tmp_path / "a.wav")
    assert back.sample_rate == 44100
    assert np.max(np.abs(back.samples - w.samples)) <= 0.5 / 32768 + 1e-12


def test_wav_rejects_stereo_and_bad_format(tmp_path):
    from scipy.io import wavfile

    wavfile.write(tmp_path / "s.wav", 16000, np.zeros((10, 2), dtype=np.int16))
    with pytest.raises(ValueError, match="multichannel"):
        io.read_wav(tmp_path / "s.wav")
    with pytest.raises(ValueError):
        io.write_wav(tmp_path / "x.wav", Waveform(np.zeros(4), 16000), fmt="mp3")


def test_ft_csv_round_trip(tmp_path, rng):
    ft = FtSeries(rng.normal(size=(6, 50)))
    io.write_ft_csv(tmp_path / "ft.csv", ft)
    assert (tmp_path / "ft.csv").read_text().splitlines()[0] == "t,fx,fy,fz,tx,ty,tz"
    back = io.read_ft_csv(tmp_path / "ft.csv")
    assert np.array_equal(back.channels, ft.channels)


def test_ft_csv_rate_and_order_checks(tmp_path):
    rows = "\n".join(f"{i / 1000},0,0,0,0,0,0" for i in range(10))
    (tmp_path / "fast.csv").write_text("t,fx,fy,fz,tx,ty,tz\n" + rows + "\n")
    with pytest.raises(ValueError, match="500 Hz"):
        io.read_ft_csv(tmp_path / "fast.csv")
    (tmp_path / "back.csv").write_text("t,fx,fy,fz,tx,ty,tz\n0.002,0,0,0,0,0,0\n0,0,0,0,0,0,0\n")
    with pytest.raises(ValueError, match="non-decreasing"):
        io.read_ft_csv(tmp_path / "back.csv")
    (tmp_path / "hdr.csv").write_text("time,a\n0,1\n")
    with pytest.raises(ValueError, match="expected header"):
        io.read_ft_csv(tmp_path / "hdr.csv")


def test_meta_round_trip(tmp_path):
    io.write_meta(tmp_path / "m.txt", {"b": 2, "a": "x y"})
    assert (tmp_path / "m.txt").read_text() == "a = x y\nb = 2\n"
    assert io.read_meta(tmp_path / "m.txt") == {"a": "x y", "b": "2"}
    (tmp_path / "bad.txt").write_text("no equals sign\n")
    with pytest.raises(ValueError):
        io.read_meta(tmp_path / "bad.txt")


def test_bundle_round_trip(tmp_path, recording):
    cal = np.array([[0.0, 99.0], [0.2, 50.0], [0.4, 0.0]])
    d = io.write_bundle(tmp_path / "b", recording, cal)
    back = io.read_bundle(d)
    np.testing.assert_allclose(back.audio.samples, recording.audio.samples, atol=1e-7)
    assert np.array_equal(back.ft.channels, recording.ft.channels)
    assert np.array_equal(back.scale, recording.scale)
    assert np.array_equal(back.truth_ha, recording.truth_ha)
    assert back.container_id == recording.container_id
    assert back.meta["scenario"] == recording.meta["scenario"]
    assert np.array_equal(io.bundle_calibration(d, recording.container_id), cal)
    with pytest.raises(FileNotFoundError, match="missing calibration samples for container"):
        io.bundle_calibration(d, "other")


def test_bundle_missing_file(tmp_path, recording):
    d = io.write_bundle(tmp_path / "b", recording)
    (d / "ft.csv").unlink()
    with pytest.raises(FileNotFoundError, match="ft.csv"):
        io.read_bundle(d)


def test_bundle_bytes_are_deterministic(tmp_path, recording):
    a = io.write_bundle(tmp_path / "a", recording)
    b = io.write_bundle(tmp_path / "b", recording)
    for f in sorted(p.name for p in a.iterdir()):
        assert (a / f).read_bytes() == (b / f).read_bytes()


def test_clip_container_round_trip(tmp_path, labeled_recording):
    clips = extract_clips(labeled_recording, 3, rng_seed=1)
    path = io.write_clips(tmp_path / "c.pnc", clips, {"seed": 1})
    X, y, manifest = io.read_clip_arrays(path)
    assert X.dtype == np.float32 and X.shape == (3, 305, 251)
    np.testing.assert_array_equal(X[1], clips[1].features.astype(np.float32))
    np.testing.assert_allclose(y, np.stack([c.targets for c in clips]), rtol=1e-6)
    assert manifest["seed"] == 1 and manifest["n_clips"] == 3
    back = io.read_clips(path)
    assert back[2].meta == json.loads(json.dumps(clips[2].meta))


def test_clip_container_errors(tmp_path, labeled_recording):
    clips = extract_clips(labeled_recording, 2, rng_seed=1)
    path = io.write_clips(tmp_path / "c.pnc", clips)
    raw = path.read_bytes()
    (tmp_path / "t.pnc").write_bytes(raw[:-4])
    with pytest.raises(ValueError, match="truncated"):
        io.read_clip_arrays(tmp_path / "t.pnc")
    (tmp_path / "x.pnc").write_bytes(b"NOTCLIPS" + raw[8:])
    with pytest.raises(ValueError, match="not a clip container"):
        io.read_clip_arrays(tmp_path / "x.pnc")
    (tmp_path / "l.pnc").write_bytes(raw + b"\0")
    with pytest.raises(ValueError, match="trailing"):
        io.read_clip_arrays(tmp_path / "l.pnc")
    from pournet.data import LabeledClip

    odd = clips + [LabeledClip(np.zeros((305, 10)), np.zeros(10))]
    with pytest.raises(ValueError):
        io.write_clips(tmp_path / "o.pnc", odd)


def test_augmented_dir_audio_matches_features(tmp_path, labeled_recording):
    from pournet import dsp

    bank = NoiseBank.synthetic(0, seconds=5.0)
    clips = build_augmented_set([labeled_recording], bank, parse_grid("clean,5"), 0.2, rng_seed=2)
    out = io.write_augmented_dir(tmp_path / "aug", [labeled_recording], clips, bank)
    doc = json.loads((out / "manifest.json").read_text())
    assert len(doc["clips"]) == len(clips)
    for i in (0, len(clips) - 1):
        w = io.read_wav(out / f"clip_{i:05d}.wav")
        spec = dsp.stft(w)
        np.testing.assert_allclose(spec, clips[i].features[:257], rtol=1e-4, atol=1e-4)


def test_noise_manifest(tmp_path):
    bank = NoiseBank.synthetic(1, seconds=1.0)
    io.write_noise_manifest(tmp_path / "n.csv", bank)
    lines = (tmp_path / "n.csv").read_text().splitlines()
    assert lines[0] == "name,path,rms"
    assert len(lines) == len(bank.names()) + 1
