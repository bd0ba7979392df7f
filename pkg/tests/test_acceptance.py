"""Acceptance criteria 1-9, each printed as one PASS/FAIL line.

The trained-model criteria (6-8) share session fixtures that simulate the
train and holdout suites and fit the estimators once; expect roughly 15
minutes on one CPU core.
"""
import time
from pathlib import Path

import numpy as np
import pytest

import oracles
from pournet import augment, cli, control, dsp, shape, synthsim
from pournet.augment import NoiseBank, parse_grid
from pournet.data import CLIP_FRAMES, featurize, stack_clips
from pournet.dsp import FtSeries, Waveform
from pournet.model import gradients
from pournet.model.losses import loss_height, loss_mono, loss_total
from pournet.model.network import predict_batch, select_rows
from pournet.model.training import TrainConfig, train_arrays
from pournet.pipeline import eval_sets, label_all, simulate_suite

TRAIN_SEED = 7
HOLDOUT_SEED = 11
CLIP_SEED = 3
EVAL_GRID = "clean,full"


def _grads(p, X, y, alpha):
    return gradients(p, X, y, alpha)[1]


def test_criterion_1_gradients(report):
    t = time.perf_counter()
    worst = max(oracles.gradient_check(seed, _grads) for seed in range(25))
    dt = time.perf_counter() - t
    ok = worst < 1e-4 and dt < 60
    report(1, ok, f"max relative error {worst:.2e} over 25 seeds (< 1e-4), {dt:.1f} s (< 60 s)")
    assert ok


def test_criterion_2_snr_mixing(report):
    t = time.perf_counter()
    rng = np.random.default_rng(2024)
    worst = 0.0
    for pair in range(20):
        n = int(rng.integers(8000, 64000))
        kind = pair % 3
        if kind == 0:
            sig = rng.standard_normal(n) * rng.uniform(1e-3, 1.0)
        elif kind == 1:
            sig = np.sin(2 * np.pi * rng.uniform(200, 2000) * np.arange(n) / 16000) * rng.uniform(0.01, 1)
        else:
            sig = augment.pink_noise(n, rng) * rng.uniform(1e-3, 1.0)
        noise = Waveform(augment.pink_noise(int(rng.integers(4000, 80000)), rng) * rng.uniform(1e-4, 10), 16000)
        s = Waveform(sig, 16000)
        for snr in range(-20, 21):
            offset = int(rng.integers(0, len(noise.samples)))
            mixed = augment.mix(s, noise, float(snr), offset)
            got = augment.measured_snr(sig, mixed.samples - sig)
            worst = max(worst, abs(got - snr))
    dt = time.perf_counter() - t
    ok = worst < 0.01 and dt < 10
    report(2, ok, f"max |measured - requested| {worst:.2e} dB over 20 pairs x 41 levels, {dt:.1f} s")
    assert ok


def test_criterion_3_framing(report):
    t = time.perf_counter()
    rng = np.random.default_rng(3)
    audio = Waveform(rng.standard_normal(4 * 16000), 16000)
    spec = dsp.stft(audio)
    ft = FtSeries(rng.standard_normal((6, 8 * CLIP_FRAMES)))
    fused = featurize(audio, ft)
    streamed = control.window_features(audio.samples, rng.standard_normal((6, 2000)), 4.0)
    dt = time.perf_counter() - t
    ok = spec.shape == (257, 251) and fused.shape == (305, 251) and streamed.shape == (305, 251) and dt < 1
    report(3, ok, f"spectrogram {spec.shape}, fused {fused.shape}, streamed window {streamed.shape}, {dt:.2f} s")
    assert ok


def _sequences(rng, count):
    for i in range(count):
        n = int(rng.integers(1, 80))
        kind = i % 5
        x = rng.normal(0, 50, n)
        if kind == 1:
            x = np.sort(x)[::-1]
        elif kind == 2:
            x = np.repeat(np.sort(rng.normal(0, 50, max(1, n // 3)))[::-1], 3)[:n]
        elif kind == 3:
            x = np.sort(x)[::-1].copy()
            if n > 1:
                j = int(rng.integers(1, n))
                x[j] = x[j - 1] + 10.0 ** rng.uniform(-9, 1)
        elif kind == 4:
            x = np.full(n, rng.normal())
        yield x


def test_criterion_4_loss_properties(report):
    t = time.perf_counter()
    rng = np.random.default_rng(4)
    mismatches = 0
    inexact = 0
    for x in _sequences(rng, 10_000):
        mono = loss_mono(x)
        if (mono == 0) != bool(np.all(np.diff(x) <= 0)):
            mismatches += 1
        truth = rng.normal(0, 50, len(x))
        alpha = float(rng.choice([0.0, 0.01, 1.0, rng.uniform(0, 5)]))
        if loss_total(x, truth, alpha) != loss_height(x, truth) + alpha * mono:
            inexact += 1
    dt = time.perf_counter() - t
    ok = mismatches == 0 and inexact == 0 and dt < 5
    report(4, ok, f"10^4 sequences: {mismatches} mono-iff violations, {inexact} inexact decompositions, {dt:.1f} s")
    assert ok


def test_criterion_5_shape_oracle(report):
    t = time.perf_counter()
    cyl, frustum = synthsim.SHAPE_GEOMETRIES[:2]
    cyl_err, frustum_err = [], []
    for k in range(3):
        sc = synthsim.make_scenario(cyl, 500 + k, f"acc-cyl-{k}", fill_to=0.9, initial_fill=0.0)
        run = shape.run_shape(sc)
        cyl_err.append(np.mean([abs(s.r - float(cyl.radius(s.h))) for s in run.samples]))
        sc = synthsim.make_scenario(frustum, 600 + k, f"acc-fr-{k}", fill_to=0.9, initial_fill=0.0)
        run = shape.run_shape(sc)
        late = np.array([not s.early for s in run.samples])
        frustum_err.append(np.max(np.abs(shape.sample_errors(run.samples, frustum)[late])))
    dt = time.perf_counter() - t
    ok = max(cyl_err) < 0.5 and max(frustum_err) < 0.02 and dt < 10
    report(5, ok, f"cylinder radius MAE {max(cyl_err):.3f} mm (< 0.5), frustum late relative error "
                  f"{max(frustum_err):.2%} (< 2%), 3 trials each, {dt:.1f} s")
    assert ok


# trained-model criteria


@pytest.fixture(scope="session")
def bank():
    return NoiseBank.synthetic(0)


@pytest.fixture(scope="session")
def train_recordings():
    _, recs, cal = simulate_suite("train", TRAIN_SEED)
    return label_all(recs, cal)


@pytest.fixture(scope="session")
def holdout_sets(bank):
    _, recs, cal = simulate_suite("holdout", HOLDOUT_SEED)
    return eval_sets(label_all(recs, cal), bank, EVAL_GRID, 0.25, CLIP_SEED)


def _fit(recordings, bank, grid_text, clips_per_second, variants):
    clips = augment.build_augmented_set(recordings, bank, parse_grid(grid_text), clips_per_second,
                                        CLIP_SEED)
    groups = [c.meta["recording_id"] for c in clips]
    X, y = stack_clips(clips)
    del clips
    models, seconds = {}, {}
    for v in variants:
        t = time.perf_counter()
        cfg = TrainConfig(variant=v, epochs=15, batch_size=32, learning_rate=2e-3, rng_seed=0)
        models[v], _ = train_arrays(select_rows(X, v), y, cfg, groups)
        seconds[v] = time.perf_counter() - t
    return models, seconds


@pytest.fixture(scope="session")
def default_mp(train_recordings, bank):
    """MP trained on the default grid (clean plus 0-20 dB in 5 dB steps)."""
    models, seconds = _fit(train_recordings, bank, "clean,0:20:5", 0.25, ["mp"])
    return models["mp"], seconds["mp"]


@pytest.fixture(scope="session")
def full_grid_models(train_recordings, bank):
    """MP, AP and FT trained on clean plus the whole -20..20 dB grid."""
    return _fit(train_recordings, bank, EVAL_GRID, 0.125, ["mp", "ap", "ft"])[0]


def _fractions(params, sets):
    out = {}
    for label, (X, y) in sets.items():
        pred = predict_batch(params, select_rows(X, params.variant))
        out[label] = float(np.mean(np.abs(pred - y) < 5.0))
    return out


@pytest.mark.slow
def test_criterion_6_desk_training(report, default_mp, holdout_sets):
    params, seconds = default_mp
    X, y = holdout_sets["5"]
    pred = predict_batch(params, select_rows(X, "mp"))
    frac = float(np.mean(np.abs(pred - y) < 5.0))
    ok = frac >= 0.80 and seconds < 1800
    report(6, ok, f"MP share of holdout slices under 5 mm at SNR 5 dB: {frac:.3f} (>= 0.80) "
                  f"over {y.size} slices; training {seconds:.0f} s (< 1800 s)")
    assert ok


@pytest.mark.slow
def test_criterion_7_noise_direction(report, full_grid_models, holdout_sets):
    fr = {v: _fractions(p, holdout_sets) for v, p in full_grid_models.items()}
    low = ["-20", "-15"]
    high = ["15", "20"]
    noisy = [k for k in holdout_sets if k != "clean"]
    ft_span = max(fr["ft"][k] for k in noisy) - min(fr["ft"][k] for k in noisy)
    mp_beats_ap = all(fr["mp"][k] > fr["ap"][k] for k in low)
    mp_keeps_up = all(fr["mp"][k] >= fr["ap"][k] - 0.02 for k in high)
    ok = mp_beats_ap and mp_keeps_up and ft_span <= 0.01
    detail = "; ".join(f"{k} dB MP {fr['mp'][k]:.3f} AP {fr['ap'][k]:.3f} FT {fr['ft'][k]:.3f}"
                       for k in low + high)
    report(7, ok, f"{detail}; FT span across SNR {ft_span * 100:.2f} points (<= 1)")
    assert ok


def _episodes(n, seed0):
    return [synthsim.make_scenario(synthsim.TRAIN_GEOMETRIES[i % 3], seed0 + i, f"acc-pour-{i}",
                                   fill_to=0.95) for i in range(n)]


@pytest.mark.slow
def test_criterion_8_closed_loop(report, default_mp):
    t = time.perf_counter()
    policy = control.StopPolicy(60.0)
    oracle = [control.run_episode(sc, "oracle", policy, decision_rate=62.5) for sc in _episodes(10, 800)]
    t_oracle = time.perf_counter() - t
    params, _ = default_mp
    model = [control.run_episode(sc, params, policy) for sc in _episodes(10, 900)]
    dt = time.perf_counter() - t
    worst_oracle = max(abs(r.error_mm) for r in oracle)
    mean_model = float(np.mean([abs(r.error_mm) for r in model]))
    reached = all(r.reached for r in oracle + model)
    ok = worst_oracle < 1.0 and mean_model <= 5.0 and reached and dt < 300
    report(8, ok, f"oracle worst |error| {worst_oracle:.3f} mm (< 1) in {t_oracle:.0f} s; "
                  f"MP mean |error| {mean_model:.2f} mm (<= 5) over 10 episodes; total {dt:.0f} s")
    assert ok


def _cli_run(out: Path) -> dict:
    steps = [
        ["synth", "--suite", "train", "--count", "1", "--seed", "5"],
        ["synth", "--suite", "holdout", "--count", "1", "--seed", "6"],
        ["build-dataset", "--snr-grid", "clean,0:20:10", "--clips-per-second", "0.05", "--seed", "5"],
        ["train", "--threads", "1", "--epochs", "2", "--seed", "5"],
        ["eval", "--snr-grid", "clean,-10,10", "--clips-per-second", "0.05", "--seed", "5"],
    ]
    for argv in steps:
        assert cli.main(argv + ["--out", str(out)]) == 0, argv
    return {p.relative_to(out).as_posix(): p.read_bytes() for p in sorted(out.rglob("*")) if p.is_file()}


def test_criterion_9_determinism(report, tmp_path):
    a = _cli_run(tmp_path / "a")
    b = _cli_run(tmp_path / "b")
    differing = sorted(k for k in a.keys() | b.keys() if a.get(k) != b.get(k))
    ok = not differing and len(a) > 0
    report(9, ok, f"{len(a)} files from synth, build-dataset, train --threads 1, eval; "
                  f"{len(differing)} differ" + (f" ({', '.join(differing[:3])})" if differing else ""))
    assert ok
