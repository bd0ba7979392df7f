import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pournet import dsp
from pournet.dsp import FtSeries, Waveform


def sine(freq, seconds, rate, amp=1.0):
    t = np.arange(int(round(seconds * rate))) / rate
    return amp * np.sin(2 * np.pi * freq * t)


def test_resample_identity_path():
    w = Waveform(sine(440, 0.1, 44100), 44100)
    out = dsp.resample(w, 44100)
    assert np.array_equal(out.samples, w.samples)
    assert out.samples is not w.samples


def test_resample_length_44k_to_16k():
    out = dsp.resample(Waveform(np.zeros(4 * 44100), 44100), 16000)
    assert abs(len(out.samples) - 64000) <= 1
    assert out.sample_rate == 16000


def test_resample_preserves_tone_and_rms():
    w = Waveform(sine(1000, 1.0, 44100), 44100)
    out = dsp.resample(w, 16000)
    x = out.samples[2000:-2000]  # skip filter edges
    spec = np.abs(np.fft.rfft(x * np.hanning(len(x))))
    peak_hz = np.argmax(spec) * 16000 / len(x)
    assert abs(peak_hz - 1000) < 16000 / len(x) + 1e-9
    assert abs(dsp.rms(x) / (1 / np.sqrt(2)) - 1) < 0.01


def test_resample_round_trip():
    x = sine(300, 1.0, 16000) + 0.5 * sine(2100, 1.0, 16000)
    back = dsp.resample(dsp.resample(Waveform(x, 16000), 44100), 16000).samples
    core = slice(1000, -1000)
    err = dsp.rms(back[core] - x[core]) / dsp.rms(x[core])
    assert err < 0.01


def test_resample_errors():
    with pytest.raises(ValueError, match="empty waveform"):
        dsp.resample(Waveform(np.zeros(0), 16000), 8000)
    with pytest.raises(ValueError):
        dsp.resample(Waveform(np.zeros(4), 16000), 0)


def test_stft_shape_for_four_seconds():
    assert dsp.stft(Waveform(np.zeros(64000), 16000)).shape == (257, 251)


@pytest.mark.parametrize("n", [256, 512, 64000, 64001])
def test_frame_count_law(n):
    rng = np.random.default_rng(n)
    spec = dsp.stft(Waveform(rng.standard_normal(n), 16000))
    assert spec.shape == (257, n // 256 + 1)


def test_stft_zero_and_nonnegative():
    assert not dsp.stft(Waveform(np.zeros(4000), 16000)).any()
    rng = np.random.default_rng(0)
    assert (dsp.stft(Waveform(rng.standard_normal(4000), 16000)) >= 0).all()


def test_stft_sine_peaks_at_bin_32():
    spec = dsp.stft(Waveform(sine(1000, 1.0, 16000), 16000))
    # reflection mirrors a zero-phase sine into an odd-symmetric burst at the first frame
    assert (np.argmax(spec[:, 1:], axis=0) == 32).all()
    t = np.arange(16000) / 16000
    spec = dsp.stft(Waveform(np.cos(2 * np.pi * 1000 * t), 16000))
    assert (np.argmax(spec, axis=0) == 32).all()


def test_stft_energy_scales_quadratically():
    rng = np.random.default_rng(1)
    x = rng.standard_normal(8000)
    e1 = np.sum(dsp.stft(Waveform(x, 16000)) ** 2)
    e2 = np.sum(dsp.stft(Waveform(2 * x, 16000)) ** 2)
    assert abs(e2 / e1 - 4) < 1e-9 * 4


def test_stft_rejects_other_rates():
    with pytest.raises(ValueError, match="expected 16 kHz input"):
        dsp.stft(Waveform(np.zeros(100), 44100))


def test_stft_single_sample():
    assert dsp.stft(Waveform(np.ones(1), 16000)).shape == (257, 1)


def test_butterworth_dc_gain():
    ft = FtSeries(np.tile(np.arange(1.0, 7.0)[:, None], (1, 1000)))
    out = dsp.butterworth_lowpass(ft, 5.0, 2)
    assert np.max(np.abs(out.channels - ft.channels)) < 1e-9


def test_butterworth_keeps_slow_component():
    t = np.arange(5000) / 500
    slow = np.sin(2 * np.pi * 1 * t)
    x = slow + np.sin(2 * np.pi * 100 * t)
    out = dsp.butterworth_lowpass(FtSeries(np.tile(x, (6, 1))), 5.0, 2)
    assert np.corrcoef(out.channels[0], slow)[0, 1] > 0.99
    assert out.n_samples == 5000


def test_butterworth_zero_phase():
    t = np.arange(5000) / 500
    slow = np.sin(2 * np.pi * 0.5 * t)
    out = dsp.butterworth_lowpass(FtSeries(np.tile(slow, (6, 1))), 5.0, 2).channels[0]
    lag = np.argmax(np.correlate(out[500:-500], slow[500:-500], "full")) - (len(slow) - 1001)
    assert lag == 0


def test_butterworth_errors():
    ft = FtSeries(np.zeros((6, 100)))
    with pytest.raises(ValueError, match="cutoff above Nyquist"):
        dsp.butterworth_lowpass(ft, 250.0)
    with pytest.raises(ValueError):
        dsp.butterworth_lowpass(ft, 5.0, 0)


def test_ft_series_validation():
    with pytest.raises(ValueError):
        FtSeries(np.zeros((5, 10)))
    with pytest.raises(ValueError):
        FtSeries(np.zeros((6, 10)), 1000)


def test_rms_examples():
    assert dsp.rms([-2.5, -2.5]) == 2.5
    assert abs(dsp.rms(sine(10, 1.0, 1000)) - 1 / np.sqrt(2)) < 1e-6
    assert abs(dsp.rms([3, -4]) - np.sqrt(12.5)) < 1e-12
    with pytest.raises(ValueError):
        dsp.rms([])


def test_waveform_duration():
    assert Waveform(np.zeros(48000), 16000).duration == 3.0
    with pytest.raises(ValueError):
        Waveform(np.zeros(10), 0)


@settings(max_examples=40, deadline=None)
@given(st.integers(min_value=1, max_value=3000))
def test_frame_count_property(n):
    x = np.cos(np.arange(n) * 0.1)
    assert dsp.stft(Waveform(x, 16000)).shape[1] == dsp.frame_count(n) == n // 256 + 1
