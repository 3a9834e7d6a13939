import io

import numpy as np
import pytest

from soundalike.audio import (Waveform, read_wav, resample_to_mono, to_mono,
                              probe_wav, write_wav)
from soundalike.errors import EmptySignal, UnsupportedRate, WavFormatError

SR = 16000


def sine(freq, seconds, sr, amp=0.5):
    t = np.arange(int(seconds * sr)) / sr
    return amp * np.sin(2 * np.pi * freq * t)


def dft_peak_hz(x, sr):
    spec = np.abs(np.fft.rfft(x))
    return np.argmax(spec) * sr / len(x)


def test_wav_roundtrip_int16(tmp_path):
    x = sine(440, 1.0, SR)
    path = tmp_path / "a.wav"
    write_wav(path, Waveform(samples=x, sample_rate=SR), encoding="int16")
    back = read_wav(path)
    assert back.sample_rate == SR
    assert back.n_samples == len(x)
    assert np.max(np.abs(back.samples - x)) < 1.0 / 32000


def test_wav_roundtrip_float32(tmp_path):
    x = sine(440, 0.5, SR)
    path = tmp_path / "f.wav"
    write_wav(path, Waveform(samples=x, sample_rate=SR), encoding="float32")
    back = read_wav(path)
    assert np.array_equal(back.samples, x.astype(np.float32).astype(np.float64))


def test_wav_stereo(tmp_path):
    left = sine(440, 0.2, SR)
    stereo = np.stack([left, -left], axis=1)
    path = tmp_path / "s.wav"
    write_wav(path, Waveform(samples=stereo, sample_rate=SR), encoding="float32")
    back = read_wav(path)
    assert back.n_channels == 2


def test_wav_from_file_object(tmp_path):
    x = sine(100, 0.1, SR)
    buf = io.BytesIO()
    write_wav(buf, Waveform(samples=x, sample_rate=SR), encoding="int16")
    buf.seek(0)
    back = read_wav(buf)
    assert back.n_samples == len(x)


def test_read_wav_rejects_garbage(tmp_path):
    path = tmp_path / "bad.wav"
    path.write_bytes(b"this is not a RIFF file at all")
    with pytest.raises(WavFormatError):
        read_wav(path)


def test_read_wav_rejects_truncated(tmp_path):
    x = sine(440, 0.5, SR)
    path = tmp_path / "t.wav"
    write_wav(path, Waveform(samples=x, sample_rate=SR))
    data = path.read_bytes()
    path.write_bytes(data[:20])
    with pytest.raises(WavFormatError):
        read_wav(path)


def test_probe_wav(tmp_path):
    x = sine(440, 2.5, SR)
    path = tmp_path / "p.wav"
    write_wav(path, Waveform(samples=x, sample_rate=SR))
    rate, frames, channels = probe_wav(path)
    assert rate == SR
    assert frames == len(x)
    assert channels == 1


def test_resample_identity_is_bit_exact():
    x = sine(440, 1.0, SR)
    wave = Waveform(samples=x, sample_rate=SR)
    out = resample_to_mono(wave, SR)
    assert out.sample_rate == SR
    assert np.array_equal(out.samples, x)


def test_resample_downsamples_sine():
    # 32 kHz, 2 s, 440 Hz -> 16 kHz: 32,000 samples, peak still at 440 Hz.
    x = sine(440, 2.0, 32000)
    out = resample_to_mono(Waveform(samples=x, sample_rate=32000), SR)
    assert out.n_samples == 32000
    peak = dft_peak_hz(out.samples, SR)
    assert abs(peak - 440.0) <= SR / out.n_samples  # within one DFT bin


def test_resample_441k():
    x = sine(1000, 1.0, 44100)
    out = resample_to_mono(Waveform(samples=x, sample_rate=44100), SR)
    assert abs(out.n_samples - SR) <= 1
    assert abs(dft_peak_hz(out.samples, SR) - 1000.0) < 2.0


def test_resample_mixes_opposite_channels_to_silence():
    left = sine(300, 0.5, SR)
    stereo = np.stack([left, -left], axis=1)
    out = resample_to_mono(Waveform(samples=stereo, sample_rate=SR), SR)
    assert np.all(out.samples == 0.0)


def test_resample_rejects_empty():
    with pytest.raises(EmptySignal):
        resample_to_mono(Waveform(samples=np.zeros(0), sample_rate=SR), SR)


def test_resample_rejects_upsampling():
    wave = Waveform(samples=sine(440, 0.1, SR), sample_rate=SR)
    with pytest.raises(UnsupportedRate):
        resample_to_mono(wave, 48000)


def test_to_mono_averages():
    a = np.array([[1.0, 3.0], [2.0, 4.0]])
    out = to_mono(Waveform(samples=a, sample_rate=SR))
    assert np.array_equal(out.samples, np.array([2.0, 3.0]))


def test_waveform_rejects_nan():
    with pytest.raises(WavFormatError):
        Waveform(samples=np.array([0.0, np.nan]), sample_rate=SR)
