import struct
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.io import wavfile

from otbss.audio import (Signal, Spectrogram, frequency_grid, istft, read_wav, reattach_phase,
                         stft, write_wav)
from otbss.errors import (ClippingWarning, DimensionMismatch, InconsistentMetadata, IoError,
                          SignalTooShort, UnsupportedFormat)

from oracles import dft_stft


def noise(seconds=1.0, sr=16000, seed=0):
    return Signal(np.random.default_rng(seed).uniform(-0.5, 0.5, int(seconds * sr)), sr)


# WAV

def test_read_pcm16_scaling(tmp_path):
    path = tmp_path / "a.wav"
    wavfile.write(path, 16000, np.array([0, 16384, -16384], dtype=np.int16))
    np.testing.assert_array_equal(read_wav(path).samples, [0.0, 0.5, -0.5])


def test_read_stereo_averages(tmp_path):
    path = tmp_path / "s.wav"
    wavfile.write(path, 8000, np.array([[0.2, 0.4], [0.0, -1.0]], dtype=np.float32))
    sig = read_wav(path)
    np.testing.assert_allclose(sig.samples, [0.3, -0.5], atol=1e-7)
    assert sig.sample_rate == 8000


def test_read_truncated_header(tmp_path):
    path = tmp_path / "t.wav"
    path.write_bytes(b"RIFF" + struct.pack("<I", 100) + b"WAVEfmt ")
    with pytest.raises(IoError):
        read_wav(path)


def test_read_missing_and_unsupported(tmp_path):
    with pytest.raises(IoError, match="nope"):
        read_wav(tmp_path / "nope.wav")
    path = tmp_path / "u8.wav"
    wavfile.write(path, 16000, np.array([0, 255], dtype=np.uint8))
    with pytest.raises(UnsupportedFormat):
        read_wav(path)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31), st.integers(0, 3000))
def test_wav_round_trip_quantization(tmp_path_factory, seed, n):
    path = tmp_path_factory.mktemp("w") / "r.wav"
    sig = Signal(np.random.default_rng(seed).uniform(-1, 1, n), 16000)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        write_wav(sig, path)
    back = read_wav(path)
    assert len(back) == n
    if n:
        assert np.max(np.abs(back.samples - sig.samples)) <= 1 / 32768


def test_write_clips_and_counts(tmp_path):
    sig = Signal(np.array([0.0, 1.5, -2.0, 0.5]), 16000)
    with pytest.warns(ClippingWarning):
        count = write_wav(sig, tmp_path / "c.wav")
    assert count == 2
    back = read_wav(tmp_path / "c.wav").samples
    assert back[1] == pytest.approx(32767 / 32768) and back[2] == -1.0


def test_empty_signal_round_trip(tmp_path):
    write_wav(Signal(np.zeros(0), 16000), tmp_path / "e.wav")
    assert len(read_wav(tmp_path / "e.wav")) == 0


# STFT

def test_bins_and_grid():
    spec = stft(noise(), 1024)
    assert spec.complex_frames.shape[0] == 513
    assert spec.magnitude.shape[0] == 512
    grid = spec.frequency_grid
    assert grid[0] == pytest.approx(16000 / 1024) and grid[-1] == pytest.approx(8000.0)
    np.testing.assert_array_equal(grid, frequency_grid(1024, 16000))


def test_stft_matches_explicit_dft():
    sig = noise(0.2, seed=1)
    spec = stft(sig, 256, 128)
    np.testing.assert_allclose(spec.complex_frames, dft_stft(sig.samples, 256, 128), atol=1e-9)
    np.testing.assert_array_equal(spec.magnitude, np.abs(spec.complex_frames[1:]))
    np.testing.assert_array_equal(spec.dc_row, spec.complex_frames[0])


def test_pure_sine_main_lobe():
    # a periodic Hann window spreads an on-bin sine over the bin and its two neighbours
    k = 64
    t = np.arange(16000) / 16000
    spec = stft(Signal(np.sin(2 * np.pi * k * 16000 / 1024 * t), 16000), 1024)
    mag = spec.magnitude[:, 3:-3]
    row = k - 1
    lobe = mag[row - 1:row + 2].sum(0) / mag.sum(0)
    assert np.all(lobe >= 0.99)
    np.testing.assert_allclose(mag[row - 1:row + 2].mean(1) / mag[row].mean(), [0.5, 1.0, 0.5], atol=1e-3)


def test_zero_signal():
    spec = stft(Signal(np.zeros(4000), 16000), 512)
    assert not spec.magnitude.any()
    assert not istft(spec).samples.any()


def test_parseval_per_frame():
    sig = noise(0.5, seed=2)
    N = 512
    spec = stft(sig, N)
    F = spec.complex_frames
    one_sided = np.abs(F[0]) ** 2 + 2 * (np.abs(F[1:-1]) ** 2).sum(0) + np.abs(F[-1]) ** 2
    frames = dft_stft(sig.samples, N, N // 2)
    # reuse the explicit windowed frames through inverse DFT energy
    windowed = np.fft.irfft(frames.T, n=N, axis=1)
    np.testing.assert_allclose(one_sided, N * (windowed ** 2).sum(1), rtol=1e-2)


@pytest.mark.parametrize("N,hop", [(1024, 512), (600, 300), (512, 128)])
def test_round_trip(N, hop):
    sig = noise(1.0, seed=N)
    back = istft(stft(sig, N, hop))
    assert len(back) == len(sig)
    x, y = sig.samples[N // 2:-N // 2], back.samples[N // 2:-N // 2]
    assert np.linalg.norm(x - y) / np.linalg.norm(x) < 1e-6


def test_too_short_and_bad_metadata():
    with pytest.raises(SignalTooShort):
        stft(Signal(np.zeros(100), 16000), 1024)
    with pytest.raises(InconsistentMetadata):
        Spectrogram(np.zeros((10, 3)), 16000, 1024, 512, 1000)
    spec = stft(noise(0.2), 512)
    short = Spectrogram(spec.complex_frames[:, :2], 16000, 512, 256, spec.length)
    with pytest.raises(InconsistentMetadata):
        istft(short)


# phase

def test_reattach_identity_and_scaling():
    spec = stft(noise(0.3, seed=3), 512)
    same = reattach_phase(spec.magnitude, spec)
    np.testing.assert_array_equal(same.complex_frames, spec.complex_frames)
    double = reattach_phase(2 * spec.magnitude, spec)
    np.testing.assert_allclose(double.complex_frames[1:], 2 * spec.complex_frames[1:])
    np.testing.assert_array_equal(double.complex_frames[0], spec.dc_row)


def test_reattach_zero_keeps_dc():
    spec = stft(noise(0.3, seed=4), 512)
    out = reattach_phase(np.zeros_like(spec.magnitude), spec)
    assert not out.complex_frames[1:].any()
    np.testing.assert_array_equal(out.dc_row, spec.dc_row)
    with pytest.raises(DimensionMismatch):
        reattach_phase(np.zeros((3, 3)), spec)
