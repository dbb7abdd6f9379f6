"""WAV input/output and the STFT used throughout the pipeline.

Magnitude spectrograms handed to the NMF layer never contain the DC row; it is
kept aside in :class:`Spectrogram` and put back untouched at synthesis time.
"""

from __future__ import annotations

import struct
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.io import wavfile
from scipy.signal import get_window

from .errors import (ClippingWarning, DimensionMismatch, InconsistentMetadata, IoError,
                     SignalTooShort, UnsupportedFormat)

_PCM16_SCALE = 32768.0


@dataclass(frozen=True)
class Signal:
    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=float)
        if samples.ndim != 1:
            raise ValueError("samples must be one-dimensional")
        if not self.sample_rate > 0:
            raise ValueError("sample rate must be positive")
        if not np.all(np.isfinite(samples)):
            raise ValueError("samples must be finite")
        object.__setattr__(self, "samples", samples)

    def __len__(self):
        return self.samples.size

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate


@dataclass(frozen=True)
class Spectrogram:
    """One-sided STFT. ``complex_frames`` has ``window_size // 2 + 1`` rows."""

    complex_frames: np.ndarray
    sample_rate: int
    window_size: int
    hop_size: int
    length: int

    def __post_init__(self):
        frames = np.asarray(self.complex_frames, dtype=complex)
        if frames.ndim != 2 or frames.shape[0] != self.window_size // 2 + 1:
            raise InconsistentMetadata(
                f"{frames.shape[0] if frames.ndim == 2 else '?'} rows do not match window {self.window_size}")
        object.__setattr__(self, "complex_frames", frames)

    @property
    def magnitude(self) -> np.ndarray:
        return np.abs(self.complex_frames[1:])

    @property
    def dc_row(self) -> np.ndarray:
        return self.complex_frames[0]

    @property
    def frequency_grid(self) -> np.ndarray:
        return frequency_grid(self.window_size, self.sample_rate)

    @property
    def n_frames(self) -> int:
        return self.complex_frames.shape[1]


def frequency_grid(window_size: int, sample_rate: float) -> np.ndarray:
    """Centre frequencies of the non-DC bins, ``(j + 1) * sr / N``."""
    return np.arange(1, window_size // 2 + 1) * (sample_rate / window_size)


# --------------------------------------------------------------------------
# WAV


def read_wav(path) -> Signal:
    """Read 16-bit PCM or 32-bit float WAV as a mono signal in [-1, 1]."""
    try:
        rate, data = wavfile.read(path)
    except FileNotFoundError as exc:
        raise IoError(f"{path}: no such file") from exc
    except (ValueError, EOFError, struct.error) as exc:
        raise IoError(f"{path}: cannot parse WAV ({exc})") from exc
    except OSError as exc:
        raise IoError(f"{path}: {exc}") from exc
    if data.dtype == np.int16:
        samples = data.astype(float) / _PCM16_SCALE
    elif data.dtype == np.float32:
        samples = data.astype(float)
    else:
        raise UnsupportedFormat(f"{path}: sample type {data.dtype} is not supported "
                                "(expected 16-bit PCM or 32-bit float)")
    if samples.ndim == 2:
        samples = samples.mean(axis=1)
    if not np.all(np.isfinite(samples)):
        raise UnsupportedFormat(f"{path}: non-finite samples")
    return Signal(samples, int(rate))


def write_wav(signal: Signal, path) -> int:
    """Write mono 16-bit PCM; returns the number of saturated samples."""
    x = signal.samples
    clipped = int(np.count_nonzero((x > 1.0) | (x < -1.0)))
    if clipped:
        warnings.warn(f"{clipped} sample(s) outside [-1, 1] saturated", ClippingWarning, stacklevel=2)
    pcm = np.clip(np.round(x * _PCM16_SCALE), -32768, 32767).astype(np.int16)
    try:
        wavfile.write(path, int(signal.sample_rate), pcm)
    except OSError as exc:
        raise IoError(f"{path}: {exc}") from exc
    return clipped


# --------------------------------------------------------------------------
# STFT


def hann(window_size: int) -> np.ndarray:
    # periodic Hann: satisfies constant overlap-add at hop N/2
    return get_window("hann", window_size, fftbins=True)


def _check_framing(window_size, hop_size):
    if window_size < 2 or window_size % 2:
        raise ValueError(f"window size must be even and >= 2, got {window_size}")
    if not 0 < hop_size <= window_size // 2:
        raise ValueError(f"hop size must be in (0, window/2], got {hop_size}")


def stft(signal: Signal, window_size: int = 1024, hop_size: int | None = None) -> Spectrogram:
    """Centred STFT with a periodic Hann window.

    The signal is zero-padded by half a window on the left and enough on the
    right for the last hop, so every sample is covered by full overlap-add.
    """
    hop_size = window_size // 2 if hop_size is None else int(hop_size)
    _check_framing(window_size, hop_size)
    x = signal.samples
    if x.size < window_size:
        raise SignalTooShort(f"signal has {x.size} samples, fewer than one window ({window_size})")
    half = window_size // 2
    n_frames = 1 + -(-(x.size + half) // hop_size)
    padded = np.zeros((n_frames - 1) * hop_size + window_size)
    padded[half:half + x.size] = x
    frames = np.lib.stride_tricks.sliding_window_view(padded, window_size)[::hop_size]
    spec = np.fft.rfft(frames * hann(window_size), axis=1).T
    return Spectrogram(spec, signal.sample_rate, window_size, hop_size, x.size)


def istft(spec: Spectrogram) -> Signal:
    """Weighted overlap-add inverse of :func:`stft`, normalized by the summed squared window."""
    N, hop = spec.window_size, spec.hop_size
    _check_framing(N, hop)
    t = spec.n_frames
    if (t - 1) * hop + N < spec.length + N // 2:
        raise InconsistentMetadata(f"{t} frames cannot cover {spec.length} samples")
    w = hann(N)
    frames = np.fft.irfft(spec.complex_frames.T, n=N, axis=1) * w
    total = (t - 1) * hop + N
    out = np.zeros(total)
    norm = np.zeros(total)
    for i in range(t):
        out[i * hop:i * hop + N] += frames[i]
        norm[i * hop:i * hop + N] += w * w
    out = np.divide(out, norm, out=np.zeros_like(out), where=norm > 1e-10)
    half = N // 2
    return Signal(out[half:half + spec.length], spec.sample_rate)


def reattach_phase(magnitude, reference: Spectrogram) -> Spectrogram:
    """Complex spectrogram with the given non-DC magnitudes and the phase of ``reference``.

    The DC row is copied from ``reference``. Bins where the reference is zero
    get phase 0.
    """
    magnitude = np.asarray(magnitude, dtype=float)
    ref = reference.complex_frames[1:]
    if magnitude.shape != ref.shape:
        raise DimensionMismatch(f"magnitude {magnitude.shape} vs reference {ref.shape}")
    modulus = np.abs(ref)
    # ref * (mag / |ref|) keeps mag == |ref| bit-exact
    ratio = np.divide(magnitude, modulus, out=np.zeros_like(magnitude), where=modulus > 0)
    body = np.where(modulus > 0, ref * ratio, magnitude)
    frames = np.vstack([reference.dc_row[None, :], body])
    return Spectrogram(frames, reference.sample_rate, reference.window_size,
                       reference.hop_size, reference.length)
