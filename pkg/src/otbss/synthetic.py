"""Synthetic harmonic "voices" for separation experiments."""

from __future__ import annotations

import numpy as np

from .audio import Signal

VOICE_A = dict(fundamentals=(200.0, 300.0), band=(0.0, 1000.0))
VOICE_B = dict(fundamentals=(1100.0, 1700.0), band=(1000.0, 8000.0))


def harmonic_voice(fundamentals, band, duration: float, sample_rate: int = 16000,
                   seed: int = 0, note_length: float = 0.25, rms: float = 0.1) -> Signal:
    """Sequence of notes, each a harmonic comb on one of ``fundamentals``.

    Only partials inside ``band = (lo, hi)`` are kept, so voices built on
    disjoint bands have disjoint spectral supports up to window leakage.
    Partial ``r`` has amplitude ``1 / r`` and a random phase.
    """
    rng = np.random.default_rng(seed)
    n = int(round(duration * sample_rate))
    note_n = max(1, int(round(note_length * sample_rate)))
    lo, hi = band
    t = np.arange(note_n) / sample_rate
    ramp = min(note_n // 2, int(0.01 * sample_rate))
    env = np.ones(note_n)
    if ramp:
        fade = 0.5 - 0.5 * np.cos(np.pi * np.arange(ramp) / ramp)
        env[:ramp] = fade
        env[-ramp:] = fade[::-1]
    out = np.zeros(n)
    for start in range(0, n, note_n):
        f0 = fundamentals[rng.integers(len(fundamentals))]
        note = np.zeros(note_n)
        r = 1
        while r * f0 < min(hi, sample_rate / 2):
            if r * f0 >= lo:
                note += np.sin(2 * np.pi * r * f0 * t + rng.uniform(0, 2 * np.pi)) / r
            r += 1
        stop = min(n, start + note_n)
        out[start:stop] = (note * env)[:stop - start]
    scale = np.sqrt(np.mean(out ** 2))
    if scale > 0:
        out *= rms / scale
    return Signal(out, sample_rate)


def voice_pair(duration: float, sample_rate: int = 16000, seed: int = 0):
    """The two standard voices: low comb (200/300 Hz) and high comb (1.1/1.7 kHz)."""
    a = harmonic_voice(**VOICE_A, duration=duration, sample_rate=sample_rate, seed=seed)
    b = harmonic_voice(**VOICE_B, duration=duration, sample_rate=sample_rate, seed=seed + 1)
    return a, b


def mix(*signals: Signal) -> Signal:
    rate = signals[0].sample_rate
    if any(s.sample_rate != rate for s in signals):
        raise ValueError("signals have different sample rates")
    n = min(len(s) for s in signals)
    return Signal(sum(s.samples[:n] for s in signals), rate)
