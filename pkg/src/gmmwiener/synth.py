"""Offline synthetic corpus: speech-like utterances and two noise families.

Everything is generated from an explicit seed so corpora are reproducible.
"""

from __future__ import annotations

import os

import numpy as np
from scipy.signal import butter, sosfilt

from .dsp import AudioSignal, write_wav

# (F1, F2, F3) in Hz for a handful of vowel-like timbres
VOWEL_FORMANTS = (
    (730, 1090, 2440),
    (270, 2290, 3010),
    (530, 1840, 2480),
    (660, 1720, 2410),
    (300, 870, 2240),
    (570, 840, 2410),
    (440, 1020, 2240),
    (490, 1350, 1690),
)
FORMANT_BANDWIDTHS = (90.0, 110.0, 170.0)
TILT_CORNER_HZ = 400.0


def _formant_envelope(freq: np.ndarray, formants) -> np.ndarray:
    env = np.zeros_like(freq)
    for fc, bw, gain in zip(formants, FORMANT_BANDWIDTHS, (1.0, 0.6, 0.35)):
        env += gain / (1.0 + ((freq - fc) / bw) ** 2)
    # net source-plus-radiation tilt of roughly -6 dB/octave
    return env / (1.0 + freq / TILT_CORNER_HZ)


def _ramp(n: int, ramp: int) -> np.ndarray:
    env = np.ones(n)
    ramp = min(ramp, n // 2)
    if ramp > 0:
        r = 0.5 - 0.5 * np.cos(np.pi * np.arange(ramp) / ramp)
        env[:ramp] = r
        env[n - ramp :] = r[::-1]
    return env


def _voiced(n: int, rate: int, rng: np.random.Generator) -> np.ndarray:
    f0_start = rng.uniform(95.0, 210.0)
    f0_end = f0_start * rng.uniform(0.8, 1.2)
    f0 = np.linspace(f0_start, f0_end, n)
    phase = 2.0 * np.pi * np.cumsum(f0) / rate
    formants = VOWEL_FORMANTS[rng.integers(len(VOWEL_FORMANTS))]
    # glide towards a second vowel for some diphthong-like motion
    target = VOWEL_FORMANTS[rng.integers(len(VOWEL_FORMANTS))]
    glide = np.linspace(0.0, rng.uniform(0.0, 1.0), n)
    x = np.zeros(n)
    n_harm = int(0.5 * rate / f0.min())
    for h in range(1, n_harm + 1):
        fh = h * f0
        if fh.max() >= 0.48 * rate:
            break
        env = (1 - glide) * _formant_envelope(fh, formants) + glide * _formant_envelope(fh, target)
        x += env * np.sin(h * phase)
    return x


def _fricative(n: int, rate: int, rng: np.random.Generator) -> np.ndarray:
    lo = rng.uniform(1800.0, 2600.0)
    hi = min(lo + rng.uniform(800.0, 1400.0), 0.47 * rate)
    sos = butter(4, [lo, hi], btype="bandpass", fs=rate, output="sos")
    return sosfilt(sos, rng.standard_normal(n)) * 0.5


def speech_like(duration: float, rate: int = 8000, seed: int = 0, peak: float = 0.5) -> AudioSignal:
    """Syllabic harmonic signal with formants, pitch glides, fricatives and pauses."""
    rng = np.random.default_rng(seed)
    total = int(round(duration * rate))
    out = np.zeros(total)
    pos = int(rng.uniform(0.05, 0.15) * rate)
    ramp = int(0.015 * rate)
    while pos < total:
        if rng.random() < 0.35:
            n = int(rng.uniform(0.05, 0.11) * rate)
            seg = _fricative(n, rate, rng)
        else:
            n = int(rng.uniform(0.12, 0.32) * rate)
            seg = _voiced(n, rate, rng)
            seg /= np.max(np.abs(seg)) + 1e-12
        seg = seg * _ramp(n, ramp) * rng.uniform(0.3, 1.0)
        end = min(pos + n, total)
        out[pos:end] += seg[: end - pos]
        pos = end + int(rng.uniform(0.03, 0.2) * rate)
    m = np.max(np.abs(out))
    if m > 0:
        out *= peak / m
    return AudioSignal(out, rate)


def engine_noise(
    duration: float, rate: int = 8000, seed: int = 0, fundamental: float = 55.0, harmonics: int = 8
) -> AudioSignal:
    """Harmonic engine-like hum: harmonics of ``fundamental`` under slow amplitude modulation."""
    rng = np.random.default_rng(seed)
    n = int(round(duration * rate))
    t = np.arange(n) / rate
    x = np.zeros(n)
    for h in range(1, harmonics + 1):
        amp = rng.uniform(0.5, 1.0) / np.sqrt(h)
        x += amp * np.sin(2 * np.pi * fundamental * h * t + rng.uniform(0, 2 * np.pi))
    am = 1.0 + 0.5 * np.sin(2 * np.pi * rng.uniform(0.3, 1.0) * t + rng.uniform(0, 2 * np.pi))
    x *= am
    return AudioSignal(0.3 * x / np.max(np.abs(x)), rate)


def babble_noise(duration: float, rate: int = 8000, seed: int = 0, bands: int = 6) -> AudioSignal:
    """Sum of independently band-filtered noise bands, each with its own slow envelope."""
    rng = np.random.default_rng(seed)
    n = int(round(duration * rate))
    x = np.zeros(n)
    env_sos = butter(2, 4.0, btype="low", fs=rate, output="sos")
    for _ in range(bands):
        fc = rng.uniform(250.0, 3000.0)
        bw = fc * rng.uniform(0.3, 0.7)
        lo, hi = max(fc - bw / 2, 60.0), min(fc + bw / 2, 0.47 * rate)
        sos = butter(3, [lo, hi], btype="bandpass", fs=rate, output="sos")
        band = sosfilt(sos, rng.standard_normal(n))
        env = np.abs(sosfilt(env_sos, rng.standard_normal(n)))
        env /= np.max(env) + 1e-12
        x += band * (0.3 + env)
    return AudioSignal(0.3 * x / np.max(np.abs(x)), rate)


NOISE_GENERATORS = {"engine": engine_noise, "babble": babble_noise}


def write_corpus(
    directory,
    kind: str,
    count: int,
    duration: float,
    rate: int = 8000,
    seed: int = 0,
) -> list[str]:
    """Write ``count`` files of ``kind`` ('speech', 'engine' or 'babble') into ``directory``."""
    os.makedirs(directory, exist_ok=True)
    gen = speech_like if kind == "speech" else NOISE_GENERATORS[kind]
    paths = []
    for i in range(count):
        path = os.path.join(directory, f"{kind}_{i:03d}.wav")
        write_wav(path, gen(duration, rate=rate, seed=seed + i))
        paths.append(path)
    return paths
