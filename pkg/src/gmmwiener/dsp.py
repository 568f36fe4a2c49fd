"""Signal substrate: WAV I/O, resampling, STFT/iSTFT and periodogram PSDs."""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
from scipy.io import wavfile
from scipy.signal import firwin, resample_poly

from .errors import DataError, UnsupportedFormatError

PCM16_SCALE = 32768.0

# Windowed-sinc resampler: taps per polyphase branch and Kaiser shape.
RESAMPLE_TAPS_PER_PHASE = 64
RESAMPLE_KAISER_BETA = 8.6


def _frozen(a: np.ndarray) -> np.ndarray:
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class AudioSignal:
    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        x = np.array(self.samples, dtype=np.float64)
        if x.ndim != 1:
            raise DataError(f"expected a mono 1-D signal, got shape {x.shape}")
        if not np.all(np.isfinite(x)):
            raise DataError("signal contains NaN or Inf samples")
        if int(self.sample_rate) != self.sample_rate or self.sample_rate <= 0:
            raise DataError(f"sample rate must be a positive integer, got {self.sample_rate}")
        object.__setattr__(self, "samples", _frozen(x))
        object.__setattr__(self, "sample_rate", int(self.sample_rate))

    def __len__(self) -> int:
        return self.samples.shape[0]

    @property
    def duration(self) -> float:
        return len(self) / self.sample_rate


@dataclass(frozen=True)
class StftConfig:
    """Analysis parameters. Defaults are 20 ms / 512-point at 8 kHz."""

    window_length: int = 160
    fft_size: int = 512
    hop: int | None = None
    window: str = "hann"

    def __post_init__(self):
        if self.hop is None:
            object.__setattr__(self, "hop", self.window_length // 2)
        if self.window_length <= 0 or self.window_length % 2:
            raise ValueError("window_length must be a positive even number")
        if 2 * self.hop != self.window_length:
            raise ValueError("hop must be exactly window_length / 2 (50% overlap)")
        if self.fft_size < self.window_length:
            raise ValueError("fft_size must be >= window_length")
        if self.window != "hann":
            raise ValueError(f"unsupported window {self.window!r}")

    @classmethod
    def for_rate(cls, sample_rate: int, window_ms: float = 20.0, fft_size: int = 512) -> "StftConfig":
        n = int(round(sample_rate * window_ms / 1000.0))
        n += n % 2
        return cls(window_length=n, fft_size=fft_size)

    @property
    def num_bins(self) -> int:
        return self.fft_size // 2 + 1

    def analysis_window(self) -> np.ndarray:
        # periodic (DFT-even) Hann
        n = np.arange(self.window_length)
        return 0.5 - 0.5 * np.cos(2.0 * np.pi * n / self.window_length)

    def num_frames(self, length: int) -> int:
        if length < self.window_length:
            raise DataError(
                f"signal of {length} samples is shorter than one window ({self.window_length})"
            )
        return (length - self.window_length) // self.hop + 1


@dataclass(frozen=True)
class SpectralFrames:
    """One-sided complex STFT, shape (F, T)."""

    data: np.ndarray
    config: StftConfig
    original_length: int
    sample_rate: int = 8000

    def __post_init__(self):
        d = np.array(self.data, dtype=np.complex128)
        if d.ndim != 2 or d.shape[0] != self.config.num_bins:
            raise DataError(
                f"expected {self.config.num_bins} frequency rows, got array of shape {d.shape}"
            )
        if not np.all(np.isfinite(d)):
            raise DataError("spectral frames contain non-finite entries")
        object.__setattr__(self, "data", _frozen(d))

    @property
    def num_bins(self) -> int:
        return self.data.shape[0]

    @property
    def num_frames(self) -> int:
        return self.data.shape[1]

    def with_data(self, data: np.ndarray) -> "SpectralFrames":
        return SpectralFrames(data, self.config, self.original_length, self.sample_rate)


@dataclass(frozen=True)
class PsdSequence:
    """Nonnegative power per bin and frame, shape (F, T)."""

    data: np.ndarray
    dropped: int = field(default=0, compare=False)

    def __post_init__(self):
        d = np.array(self.data, dtype=np.float64)
        if d.ndim != 2:
            raise DataError(f"PSD sequence must be 2-D, got shape {d.shape}")
        if not np.all(np.isfinite(d)):
            raise DataError("PSD sequence contains non-finite entries")
        if np.any(d < 0):
            raise DataError("PSD sequence contains negative power")
        object.__setattr__(self, "data", _frozen(d))

    @property
    def num_bins(self) -> int:
        return self.data.shape[0]

    @property
    def num_frames(self) -> int:
        return self.data.shape[1]


# ---------------------------------------------------------------------------
# WAV I/O
# ---------------------------------------------------------------------------


def load_wav(path: str | os.PathLike, downmix: bool = False) -> AudioSignal:
    """Read a 16-bit PCM or 32-bit float WAV file as a mono signal."""
    try:
        rate, data = wavfile.read(os.fspath(path))
    except FileNotFoundError:
        raise
    except ValueError as exc:
        msg = str(exc)
        if "Unsupported" in msg or "not understood" in msg:
            raise UnsupportedFormatError(f"{path}: {msg}") from exc
        raise DataError(f"{path}: corrupt or unreadable WAV ({msg})") from exc
    except Exception as exc:  # struct errors and friends on truncated headers
        raise DataError(f"{path}: corrupt or unreadable WAV ({exc})") from exc

    if data.dtype == np.int16:
        x = data.astype(np.float64) / PCM16_SCALE
    elif data.dtype == np.float32:
        x = data.astype(np.float64)
    else:
        raise UnsupportedFormatError(
            f"{path}: unsupported sample format {data.dtype}; need 16-bit PCM or 32-bit float"
        )

    if x.ndim == 2:
        if x.shape[1] == 1:
            x = x[:, 0]
        elif downmix:
            x = x.mean(axis=1)
        else:
            raise DataError(f"{path}: {x.shape[1]} channels; pass downmix=True to average them")
    return AudioSignal(x, int(rate))


def to_pcm16(samples: np.ndarray) -> np.ndarray:
    """Saturating conversion of [-1, 1] floats to int16."""
    scaled = np.round(np.asarray(samples, dtype=np.float64) * PCM16_SCALE)
    return np.clip(scaled, -32768, 32767).astype(np.int16)


def write_wav(path: str | os.PathLike, signal: AudioSignal) -> None:
    wavfile.write(os.fspath(path), signal.sample_rate, to_pcm16(signal.samples))


# ---------------------------------------------------------------------------
# Resampling
# ---------------------------------------------------------------------------


def _resampling_filter(up: int, down: int) -> np.ndarray:
    max_rate = max(up, down)
    half_len = RESAMPLE_TAPS_PER_PHASE * max_rate // 2
    return firwin(2 * half_len + 1, 1.0 / max_rate, window=("kaiser", RESAMPLE_KAISER_BETA))


def resample(x: AudioSignal, target_rate: int) -> AudioSignal:
    """Band-limited rational-ratio resampling (Kaiser windowed-sinc, polyphase)."""
    if target_rate <= 0:
        raise ValueError("target_rate must be positive")
    if target_rate == x.sample_rate:
        return x
    ratio = Fraction(int(target_rate), x.sample_rate)
    up, down = ratio.numerator, ratio.denominator
    y = resample_poly(x.samples, up, down, window=_resampling_filter(up, down))
    n_out = int(round(len(x) * target_rate / x.sample_rate))
    return AudioSignal(y[:n_out], int(target_rate))


# ---------------------------------------------------------------------------
# STFT
# ---------------------------------------------------------------------------


def _frame_matrix(samples: np.ndarray, cfg: StftConfig) -> np.ndarray:
    n_frames = cfg.num_frames(samples.shape[0])
    idx = np.arange(cfg.window_length)[:, None] + cfg.hop * np.arange(n_frames)[None, :]
    return samples[idx]


def stft(x: AudioSignal, cfg: StftConfig | None = None) -> SpectralFrames:
    """Hann-windowed, zero-padded one-sided STFT; no edge padding."""
    cfg = cfg or StftConfig()
    frames = _frame_matrix(x.samples, cfg) * cfg.analysis_window()[:, None]
    data = np.fft.rfft(frames, n=cfg.fft_size, axis=0)
    return SpectralFrames(data, cfg, len(x), x.sample_rate)


def istft(S: SpectralFrames) -> AudioSignal:
    """Weighted overlap-add inverse normalised by the summed squared window."""
    cfg = S.config
    win = cfg.analysis_window()
    n_frames = S.num_frames
    frames = np.fft.irfft(S.data, n=cfg.fft_size, axis=0)[: cfg.window_length] * win[:, None]

    span = (n_frames - 1) * cfg.hop + cfg.window_length
    out = np.zeros(max(span, S.original_length))
    norm = np.zeros_like(out)
    win_sq = win**2
    for t in range(n_frames):
        start = t * cfg.hop
        out[start : start + cfg.window_length] += frames[:, t]
        norm[start : start + cfg.window_length] += win_sq

    covered = norm > 1e-12
    out[covered] /= norm[covered]
    out[~covered] = 0.0
    return AudioSignal(out[: S.original_length], S.sample_rate)


def periodogram(S: SpectralFrames, smoothing: float = 0.0) -> PsdSequence:
    """Per-frame squared magnitude, optionally smoothed recursively over time."""
    if not 0.0 <= smoothing < 1.0:
        raise ValueError("smoothing factor must be in [0, 1)")
    power = S.data.real**2 + S.data.imag**2
    if smoothing > 0.0:
        power = smooth_psd(power, smoothing)
    return PsdSequence(power)


def smooth_psd(power: np.ndarray, smoothing: float) -> np.ndarray:
    out = np.empty_like(power)
    out[:, 0] = power[:, 0]
    for t in range(1, power.shape[1]):
        out[:, t] = smoothing * out[:, t - 1] + (1.0 - smoothing) * power[:, t]
    return out


def frame_energy(S: SpectralFrames) -> np.ndarray:
    """Time-domain energy of each windowed frame via Parseval on the one-sided spectrum."""
    power = S.data.real**2 + S.data.imag**2
    weights = np.full(S.num_bins, 2.0)
    weights[0] = 1.0
    if S.config.fft_size % 2 == 0:
        weights[-1] = 1.0
    return weights @ power / S.config.fft_size
