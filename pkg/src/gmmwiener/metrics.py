"""Objective evaluation: SNR mixing, global and segmental SNR, and STOI."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .dsp import AudioSignal, resample
from .errors import DataError

SEGSNR_FRAME_SECONDS = 0.02
SEGSNR_MIN_DB = -10.0
SEGSNR_MAX_DB = 35.0
SEGSNR_SILENCE_POWER = 1e-10
GLOBAL_SNR_CAP_DB = 99.0

# STOI constants (Taal et al. 2011)
STOI_FS = 10000
STOI_FRAME = 256
STOI_NFFT = 512
STOI_BANDS = 15
STOI_MIN_FREQ = 150.0
STOI_SEGMENT = 30
STOI_BETA_DB = -15.0
STOI_DYN_RANGE_DB = 40.0
_EPS = np.finfo(np.float64).eps


def _power(x: np.ndarray) -> float:
    return float(np.mean(x * x))


def _same_rate(a: AudioSignal, b: AudioSignal) -> None:
    if a.sample_rate != b.sample_rate:
        raise DataError(f"sample rates differ: {a.sample_rate} vs {b.sample_rate}")


def _same_length(a: AudioSignal, b: AudioSignal) -> None:
    _same_rate(a, b)
    if len(a) != len(b):
        raise DataError(f"signal lengths differ: {len(a)} vs {len(b)}")


def mix_at_snr(
    clean: AudioSignal, noise: AudioSignal, snr_db: float, offset: int = 0
) -> tuple[AudioSignal, AudioSignal]:
    """Add noise cropped at ``offset`` to ``clean`` so the full-signal SNR equals ``snr_db``."""
    _same_rate(clean, noise)
    n = len(clean)
    if offset < 0 or offset + n > len(noise):
        raise DataError(f"noise of {len(noise)} samples cannot cover {n} samples from offset {offset}")
    v = noise.samples[offset : offset + n]
    p_clean, p_noise = _power(clean.samples), _power(v)
    if p_clean <= 0 or p_noise <= 0:
        raise DataError("clean and noise signals must both have nonzero power")
    g = np.sqrt(p_clean / (p_noise * 10.0 ** (snr_db / 10.0)))
    scaled = g * v
    return AudioSignal(clean.samples + scaled, clean.sample_rate), AudioSignal(scaled, clean.sample_rate)


def global_snr(clean: AudioSignal, estimate: AudioSignal) -> float:
    _same_length(clean, estimate)
    err = clean.samples - estimate.samples
    num, den = float(np.sum(clean.samples**2)), float(np.sum(err**2))
    if den == 0:
        return GLOBAL_SNR_CAP_DB
    if num == 0:
        return -GLOBAL_SNR_CAP_DB
    return float(min(10.0 * np.log10(num / den), GLOBAL_SNR_CAP_DB))


def segmental_snr(clean: AudioSignal, estimate: AudioSignal) -> float:
    """Mean of per-frame SNRs over 20 ms frames, clamped to [-10, 35] dB; silent frames skipped."""
    _same_length(clean, estimate)
    L = int(round(SEGSNR_FRAME_SECONDS * clean.sample_rate))
    n = len(clean) // L
    if n == 0:
        raise DataError("signal shorter than one segmental-SNR frame")
    c = clean.samples[: n * L].reshape(n, L)
    e = estimate.samples[: n * L].reshape(n, L)
    sig = np.sum(c * c, axis=1)
    err = np.sum((c - e) ** 2, axis=1)
    active = sig / L >= SEGSNR_SILENCE_POWER
    if not np.any(active):
        raise DataError("clean signal has no active frames")
    sig, err = sig[active], err[active]
    with np.errstate(divide="ignore"):
        snr = np.where(err > 0, 10.0 * np.log10(sig / np.where(err > 0, err, 1.0)), SEGSNR_MAX_DB)
    return float(np.mean(np.clip(snr, SEGSNR_MIN_DB, SEGSNR_MAX_DB)))


# ---------------------------------------------------------------------------
# STOI
# ---------------------------------------------------------------------------


def third_octave_matrix(fs=STOI_FS, nfft=STOI_NFFT, num_bands=STOI_BANDS, min_freq=STOI_MIN_FREQ):
    f = np.linspace(0, fs, nfft + 1)[: nfft // 2 + 1]
    k = np.arange(num_bands)
    low = min_freq * 2.0 ** ((2 * k - 1) / 6)
    high = min_freq * 2.0 ** ((2 * k + 1) / 6)
    obm = np.zeros((num_bands, f.size))
    for i in range(num_bands):
        lo = np.argmin((f - low[i]) ** 2)
        hi = np.argmin((f - high[i]) ** 2)
        obm[i, lo:hi] = 1.0
    return obm


def _stoi_window(n=STOI_FRAME):
    return np.hanning(n + 2)[1:-1]


def _frames(x, n, hop):
    # the reference framing stops one hop short: a final frame ending exactly at len(x) is dropped
    starts = np.arange(0, len(x) - n, hop)
    return x[starts[:, None] + np.arange(n)[None, :]]


def _remove_silent_frames(x, y, dyn_range=STOI_DYN_RANGE_DB, n=STOI_FRAME, hop=STOI_FRAME // 2):
    w = _stoi_window(n)
    xf = _frames(x, n, hop) * w
    yf = _frames(y, n, hop) * w
    energy = 20.0 * np.log10(np.linalg.norm(xf, axis=1) + _EPS)
    keep = energy > np.max(energy) - dyn_range
    xf, yf = xf[keep], yf[keep]
    count = xf.shape[0]
    length = (count - 1) * hop + n if count else 0
    xs, ys = np.zeros(length), np.zeros(length)
    for i in range(count):
        xs[i * hop : i * hop + n] += xf[i]
        ys[i * hop : i * hop + n] += yf[i]
    return xs, ys


def _band_envelopes(x, obm):
    frames = _frames(x, STOI_FRAME, STOI_FRAME // 2) * _stoi_window()
    spec = np.fft.rfft(frames, n=STOI_NFFT, axis=1)
    return np.sqrt(obm @ (np.abs(spec) ** 2).T)  # (bands, frames)


def stoi_band_scores(clean: AudioSignal, estimate: AudioSignal) -> np.ndarray:
    """Per one-third-octave band intermediate intelligibility, averaged over segments."""
    _same_length(clean, estimate)
    x = resample(clean, STOI_FS).samples
    y = resample(estimate, STOI_FS).samples
    x, y = _remove_silent_frames(x, y)

    if len(x) < STOI_FRAME:
        raise DataError("signal too short (or silent) for STOI")
    obm = third_octave_matrix()
    X = _band_envelopes(x, obm)
    Y = _band_envelopes(y, obm)
    n_frames = X.shape[1]
    if n_frames < STOI_SEGMENT:
        raise DataError(
            f"STOI needs at least {STOI_SEGMENT} active frames (384 ms); got {n_frames}"
        )

    clip = 10.0 ** (-STOI_BETA_DB / 20.0)
    total = np.zeros(X.shape[0])
    for m in range(STOI_SEGMENT, n_frames + 1):
        xs = X[:, m - STOI_SEGMENT : m]
        ys = Y[:, m - STOI_SEGMENT : m]
        alpha = np.linalg.norm(xs, axis=1, keepdims=True) / (
            np.linalg.norm(ys, axis=1, keepdims=True) + _EPS
        )
        yp = np.minimum(ys * alpha, xs * (1.0 + clip))
        xc = xs - xs.mean(axis=1, keepdims=True)
        yc = yp - yp.mean(axis=1, keepdims=True)
        xc /= np.linalg.norm(xc, axis=1, keepdims=True) + _EPS
        yc /= np.linalg.norm(yc, axis=1, keepdims=True) + _EPS
        total += np.sum(xc * yc, axis=1)
    return total / (n_frames - STOI_SEGMENT + 1)


def compute_stoi(clean: AudioSignal, estimate: AudioSignal) -> float:
    """Short-time objective intelligibility of ``estimate`` against ``clean``, in [0, 1]."""
    return float(np.mean(stoi_band_scores(clean, estimate)))


# ---------------------------------------------------------------------------
# reports
# ---------------------------------------------------------------------------


@dataclass
class EvalReport:
    stoi: float
    seg_snr_db: float
    global_snr_db: float
    per_stage: dict[int, "EvalReport"] = field(default_factory=dict)
    label: str = ""

    def __post_init__(self):
        vals = (self.stoi, self.seg_snr_db, self.global_snr_db)
        if not all(np.isfinite(v) for v in vals):
            raise DataError("evaluation produced non-finite metrics")

    FIELDS = ("label", "stoi", "seg_snr_db", "global_snr_db")

    def csv_header(self) -> list[str]:
        cols = list(self.FIELDS)
        for i in sorted(self.per_stage):
            cols += [f"stage{i}_stoi", f"stage{i}_seg_snr_db", f"stage{i}_global_snr_db"]
        return cols

    def csv_row(self) -> list[str]:
        row = [self.label, repr(self.stoi), repr(self.seg_snr_db), repr(self.global_snr_db)]
        for i in sorted(self.per_stage):
            s = self.per_stage[i]
            row += [repr(s.stoi), repr(s.seg_snr_db), repr(s.global_snr_db)]
        return row

    def to_csv(self, header: bool = True) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        if header:
            w.writerow(self.csv_header())
        w.writerow(self.csv_row())
        return buf.getvalue()

    def text(self) -> str:
        lines = [
            f"STOI           {100 * self.stoi:7.2f} %",
            f"segmental SNR  {self.seg_snr_db:7.2f} dB",
            f"global SNR     {self.global_snr_db:7.2f} dB",
        ]
        for i in sorted(self.per_stage):
            s = self.per_stage[i]
            lines.append(
                f"stage {i}: STOI {100 * s.stoi:6.2f} %  segSNR {s.seg_snr_db:6.2f} dB"
                f"  SNR {s.global_snr_db:6.2f} dB"
            )
        return "\n".join(lines)


def evaluate(clean: AudioSignal, estimate: AudioSignal, label: str = "") -> EvalReport:
    return EvalReport(
        stoi=compute_stoi(clean, estimate),
        seg_snr_db=segmental_snr(clean, estimate),
        global_snr_db=global_snr(clean, estimate),
        label=label,
    )
