"""Multi-stage parametric Wiener filtering driven by GMM mean spectra.

Each frame's noisy periodogram is decomposed, by least squares, onto the speech
mean spectra plus the noise mean spectra assigned to the current stage. The
rectified coefficients rebuild speech and noise PSD estimates, which set a
parametric Wiener gain for that frame. Stages run in sequence, each one
re-estimating from the previous stage's output.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass, field

import numpy as np

from .dsp import SpectralFrames, istft, periodogram, stft
from .errors import DimensionMismatchError, InvariantViolation
from .gmm import GmmModel, mean_matrix

PINV_RCOND = 1e-10
RECTIFICATION_MODES = ("refit", "rescale")


@dataclass(frozen=True)
class EnhancerConfig:
    beta: float = 2.0
    gamma: float = 1.0
    num_stages: int = 2
    stage_energy_fraction: float = 0.5
    gain_floor: float = 0.0
    smoothing: float = 0.0
    faithful_restft: bool = False
    rectification: str = "refit"

    def __post_init__(self):
        if not self.beta >= 0:
            raise ValueError("beta must be >= 0")
        if not self.gamma > 0:
            raise ValueError("gamma must be > 0")
        if self.num_stages < 1:
            raise ValueError("num_stages must be >= 1")
        if not 0 < self.stage_energy_fraction <= 1:
            raise ValueError("stage_energy_fraction must be in (0, 1]")
        if not 0 <= self.gain_floor < 1:
            raise ValueError("gain_floor must be in [0, 1)")
        if not 0 <= self.smoothing < 1:
            raise ValueError("smoothing must be in [0, 1)")
        if self.rectification not in RECTIFICATION_MODES:
            raise ValueError(f"rectification must be one of {RECTIFICATION_MODES}")


@dataclass(frozen=True)
class StagePlan:
    partitions: tuple[tuple[int, ...], ...]
    ranking_keys: np.ndarray

    def __post_init__(self):
        parts = tuple(tuple(int(i) for i in p) for p in self.partitions)
        object.__setattr__(self, "partitions", parts)
        keys = np.asarray(self.ranking_keys, dtype=np.float64)
        object.__setattr__(self, "ranking_keys", keys)

        flat = [i for p in parts for i in p]
        if any(len(p) == 0 for p in parts):
            raise InvariantViolation("every stage needs at least one noise component")
        if len(flat) != len(set(flat)) or sorted(flat) != list(range(keys.size)):
            raise InvariantViolation("stage partitions must be disjoint and cover every component")
        for a, b in zip(parts, parts[1:]):
            if min(keys[list(a)]) < max(keys[list(b)]):
                raise InvariantViolation("earlier stages must hold higher-ranked components")

    @property
    def num_stages(self) -> int:
        return len(self.partitions)


@dataclass(frozen=True)
class CoefficientVector:
    speech: np.ndarray
    noise: np.ndarray

    @property
    def stacked(self) -> np.ndarray:
        return np.concatenate([self.speech, self.noise])


@dataclass
class StageOutput:
    index: int
    components: tuple[int, ...]
    frames: SpectralFrames
    gain: np.ndarray  # (F, T)
    speech_psd: np.ndarray
    noise_psd: np.ndarray


@dataclass
class EnhancementResult:
    frames: SpectralFrames
    plan: StagePlan
    stages: list[StageOutput] = field(default_factory=list)


# ---------------------------------------------------------------------------
# staging
# ---------------------------------------------------------------------------


def ranking_keys(noise_model: GmmModel) -> np.ndarray:
    """Prior-weighted mean energy of each noise component."""
    return noise_model.weights * noise_model.means.sum(axis=1)


def split_by_energy(keys: np.ndarray, num_stages: int, fraction: float = 0.5) -> tuple[tuple[int, ...], ...]:
    keys = np.asarray(keys, dtype=np.float64)
    K = keys.size
    if num_stages > K:
        raise ValueError(f"cannot split {K} noise components into {num_stages} stages")
    # stable sort on the negated key: ties keep ascending index order
    order = list(np.argsort(-keys, kind="stable"))
    parts = []
    remaining = order
    for stage in range(num_stages - 1):
        mass = keys[remaining]
        cumulative = np.cumsum(mass)
        target = fraction * cumulative[-1]
        n = int(np.searchsorted(cumulative, target * (1 - 1e-12), side="left")) + 1
        # leave at least one component for every later stage
        n = min(max(n, 1), len(remaining) - (num_stages - 1 - stage))
        parts.append(tuple(int(i) for i in remaining[:n]))
        remaining = remaining[n:]
    parts.append(tuple(int(i) for i in remaining))
    return tuple(parts)


def plan_stages(noise_model: GmmModel, cfg: EnhancerConfig) -> StagePlan:
    keys = ranking_keys(noise_model)
    return StagePlan(split_by_energy(keys, cfg.num_stages, cfg.stage_energy_fraction), keys)


# ---------------------------------------------------------------------------
# per-frame decomposition
# ---------------------------------------------------------------------------


def pseudo_inverse(U: np.ndarray, rcond: float = PINV_RCOND) -> np.ndarray:
    """Moore-Penrose inverse via SVD, dropping singular values below rcond * max."""
    u, s, vt = np.linalg.svd(U, full_matrices=False)
    keep = s > rcond * s[0] if s.size else s.astype(bool)
    inv_s = np.zeros_like(s)
    inv_s[keep] = 1.0 / s[keep]
    return (vt.T * inv_s) @ u.T


def _match_power(alpha: np.ndarray, U: np.ndarray, target: float) -> np.ndarray:
    recon = float(U.sum(axis=0) @ alpha)
    if recon <= 0:
        return np.zeros_like(alpha)
    return alpha * (target / recon)


def rectify(raw: np.ndarray, U: np.ndarray, target_power: np.ndarray) -> np.ndarray:
    """Zero negative coefficients and rescale the survivors to keep total power.

    ``raw`` is (K,) or (K, T); ``target_power`` the matching per-frame sum of the
    mixture periodogram. Columns with no negative entry are returned unchanged.
    """
    raw = np.asarray(raw, dtype=np.float64)
    squeeze = raw.ndim == 1
    A = raw[:, None] if squeeze else raw
    target = np.atleast_1d(np.asarray(target_power, dtype=np.float64))

    positive = np.maximum(A, 0.0)
    needs_fix = np.any(A < 0, axis=0)
    recon = U.sum(axis=0) @ positive
    scale = np.ones(A.shape[1])
    fix = needs_fix & (recon > 0)
    scale[fix] = target[fix] / recon[fix]
    scale[needs_fix & ~(recon > 0)] = 0.0
    out = positive * scale[None, :]
    return out[:, 0] if squeeze else out


class _ActiveSetSolver:
    """Pseudo-inverse re-solves over shrinking column subsets, cached by subset."""

    def __init__(self, U: np.ndarray):
        self.U = U
        self._cache: dict[bytes, np.ndarray] = {}

    def _pinv(self, active: np.ndarray) -> np.ndarray:
        key = active.tobytes()
        if key not in self._cache:
            self._cache[key] = pseudo_inverse(self.U[:, active])
        return self._cache[key]

    def refit(self, x: np.ndarray, raw: np.ndarray) -> np.ndarray:
        """Drop columns with negative coefficients and re-solve until none remain."""
        alpha = np.zeros_like(raw)
        active = raw > 0
        while np.any(active):
            a = self._pinv(active) @ x
            if np.all(a >= 0):
                alpha[active] = a
                break
            idx = np.flatnonzero(active)
            active[idx[a < 0]] = False
        return _match_power(alpha, self.U, float(x.sum()))


def rectify_refit(raw: np.ndarray, U: np.ndarray, psd: np.ndarray) -> np.ndarray:
    """Like :func:`rectify`, but survivors are re-solved on their own columns before the power match.

    A common rescale leaves the Wiener gain unchanged, so plain zeroing keeps the
    bias of the unconstrained fit; re-solving removes it.
    """
    raw = np.asarray(raw, dtype=np.float64)
    squeeze = raw.ndim == 1
    A = raw[:, None] if squeeze else raw
    P = np.asarray(psd, dtype=np.float64).reshape(U.shape[0], -1)
    out = A.copy()
    solver = _ActiveSetSolver(U)
    for t in np.flatnonzero(np.any(A < 0, axis=0)):
        out[:, t] = solver.refit(P[:, t], A[:, t])
    return out[:, 0] if squeeze else out


def _rectified(raw, U, psd, mode):
    if mode == "rescale":
        return rectify(raw, U, psd.sum(axis=0))
    return rectify_refit(raw, U, psd)


def _check_bases(frame_len: int, U_s: np.ndarray, U_v: np.ndarray) -> np.ndarray:
    U_s, U_v = np.atleast_2d(U_s), np.atleast_2d(U_v)
    if U_s.shape[0] != frame_len or U_v.shape[0] != frame_len:
        raise DimensionMismatchError(
            f"bases have {U_s.shape[0]} and {U_v.shape[0]} rows, frame has {frame_len} bins"
        )
    U = np.hstack([U_s, U_v])
    if U.shape[1] > frame_len:
        raise DimensionMismatchError(f"{U.shape[1]} basis columns exceed {frame_len} frequency bins")
    return U


def least_squares_coefficients(mixture_psd_frame, U_s, U_v) -> np.ndarray:
    """Unrectified minimum-norm least-squares coefficients."""
    x = np.asarray(mixture_psd_frame, dtype=np.float64)
    U = _check_bases(x.shape[0], U_s, U_v)
    return pseudo_inverse(U) @ x


def solve_coefficients(mixture_psd_frame, U_s, U_v, rectification: str = "refit") -> CoefficientVector:
    """Least-squares power coefficients of one frame, rectified to be nonnegative."""
    x = np.asarray(mixture_psd_frame, dtype=np.float64)
    U = _check_bases(x.shape[0], U_s, U_v)
    if rectification not in RECTIFICATION_MODES:
        raise ValueError(f"rectification must be one of {RECTIFICATION_MODES}")
    alpha = _rectified((pseudo_inverse(U) @ x)[:, None], U, x[:, None], rectification)[:, 0]
    ks = np.atleast_2d(U_s).shape[1]
    return CoefficientVector(alpha[:ks], alpha[ks:])


def reconstruct_psds(coeffs: CoefficientVector, U_s, U_v) -> tuple[np.ndarray, np.ndarray]:
    if np.any(coeffs.speech < 0) or np.any(coeffs.noise < 0):
        raise InvariantViolation("coefficients must be rectified before reconstruction")
    return np.atleast_2d(U_s) @ coeffs.speech, np.atleast_2d(U_v) @ coeffs.noise


# ---------------------------------------------------------------------------
# gains
# ---------------------------------------------------------------------------


def wiener_gain(speech_psd, noise_psd) -> np.ndarray:
    """Classic Wiener gain; 0/0 bins give 0."""
    s = np.asarray(speech_psd, dtype=np.float64)
    v = np.asarray(noise_psd, dtype=np.float64)
    den = s + v
    out = np.zeros(np.broadcast(s, v).shape)
    np.divide(s, den, out=out, where=den > 0)
    return out


def parametric_wiener_gain(speech_psd, noise_psd, cfg: EnhancerConfig) -> np.ndarray:
    """(S / (S + beta V)) ** gamma, floored at ``cfg.gain_floor``; 0/0 bins take the floor."""
    s = np.asarray(speech_psd, dtype=np.float64)
    v = np.asarray(noise_psd, dtype=np.float64)
    shape = np.broadcast(s, v).shape
    if cfg.beta == 0:
        # no noise term at all: the filter is the identity
        return np.ones(shape)
    den = s + cfg.beta * v
    defined = den > 0
    ratio = np.zeros(shape)
    np.divide(s, den, out=ratio, where=defined)
    if cfg.gamma != 1:
        ratio = ratio**cfg.gamma
    ratio[~defined] = cfg.gain_floor
    return np.maximum(ratio, cfg.gain_floor)


# ---------------------------------------------------------------------------
# stages
# ---------------------------------------------------------------------------


def _check_models(M: SpectralFrames, *models: GmmModel) -> None:
    for m in models:
        if m.num_bins != M.num_bins:
            raise DimensionMismatchError(
                f"{m.kind} model has {m.num_bins} bins but the signal has {M.num_bins}"
            )
        if m.sample_rate != M.sample_rate:
            raise DimensionMismatchError(
                f"{m.kind} model was trained at {m.sample_rate} Hz, signal is {M.sample_rate} Hz"
            )


def enhance_stage(
    M: SpectralFrames,
    speech_model: GmmModel,
    noise_model: GmmModel,
    stage_components,
    cfg: EnhancerConfig,
    index: int = 1,
) -> StageOutput:
    _check_models(M, speech_model, noise_model)
    components = tuple(int(i) for i in stage_components)
    U_s = mean_matrix(speech_model)
    U_v = mean_matrix(noise_model, components)
    U = _check_bases(M.num_bins, U_s, U_v)

    psd = periodogram(M, cfg.smoothing).data
    alpha = _rectified(pseudo_inverse(U) @ psd, U, psd, cfg.rectification)
    ks = U_s.shape[1]
    speech_psd = U_s @ alpha[:ks]
    noise_psd = U_v @ alpha[ks:]

    gain = parametric_wiener_gain(speech_psd, noise_psd, cfg)
    silent = ~np.any(psd > 0, axis=0)
    gain[:, silent] = 1.0
    return StageOutput(index, components, M.with_data(gain * M.data), gain, speech_psd, noise_psd)


def enhance(
    M: SpectralFrames,
    speech_model: GmmModel,
    noise_model: GmmModel,
    cfg: EnhancerConfig | None = None,
) -> EnhancementResult:
    cfg = cfg or EnhancerConfig()
    _check_models(M, speech_model, noise_model)
    plan = plan_stages(noise_model, cfg)
    stages: list[StageOutput] = []
    current = M
    for i, components in enumerate(plan.partitions, start=1):
        if i > 1 and cfg.faithful_restft:
            current = stft(istft(current), current.config)
        out = enhance_stage(current, speech_model, noise_model, components, cfg, index=i)
        stages.append(out)
        current = out.frames
    return EnhancementResult(current, plan, stages)


# ---------------------------------------------------------------------------
# diagnostics
# ---------------------------------------------------------------------------


def write_matrix_csv(path, matrix: np.ndarray, sample_rate: int, fft_size: int, hop: int) -> None:
    """F x T matrix with a frequency (Hz) column and frame-time (s) header."""
    matrix = np.asarray(matrix)
    freqs = np.arange(matrix.shape[0]) * sample_rate / fft_size
    times = np.arange(matrix.shape[1]) * hop / sample_rate
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["freq_hz"] + [repr(float(t)) for t in times])
        for f, row in zip(freqs, matrix):
            w.writerow([repr(float(f))] + [repr(float(v)) for v in row])


def export_diagnostics(result: EnhancementResult, directory) -> list[str]:
    os.makedirs(directory, exist_ok=True)
    written = []
    for st in result.stages:
        cfg = st.frames.config
        for name, mat in (("gain", st.gain), ("speech_psd", st.speech_psd), ("noise_psd", st.noise_psd)):
            path = os.path.join(directory, f"stage{st.index}_{name}.csv")
            write_matrix_csv(path, mat, st.frames.sample_rate, cfg.fft_size, cfg.hop)
            written.append(path)
    return written
