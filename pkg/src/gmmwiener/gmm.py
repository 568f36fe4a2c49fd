"""Diagonal-covariance Gaussian mixture models of normalised PSD frames."""

from __future__ import annotations

import json
import os
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .dsp import PsdSequence
from .errors import DataError, DimensionMismatchError, InvariantViolation, ModelVersionError

MODEL_FORMAT_VERSION = 1
KINDS = ("speech", "noise", "mixture")
NORMALIZATIONS = ("per-frame", "global")
LOG_2PI = np.log(2.0 * np.pi)


@dataclass(frozen=True)
class GmmModel:
    weights: np.ndarray  # (K,)
    means: np.ndarray  # (K, F)
    variances: np.ndarray  # (K, F)
    kind: str = "speech"
    normalization: str = "per-frame"
    sample_rate: int = 8000
    fft_size: int = 512
    variance_floor: float = 1e-6

    def __post_init__(self):
        for name in ("weights", "means", "variances"):
            a = np.array(getattr(self, name), dtype=np.float64)
            a.flags.writeable = False
            object.__setattr__(self, name, a)
        self.validate()

    def validate(self) -> None:
        w, mu, var = self.weights, self.means, self.variances
        if self.kind not in KINDS:
            raise InvariantViolation(f"unknown model kind {self.kind!r}")
        if self.normalization not in NORMALIZATIONS:
            raise InvariantViolation(f"unknown normalization {self.normalization!r}")
        if w.ndim != 1 or w.size < 1:
            raise InvariantViolation("weights must be a non-empty vector")
        if mu.ndim != 2 or mu.shape != var.shape or mu.shape[0] != w.size:
            raise InvariantViolation(
                f"inconsistent shapes: weights {w.shape}, means {mu.shape}, variances {var.shape}"
            )
        if mu.shape[1] != self.fft_size // 2 + 1:
            raise InvariantViolation(
                f"mean vectors have length {mu.shape[1]}, expected {self.fft_size // 2 + 1}"
            )
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(mu)) and np.all(np.isfinite(var))):
            raise InvariantViolation("model parameters contain non-finite values")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-9:
            raise InvariantViolation(f"weights must be a probability vector (sum={w.sum()!r})")
        if np.any(mu < 0):
            raise InvariantViolation("mean entries must be nonnegative")
        if not self.variance_floor > 0:
            raise InvariantViolation("variance floor must be positive")
        if np.any(var < self.variance_floor):
            raise InvariantViolation("variance entries below the variance floor")

    @property
    def num_components(self) -> int:
        return self.weights.size

    @property
    def num_bins(self) -> int:
        return self.means.shape[1]

    def component_energies(self) -> np.ndarray:
        return self.means.sum(axis=1)

    def __eq__(self, other):
        if not isinstance(other, GmmModel):
            return NotImplemented
        return (
            (self.kind, self.normalization, self.sample_rate, self.fft_size, self.variance_floor)
            == (other.kind, other.normalization, other.sample_rate, other.fft_size, other.variance_floor)
            and np.array_equal(self.weights, other.weights)
            and np.array_equal(self.means, other.means)
            and np.array_equal(self.variances, other.variances)
        )

    __hash__ = None


@dataclass(frozen=True)
class TrainingOptions:
    num_components: int = 6
    max_iterations: int = 200
    tolerance: float = 1e-6
    seed: int = 0
    variance_floor: float = 1e-6

    def __post_init__(self):
        if self.num_components < 1:
            raise ValueError("num_components must be >= 1")
        if not self.tolerance > 0:
            raise ValueError("tolerance must be positive")
        if not self.variance_floor > 0:
            raise ValueError("variance_floor must be positive")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")


@dataclass
class FitResult:
    model: GmmModel
    log_likelihood: list[float] = field(default_factory=list)
    iterations: int = 0
    converged: bool = False
    requested_components: int = 0

    @property
    def final_log_likelihood(self) -> float:
        return self.log_likelihood[-1]


def normalize_psd_frames(P: PsdSequence, mode: str = "per-frame") -> PsdSequence:
    """Scale frames to unit energy; all-zero frames are dropped and counted."""
    if mode not in NORMALIZATIONS:
        raise ValueError(f"mode must be one of {NORMALIZATIONS}")
    if P.num_frames == 0:
        raise DataError("cannot normalise an empty PSD sequence")
    energy = P.data.sum(axis=0)
    keep = energy > 0
    if not np.any(keep):
        raise DataError("every frame of the PSD sequence is zero")
    data, energy = P.data[:, keep], energy[keep]
    if mode == "per-frame":
        data = data / energy[None, :]
    else:
        data = data / energy.mean()
    return PsdSequence(data, dropped=int(np.count_nonzero(~keep)))


# ---------------------------------------------------------------------------
# EM
# ---------------------------------------------------------------------------


def _component_log_pdf(X: np.ndarray, means: np.ndarray, variances: np.ndarray) -> np.ndarray:
    """(N, K) matrix of log N(x_n; mu_k, diag(var_k))."""
    N, K = X.shape[0], means.shape[0]
    out = np.empty((N, K))
    for k in range(K):
        diff = X - means[k]
        out[:, k] = -0.5 * (
            np.sum(LOG_2PI + np.log(variances[k])) + np.sum(diff * diff / variances[k], axis=1)
        )
    return out


def _weighted_log_pdf(X, weights, means, variances):
    with np.errstate(divide="ignore"):
        log_w = np.log(weights)
    return _component_log_pdf(X, means, variances) + log_w[None, :]


def _kmeans_pp(X: np.ndarray, K: int, rng: np.random.Generator) -> np.ndarray:
    centers = [X[rng.integers(X.shape[0])]]
    d2 = np.sum((X - centers[0]) ** 2, axis=1)
    for _ in range(1, K):
        total = d2.sum()
        if total <= 0:
            idx = rng.integers(X.shape[0])
        else:
            idx = rng.choice(X.shape[0], p=d2 / total)
        centers.append(X[idx])
        d2 = np.minimum(d2, np.sum((X - X[idx]) ** 2, axis=1))
    return np.array(centers)


def _assign(X: np.ndarray, centers: np.ndarray) -> np.ndarray:
    d2 = np.stack([np.sum((X - c) ** 2, axis=1) for c in centers], axis=1)
    return np.argmin(d2, axis=1)


def _rescue_empty(X: np.ndarray, labels: np.ndarray, K: int) -> np.ndarray:
    """Give each empty cluster the farthest frame of the most spread-out cluster."""
    labels = labels.copy()
    for _ in range(K):
        counts = np.bincount(labels, minlength=K)
        empty = np.flatnonzero(counts == 0)
        if empty.size == 0:
            break
        spread = np.full(K, -1.0)
        for k in np.flatnonzero(counts > 1):
            spread[k] = X[labels == k].var(axis=0).sum()
        donor = int(np.argmax(spread))
        members = np.flatnonzero(labels == donor)
        centre = X[members].mean(axis=0)
        far = members[np.argmax(np.sum((X[members] - centre) ** 2, axis=1))]
        labels[far] = empty[0]
    return labels


def _initial_parameters(X, K, rng, floor):
    labels = _assign(X, _kmeans_pp(X, K, rng))
    labels = _rescue_empty(X, labels, K)
    # one k-means refinement pass
    centers = np.stack([X[labels == k].mean(axis=0) for k in range(K)])
    labels = _rescue_empty(X, _assign(X, centers), K)

    weights = np.bincount(labels, minlength=K) / X.shape[0]
    means = np.stack([X[labels == k].mean(axis=0) for k in range(K)])
    variances = np.stack([X[labels == k].var(axis=0) for k in range(K)])
    return weights, means, np.maximum(variances, floor)


@dataclass
class EmResult:
    weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray
    log_likelihood: list[float]
    iterations: int
    converged: bool


def em_fit(X: np.ndarray, opts: TrainingOptions) -> EmResult:
    """EM for a diagonal GMM on the rows of ``X`` (N, D); k-means++ initialisation."""
    X = np.ascontiguousarray(X, dtype=np.float64)
    N = X.shape[0]
    floor = opts.variance_floor

    K = opts.num_components
    n_distinct = np.unique(X, axis=0).shape[0]
    if n_distinct < K:
        warnings.warn(
            f"only {n_distinct} distinct frames for {K} components; reducing to {n_distinct}",
            RuntimeWarning,
            stacklevel=3,
        )
        K = n_distinct

    rng = np.random.default_rng(opts.seed)
    weights, means, variances = _initial_parameters(X, K, rng, floor)

    history: list[float] = []
    converged = False
    iterations = 0
    previous = None
    for iterations in range(1, opts.max_iterations + 1):
        log_p = _weighted_log_pdf(X, weights, means, variances)
        log_norm = logsumexp(log_p, axis=1)
        ll = float(np.sum(log_norm))
        if history and ll < history[-1]:
            # EM cannot lose likelihood; a drop is summation rounding at the optimum,
            # so keep the better parameters and stop
            if history[-1] - ll > 1e-9 * abs(history[-1]):
                warnings.warn(f"log-likelihood fell by {history[-1] - ll:.3g}", RuntimeWarning, stacklevel=2)
            weights, means, variances = previous
            converged = True
            break
        if history and abs(ll - history[-1]) < opts.tolerance * abs(history[-1]):
            history.append(ll)
            converged = True
            break
        history.append(ll)
        previous = (weights, means, variances)

        resp = np.exp(log_p - log_norm[:, None])
        nk = resp.sum(axis=0)
        weights = nk / nk.sum()
        new_means = means.copy()
        new_vars = variances.copy()
        for k in range(K):
            # a starved component keeps its previous shape; its weight carries the collapse
            if nk[k] <= 1e-10 * N:
                continue
            mu = resp[:, k] @ X / nk[k]
            diff = X - mu
            new_means[k] = mu
            new_vars[k] = np.maximum(resp[:, k] @ (diff * diff) / nk[k], floor)
        means, variances = new_means, new_vars
    else:
        log_p = _weighted_log_pdf(X, weights, means, variances)
        ll = float(np.sum(logsumexp(log_p, axis=1)))
        if ll < history[-1]:
            weights, means, variances = previous
        else:
            history.append(ll)

    return EmResult(weights, means, variances, history, iterations, converged)


def fit_gmm(
    P: PsdSequence,
    opts: TrainingOptions | None = None,
    kind: str = "speech",
    normalization: str = "per-frame",
    sample_rate: int = 8000,
) -> FitResult:
    """Fit a diagonal GMM to the frames (columns) of an already normalised PSD sequence."""
    opts = opts or TrainingOptions()
    em = em_fit(P.data.T, opts)
    model = GmmModel(
        weights=em.weights,
        # convex combinations of nonnegative frames; clip rounding dust only
        means=np.maximum(em.means, 0.0),
        variances=em.variances,
        kind=kind,
        normalization=normalization,
        sample_rate=sample_rate,
        fft_size=2 * (P.num_bins - 1),
        variance_floor=opts.variance_floor,
    )
    return FitResult(model, em.log_likelihood, em.iterations, em.converged, opts.num_components)


def log_likelihoods(model: GmmModel, frames: np.ndarray) -> np.ndarray:
    """Mixture log density of each row of ``frames`` (N, F)."""
    X = np.atleast_2d(np.asarray(frames, dtype=np.float64))
    if X.shape[1] != model.num_bins:
        raise DimensionMismatchError(f"frame length {X.shape[1]} != model dimension {model.num_bins}")
    return logsumexp(_weighted_log_pdf(X, model.weights, model.means, model.variances), axis=1)


def log_density(model: GmmModel, frame: np.ndarray) -> float:
    frame = np.asarray(frame, dtype=np.float64)
    if frame.ndim != 1:
        raise DimensionMismatchError("log_density expects a single frame vector")
    return float(log_likelihoods(model, frame)[0])


def mean_matrix(model: GmmModel, components=None) -> np.ndarray:
    """F x K matrix whose columns are the component means, optionally sub-selected."""
    U = model.means.T
    if components is not None:
        U = U[:, list(components)]
    return np.array(U)


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------


def model_to_dict(model: GmmModel) -> dict:
    return {
        "version": MODEL_FORMAT_VERSION,
        "kind": model.kind,
        "sample_rate": model.sample_rate,
        "fft_size": model.fft_size,
        "normalization": model.normalization,
        "variance_floor": model.variance_floor,
        "weights": model.weights.tolist(),
        "means": model.means.tolist(),
        "variances": model.variances.tolist(),
    }


def model_from_dict(doc: dict) -> GmmModel:
    version = doc.get("version")
    if not isinstance(version, int):
        raise ModelVersionError(f"model document has no integer version (got {version!r})")
    if version != MODEL_FORMAT_VERSION:
        raise ModelVersionError(
            f"model format version {version} is not supported (expected {MODEL_FORMAT_VERSION})"
        )
    try:
        return GmmModel(
            weights=doc["weights"],
            means=doc["means"],
            variances=doc["variances"],
            kind=doc["kind"],
            normalization=doc["normalization"],
            sample_rate=int(doc["sample_rate"]),
            fft_size=int(doc["fft_size"]),
            variance_floor=float(doc.get("variance_floor", 1e-6)),
        )
    except KeyError as exc:
        raise DataError(f"model document is missing field {exc}") from exc


def dumps_model(model: GmmModel) -> str:
    return json.dumps(model_to_dict(model), indent=1) + "\n"


def save_model(model: GmmModel, path: str | os.PathLike) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(dumps_model(model))


def load_model(path: str | os.PathLike) -> GmmModel:
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: not a valid model document ({exc})") from exc
    return model_from_dict(doc)
