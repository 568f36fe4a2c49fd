"""Experiment configuration: published defaults, JSON persistence, and flag overrides.

Precedence is command-line flag > config file > built-in default. Relative paths
inside a config file are resolved against the file's own directory.
"""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field

from .dsp import StftConfig
from .enhancer import RECTIFICATION_MODES, EnhancerConfig
from .errors import DataError
from .gmm import NORMALIZATIONS, TrainingOptions

CONFIG_FORMAT_VERSION = 1
DEFAULT_SNR_SWEEP = (-10.0, -5.0, 0.0, 5.0, 10.0)

_STFT_KEYS = ("window_length", "fft_size", "hop")
_PATH_FIELDS = ("speech_model", "eval_speech_dir")
_PATH_MAP_FIELDS = ("noise_models", "eval_noise")


@dataclass(frozen=True)
class ExperimentConfig:
    sample_rate: int = 8000
    window_length: int = 160
    fft_size: int = 512
    hop: int = 80
    speech_components: int = 6
    noise_components: int = 9
    beta: float = 2.0
    gamma: float = 1.0
    stages: int = 2
    stage_energy_fraction: float = 0.5
    gain_floor: float = 0.0
    smoothing: float = 0.0
    normalization: str = "per-frame"
    rectification: str = "refit"
    faithful_restft: bool = False
    snr_sweep: tuple[float, ...] = DEFAULT_SNR_SWEEP
    seed: int = 0
    max_iterations: int = 200
    tolerance: float = 1e-6
    variance_floor: float = 1e-6
    eval_set_size: int | None = None
    speech_model: str | None = None
    noise_models: dict[str, str] = field(default_factory=dict)
    eval_speech_dir: str | None = None
    eval_noise: dict[str, str] = field(default_factory=dict)
    # directory that relative paths are resolved against; not serialized
    base_dir: str = field(default="", compare=False)

    def __post_init__(self):
        object.__setattr__(self, "snr_sweep", tuple(float(s) for s in self.snr_sweep))
        object.__setattr__(self, "noise_models", dict(self.noise_models))
        object.__setattr__(self, "eval_noise", dict(self.eval_noise))
        if self.sample_rate <= 0:
            raise DataError("sample_rate must be positive")
        if self.normalization not in NORMALIZATIONS:
            raise DataError(f"normalization must be one of {NORMALIZATIONS}")
        if self.rectification not in RECTIFICATION_MODES:
            raise DataError(f"rectification must be one of {RECTIFICATION_MODES}")
        if self.eval_set_size is not None and self.eval_set_size < 1:
            raise DataError("eval_set_size must be >= 1 when given")
        try:
            self.stft_config()
            self.enhancer_config()
            self.training_options("speech")
            self.training_options("noise")
        except ValueError as exc:
            raise DataError(f"invalid configuration: {exc}") from exc

    # -- derived objects -------------------------------------------------

    def stft_config(self) -> StftConfig:
        return StftConfig(window_length=self.window_length, fft_size=self.fft_size, hop=self.hop)

    def enhancer_config(self) -> EnhancerConfig:
        return EnhancerConfig(
            beta=self.beta,
            gamma=self.gamma,
            num_stages=self.stages,
            stage_energy_fraction=self.stage_energy_fraction,
            gain_floor=self.gain_floor,
            smoothing=self.smoothing,
            faithful_restft=self.faithful_restft,
            rectification=self.rectification,
        )

    def training_options(self, kind: str) -> TrainingOptions:
        k = self.speech_components if kind == "speech" else self.noise_components
        return TrainingOptions(
            num_components=k,
            max_iterations=self.max_iterations,
            tolerance=self.tolerance,
            seed=self.seed,
            variance_floor=self.variance_floor,
        )

    def resolve(self, path: str | None) -> str | None:
        if path is None:
            return None
        return path if os.path.isabs(path) else os.path.join(self.base_dir, path)

    # -- overrides and serialization -------------------------------------

    def with_overrides(self, **overrides) -> "ExperimentConfig":
        """Apply overrides, ignoring ``None`` values (flags that were not given)."""
        given = {k: v for k, v in overrides.items() if v is not None}
        unknown = set(given) - {f.name for f in dataclasses.fields(self)}
        if unknown:
            raise DataError(f"unknown configuration keys: {sorted(unknown)}")
        return dataclasses.replace(self, **given)

    def to_dict(self) -> dict:
        doc = {"version": CONFIG_FORMAT_VERSION}
        for f in dataclasses.fields(self):
            if f.name == "base_dir" or f.name in _STFT_KEYS:
                continue
            v = getattr(self, f.name)
            doc[f.name] = list(v) if isinstance(v, tuple) else v
        doc["stft"] = {k: getattr(self, k) for k in _STFT_KEYS}
        return doc

    @classmethod
    def from_dict(cls, doc: dict, base_dir: str = "") -> "ExperimentConfig":
        if not isinstance(doc, dict):
            raise DataError("configuration must be a JSON object")
        doc = dict(doc)
        version = doc.pop("version", CONFIG_FORMAT_VERSION)
        if version != CONFIG_FORMAT_VERSION:
            raise DataError(f"unsupported config version {version}")
        stft_doc = doc.pop("stft", {}) or {}
        if not isinstance(stft_doc, dict) or set(stft_doc) - set(_STFT_KEYS):
            raise DataError(f"'stft' must be an object with keys among {_STFT_KEYS}")
        doc.update(stft_doc)

        names = {f.name: f for f in dataclasses.fields(cls) if f.name != "base_dir"}
        unknown = set(doc) - set(names)
        if unknown:
            raise DataError(f"unknown configuration keys: {sorted(unknown)}")
        try:
            for key in ("beta", "gamma", "stage_energy_fraction", "gain_floor", "smoothing",
                        "tolerance", "variance_floor"):
                if key in doc:
                    doc[key] = float(doc[key])
            for key in ("sample_rate", "window_length", "fft_size", "hop", "speech_components",
                        "noise_components", "stages", "seed", "max_iterations"):
                if key in doc:
                    doc[key] = _as_int(key, doc[key])
            if doc.get("eval_set_size") is not None:
                doc["eval_set_size"] = _as_int("eval_set_size", doc["eval_set_size"])
            if "faithful_restft" in doc and not isinstance(doc["faithful_restft"], bool):
                raise DataError("faithful_restft must be true or false")
            for key in _PATH_MAP_FIELDS:
                if key in doc and not isinstance(doc[key], dict):
                    raise DataError(f"{key} must map noise names to paths")
        except (TypeError, ValueError) as exc:
            if isinstance(exc, DataError):
                raise
            raise DataError(f"invalid configuration value: {exc}") from exc
        return cls(**doc, base_dir=base_dir)

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    def save(self, path: str | os.PathLike) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.dumps())

    @classmethod
    def load(cls, path: str | os.PathLike) -> "ExperimentConfig":
        path = os.fspath(path)
        try:
            with open(path, encoding="utf-8") as fh:
                doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise DataError(f"{path}: not valid JSON ({exc})") from exc
        return cls.from_dict(doc, base_dir=os.path.dirname(os.path.abspath(path)))


def _as_int(key, value) -> int:
    if isinstance(value, bool) or int(value) != value:
        raise DataError(f"{key} must be an integer, got {value!r}")
    return int(value)
