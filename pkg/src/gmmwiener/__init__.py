"""GMM-driven multi-stage parametric Wiener filtering for single-channel speech enhancement."""

from .dsp import AudioSignal, PsdSequence, SpectralFrames, StftConfig, istft, load_wav, periodogram, stft, write_wav
from .enhancer import EnhancementResult, EnhancerConfig, StagePlan, enhance, plan_stages
from .errors import DataError, GmmWienerError, InvariantViolation
from .gmm import GmmModel, TrainingOptions, fit_gmm, load_model, normalize_psd_frames, save_model
from .metrics import EvalReport, compute_stoi, evaluate, global_snr, mix_at_snr, segmental_snr

__version__ = "0.1.0"

__all__ = [
    "AudioSignal",
    "DataError",
    "EnhancementResult",
    "EnhancerConfig",
    "EvalReport",
    "GmmModel",
    "GmmWienerError",
    "InvariantViolation",
    "PsdSequence",
    "SpectralFrames",
    "StagePlan",
    "StftConfig",
    "TrainingOptions",
    "compute_stoi",
    "enhance",
    "evaluate",
    "fit_gmm",
    "global_snr",
    "istft",
    "load_model",
    "load_wav",
    "mix_at_snr",
    "normalize_psd_frames",
    "periodogram",
    "plan_stages",
    "save_model",
    "segmental_snr",
    "stft",
    "write_wav",
]
