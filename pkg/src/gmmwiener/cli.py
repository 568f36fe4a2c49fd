"""Command-line harness: synth, train, mix, enhance, evaluate, sweep, spectrogram.

Exit codes: 0 success, 1 usage error, 2 data error, 3 invariant violation.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import warnings

import numpy as np

from . import __version__
from .config import ExperimentConfig
from .dsp import AudioSignal, stft, write_wav
from .enhancer import export_diagnostics, write_matrix_csv
from .errors import DataError, DimensionMismatchError, GmmWienerError, InvariantViolation
from .experiment import (
    SweepCsvWriter,
    SweepRow,
    enhance_signal,
    load_corpus,
    read_signal,
    run_sweep,
    train_model,
    training_frames,
    training_log,
    write_benchmark,
)
from .gmm import KINDS, NORMALIZATIONS, GmmModel, dumps_model, load_model
from .metrics import evaluate, mix_at_snr

log = logging.getLogger("gmmwiener")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INVARIANT = 0, 1, 2, 3
SPECTROGRAM_FLOOR_DB = -100.0


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# ---------------------------------------------------------------------------
# config handling
# ---------------------------------------------------------------------------


def _effective_config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config) if getattr(args, "config", None) else ExperimentConfig()
    overrides = {
        "seed": getattr(args, "seed", None),
        "beta": getattr(args, "beta", None),
        "gamma": getattr(args, "gamma", None),
        "stages": getattr(args, "stages", None),
        "smoothing": getattr(args, "smoothing", None),
        "gain_floor": getattr(args, "gain_floor", None),
        "normalization": getattr(args, "normalization", None),
        "faithful_restft": getattr(args, "faithful_restft", None),
    }
    if getattr(args, "snr_sweep", None):
        overrides["snr_sweep"] = tuple(args.snr_sweep)
    cfg = cfg.with_overrides(**overrides)
    log.info("effective config: %s", json.dumps(cfg.to_dict(), separators=(",", ":")))
    return cfg


def _add_config_flags(p, enhancer=False, training=False):
    p.add_argument("--config", metavar="PATH", help="JSON experiment config")
    p.add_argument("--seed", type=int, metavar="N")
    if training:
        p.add_argument("--normalization", choices=NORMALIZATIONS)
    if enhancer:
        p.add_argument("--beta", type=float, metavar="F", help="noise overestimation factor")
        p.add_argument("--gamma", type=float, metavar="F", help="gain exponent")
        p.add_argument("--stages", type=int, metavar="N", help="number of enhancement stages")
        p.add_argument("--smoothing", type=float, metavar="F", help="PSD smoothing factor in [0, 1)")
        p.add_argument("--gain-floor", type=float, metavar="F")
        p.add_argument("--faithful-restft", action="store_true", default=None,
                       help="resynthesize and re-analyse between stages")


def _check_model(model: GmmModel, cfg: ExperimentConfig, path) -> None:
    if model.sample_rate != cfg.sample_rate or model.fft_size != cfg.fft_size:
        raise DimensionMismatchError(
            f"{path}: model is {model.sample_rate} Hz / {model.fft_size}-point, "
            f"config is {cfg.sample_rate} Hz / {cfg.fft_size}-point"
        )
    if model.normalization != cfg.normalization:
        log.warning("%s: model normalization %s differs from config %s", path, model.normalization, cfg.normalization)


def _stage_path(out: str, index: int) -> str:
    root, ext = os.path.splitext(out)
    return f"{root}_stage{index}{ext or '.wav'}"


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_synth(args) -> int:
    cfg = write_benchmark(args.outdir, seed=args.seed or 0, noise_kinds=tuple(args.noise))
    print(f"wrote synthetic corpus and {os.path.join(args.outdir, 'config.json')}")
    log.debug("config base: %s", cfg.base_dir)
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _effective_config(args)
    if args.components is not None:
        field = "speech_components" if args.kind == "speech" else "noise_components"
        cfg = cfg.with_overrides(**{field: args.components})
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        signals = load_corpus(args.corpus, cfg)
        frames = training_frames(signals, cfg)
        result = train_model(signals, args.kind, cfg)
    for w in caught:
        log.warning("%s", w.message)
    with open(args.output, "w", encoding="utf-8") as fh:
        fh.write(dumps_model(result.model))
    text = training_log(result, cfg, frames.num_frames)
    log_path = args.log or args.output + ".log"
    with open(log_path, "w", encoding="utf-8") as fh:
        fh.write(text)
    print(
        f"trained {args.kind} model: {result.model.num_components} components, {result.iterations} iterations, "
        f"final log-likelihood {result.final_log_likelihood:.6g} -> {args.output}"
    )
    return EXIT_OK


def cmd_mix(args) -> int:
    rate = _effective_config(args).sample_rate
    clean = read_signal(args.clean, rate)
    noise = read_signal(args.noise, rate)
    mixture, scaled = mix_at_snr(clean, noise, args.snr, offset=args.offset)
    write_wav(args.output, mixture)
    noise_out = args.noise_output or os.path.splitext(args.output)[0] + "_noise.wav"
    write_wav(noise_out, scaled)
    print(f"achieved SNR: {_snr(clean, scaled):.3f} dB")
    if np.max(np.abs(mixture.samples)) > 1.0:
        log.warning("mixture exceeds full scale and was clipped when written")
    return EXIT_OK


def _snr(clean: AudioSignal, noise: AudioSignal) -> float:
    return 10.0 * np.log10(np.mean(clean.samples**2) / np.mean(noise.samples**2))


def cmd_enhance(args) -> int:
    cfg = _effective_config(args)
    speech = load_model(args.speech_model)
    noise = load_model(args.noise_model)
    _check_model(speech, cfg, args.speech_model)
    _check_model(noise, cfg, args.noise_model)
    mixture = read_signal(args.mixture, cfg.sample_rate)
    out = enhance_signal(mixture, speech, noise, cfg)
    write_wav(args.output, out.output)
    if args.emit_stages:
        for i, s in enumerate(out.stages, start=1):
            write_wav(_stage_path(args.output, i), s)
    if args.diagnostics:
        export_diagnostics(out.result, args.diagnostics)
    plan = ", ".join("{" + ",".join(str(c) for c in p) + "}" for p in out.result.plan.partitions)
    print(f"enhanced {args.mixture} in {len(out.stages)} stage(s) [noise components {plan}] -> {args.output}")
    return EXIT_OK


def _align(clean: AudioSignal, processed: AudioSignal, hop: int) -> AudioSignal:
    diff = len(processed) - len(clean)
    if abs(diff) > hop:
        raise DataError(f"lengths differ by {abs(diff)} samples (more than one hop of {hop})")
    if diff < 0:
        return AudioSignal(np.concatenate([processed.samples, np.zeros(-diff)]), processed.sample_rate)
    return AudioSignal(processed.samples[: len(clean)], processed.sample_rate)


def cmd_evaluate(args) -> int:
    cfg = _effective_config(args)
    clean = read_signal(args.clean, cfg.sample_rate)
    processed = _align(clean, read_signal(args.processed, cfg.sample_rate), cfg.hop)
    report = evaluate(clean, processed, label=args.label or os.path.basename(args.processed))
    print(report.text())
    if args.csv:
        fresh = not os.path.exists(args.csv) or os.path.getsize(args.csv) == 0
        with open(args.csv, "a", encoding="utf-8", newline="") as fh:
            fh.write(report.to_csv(header=fresh))
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = _effective_config(args)
    if cfg.speech_model is None or not cfg.noise_models or cfg.eval_speech_dir is None:
        raise UsageError("sweep needs speech_model, noise_models and eval_speech_dir in the config")
    missing = sorted(set(cfg.noise_models) - set(cfg.eval_noise))
    if missing:
        raise UsageError(f"no eval_noise recording for noise type(s) {missing}")
    speech = load_model(cfg.resolve(cfg.speech_model))
    _check_model(speech, cfg, cfg.speech_model)
    noises = {}
    for name, path in cfg.noise_models.items():
        model = load_model(cfg.resolve(path))
        _check_model(model, cfg, path)
        noises[name] = (model, read_signal(cfg.resolve(cfg.eval_noise[name]), cfg.sample_rate))
    cleans = load_corpus(cfg.resolve(cfg.eval_speech_dir), cfg)

    if args.csv:
        with SweepCsvWriter(args.csv, cfg.stages) as writer:
            run_sweep(cfg, speech, noises, cleans, on_row=writer)
        print(f"wrote {args.csv}")
    else:
        w = csv.writer(sys.stdout, lineterminator="\n")
        w.writerow(SweepRow.header(cfg.stages))
        run_sweep(cfg, speech, noises, cleans, on_row=lambda r: w.writerow(r.row()))
    return EXIT_OK


def cmd_spectrogram(args) -> int:
    cfg = _effective_config(args)
    x = read_signal(args.wav, cfg.sample_rate)
    S = stft(x, cfg.stft_config())
    mag = np.abs(S.data)
    with np.errstate(divide="ignore"):
        db = 20.0 * np.log10(mag)
    db = np.maximum(db, SPECTROGRAM_FLOOR_DB)
    write_matrix_csv(args.output, db, cfg.sample_rate, cfg.fft_size, cfg.hop)
    print(f"wrote {db.shape[0]} x {db.shape[1]} spectrogram -> {args.output}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="gmmwiener", description="GMM-based multi-stage Wiener filtering for speech enhancement.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-q", "--quiet", action="store_true", help="only print warnings and errors")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", help="write the synthetic benchmark corpus and a config")
    s.add_argument("outdir")
    s.add_argument("--seed", type=int, metavar="N")
    s.add_argument("--noise", nargs="+", default=["engine", "babble"], choices=["engine", "babble"])
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("train", help="fit a GMM to the PSD frames of a WAV directory")
    s.add_argument("kind", choices=KINDS)
    s.add_argument("corpus", help="directory of WAV files")
    s.add_argument("-o", "--output", required=True, help="model file to write")
    s.add_argument("--components", type=int, metavar="K", help="override K for this kind")
    s.add_argument("--log", metavar="PATH", help="training log (default: <output>.log)")
    _add_config_flags(s, training=True)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("mix", help="add noise to clean speech at a target SNR")
    s.add_argument("clean")
    s.add_argument("noise")
    s.add_argument("--snr", type=float, required=True, metavar="DB")
    s.add_argument("-o", "--output", required=True)
    s.add_argument("--noise-output", metavar="PATH", help="scaled noise (default: <output>_noise.wav)")
    s.add_argument("--offset", type=int, default=0, metavar="N", help="noise start sample")
    _add_config_flags(s)
    s.set_defaults(func=cmd_mix)

    s = sub.add_parser("enhance", help="enhance a noisy recording")
    s.add_argument("mixture")
    s.add_argument("--speech-model", required=True, metavar="PATH")
    s.add_argument("--noise-model", required=True, metavar="PATH")
    s.add_argument("-o", "--output", required=True)
    s.add_argument("--emit-stages", action="store_true", help="also write <output>_stage<i>.wav")
    s.add_argument("--diagnostics", metavar="DIR", help="write per-stage gain and PSD CSV matrices")
    _add_config_flags(s, enhancer=True, training=True)
    s.set_defaults(func=cmd_enhance)

    s = sub.add_parser("evaluate", help="score a processed file against the clean reference")
    s.add_argument("clean")
    s.add_argument("processed")
    s.add_argument("--csv", metavar="PATH", help="append one result row")
    s.add_argument("--label")
    _add_config_flags(s)
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("sweep", help="mix/enhance/evaluate over the SNR sweep")
    s.add_argument("--csv", metavar="PATH", help="results table (default: stdout)")
    s.add_argument("--snr", type=float, action="append", dest="snr_sweep", metavar="DB",
                   help="SNR level; repeat to replace the configured sweep")
    _add_config_flags(s, enhancer=True, training=True)
    s.set_defaults(func=cmd_sweep)

    s = sub.add_parser("spectrogram", help="export a dB magnitude spectrogram as CSV")
    s.add_argument("wav")
    s.add_argument("-o", "--output", required=True)
    _add_config_flags(s)
    s.set_defaults(func=cmd_spectrogram)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING if args.quiet else logging.INFO, format="%(levelname)s: %(message)s", stream=sys.stderr,
        force=True,
    )
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"gmmwiener: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except InvariantViolation as exc:
        print(f"gmmwiener: invariant violation: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    except (GmmWienerError, OSError) as exc:
        print(f"gmmwiener: error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
