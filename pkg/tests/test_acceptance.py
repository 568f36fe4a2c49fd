"""Acceptance suite: one test per criterion, each recording a single pass/fail line.

Criteria are checked at their stated tolerances; nothing here is relaxed to make
a result pass.
"""

import dataclasses
import time

import numpy as np
import pytest

from gmmwiener.cli import main
from gmmwiener.dsp import AudioSignal, StftConfig, istft, periodogram, stft
from gmmwiener.enhancer import (
    EnhancerConfig,
    enhance,
    least_squares_coefficients,
    parametric_wiener_gain,
    solve_coefficients,
    wiener_gain,
)
from gmmwiener.experiment import benchmark_config, noise_offsets, run_sweep, synthesize_benchmark, train_model
from gmmwiener.gmm import TrainingOptions, em_fit
from gmmwiener.metrics import compute_stoi, mix_at_snr
from gmmwiener.synth import speech_like

SWEEP = (-10.0, -5.0, 0.0, 5.0, 10.0)


@pytest.fixture(scope="module")
def benchmark():
    """Harmonic-noise benchmark: train, then run the full SNR sweep once."""
    t0 = time.perf_counter()
    cfg = benchmark_config()
    bench = synthesize_benchmark(seed=0)
    speech = train_model(bench.train_speech, "speech", cfg).model
    noise = train_model([bench.train_noise["engine"]], "noise", cfg).model
    rows = run_sweep(cfg, speech, {"engine": (noise, bench.eval_noise["engine"])}, bench.eval_speech)
    elapsed = time.perf_counter() - t0
    return {"cfg": cfg, "bench": bench, "speech": speech, "noise": noise,
            "rows": {r.snr_db: r for r in rows}, "seconds": elapsed}


def test_criterion_01_stft_round_trip(acceptance):
    rng = np.random.default_rng(1)
    cfg = StftConfig()
    signals = [AudioSignal(rng.standard_normal(int(rng.integers(3 * 160, 16000))), 8000) for _ in range(100)]
    t0 = time.perf_counter()
    worst = 0.0
    for x in signals:
        y = istft(stft(x, cfg)).samples
        worst = max(worst, float(np.max(np.abs(y - x.samples)[160:-160])))
    seconds = time.perf_counter() - t0
    ok = worst < 1e-6 and seconds < 1.0
    acceptance(1, ok, f"max interior error {worst:.2e} (< 1e-6), 100 signals in {seconds:.3f} s (< 1 s)")
    assert ok


def test_criterion_02_gain_cases(acceptance):
    one = np.array([1.0])
    cases = [
        (EnhancerConfig(beta=1.0, gamma=1.0), one, one, 0.5),
        (EnhancerConfig(beta=2.0, gamma=1.0), one, one, 1.0 / 3.0),
        (EnhancerConfig(beta=2.0, gamma=1.0), one, np.array([0.0]), 1.0),
        (EnhancerConfig(beta=1.0, gamma=2.0), one, one, 0.25),
    ]
    errors = [abs(parametric_wiener_gain(s, v, c)[0] - want) for c, s, v, want in cases]
    rng = np.random.default_rng(2)
    s, v = rng.random(1000), rng.random(1000)
    eq1 = float(np.max(np.abs(parametric_wiener_gain(s, v, EnhancerConfig(beta=1.0, gamma=1.0)) - wiener_gain(s, v))))
    ok = max(errors) <= 1e-15 and eq1 <= 1e-15
    acceptance(2, ok, f"worst gain-case error {max(errors):.1e}, beta=1/gamma=1 vs classic Wiener {eq1:.1e} (<= 1e-15)")
    assert ok


def test_criterion_03_solver_oracle(acceptance):
    rng = np.random.default_rng(3)
    worst_ls, worst_rec = 0.0, 0.0
    for _ in range(200):
        U_s, U_v = rng.random((32, 3)) + 0.05, rng.random((32, 3)) + 0.05
        U = np.hstack([U_s, U_v])
        x = rng.random(32)
        oracle = np.linalg.solve(U.T @ U, U.T @ x)
        worst_ls = max(worst_ls, float(np.max(np.abs(least_squares_coefficients(x, U_s, U_v) - oracle))))
        alpha = rng.random(6) + 0.05
        rec = solve_coefficients(U @ alpha, U_s, U_v).stacked
        worst_rec = max(worst_rec, float(np.max(np.abs(rec - alpha) / alpha)))
    ok = worst_ls < 1e-8 and worst_rec < 1e-6
    acceptance(3, ok, f"vs normal equations {worst_ls:.1e} (< 1e-8); exact recovery rel. error {worst_rec:.1e} (< 1e-6)")
    assert ok


def test_criterion_04_rectification_power(acceptance):
    rng = np.random.default_rng(4)
    worst = {"refit": 0.0, "rescale": 0.0}
    n = 0
    while n < 500:
        U_s, U_v = rng.random((32, 3)), rng.random((32, 3))
        x = rng.random(32) ** 4
        raw = least_squares_coefficients(x, U_s, U_v)
        if not (np.any(raw < 0) and np.any(raw > 0)):
            continue
        for mode in worst:
            c = solve_coefficients(x, U_s, U_v, rectification=mode)
            total = np.sum(U_s @ c.speech) + np.sum(U_v @ c.noise)
            worst[mode] = max(worst[mode], abs(total - x.sum()) / x.sum())
        n += 1
    ok = max(worst.values()) <= 1e-9
    acceptance(4, ok, f"500 mixed-sign frames, worst relative power error refit {worst['refit']:.1e}, "
                      f"rescale {worst['rescale']:.1e} (<= 1e-9)")
    assert ok


def test_criterion_05_em_recovery(acceptance):
    worst_mean, worst_weight, worst_drop = 0.0, 0.0, 0.0
    sigma = 0.01
    truth_means = np.array([[0.0, 0.0, 0.0, 0.0], [0.1, 0.05, 0.0, 0.05]])  # separation 12.2 sigma
    truth_weights = np.array([0.35, 0.65])
    for seed in range(10):
        rng = np.random.default_rng(seed)
        labels = rng.random(2000) < truth_weights[1]
        X = truth_means[labels.astype(int)] + sigma * rng.standard_normal((2000, 4))
        r = em_fit(X, TrainingOptions(num_components=2, seed=seed))
        order = np.argsort(np.linalg.norm(r.means, axis=1))
        worst_mean = max(worst_mean, float(np.max(np.linalg.norm(r.means[order] - truth_means, axis=1))))
        worst_weight = max(worst_weight, float(np.max(np.abs(r.weights[order] - truth_weights))))
        ll = np.asarray(r.log_likelihood)
        worst_drop = max(worst_drop, float(np.max(ll[:-1] - ll[1:], initial=0.0)))
    ok = worst_mean <= 0.02 and worst_weight <= 0.05 and worst_drop <= 0.0
    acceptance(5, ok, f"10 seeds: worst mean L2 {worst_mean:.4f} (<= 0.02), weight error {worst_weight:.4f} "
                      f"(<= 0.05), largest log-likelihood decrease {worst_drop:.2e} (must be 0)")
    assert ok


def _oracle_wiener_stoi(bench, snr, beta=2.0):
    """STOI of a Wiener filter given the true speech and noise periodograms (method ceiling)."""
    noise = bench.eval_noise["engine"]
    offsets = noise_offsets(0, len(noise), [len(c) for c in bench.eval_speech])
    scores = []
    for clean, off in zip(bench.eval_speech, offsets):
        mix, scaled = mix_at_snr(clean, noise, snr, offset=off)
        M = stft(mix)
        g = parametric_wiener_gain(periodogram(stft(clean)).data, periodogram(stft(scaled)).data,
                                   EnhancerConfig(beta=beta))
        scores.append(compute_stoi(clean, istft(M.with_data(g * M.data))))
    return float(np.mean(scores))


def test_criterion_06_end_to_end_trend(acceptance, benchmark):
    rows = benchmark["rows"]
    r = rows[-5.0]
    d_stoi = r.stages[-1]["stoi"] - r.mixture["stoi"]
    d_seg = r.stages[-1]["seg_snr_db"] - r.mixture["seg_snr_db"]
    worst_change = min(rows[s].stages[-1]["stoi"] - rows[s].mixture["stoi"] for s in SWEEP)
    seconds = benchmark["seconds"]
    ok_stoi, ok_seg, ok_deg, ok_time = d_stoi >= 0.05, d_seg >= 3.0, worst_change >= -0.01, seconds < 120
    ceiling = _oracle_wiener_stoi(benchmark["bench"], -5.0) - r.mixture["stoi"]
    ok = ok_stoi and ok_seg and ok_deg and ok_time
    acceptance(
        6, ok,
        f"-5 dB STOI {r.mixture['stoi']:.3f} -> {r.stages[-1]['stoi']:.3f} ({d_stoi:+.3f}, need >= +0.05: "
        f"{'ok' if ok_stoi else 'NO'}; true-PSD Wiener reaches {ceiling:+.3f}); "
        f"segSNR {d_seg:+.2f} dB (need >= 3: {'ok' if ok_seg else 'NO'}); "
        f"worst STOI change over sweep {worst_change:+.3f} (need >= -0.01: {'ok' if ok_deg else 'NO'}); "
        f"train+sweep {seconds:.1f} s (< 120 s)",
    )
    assert ok


def test_criterion_07_staging(acceptance, benchmark):
    rows = benchmark["rows"]
    parts, ok = [], True
    for snr in (-5.0, -10.0):
        r = rows[snr]
        gain1 = r.stages[0]["seg_snr_db"] - r.mixture["seg_snr_db"]
        gain2 = r.stages[1]["seg_snr_db"] - r.stages[0]["seg_snr_db"]
        ok &= gain1 >= gain2
        parts.append(f"{snr:+.0f} dB: stage1 {gain1:+.2f} dB, stage2 {gain2:+.2f} dB")
    worst = min(rows[s].stages[1]["seg_snr_db"] - rows[s].stages[0]["seg_snr_db"] for s in SWEEP)
    ok &= worst >= -0.1
    acceptance(7, ok, "; ".join(parts) + f"; worst stage2-stage1 over sweep {worst:+.3f} dB (>= -0.1)")
    assert ok


def test_criterion_08_stoi_self(acceptance):
    worst_self, worst_scale = 0.0, 0.0
    rng = np.random.default_rng(8)
    for seed in range(10):
        x = speech_like(3.0, seed=seed)
        worst_self = max(worst_self, abs(compute_stoi(x, x) - 1.0))
        if seed < 3:
            e = AudioSignal(x.samples + 0.05 * rng.standard_normal(len(x)), x.sample_rate)
            base = compute_stoi(x, e)
            for a in (0.5, 2.0, 10.0):
                worst_scale = max(worst_scale, abs(compute_stoi(x, AudioSignal(a * e.samples, 8000)) - base))
    ok = worst_self < 1e-6 and worst_scale < 1e-6
    acceptance(8, ok, f"10 signals: |STOI(x,x)-1| <= {worst_self:.1e}; scale invariance {worst_scale:.1e} (< 1e-6)")
    assert ok


def test_criterion_09_faithful_equivalence(acceptance, benchmark):
    bench, cfg = benchmark["bench"], benchmark["cfg"]
    chained = cfg.enhancer_config()
    faithful = dataclasses.replace(chained, faithful_restft=True)
    noise = bench.eval_noise["engine"]
    offsets = noise_offsets(cfg.seed, len(noise), [len(c) for c in bench.eval_speech])
    worst = 0.0
    for snr in SWEEP:
        for clean, off in zip(bench.eval_speech, offsets):
            mix, _ = mix_at_snr(clean, noise, snr, offset=off)
            M = stft(mix)
            a = istft(enhance(M, benchmark["speech"], benchmark["noise"], chained).frames).samples
            b = istft(enhance(M, benchmark["speech"], benchmark["noise"], faithful).frames).samples
            worst = max(worst, float(np.max(np.abs(a - b)[160:-160])))
    ok = worst < 1e-4
    acceptance(9, ok, f"max interior difference STFT-domain vs resynthesized chaining {worst:.2e} (< 1e-4)")
    assert ok


def test_criterion_10_sweep_determinism(acceptance, tmp_path):
    d = tmp_path / "bench"
    assert main(["-q", "synth", str(d)]) == 0
    cfg = str(d / "config.json")
    for kind, corpus in (("speech", "speech"), ("noise", "engine"), ("noise", "babble")):
        name = "speech" if kind == "speech" else corpus
        assert main(["-q", "train", kind, str(d / "train" / corpus), "-o", str(d / "models" / f"{name}.json"),
                     "--config", cfg]) == 0
    outputs = []
    for run in ("a", "b"):
        path = tmp_path / f"sweep_{run}.csv"
        assert main(["-q", "sweep", "--config", cfg, "--seed", "0", "--csv", str(path)]) == 0
        outputs.append(path.read_bytes())
    ok = outputs[0] == outputs[1] and len(outputs[0].splitlines()) == 1 + 2 * len(SWEEP)
    acceptance(10, ok, f"two sweeps with seed 0: {'byte-identical' if outputs[0] == outputs[1] else 'DIFFERENT'} "
                       f"({len(outputs[0])} bytes, {len(outputs[0].splitlines()) - 1} rows)")
    assert ok
