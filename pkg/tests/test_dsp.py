import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.io import wavfile

from gmmwiener.dsp import (
    AudioSignal,
    PsdSequence,
    SpectralFrames,
    StftConfig,
    frame_energy,
    istft,
    load_wav,
    periodogram,
    resample,
    stft,
    write_wav,
)
from gmmwiener.errors import DataError, UnsupportedFormatError

CFG = StftConfig()


def _noise(n, seed=0, rate=8000):
    return AudioSignal(np.random.default_rng(seed).standard_normal(n) * 0.1, rate)


class TestTypes:
    def test_rejects_nan(self):
        with pytest.raises(DataError):
            AudioSignal(np.array([0.0, np.nan]), 8000)

    def test_rejects_bad_rate(self):
        with pytest.raises(DataError):
            AudioSignal(np.zeros(4), 0)

    def test_hop_must_be_half_window(self):
        with pytest.raises(ValueError):
            StftConfig(window_length=160, hop=40)

    def test_fft_must_cover_window(self):
        with pytest.raises(ValueError):
            StftConfig(window_length=160, fft_size=128)

    def test_default_config(self):
        assert (CFG.window_length, CFG.fft_size, CFG.hop, CFG.num_bins) == (160, 512, 80, 257)
        assert StftConfig.for_rate(8000) == CFG

    def test_psd_rejects_negative(self):
        with pytest.raises(DataError):
            PsdSequence(np.array([[1.0, -0.1]]))

    def test_samples_are_read_only(self):
        x = _noise(10)
        with pytest.raises(ValueError):
            x.samples[0] = 1.0


class TestWav:
    def test_pcm16_scaling(self, tmp_path):
        p = tmp_path / "a.wav"
        wavfile.write(p, 8000, np.array([16384, -32768, 0], dtype=np.int16))
        x = load_wav(p)
        assert x.sample_rate == 8000
        np.testing.assert_array_equal(x.samples, [0.5, -1.0, 0.0])

    def test_float32(self, tmp_path):
        p = tmp_path / "f.wav"
        wavfile.write(p, 16000, np.array([0.25, -0.75], dtype=np.float32))
        np.testing.assert_array_equal(load_wav(p).samples, [0.25, -0.75])

    def test_stereo_downmix(self, tmp_path):
        p = tmp_path / "s.wav"
        wavfile.write(p, 8000, np.array([[0.2, 0.4]], dtype=np.float32))
        assert load_wav(p, downmix=True).samples[0] == pytest.approx(0.3)
        with pytest.raises(DataError):
            load_wav(p)

    def test_24bit_rejected(self, tmp_path):
        p = tmp_path / "24.wav"
        wavfile.write(p, 8000, np.array([1, 2, 3], dtype=np.int32))
        with pytest.raises(UnsupportedFormatError):
            load_wav(p)

    def test_corrupt_header(self, tmp_path):
        p = tmp_path / "bad.wav"
        p.write_bytes(b"RIFF\x00\x00\x00\x00JUNKJUNK")
        with pytest.raises(DataError):
            load_wav(p)

    def test_write_saturates(self, tmp_path):
        p = tmp_path / "o.wav"
        write_wav(p, AudioSignal(np.array([2.0, -2.0, 0.5]), 8000))
        rate, data = wavfile.read(p)
        assert rate == 8000 and data.dtype == np.int16
        np.testing.assert_array_equal(data, [32767, -32768, 16384])


class TestResample:
    def test_identity(self):
        x = _noise(100)
        assert resample(x, 8000) is x

    def test_dc_preserved(self):
        y = resample(AudioSignal(np.full(16000, 0.5), 16000), 8000)
        assert len(y) == 8000
        assert np.max(np.abs(y.samples[200:-200] - 0.5)) < 1e-3

    def test_sine_48k_to_8k(self):
        n = 48000
        t = np.arange(n) / 48000
        y = resample(AudioSignal(np.sin(2 * np.pi * 1000 * t), 48000), 8000)
        assert len(y) == round(n * 8000 / 48000)
        ref = np.sin(2 * np.pi * 1000 * np.arange(len(y)) / 8000)
        interior = slice(100, -100)
        corr = np.corrcoef(y.samples[interior], ref[interior])[0, 1]
        assert corr > 0.999

    def test_output_length_rounds(self):
        y = resample(AudioSignal(np.zeros(1001), 16000), 10000)
        assert len(y) == round(1001 * 10000 / 16000)

    def test_rejects_nonpositive_rate(self):
        with pytest.raises(ValueError):
            resample(_noise(10), 0)


class TestStft:
    def test_zero_signal(self):
        S = stft(AudioSignal(np.zeros(800), 8000))
        assert not np.any(S.data)

    def test_frame_count(self):
        assert stft(AudioSignal(np.zeros(320), 8000)).num_frames == 3

    @given(st.integers(min_value=160, max_value=3000))
    def test_frame_count_formula(self, n):
        assert CFG.num_frames(n) == (n - 160) // 80 + 1

    def test_too_short(self):
        with pytest.raises(DataError):
            stft(AudioSignal(np.zeros(159), 8000))

    def test_impulse_matches_direct_dft(self):
        x = np.zeros(480)
        center = 80 + 80  # frame 1 starts at 80, centre offset 80
        x[center] = 1.0
        S = stft(AudioSignal(x, 8000))
        w = CFG.analysis_window()
        # naive DFT of the windowed, shifted impulse
        frame = np.zeros(CFG.fft_size)
        frame[:160] = w * x[80:240]
        k = np.arange(CFG.num_bins)
        direct = np.array([np.sum(frame * np.exp(-2j * np.pi * kk * np.arange(512) / 512)) for kk in k])
        np.testing.assert_allclose(S.data[:, 1], direct, atol=1e-12)
        np.testing.assert_allclose(np.abs(S.data[:, 1]), w[80], atol=1e-12)

    def test_linearity(self):
        x, y = _noise(1000, 1), _noise(1000, 2)
        a, b = 0.7, -1.3
        lhs = stft(AudioSignal(a * x.samples + b * y.samples, 8000)).data
        rhs = a * stft(x).data + b * stft(y).data
        assert np.max(np.abs(lhs - rhs)) < 1e-9

    def test_spectral_frames_validate_shape(self):
        with pytest.raises(DataError):
            SpectralFrames(np.zeros((10, 3)), CFG, 100)


class TestIstft:
    def test_white_noise_round_trip(self):
        x = _noise(4000, 3)
        y = istft(stft(x))
        assert len(y) == len(x)
        assert np.max(np.abs(y.samples - x.samples)[160:-160]) < 1e-6

    def test_zero_frames(self):
        S = SpectralFrames(np.zeros((257, 5)), CFG, 480)
        assert not np.any(istft(S).samples)

    def test_sine_round_trip_snr(self):
        n = np.arange(4000)
        x = AudioSignal(0.5 * np.sin(2 * np.pi * 440 * n / 8000), 8000)
        y = istft(stft(x))
        err = (y.samples - x.samples)[160:-160]
        ref = x.samples[160:-160]
        snr = 10 * np.log10(np.sum(ref**2) / np.sum(err**2))
        assert snr > 120

    @settings(max_examples=30, deadline=None)
    @given(st.integers(min_value=480, max_value=5000), st.integers(0, 2**31))
    def test_round_trip_property(self, n, seed):
        x = _noise(n, seed)
        y = istft(stft(x))
        assert np.max(np.abs(y.samples - x.samples)[160 : n - 160]) < 1e-6


class TestPeriodogram:
    def test_squared_magnitude(self):
        data = np.zeros((257, 2), dtype=complex)
        data[3, 0] = 3 + 4j
        P = periodogram(SpectralFrames(data, CFG, 240))
        assert P.data[3, 0] == 25.0
        assert not np.any(P.data[:, 1])

    def test_parseval(self):
        x = _noise(2000, 7)
        S = stft(x)
        w = CFG.analysis_window()
        frames = np.stack([x.samples[t * 80 : t * 80 + 160] * w for t in range(S.num_frames)], axis=1)
        direct = np.sum(frames**2, axis=0)
        np.testing.assert_allclose(frame_energy(S), direct, rtol=1e-9)

    def test_nonnegative(self):
        P = periodogram(stft(_noise(2000, 9)))
        assert np.all(P.data >= 0)

    def test_smoothing(self):
        data = np.zeros((257, 3), dtype=complex)
        data[0] = [1.0, 0.0, 0.0]
        P = periodogram(SpectralFrames(data, CFG, 320), smoothing=0.5)
        np.testing.assert_allclose(P.data[0], [1.0, 0.5, 0.25])
