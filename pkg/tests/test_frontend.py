import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.signal import sawtooth

from f0spoof import frontend as fe
from f0spoof.frontend import (
    ComplexSpectrogram,
    F0Track,
    FrontendError,
    LogPowerSpectrum,
    StftConfig,
    Waveform,
)


def naive_dft(frame):
    n = len(frame)
    k = np.arange(n // 2 + 1)[:, None]
    j = np.arange(n)[None, :]
    basis = np.exp(-2j * np.pi * k * j / n)
    return basis @ frame


class TestStft:
    def test_paper_geometry(self):
        w = Waveform(np.random.default_rng(0).uniform(-0.5, 0.5, 27000))
        s = fe.stft(w)
        assert s.shape == (865, 195)
        assert s.bin_hz == pytest.approx(16000 / 1728)

    def test_zero_signal(self):
        s = fe.stft(Waveform(np.zeros(2000)))
        assert np.all(s.real == 0) and np.all(s.imag == 0)

    def test_bin_centred_sine_matches_naive_dft(self):
        cfg = StftConfig(window_length=1728, hop_length=130, window_kind="rectangular")
        k = 37
        t = np.arange(1728) / 16000
        x = np.sin(2 * np.pi * k * 16000 / 1728 * t)
        s = fe.stft(Waveform(x), cfg)
        assert s.shape == (865, 1)
        mag = np.hypot(s.real[:, 0], s.imag[:, 0])
        assert int(np.argmax(mag)) == k
        assert mag[k] == pytest.approx(1728 / 2, rel=1e-9)
        others = np.delete(mag, k)
        assert others.max() < 1e-8 * mag[k]
        oracle = naive_dft(x)
        np.testing.assert_allclose(s.real[:, 0], oracle.real, atol=1e-8)
        np.testing.assert_allclose(s.imag[:, 0], oracle.imag, atol=1e-8)

    def test_frames_match_naive_dft_with_window(self):
        rng = np.random.default_rng(3)
        cfg = StftConfig(window_length=64, hop_length=20)
        x = rng.standard_normal(300)
        s = fe.stft(Waveform(x), cfg)
        assert s.shape == (33, 1 + (300 - 64) // 20)
        win = np.blackman(64)
        for t in range(s.shape[1]):
            oracle = naive_dft(x[t * 20 : t * 20 + 64] * win)
            np.testing.assert_allclose(s.real[:, t], oracle.real, atol=1e-10)
            np.testing.assert_allclose(s.imag[:, t], oracle.imag, atol=1e-10)

    def test_too_short(self):
        with pytest.raises(FrontendError, match="shorter"):
            fe.stft(Waveform(np.zeros(1727)))

    def test_non_finite_rejected(self):
        with pytest.raises(FrontendError, match="non-finite"):
            Waveform(np.array([0.0, np.nan, 0.0]))

    @pytest.mark.parametrize("hop,win", [(0, 10), (11, 10)])
    def test_bad_config(self, hop, win):
        with pytest.raises(FrontendError):
            StftConfig(window_length=win, hop_length=hop)


class TestLogPowerSpectrum:
    def test_three_four_five(self):
        s = ComplexSpectrogram(np.array([[3.0]]), np.array([[4.0]]), 1.0)
        assert fe.log_power_spectrum(s).values[0, 0] == pytest.approx(math.log(5))

    def test_floor_engages(self):
        z = np.zeros((4, 3))
        lps = fe.log_power_spectrum(ComplexSpectrogram(z, z, 1.0), floor=1e-10)
        np.testing.assert_allclose(lps.values, math.log(1e-10))
        assert lps.values[0, 0] == pytest.approx(-23.0259, abs=1e-4)

    def test_matches_scalar_recomputation(self):
        rng = np.random.default_rng(5)
        re, im = rng.standard_normal((2, 4, 4))
        lps = fe.log_power_spectrum(ComplexSpectrogram(re, im, 1.0))
        for f in range(4):
            for t in range(4):
                want = math.log(max(math.sqrt(re[f, t] ** 2 + im[f, t] ** 2), 1e-10))
                assert lps.values[f, t] == pytest.approx(want, abs=1e-14)
        assert lps.band == (0, 4)

    @pytest.mark.parametrize("floor", [0.0, -1.0])
    def test_bad_floor(self, floor):
        z = np.zeros((1, 1))
        with pytest.raises(FrontendError):
            fe.log_power_spectrum(ComplexSpectrogram(z, z, 1.0), floor=floor)

    @settings(max_examples=25, deadline=None)
    @given(c=st.floats(1.01, 50.0), seed=st.integers(0, 2**16))
    def test_scaling_shifts_by_log_c(self, c, seed):
        x = np.random.default_rng(seed).uniform(-0.5, 0.5, 2000)
        a = fe.log_power_spectrum(fe.stft(Waveform(x))).values
        b = fe.log_power_spectrum(fe.stft(Waveform(c * x))).values
        live = a > math.log(1e-10) + 1e-6
        np.testing.assert_allclose((b - a)[live], math.log(c), atol=1e-8)


def _lps(f, t, seed=0):
    vals = np.random.default_rng(seed).standard_normal((f, t))
    return LogPowerSpectrum(vals, 16000 / 1728, (0, f))


class TestSubband:
    def test_paper_slice(self):
        out = fe.f0_subband(_lps(865, 600))
        assert out.shape == (45, 600)
        assert out.band == (0, 45)

    def test_full_band_identity(self):
        lps = _lps(865, 10)
        out = fe.f0_subband(lps, 0.0, 8000.0, n_bins=None)
        assert out.shape == lps.shape
        assert np.array_equal(out.values, lps.values)

    def test_rows_bitwise_equal(self):
        lps = _lps(865, 195)
        out = fe.f0_subband(lps)
        assert out.shape == (45, 195)
        for i in range(45):
            assert out.values[i].tobytes() == lps.values[i].tobytes()

    def test_band_above_nyquist(self):
        with pytest.raises(FrontendError, match="Nyquist"):
            fe.f0_subband(_lps(865, 3), 0.0, 9000.0)

    def test_hz_mode_cuts_at_400(self):
        out = fe.f0_subband(_lps(865, 3), 0.0, 400.0, n_bins=None)
        assert out.shape[0] == 44  # bins 0..43 have centres below 400 Hz


class TestFixFrames:
    def test_cyclic_fill(self):
        lps = _lps(45, 195)
        out = fe.fix_frames(lps)
        assert out.shape == (45, 600)
        for j in range(600):
            assert np.array_equal(out.values[:, j], lps.values[:, j % 195])

    def test_exact_length_identity(self):
        lps = _lps(45, 600)
        assert fe.fix_frames(lps).values.tobytes() == lps.values.tobytes()

    def test_truncation(self):
        lps = _lps(45, 700)
        assert fe.fix_frames(lps).values.tobytes() == np.ascontiguousarray(lps.values[:, :600]).tobytes()

    def test_empty(self):
        with pytest.raises(FrontendError):
            fe.fix_frames(LogPowerSpectrum(np.zeros((45, 0)), 1.0))

    @settings(max_examples=30, deadline=None)
    @given(t=st.integers(1, 1300))
    def test_idempotent(self, t):
        once = fe.fix_frames(_lps(3, t))
        twice = fe.fix_frames(once)
        assert np.array_equal(once.values, twice.values)


@settings(max_examples=10, deadline=None)
@given(n=st.integers(1728, 60000))
def test_shape_law(n):
    w = Waveform(np.random.default_rng(n).uniform(-1, 1, n))
    assert fe.extract_features(w).shape == (45, 600)


def test_extract_rejects_other_rates():
    with pytest.raises(FrontendError, match="16000"):
        fe.extract_features(Waveform(np.zeros(4000), 8000))


class TestF0:
    def test_sawtooth_220(self):
        t = np.arange(16000) / 16000
        track = fe.estimate_f0(Waveform(0.5 * sawtooth(2 * np.pi * 220 * t)))
        voiced = track.f0_hz[track.voicing]
        assert voiced.size >= 0.95 * track.f0_hz.size
        assert np.mean(np.abs(voiced - 220) <= 2) >= 0.95

    def test_white_noise_unvoiced(self):
        x = np.random.default_rng(0).standard_normal(16000) * 0.3
        assert np.mean(~fe.estimate_f0(Waveform(x)).voicing) >= 0.9

    def test_silence_unvoiced(self):
        track = fe.estimate_f0(Waveform(np.zeros(16000)))
        assert not track.voicing.any()

    def test_deterministic(self):
        x = np.random.default_rng(1).standard_normal(8000)
        a = fe.estimate_f0(Waveform(x)).f0_hz
        b = fe.estimate_f0(Waveform(x)).f0_hz
        assert a.tobytes() == b.tobytes()

    def test_voicing_consistent_and_in_range(self):
        t = np.arange(16000) / 16000
        x = np.sin(2 * np.pi * (120 + 80 * t) * t)
        track = fe.estimate_f0(Waveform(x))
        assert np.array_equal(track.voicing, track.f0_hz != 0)
        voiced = track.f0_hz[track.voicing]
        assert np.all((voiced >= 50) & (voiced <= 600))

    def test_inverted_range(self):
        with pytest.raises(FrontendError):
            fe.estimate_f0(Waveform(np.zeros(1000)), search=(600, 50))

    def test_too_short(self):
        with pytest.raises(FrontendError):
            fe.estimate_f0(Waveform(np.zeros(100)))


class TestHistogram:
    def test_single_bin(self):
        hist = fe.f0_histogram([F0Track(np.full(100, 220.0), 0.01)])
        assert hist[220.0] == 100
        assert sum(hist.values()) == 100
        assert hist[210.0] == 0 and hist[230.0] == 0

    def test_conservation(self):
        a = np.concatenate([np.full(30, 150.0), np.zeros(10)])
        b = np.concatenate([np.linspace(100, 299, 70), np.zeros(5)])
        tracks = [F0Track(a, 0.01), F0Track(b, 0.01)]
        hist = fe.f0_histogram(tracks)
        assert sum(hist.values()) == 100 == sum(t.n_voiced for t in tracks)

    def test_empty(self):
        assert sum(fe.f0_histogram([]).values()) == 0

    def test_bad_width(self):
        with pytest.raises(FrontendError):
            fe.f0_histogram([], 0)

    def test_uniform_corpus_mass(self):
        rng = np.random.default_rng(11)
        tracks = []
        for _ in range(12):
            f0 = rng.uniform(100, 300)
            t = np.arange(8000) / 16000
            x = sawtooth(2 * np.pi * f0 * t) * 0.4 + 0.01 * rng.standard_normal(t.size)
            tracks.append(fe.estimate_f0(Waveform(x)))
        hist = fe.f0_histogram(tracks)
        total = sum(hist.values())
        inside = sum(c for edge, c in hist.items() if 100 <= edge < 300)
        assert total > 0 and inside / total >= 0.95


class TestFeatureCache:
    def test_round_trip(self, tmp_path):
        feat = np.random.default_rng(0).standard_normal((45, 600)).astype(np.float32)
        path = tmp_path / "a.f0sb"
        fe.write_feature(path, feat)
        raw = path.read_bytes()
        assert raw[:4] == b"F0SB"
        assert int.from_bytes(raw[4:6], "little") == 1
        assert int.from_bytes(raw[6:10], "little") == 45
        assert int.from_bytes(raw[10:14], "little") == 600
        assert len(raw) == fe.feature_record_size()
        back = fe.read_feature(path)
        assert back.tobytes() == feat.tobytes()

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "b.f0sb"
        path.write_bytes(b"XXXX" + bytes(10))
        with pytest.raises(FrontendError, match="magic"):
            fe.read_feature(path)

    def test_truncated(self, tmp_path):
        path = tmp_path / "c.f0sb"
        fe.write_feature(path, np.zeros((2, 3), np.float32))
        path.write_bytes(path.read_bytes()[:-4])
        with pytest.raises(FrontendError):
            fe.read_feature(path)
