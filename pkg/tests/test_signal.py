import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from earcardio.exceptions import EmptySignal, InvalidBand, NonPositiveRate, SignalTooShort
from earcardio.signal import (
    BandpassSpec,
    Modality,
    SampledSignal,
    SignalConditioner,
    bandpass,
    fft,
    ifft,
    resample,
    settling_length,
    zscore,
    zscore_array,
)


def sine(freq, rate, dur, amp=1.0, phase=0.0):
    t = np.arange(int(round(rate * dur))) / rate
    return SampledSignal(amp * np.sin(2 * np.pi * freq * t + phase), rate, Modality.EAR)


def tone_amplitude(x, rate, freq):
    """Amplitude of a sinusoid at ``freq`` by projection (exact for whole cycles)."""
    t = np.arange(x.size) / rate
    c = np.dot(x, np.cos(2 * np.pi * freq * t))
    s = np.dot(x, np.sin(2 * np.pi * freq * t))
    return 2 * np.hypot(c, s) / x.size


def peak_freq(x, rate):
    spec = np.abs(np.fft.rfft(x * np.hanning(x.size)))
    k = int(np.argmax(spec))
    # parabolic refinement on the log spectrum
    a, b, c = np.log(spec[k - 1:k + 2])
    delta = 0.5 * (a - c) / (a - 2 * b + c)
    return (k + delta) * rate / x.size


class TestSampledSignal:
    def test_rejects_non_positive_rate(self):
        with pytest.raises(NonPositiveRate):
            SampledSignal(np.ones(4), 0.0)

    def test_rejects_nan(self):
        with pytest.raises(ValueError):
            SampledSignal(np.array([1.0, np.nan]), 500.0)

    def test_samples_are_read_only(self):
        s = SampledSignal(np.ones(4), 500.0)
        with pytest.raises(ValueError):
            s.samples[0] = 2.0


class TestResample:
    def test_20hz_tone_from_16k(self):
        src = sine(20.0, 16000.0, 2.0)
        out = resample(src, 500.0)
        assert out.rate_hz == 500.0
        assert abs(peak_freq(out.samples, 500.0) - 20.0) <= 0.1
        amp = tone_amplitude(out.samples[100:-100], 500.0, 20.0)
        assert abs(amp - 1.0) <= 0.01

    def test_identity_rate(self):
        src = sine(7.0, 500.0, 1.0)
        np.testing.assert_allclose(resample(src, 500.0).samples, src.samples, atol=1e-9)

    def test_constant_at_454hz(self):
        src = SampledSignal(np.full(908, 3.2), 454.0)
        out = resample(src, 500.0)
        np.testing.assert_allclose(out.samples[50:-50], 3.2, atol=1e-6)

    def test_duration_preserved(self):
        src = SampledSignal(np.random.default_rng(0).standard_normal(4545), 454.0)
        out = resample(src, 500.0)
        assert abs(out.duration_s - src.duration_s) <= 1 / 500.0

    def test_round_trip_band_limited(self):
        rng = np.random.default_rng(1)
        t = np.arange(5000) / 500.0
        x = sum(rng.uniform(0.2, 1) * np.sin(2 * np.pi * f * t + rng.uniform(0, 6))
                for f in (3.0, 17.0, 41.0, 80.0))
        src = SampledSignal(x, 500.0)
        back = resample(resample(src, 454.0), 500.0)
        inner = slice(200, -200)
        err = np.sqrt(np.mean((back.samples[inner] - x[inner]) ** 2) / np.mean(x[inner] ** 2))
        assert err < 0.01

    def test_errors(self):
        with pytest.raises(EmptySignal):
            resample(SampledSignal(np.zeros(0), 500.0), 250.0)
        with pytest.raises(NonPositiveRate):
            resample(SampledSignal(np.ones(10), 500.0), 0.0)

    def test_pure(self):
        src = sine(13.0, 16000.0, 0.5)
        a = resample(src, 500.0).samples
        b = resample(src, 500.0).samples
        assert a.tobytes() == b.tobytes()


class TestBandpass:
    def test_passband_25hz(self):
        out = bandpass(sine(25.0, 500.0, 10.0))
        gain_db = 20 * np.log10(tone_amplitude(out.samples, 500.0, 25.0))
        assert abs(gain_db) <= 0.5

    @pytest.mark.parametrize("freq", [1.0, 100.0])
    def test_stopband(self, freq):
        out = bandpass(sine(freq, 500.0, 10.0))
        gain_db = 20 * np.log10(tone_amplitude(out.samples, 500.0, freq))
        assert gain_db <= -20.0

    def test_zero_phase(self):
        src = sine(25.0, 500.0, 10.0)
        out = bandpass(src)
        inner = slice(1000, 4000)
        a, b = src.samples[inner], out.samples[inner]
        lags = np.arange(-5, 6)
        xc = [np.dot(a, np.roll(b, k)) for k in lags]
        assert lags[int(np.argmax(xc))] == 0

    def test_eight_poles(self):
        from scipy.signal import butter

        sos = butter(4, [5, 45], btype="bandpass", fs=500, output="sos")
        assert sos.shape == (4, 6)

    def test_same_length_and_rate(self):
        src = sine(20.0, 500.0, 3.0)
        out = bandpass(src)
        assert len(out) == len(src) and out.rate_hz == src.rate_hz

    def test_too_short(self):
        n = 3 * settling_length(BandpassSpec(), 500.0) - 1
        with pytest.raises(SignalTooShort):
            bandpass(SampledSignal(np.ones(n), 500.0))

    @pytest.mark.parametrize("spec", [BandpassSpec(45, 5), BandpassSpec(5, 300), BandpassSpec(0, 45)])
    def test_invalid_band(self, spec):
        with pytest.raises(InvalidBand):
            bandpass(SampledSignal(np.ones(5000), 500.0), spec)


class TestZscore:
    def test_constant(self):
        assert np.all(zscore(SampledSignal(np.full(9, 4.0), 500.0)).samples == 0)

    def test_three_points(self):
        np.testing.assert_allclose(zscore_array([1, 2, 3]), [-1.224745, 0, 1.224745], atol=1e-6)

    @settings(max_examples=50, deadline=None)
    @given(arrays(np.float64, st.integers(2, 300),
                  elements=st.floats(-1e3, 1e3, allow_nan=False)))
    def test_moments_and_idempotence(self, x):
        if np.std(x) < 1e-6:
            return
        z = zscore_array(x)
        assert abs(z.mean()) < 1e-9
        assert abs(z.std() - 1) < 1e-9
        np.testing.assert_allclose(zscore_array(z), z, atol=1e-9)


class TestFFT:
    def test_impulse(self):
        x = np.zeros(8)
        x[0] = 1
        np.testing.assert_allclose(fft(x).bins, np.ones(8), atol=0)

    def test_conjugate_symmetry(self):
        x = np.random.default_rng(2).standard_normal(400)
        X = fft(x).bins
        np.testing.assert_allclose(X[1:], np.conj(X[1:][::-1]), rtol=1e-12, atol=1e-12)

    @pytest.mark.parametrize("seed", range(5))
    def test_parseval_and_round_trip(self, seed):
        x = np.random.default_rng(seed).standard_normal(400)
        X = fft(x).bins
        lhs = np.sum(x ** 2)
        rhs = np.sum(np.abs(X) ** 2) / x.size
        assert abs(lhs - rhs) / lhs < 1e-9
        back = ifft(fft(x))
        assert np.linalg.norm(back - x) / np.linalg.norm(x) < 1e-9

    def test_against_direct_dft(self):
        x = np.random.default_rng(3).standard_normal(50)
        n = np.arange(50)
        direct = np.exp(-2j * np.pi * np.outer(n, n) / 50) @ x
        np.testing.assert_allclose(fft(x).bins, direct, rtol=1e-9, atol=1e-9)

    def test_empty(self):
        with pytest.raises(EmptySignal):
            fft(np.zeros(0))


def test_conditioner_estimator():
    src = SampledSignal(np.random.default_rng(0).standard_normal(32000), 16000.0)
    est = SignalConditioner(normalize=True)
    (out,) = est.fit_transform(src)
    assert len(out) == 1000 and out.rate_hz == 500.0
    assert abs(out.samples.std() - 1.0) < 1e-9
    assert est.get_params()["low_hz"] == 5.0
