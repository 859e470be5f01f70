"""Waveform types and conditioning: resampling, band-pass, z-score, FFT.

All functions are pure: they never modify their inputs and return new
:class:`SampledSignal` objects whose sample arrays are read-only.
"""

from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from functools import lru_cache
from typing import Optional

import numpy as np
import scipy.signal as ss
from sklearn.base import BaseEstimator, TransformerMixin

from ._validation import as_1d
from .exceptions import EmptySignal, InvalidBand, NonPositiveRate, SignalTooShort

TARGET_RATE_HZ = 500.0

# Kaiser windowed-sinc resampler: 64 taps per phase (in units of the
# slower of the two rates), beta = 8.6.
_TAPS_PER_PHASE = 64
_KAISER_BETA = 8.6


class Modality(str, Enum):
    EAR = "EarSound"
    SCG = "SCG"
    GCG = "GCG"
    OTHER = "Other"


@dataclass(frozen=True)
class SampledSignal:
    """Uniformly sampled real waveform.

    Parameters
    ----------
    samples : array_like
        Amplitudes. Stored as a read-only float64 array.
    rate_hz : float
        Sampling rate in Hz.
    modality : Modality
        What the waveform measures.
    channel_id : str, optional
        Free label such as ``"left"`` or ``"right"``.
    """

    samples: np.ndarray
    rate_hz: float
    modality: Modality = Modality.OTHER
    channel_id: Optional[str] = None

    def __post_init__(self):
        arr = as_1d(self.samples, "samples", allow_empty=True).copy()
        arr.setflags(write=False)
        object.__setattr__(self, "samples", arr)
        object.__setattr__(self, "modality", Modality(self.modality))
        if not self.rate_hz > 0:
            raise NonPositiveRate(f"rate_hz must be > 0, got {self.rate_hz}")
        object.__setattr__(self, "rate_hz", float(self.rate_hz))

    def __len__(self):
        return self.samples.size

    @property
    def duration_s(self):
        return self.samples.size / self.rate_hz

    def with_samples(self, samples, rate_hz=None):
        """Copy of this signal with new samples (and optionally a new rate)."""
        return SampledSignal(
            samples,
            self.rate_hz if rate_hz is None else rate_hz,
            self.modality,
            self.channel_id,
        )


@dataclass(frozen=True)
class Spectrum:
    """Full complex DFT of a real or complex sequence."""

    bins: np.ndarray
    rate_hz: float = 1.0
    length_n: int = field(default=0)

    def __post_init__(self):
        bins = np.asarray(self.bins, dtype=np.complex128)
        object.__setattr__(self, "bins", bins)
        object.__setattr__(self, "length_n", bins.size)

    @property
    def freqs_hz(self):
        return np.fft.fftfreq(self.length_n, d=1.0 / self.rate_hz)


@dataclass(frozen=True)
class BandpassSpec:
    low_hz: float = 5.0
    high_hz: float = 45.0
    prototype_order: int = 4

    def validate(self, rate_hz):
        if not 0 < self.low_hz < self.high_hz < rate_hz / 2:
            raise InvalidBand(
                f"need 0 < {self.low_hz} < {self.high_hz} < {rate_hz / 2} Hz"
            )
        if self.prototype_order < 1:
            raise InvalidBand("prototype_order must be >= 1")


def _check_signal(signal):
    if len(signal) == 0:
        raise EmptySignal("signal has no samples")


def _rational_ratio(target, source):
    ratio = Fraction(target).limit_denominator(1_000_000) / Fraction(
        source
    ).limit_denominator(1_000_000)
    ratio = ratio.limit_denominator(1000)
    return ratio.numerator, ratio.denominator


@lru_cache(maxsize=32)
def _polyphase_filter(up, down):
    max_rate = max(up, down)
    half_len = _TAPS_PER_PHASE // 2 * max_rate
    h = ss.firwin(2 * half_len + 1, 1.0 / max_rate, window=("kaiser", _KAISER_BETA))
    # exact unit DC gain on every polyphase branch; resample_poly scales by up
    for p in range(up):
        h[p::up] /= h[p::up].sum() * up
    h.setflags(write=False)
    return h, half_len


def resample(signal, target_rate_hz=TARGET_RATE_HZ):
    """Resample onto a new uniform grid with a polyphase windowed sinc.

    Edges are extended by odd reflection before filtering and trimmed
    afterwards, so constants and smooth trends survive up to the last
    sample. The output has ``ceil(N * target / rate)`` samples.

    Raises
    ------
    EmptySignal, NonPositiveRate
    """
    _check_signal(signal)
    if not target_rate_hz > 0:
        raise NonPositiveRate(f"target_rate_hz must be > 0, got {target_rate_hz}")
    if target_rate_hz == signal.rate_hz:
        return signal.with_samples(signal.samples)
    up, down = _rational_ratio(target_rate_hz, signal.rate_hz)
    x = signal.samples
    n_in = x.size
    n_out = -(-n_in * up // down)
    if n_in == 1:
        return signal.with_samples(np.repeat(x, n_out), target_rate_hz)
    h, half_len = _polyphase_filter(up, down)
    # pad by a multiple of `down` input samples so the trim is exact
    pad_in = -(-half_len // up) + 1
    m = -(-pad_in // down)
    pad = m * down
    xp = np.pad(x, pad, mode="reflect", reflect_type="odd")
    y = ss.resample_poly(xp, up, down, window=h)
    start = m * up
    return signal.with_samples(y[start:start + n_out], target_rate_hz)


@lru_cache(maxsize=64)
def _butter_sos(low, high, order, rate):
    return ss.butter(order, [low, high], btype="bandpass", fs=rate, output="sos")


@lru_cache(maxsize=64)
def settling_length(spec=BandpassSpec(), rate_hz=TARGET_RATE_HZ, tol=1e-6):
    """Samples until the single-pass impulse response keeps < ``tol`` of its energy."""
    spec.validate(rate_hz)
    sos = _butter_sos(spec.low_hz, spec.high_hz, spec.prototype_order, rate_hz)
    n = int(20 * rate_hz / spec.low_hz)
    imp = np.zeros(n)
    imp[0] = 1.0
    e = ss.sosfilt(sos, imp) ** 2
    tail = np.cumsum(e[::-1])[::-1] / e.sum()
    return int(np.argmax(tail < tol))


def bandpass(signal, spec=BandpassSpec()):
    """Zero-phase Butterworth band-pass.

    ``prototype_order`` is the low-pass prototype order, so the default
    design has 8 poles. The filter runs forward and backward over an
    odd-reflected 1 s extension that is trimmed afterwards.

    Raises
    ------
    InvalidBand
        Band edges outside ``(0, rate/2)`` or reversed.
    SignalTooShort
        Fewer than three settling lengths of samples.
    """
    _check_signal(signal)
    spec.validate(signal.rate_hz)
    need = 3 * settling_length(spec, signal.rate_hz)
    if len(signal) < need:
        raise SignalTooShort(
            f"band-pass needs >= {need} samples at {signal.rate_hz} Hz, "
            f"got {len(signal)}"
        )
    sos = _butter_sos(spec.low_hz, spec.high_hz, spec.prototype_order, signal.rate_hz)
    padlen = min(int(round(signal.rate_hz)), len(signal) - 1)
    y = ss.sosfiltfilt(sos, signal.samples, padtype="odd", padlen=padlen)
    return signal.with_samples(y)


def zscore_array(x):
    x = np.asarray(x, dtype=np.float64)
    sd = x.std()
    if sd < 1e-12:
        return np.zeros_like(x)
    return (x - x.mean()) / sd


def zscore(signal):
    """Zero mean, unit population variance; a flat signal maps to zeros."""
    _check_signal(signal)
    return signal.with_samples(zscore_array(signal.samples))


def fft(x, rate_hz=None):
    """Forward DFT at the natural length (no zero-padding).

    Accepts a :class:`SampledSignal`, anything with ``samples``, or an array.
    """
    if rate_hz is None:
        rate_hz = getattr(x, "rate_hz", TARGET_RATE_HZ)
    samples = np.asarray(getattr(x, "samples", x))
    if samples.size == 0:
        raise EmptySignal("cannot transform an empty sequence")
    return Spectrum(np.fft.fft(samples), rate_hz)


def ifft(spectrum, real=True):
    """Inverse of :func:`fft`. Drops the imaginary residue when ``real``."""
    bins = spectrum.bins if isinstance(spectrum, Spectrum) else np.asarray(spectrum)
    if bins.size == 0:
        raise EmptySignal("cannot invert an empty spectrum")
    out = np.fft.ifft(bins)
    return out.real if real else out


def condition(signal, spec=BandpassSpec(), rate_hz=TARGET_RATE_HZ):
    """Resample to ``rate_hz`` then band-pass. Z-scoring happens per cycle."""
    return bandpass(resample(signal, rate_hz), spec)


class SignalConditioner(BaseEstimator, TransformerMixin):
    """Stateless transformer wrapping :func:`condition` (plus optional z-score).

    ``transform`` takes a sequence of :class:`SampledSignal` and returns a list
    of conditioned signals, so it slots into a scikit-learn ``Pipeline`` that
    works on recordings rather than feature matrices.
    """

    def __init__(self, target_rate_hz=TARGET_RATE_HZ, low_hz=5.0, high_hz=45.0,
                 prototype_order=4, normalize=False):
        self.target_rate_hz = target_rate_hz
        self.low_hz = low_hz
        self.high_hz = high_hz
        self.prototype_order = prototype_order
        self.normalize = normalize

    def fit(self, X=None, y=None):
        BandpassSpec(self.low_hz, self.high_hz, self.prototype_order).validate(
            self.target_rate_hz
        )
        return self

    def transform(self, X):
        if isinstance(X, SampledSignal):
            X = [X]
        spec = BandpassSpec(self.low_hz, self.high_hz, self.prototype_order)
        out = [condition(s, spec, self.target_rate_hz) for s in X]
        if self.normalize:
            out = [zscore(s) for s in out]
        return out
