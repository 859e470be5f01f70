"""Cross-device normalisation by frequency-domain equalisation of mean cycles.

A profile maps cycles recorded by a target device into the response space
of a reference device::

    H(f) = X_ref(f) conj(X_tgt(f)) / (|X_tgt(f)|^2 + eps)

and each equalised cycle is rescaled to the L2 norm of the reference mean
cycle. Transforms are circular over the whole cycle, without windowing.
"""

import json
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import CYCLE_LEN, as_cycles
from .exceptions import DegenerateTarget, ShapeMismatch, TooFewCycles, ZeroOutput
from .io import atomic_write_text, dumps_json, provenance

SCHEMA_VERSION = 1


@dataclass(frozen=True)
class EqualizerProfile:
    weights: np.ndarray
    epsilon: float
    ref_energy: float
    ref_device_id: str = "ref"
    tgt_device_id: str = "tgt"

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.complex128)
        if w.ndim != 1 or not np.all(np.isfinite(w)):
            raise ValueError("weights must be a finite 1-D complex array")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        object.__setattr__(self, "weights", w)

    def to_dict(self, config=None):
        return {
            "schema_version": SCHEMA_VERSION,
            "epsilon": self.epsilon,
            "ref_energy": self.ref_energy,
            "ref_device_id": self.ref_device_id,
            "tgt_device_id": self.tgt_device_id,
            "weights": [[float(z.real), float(z.imag)] for z in self.weights],
            "provenance": provenance(config),
        }

    @classmethod
    def from_dict(cls, d):
        if d.get("schema_version") != SCHEMA_VERSION:
            raise ValueError(f"unsupported profile schema {d.get('schema_version')}")
        w = np.array([complex(re, im) for re, im in d["weights"]])
        return cls(w, float(d["epsilon"]), float(d["ref_energy"]),
                   d.get("ref_device_id", "ref"), d.get("tgt_device_id", "tgt"))

    def save(self, path, config=None):
        atomic_write_text(path, dumps_json(self.to_dict(config)))

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def mean_cycle(cycles, n=10):
    """Element-wise mean of the first ``n`` cycles."""
    X = as_cycles(cycles, length=None)
    if X.shape[0] < n:
        raise TooFewCycles(f"need {n} cycles, got {X.shape[0]}")
    return X[:n].mean(axis=0)


def compute_equalizer(ref_mean, tgt_mean, epsilon_rel=1e-6, ref_device_id="ref",
                      tgt_device_id="tgt"):
    """Build the profile mapping ``tgt_mean`` onto ``ref_mean``.

    ``epsilon = epsilon_rel * max |X_tgt|^2`` keeps the regulariser
    scale-free.
    """
    x_ref = np.asarray(getattr(ref_mean, "samples", ref_mean), dtype=np.float64)
    x_tgt = np.asarray(getattr(tgt_mean, "samples", tgt_mean), dtype=np.float64)
    if x_ref.shape != x_tgt.shape or x_ref.ndim != 1:
        raise ShapeMismatch(f"mean cycles differ in shape: {x_ref.shape} vs {x_tgt.shape}")
    X_ref = np.fft.fft(x_ref)
    X_tgt = np.fft.fft(x_tgt)
    power = np.abs(X_tgt) ** 2
    peak = power.max()
    if peak == 0:
        raise DegenerateTarget("target mean cycle is all zeros")
    eps = epsilon_rel * peak
    H = X_ref * np.conj(X_tgt) / (power + eps)
    return EqualizerProfile(H, float(eps), float(np.linalg.norm(x_ref)),
                            ref_device_id, tgt_device_id)


def equalize_raw(profile, cycle):
    """The linear part: inverse transform of ``H * X``, before rescaling."""
    x = np.asarray(getattr(cycle, "samples", cycle), dtype=np.float64)
    if x.shape != profile.weights.shape:
        raise ShapeMismatch(f"cycle length {x.size} != profile length {profile.weights.size}")
    return np.fft.ifft(profile.weights * np.fft.fft(x)).real


def apply_equalizer(profile, cycle):
    """Equalise one cycle and rescale it to the reference energy."""
    xh = equalize_raw(profile, cycle)
    norm = np.linalg.norm(xh)
    if norm < 1e-12:
        raise ZeroOutput("equalised cycle has (near) zero energy")
    return xh * (profile.ref_energy / norm)


class CycleEqualizer(BaseEstimator, TransformerMixin):
    """Estimator form of the device equaliser.

    ``fit(X_target, X_reference)`` averages the first ``n_cycles`` rows of
    each and derives the profile; ``transform`` equalises target cycles.
    """

    def __init__(self, n_cycles=10, epsilon_rel=1e-6):
        self.n_cycles = n_cycles
        self.epsilon_rel = epsilon_rel

    def fit(self, X, y):
        tgt = mean_cycle(as_cycles(X, length=None), self.n_cycles)
        ref = mean_cycle(as_cycles(y, length=None), self.n_cycles)
        self.profile_ = compute_equalizer(ref, tgt, self.epsilon_rel)
        return self

    def transform(self, X):
        check_is_fitted(self, "profile_")
        X = as_cycles(X, length=self.profile_.weights.size)
        return np.array([apply_equalizer(self.profile_, x) for x in X])


def identity_profile(length=CYCLE_LEN, ref_energy=1.0):
    """Profile with ``H = 1`` everywhere (no-op apart from energy matching)."""
    return EqualizerProfile(np.ones(length, dtype=complex), 1e-12, ref_energy)
