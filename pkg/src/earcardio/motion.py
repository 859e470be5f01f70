"""Motion gating of 10 s ear-audio windows with MFCC features and a forest.

Training uses scikit-learn's random forest; the fitted trees are then
flattened to plain node arrays so that persisted classifiers predict
without scikit-learn's pickles and with bit-identical probabilities.
"""

import json
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.fft import dct
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.decomposition import PCA
from sklearn.ensemble import RandomForestClassifier
from sklearn.metrics import confusion_matrix, roc_auc_score
from sklearn.model_selection import StratifiedKFold
from sklearn.utils.validation import check_is_fitted

from .exceptions import (
    InconsistentFeatureLength,
    InvalidConfig,
    SignalTooShort,
    SingleClassDataset,
    TooFewSamples,
    WrongWindowLength,
)
from .io import atomic_write_text, dumps_json, provenance

WINDOW_S = 10.0
LOG_FLOOR = 1e-10
SCHEMA_VERSION = 1


@dataclass(frozen=True)
class MfccConfig:
    frame_ms: float = 25.0
    hop_ms: float = 10.0
    n_mel_filters: int = 26
    n_coeffs: int = 13
    fmin_hz: float = 0.0
    fmax_hz: float = None  # None means rate / 2
    min_nfft: int = 512

    def __post_init__(self):
        if not self.frame_ms > self.hop_ms > 0:
            raise InvalidConfig("need frame_ms > hop_ms > 0")
        if not 0 < self.n_coeffs <= self.n_mel_filters:
            raise InvalidConfig("need 0 < n_coeffs <= n_mel_filters")

    def frame_samples(self, rate_hz):
        return max(2, int(np.floor(self.frame_ms * rate_hz / 1000 + 0.5)))

    def hop_samples(self, rate_hz):
        return max(1, int(np.floor(self.hop_ms * rate_hz / 1000 + 0.5)))

    def nfft(self, rate_hz):
        n = self.frame_samples(rate_hz)
        return max(self.min_nfft, 1 << (n - 1).bit_length())

    def to_dict(self):
        return asdict(self)


def _hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f) / 700.0)


def _mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m) / 2595.0) - 1.0)


def mel_filterbank(n_filters, nfft, rate_hz, fmin=0.0, fmax=None):
    """Triangular filters on the mel scale, ``(n_filters, nfft // 2 + 1)``."""
    fmax = rate_hz / 2 if fmax is None else fmax
    edges = _mel_to_hz(np.linspace(_hz_to_mel(fmin), _hz_to_mel(fmax), n_filters + 2))
    freqs = np.fft.rfftfreq(nfft, 1.0 / rate_hz)
    fb = np.zeros((n_filters, freqs.size))
    for i in range(n_filters):
        lo, mid, hi = edges[i:i + 3]
        up = (freqs - lo) / (mid - lo)
        down = (hi - freqs) / (hi - mid)
        fb[i] = np.maximum(0.0, np.minimum(up, down))
    return fb


def mfcc_frames(x, rate_hz, cfg=MfccConfig()):
    """Per-frame MFCCs, ``(n_frames, n_coeffs)``."""
    x = np.asarray(x, dtype=np.float64)
    flen = cfg.frame_samples(rate_hz)
    hop = cfg.hop_samples(rate_hz)
    nfft = cfg.nfft(rate_hz)
    if x.size < flen:
        raise SignalTooShort("window shorter than one frame")
    n_frames = 1 + (x.size - flen) // hop
    idx = np.arange(flen)[None, :] + hop * np.arange(n_frames)[:, None]
    frames = x[idx] * np.hamming(flen)[None, :]
    power = np.abs(np.fft.rfft(frames, n=nfft, axis=1)) ** 2 / nfft
    fb = mel_filterbank(cfg.n_mel_filters, nfft, rate_hz, cfg.fmin_hz, cfg.fmax_hz)
    logmel = np.log(np.maximum(power @ fb.T, LOG_FLOOR))
    return dct(logmel, type=2, axis=1, norm="ortho")[:, :cfg.n_coeffs]


def mfcc_features(window, cfg=MfccConfig()):
    """Mean and std of each MFCC over a 10 s window: ``[means, stds]``."""
    rate = window.rate_hz
    expected = WINDOW_S * rate
    if abs(len(window.samples) - expected) > 1:
        raise WrongWindowLength(
            f"window has {len(window.samples)} samples, expected {expected:g} +- 1"
        )
    c = mfcc_frames(window.samples, rate, cfg)
    return np.concatenate([c.mean(axis=0), c.std(axis=0)])


def feature_matrix(windows, cfg=MfccConfig()):
    return np.array([mfcc_features(w, cfg) for w in windows])


# ---------------------------------------------------------------------------
# forest as flat node arrays

@dataclass
class FlatTree:
    feature_idx: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    leaf_prob: np.ndarray

    @classmethod
    def from_sklearn(cls, est):
        t = est.tree_
        value = t.value[:, 0, :]
        prob = value / value.sum(axis=1, keepdims=True)
        classes = list(est.classes_)
        p1 = prob[:, classes.index(1)] if 1 in classes else np.zeros(t.node_count)
        return cls(t.feature.astype(np.int64), t.threshold.astype(np.float64),
                   t.children_left.astype(np.int64), t.children_right.astype(np.int64),
                   p1.astype(np.float64))

    def predict(self, X32):
        out = np.empty(X32.shape[0])
        for r, x in enumerate(X32):
            node = 0
            while self.left[node] != -1:
                node = (self.left[node] if x[self.feature_idx[node]] <= self.threshold[node]
                        else self.right[node])
            out[r] = self.leaf_prob[node]
        return out

    def to_dict(self):
        return {
            "feature_idx": self.feature_idx.tolist(),
            "threshold": self.threshold.tolist(),
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "leaf_prob": self.leaf_prob.tolist(),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(np.asarray(d["feature_idx"], dtype=np.int64),
                   np.asarray(d["threshold"], dtype=np.float64),
                   np.asarray(d["left"], dtype=np.int64),
                   np.asarray(d["right"], dtype=np.int64),
                   np.asarray(d["leaf_prob"], dtype=np.float64))


@dataclass
class MotionClassifier:
    """Fitted gate: probability of motion for a feature vector."""

    trees: list
    n_features: int
    mfcc_config: MfccConfig = field(default_factory=MfccConfig)
    oob_accuracy: float = None

    def __post_init__(self):
        for t in self.trees:
            internal = t.left != -1
            if np.any(t.feature_idx[internal] >= self.n_features):
                raise InvalidConfig("tree feature index out of range")

    @property
    def n_trees(self):
        return len(self.trees)

    def predict_proba(self, features):
        X = np.atleast_2d(np.asarray(features, dtype=np.float64))
        if X.shape[1] != self.n_features:
            raise InconsistentFeatureLength(
                f"expected {self.n_features} features, got {X.shape[1]}"
            )
        X32 = X.astype(np.float32)
        p = np.zeros(X.shape[0])
        for t in self.trees:
            p += t.predict(X32)
        return np.clip(p / len(self.trees), 0.0, 1.0)

    def predict_window(self, window):
        return float(self.predict_proba(mfcc_features(window, self.mfcc_config))[0])

    def to_dict(self, config=None):
        return {
            "schema_version": SCHEMA_VERSION,
            "mfcc_config": self.mfcc_config.to_dict(),
            "feature_spec": {
                "aggregation": ["mean", "std"],
                "n_coeffs": self.mfcc_config.n_coeffs,
                "length": self.n_features,
            },
            "oob_accuracy": self.oob_accuracy,
            "trees": [t.to_dict() for t in self.trees],
            "provenance": provenance(config),
        }

    @classmethod
    def from_dict(cls, d):
        if d.get("schema_version") != SCHEMA_VERSION:
            raise ValueError(f"unsupported classifier schema {d.get('schema_version')}")
        return cls([FlatTree.from_dict(t) for t in d["trees"]],
                   int(d["feature_spec"]["length"]),
                   MfccConfig(**d["mfcc_config"]),
                   d.get("oob_accuracy"))

    def save(self, path, config=None):
        atomic_write_text(path, dumps_json(self.to_dict(config)))

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def _check_dataset(features, labels):
    try:
        X = np.asarray(features, dtype=np.float64)
    except ValueError as exc:
        raise InconsistentFeatureLength("feature vectors differ in length") from exc
    if X.ndim != 2:
        raise InconsistentFeatureLength("feature vectors differ in length")
    y = np.asarray(labels).astype(int)
    if y.shape[0] != X.shape[0]:
        raise InconsistentFeatureLength("features and labels differ in count")
    if np.unique(y).size < 2:
        raise SingleClassDataset("both Static (0) and Motion (1) labels are required")
    return X, y


def _forest(n_trees, seed):
    return RandomForestClassifier(
        n_estimators=n_trees, criterion="gini", max_depth=None,
        max_features="sqrt", bootstrap=True, random_state=seed, n_jobs=1,
    )


def train_motion_classifier(features, labels, n_trees=100, seed=0, mfcc_config=MfccConfig()):
    """Fit the forest (labels: 0 = Static, 1 = Motion) and flatten it."""
    X, y = _check_dataset(features, labels)
    rf = _forest(n_trees, seed)
    rf.set_params(oob_score=X.shape[0] >= 10)
    rf.fit(X, y)
    oob = float(rf.oob_score_) if rf.oob_score else None
    trees = [FlatTree.from_sklearn(e) for e in rf.estimators_]
    return MotionClassifier(trees, X.shape[1], mfcc_config, oob)


@dataclass(frozen=True)
class CvReport:
    auc: float
    accuracy: float
    confusion: np.ndarray
    fold_accuracy: tuple
    oof_proba: np.ndarray

    def to_dict(self):
        return {
            "auc": self.auc,
            "accuracy": self.accuracy,
            "confusion": self.confusion.tolist(),
            "fold_accuracy": list(self.fold_accuracy),
        }


def evaluate_cv(features, labels, k=5, seed=0, n_trees=100, threshold_p=0.5):
    """Stratified k-fold CV; AUC over pooled out-of-fold probabilities."""
    X, y = _check_dataset(features, labels)
    if k < 2 or np.bincount(y).min() < k:
        raise TooFewSamples(f"each class needs at least k={k} samples")
    oof = np.zeros(y.size)
    folds = StratifiedKFold(n_splits=k, shuffle=True, random_state=seed)
    fold_acc = []
    for i, (tr, te) in enumerate(folds.split(X, y)):
        clf = train_motion_classifier(X[tr], y[tr], n_trees, seed + i)
        oof[te] = clf.predict_proba(X[te])
        fold_acc.append(float(np.mean((oof[te] >= threshold_p) == y[te])))
    pred = (oof >= threshold_p).astype(int)
    return CvReport(
        float(roc_auc_score(y, oof)), float(np.mean(pred == y)),
        confusion_matrix(y, pred, labels=[0, 1]), tuple(fold_acc), oof,
    )


@dataclass(frozen=True)
class GateReport:
    probabilities: tuple
    dropped: tuple
    kept: tuple
    window_samples: int
    remainder_samples: int

    def to_dict(self):
        return asdict(self)


def gate_stream(signal, clf, threshold_p=0.5):
    """Split into consecutive 10 s windows and drop those classed as motion.

    Returns ``(kept_windows, report)``; the trailing partial window is
    discarded and counted in ``report.remainder_samples``.
    """
    w = int(round(WINDOW_S * signal.rate_hz))
    n = len(signal.samples)
    if n < w:
        raise SignalTooShort("gating needs at least 10 s of signal")
    n_win = n // w
    probs, kept, dropped, windows = [], [], [], []
    for i in range(n_win):
        win = signal.with_samples(signal.samples[i * w:(i + 1) * w])
        p = clf.predict_window(win)
        probs.append(p)
        if p >= threshold_p:
            dropped.append(i)
        else:
            kept.append(i)
            windows.append(win)
    report = GateReport(tuple(probs), tuple(dropped), tuple(kept), w, n - n_win * w)
    return windows, report


def pca_projection(features, n_components=2):
    """First principal components of the feature matrix, for plotting."""
    X = np.asarray(features, dtype=np.float64)
    return PCA(n_components=n_components, svd_solver="full").fit_transform(X)


class MotionGate(BaseEstimator, ClassifierMixin):
    """Estimator wrapper: ``fit(windows, labels)``, ``predict_proba(windows)``.

    ``X`` may be a list of 10 s :class:`SampledSignal` windows or a
    precomputed feature matrix.
    """

    def __init__(self, n_trees=100, threshold_p=0.5, seed=0):
        self.n_trees = n_trees
        self.threshold_p = threshold_p
        self.seed = seed

    @staticmethod
    def _features(X):
        if len(X) and hasattr(X[0], "samples"):
            return feature_matrix(X)
        return np.asarray(X, dtype=np.float64)

    def fit(self, X, y):
        self.classifier_ = train_motion_classifier(self._features(X), y, self.n_trees, self.seed)
        self.classes_ = np.array([0, 1])
        return self

    def predict_proba(self, X):
        check_is_fitted(self, "classifier_")
        p = self.classifier_.predict_proba(self._features(X))
        return np.column_stack([1 - p, p])

    def predict(self, X):
        return (self.predict_proba(X)[:, 1] >= self.threshold_p).astype(int)
