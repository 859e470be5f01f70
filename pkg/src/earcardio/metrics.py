"""Waveform similarity and timing statistics.

Standard deviations are population (``ddof=0``) throughout; percentiles use
linear interpolation between closest ranks.
"""

import csv
import io as _io
from dataclasses import asdict, dataclass
from enum import Enum
from itertools import combinations

import numpy as np

from ._validation import as_cycles
from .exceptions import ConstantInput, EmptyInput, LengthMismatch, TooFewCycles, TooFewSets
from .fiducial import fiducial_distances


class Grouping(str, Enum):
    INTRA_SESSION = "IntraSession"
    INTER_SESSION = "InterSession"
    INTER_USER = "InterUser"
    INTER_DEVICE = "InterDevice"


@dataclass(frozen=True)
class VariabilityReport:
    mean_r: float
    std_r: float
    n_pairs: int
    grouping: Grouping

    def to_dict(self):
        d = asdict(self)
        d["grouping"] = self.grouping.value
        return d


def pearson(a, b):
    """Pearson correlation of two equal-length, non-constant sequences."""
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.size != b.size:
        raise LengthMismatch(f"lengths differ: {a.size} vs {b.size}")
    if a.size < 2:
        raise LengthMismatch("need at least two samples")
    da = a - a.mean()
    db = b - b.mean()
    na = np.sqrt(np.dot(da, da))
    nb = np.sqrt(np.dot(db, db))
    if na == 0 or nb == 0:
        raise ConstantInput("Pearson correlation is undefined for a constant input")
    return float(np.clip(np.dot(da, db) / (na * nb), -1.0, 1.0))


def rowwise_pearson(A, B):
    """Pearson r between matching rows of two ``(n, L)`` matrices."""
    A = as_cycles(A, length=None)
    B = as_cycles(B, length=None)
    if A.shape != B.shape:
        raise LengthMismatch(f"shapes differ: {A.shape} vs {B.shape}")
    return np.array([pearson(a, b) for a, b in zip(A, B)])


def cycle_variability(cycles, grouping=Grouping.INTRA_SESSION):
    """Mean and std of Pearson r over all unordered pairs of cycles."""
    X = as_cycles(cycles, length=None)
    if X.shape[0] < 2:
        raise TooFewCycles("need at least two cycles")
    rs = np.array([pearson(X[i], X[j]) for i, j in combinations(range(X.shape[0]), 2)])
    return VariabilityReport(float(rs.mean()), float(rs.std()), int(rs.size), Grouping(grouping))


def cross_variability(cycles_a, cycles_b, grouping=Grouping.INTER_SESSION):
    """Mean and std of Pearson r over all pairs drawn one from each group."""
    A = as_cycles(cycles_a, length=None)
    B = as_cycles(cycles_b, length=None)
    rs = np.array([pearson(a, b) for a in A for b in B])
    if rs.size == 0:
        raise TooFewCycles("both groups need cycles")
    return VariabilityReport(float(rs.mean()), float(rs.std()), int(rs.size), Grouping(grouping))


def fiducial_variability(sets):
    """Population std (ms) of each AO-anchored interval over many cycles."""
    sets = [s for s in sets if s is not None]
    if len(sets) < 2:
        raise TooFewSets("need at least two fiducial sets")
    rows = [fiducial_distances(s) for s in sets]
    return {k: float(np.std([r[k] for r in rows])) for k in rows[0]}


@dataclass(frozen=True)
class PercentileReport:
    median: float
    p95: float
    cdf_values: np.ndarray
    cdf_fraction: np.ndarray

    def to_dict(self):
        return {"median": self.median, "p95": self.p95}

    def cdf_csv(self):
        buf = _io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["error_ms", "fraction"])
        for v, f in zip(self.cdf_values, self.cdf_fraction):
            w.writerow([f"{v:g}", f"{f:.6g}"])
        return buf.getvalue()


def error_percentiles(errors_ms):
    """Median, 95th percentile and empirical CDF of absolute errors."""
    e = np.asarray(errors_ms, dtype=np.float64).ravel()
    if e.size == 0:
        raise EmptyInput("no errors to summarise")
    med, p95 = np.percentile(e, [50, 95], method="linear")
    v = np.sort(e)
    frac = np.arange(1, v.size + 1) / v.size
    return PercentileReport(float(med), float(p95), v, frac)
