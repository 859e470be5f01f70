"""Five-point fiducial labelling of SCG/GCG cycles and timing statistics."""

import csv
import io as _io
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from ._validation import as_cycles
from .exceptions import NoLeftPeak, NoRightPeak
from .io import atomic_write_text
from .segmentation import local_maxima

EVENTS = ("mc", "im", "ao", "ma", "re")
MS_PER_SAMPLE = 2.0  # 500 Hz


@dataclass(frozen=True)
class FiducialSet:
    mc: int
    im: int
    ao: int
    ma: int
    re: int

    def __post_init__(self):
        idx = self.as_array()
        if np.any(np.diff(idx) <= 0):
            raise ValueError(f"fiducials out of order: {idx.tolist()}")

    def as_array(self):
        return np.array([self.mc, self.im, self.ao, self.ma, self.re], dtype=int)

    def as_ms(self, ms_per_sample=MS_PER_SAMPLE):
        return {k: v * ms_per_sample for k, v in zip(EVENTS, self.as_array())}


def label_fiducials(cycle):
    """Label MC, IM, AO, MA and RE on one cycle.

    AO is the global maximum (first occurrence). MC and RE are the tallest
    local maxima strictly left and right of AO. IM and MA are the minima
    strictly inside (MC, AO) and (AO, RE).

    Raises
    ------
    NoLeftPeak, NoRightPeak
        No local maximum on that side of AO.
    """
    x = np.asarray(getattr(cycle, "samples", cycle), dtype=np.float64)
    ao = int(np.argmax(x))
    peaks = local_maxima(x)
    left = peaks[peaks < ao]
    right = peaks[peaks > ao]
    if left.size == 0:
        raise NoLeftPeak(f"no local maximum left of AO at {ao}")
    if right.size == 0:
        raise NoRightPeak(f"no local maximum right of AO at {ao}")
    mc = int(left[np.argmax(x[left])])
    re = int(right[np.argmax(x[right])])
    if ao - mc < 2:
        raise NoLeftPeak("MC adjacent to AO leaves no room for IM")
    if re - ao < 2:
        raise NoRightPeak("RE adjacent to AO leaves no room for MA")
    im = mc + 1 + int(np.argmin(x[mc + 1:ao]))
    ma = ao + 1 + int(np.argmin(x[ao + 1:re]))
    return FiducialSet(mc, im, ao, ma, re)


def label_cycles(cycles):
    """Label many cycles. Returns ``(sets, rejected)`` where ``sets`` holds
    ``None`` for each rejected cycle and ``rejected`` lists their indices."""
    sets, rejected = [], []
    for i, c in enumerate(cycles):
        try:
            sets.append(label_fiducials(c))
        except (NoLeftPeak, NoRightPeak):
            sets.append(None)
            rejected.append(i)
    return sets, rejected


def fiducial_distances(fs, ms_per_sample=MS_PER_SAMPLE):
    """Absolute AO-to-event distances in ms."""
    return {
        "ao_mc": abs(fs.ao - fs.mc) * ms_per_sample,
        "ao_im": abs(fs.ao - fs.im) * ms_per_sample,
        "ao_ma": abs(fs.ma - fs.ao) * ms_per_sample,
        "ao_re": abs(fs.re - fs.ao) * ms_per_sample,
    }


def timing_error(pred, truth, ms_per_sample=MS_PER_SAMPLE):
    """Per-event absolute timing error in ms."""
    d = np.abs(pred.as_array() - truth.as_array()) * ms_per_sample
    return dict(zip(EVENTS, d.tolist()))


def fiducials_to_csv(sets, ids=None, ms_per_sample=MS_PER_SAMPLE):
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["cycle_id"] + [f"{e}_ms" for e in EVENTS])
    ids = range(len(sets)) if ids is None else ids
    for cid, fs in zip(ids, sets):
        if fs is None:
            continue
        w.writerow([cid] + [f"{v * ms_per_sample:g}" for v in fs.as_array()])
    return buf.getvalue()


def write_fiducials_csv(path, sets, ids=None):
    atomic_write_text(path, fiducials_to_csv(sets, ids))


def read_fiducials_csv(path, ms_per_sample=MS_PER_SAMPLE):
    """Return ``{cycle_id: FiducialSet}`` from a fiducial CSV."""
    out = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            idx = [int(round(float(row[f"{e}_ms"]) / ms_per_sample)) for e in EVENTS]
            out[row["cycle_id"]] = FiducialSet(*idx)
    return out


class FiducialLabeler(BaseEstimator, TransformerMixin):
    """Transformer from cycles ``(n, 400)`` to fiducial indices ``(n, 5)``.

    Rejected cycles come out as rows of ``-1``; their positions are kept in
    ``rejected_`` after each call to :meth:`transform`.
    """

    def __init__(self, ms=False):
        self.ms = ms

    def fit(self, X=None, y=None):
        return self

    def transform(self, X):
        X = as_cycles(X, length=None)
        sets, self.rejected_ = label_cycles(X)
        out = np.full((X.shape[0], 5), -1, dtype=float if self.ms else int)
        for i, fs in enumerate(sets):
            if fs is not None:
                out[i] = fs.as_array() * (MS_PER_SAMPLE if self.ms else 1)
        return out
