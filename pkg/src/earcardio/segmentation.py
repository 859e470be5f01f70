"""Beat anchoring, fixed-window cycle extraction, and SNR-based cycle quality.

Cycles are 800 ms (400 samples at 500 Hz) with the anchor 200 ms from the
start. Ear sounds anchor on S1; SCG/GCG anchor on the AO peak.
"""

import json
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Optional

import numpy as np
from scipy.ndimage import maximum_filter1d, uniform_filter1d

from .exceptions import NoAnchors, NoChannels, NoPeaksFound, SignalTooShort
from .io import atomic_write_bytes, atomic_write_text, dumps_json, provenance
from .signal import TARGET_RATE_HZ, Modality

CYCLE_LEN = 400
PRE = 100  # samples before the anchor
POST = CYCLE_LEN - PRE

MIN_SPACING_S = 0.55
ENVELOPE_S = 0.05
ROLLING_MAX_S = 2.0
REL_HEIGHT = 0.4
ENERGY_WIN_S = 0.4
S2_LOOKBACK_S = (0.45, 0.15)
AO_HALF_WIN_S = 0.1
SNR_REGION_S = (-0.05, 0.35)
SNR_THRESHOLD_DB = 7.0
ZERO_NOISE_SNR_DB = 100.0


class AnchorKind(str, Enum):
    S1 = "S1"
    AO = "AO"


@dataclass(frozen=True)
class CardiacCycle:
    samples: np.ndarray
    anchor_index_global: int
    anchor_kind: AnchorKind
    modality: Modality

    def __post_init__(self):
        arr = np.asarray(self.samples, dtype=np.float64).copy()
        if arr.shape != (CYCLE_LEN,):
            raise ValueError(f"cycle must have {CYCLE_LEN} samples, got {arr.shape}")
        arr.setflags(write=False)
        object.__setattr__(self, "samples", arr)
        object.__setattr__(self, "anchor_kind", AnchorKind(self.anchor_kind))
        object.__setattr__(self, "modality", Modality(self.modality))

    @property
    def start(self):
        return self.anchor_index_global - PRE


@dataclass(frozen=True)
class SnrReport:
    p_signal: float
    p_noise: float
    snr_db: float


def local_maxima(x):
    """Indices of local maxima; a plateau counts once, at its leftmost sample.

    The first and last samples are never maxima.
    """
    x = np.asarray(x)
    n = x.size
    if n < 3:
        return np.empty(0, dtype=int)
    d = np.diff(x)
    rising = np.flatnonzero(d > 0) + 1  # x[i] > x[i-1]
    out = []
    # next index where the value changes, for plateau resolution
    change = np.flatnonzero(d != 0)
    for i in rising:
        if i >= n - 1:
            continue
        if x[i + 1] < x[i]:
            out.append(i)
        elif x[i + 1] == x[i]:
            k = np.searchsorted(change, i)
            if k < change.size and x[change[k] + 1] < x[i]:
                out.append(i)
    return np.asarray(out, dtype=int)


def detection_envelope(signal):
    """Energy envelope for ear sounds, raw amplitude for SCG/GCG."""
    x = signal.samples
    if signal.modality is Modality.EAR:
        w = max(1, int(round(ENVELOPE_S * signal.rate_hz)))
        return uniform_filter1d(x * x, size=w, mode="nearest")
    return x.copy()


def min_spacing_samples(rate_hz):
    return int(np.ceil(MIN_SPACING_S * rate_hz - 1e-9))


def greedy_spaced(candidates, heights, min_gap):
    """Greedy selection in descending height; ties go to the earlier index."""
    order = np.lexsort((candidates, -heights))
    taken = []
    for j in order:
        c = candidates[j]
        if all(abs(c - t) >= min_gap for t in taken):
            taken.append(c)
    return np.sort(np.asarray(taken, dtype=int))


def detect_anchor_peaks(signal):
    """Beat anchors at least 0.55 s apart, ascending.

    Candidates are local maxima of :func:`detection_envelope` that reach
    40 % of the envelope's rolling 2 s maximum.
    """
    if signal.duration_s < 2.0:
        raise SignalTooShort("anchor detection needs >= 2 s of signal")
    env = detection_envelope(signal)
    cand = local_maxima(env)
    if cand.size:
        w = int(round(ROLLING_MAX_S * signal.rate_hz)) | 1
        roll = maximum_filter1d(env, size=w, mode="nearest")
        cand = cand[(env[cand] >= REL_HEIGHT * roll[cand]) & (env[cand] > 0)]
    if cand.size == 0:
        raise NoPeaksFound("no envelope peaks above threshold")
    return greedy_spaced(cand, env[cand], min_spacing_samples(signal.rate_hz))


def disambiguate_s1(signal, anchors):
    """Replace S2-locked anchors by the preceding S1.

    An anchor whose 400 ms right window carries no more mean-square energy
    than its 400 ms left window is taken to sit on S2 and moves to the
    strongest envelope peak 150-450 ms earlier. A move that would land
    within the minimum spacing of the previous kept anchor is a duplicate
    beat, so the anchor stays put instead. Anchors without both windows
    inside the signal, or too close to the previous kept anchor, are
    dropped.
    """
    x = signal.samples
    n = x.size
    w = int(round(ENERGY_WIN_S * signal.rate_hz))
    env = detection_envelope(signal)
    lo_off = int(round(S2_LOOKBACK_S[0] * signal.rate_hz))
    hi_off = int(round(S2_LOOKBACK_S[1] * signal.rate_hz))
    gap = int(round(MIN_SPACING_S * signal.rate_hz))
    out = []
    for a in np.unique(np.asarray(anchors, dtype=int)):
        if a - w < 0 or a + w > n:
            continue
        left = np.mean(x[a - w:a] ** 2)
        right = np.mean(x[a:a + w] ** 2)
        if right <= left:
            lo, hi = max(a - lo_off, 0), max(a - hi_off, 0)
            seg = env[lo:hi + 1]
            if seg.size == 0:
                continue
            pk = local_maxima(seg)
            moved = lo + (pk[np.argmax(seg[pk])] if pk.size else int(np.argmax(seg)))
            if not out or moved - out[-1] >= gap:
                a = moved
        if out and a - out[-1] < gap:
            continue
        out.append(int(a))
    return np.asarray(out, dtype=int)


def _ao_step(x, c, half):
    lo, hi = max(c - half, 0), min(c + half, x.size - 1)
    pk = local_maxima(x[max(lo - 1, 0):hi + 2])
    pk = pk + max(lo - 1, 0)
    pk = pk[(pk >= lo) & (pk <= hi)]
    pk = pk[x[pk] > 0]
    if pk.size == 0:
        return c
    amp = x[pk]
    # neighbours count only when both peaks ride the same positive lobe
    linked = np.array([x[a:b].min() > 0 for a, b in zip(pk[:-1], pk[1:])], dtype=bool)
    score = amp.copy()
    score[1:] += np.where(linked, amp[:-1], 0.0)
    score[:-1] += np.where(linked, amp[1:], 0.0)
    return int(pk[np.argmax(score)])


def refine_ao(signal, candidate_index):
    """Move an AO candidate to the best-scoring peak within +-100 ms.

    Only positive local maxima count as peaks. A peak scores its own
    amplitude plus those of its immediate neighbour peaks inside the
    window, where a neighbour counts only if the signal stays positive
    between the two. The step is iterated to a fixed point so that
    refining twice equals refining once.
    """
    x = signal.samples if hasattr(signal, "samples") else np.asarray(signal, float)
    rate = getattr(signal, "rate_hz", TARGET_RATE_HZ)
    half = int(round(AO_HALF_WIN_S * rate))
    c = int(candidate_index)
    seen = [c]
    for _ in range(64):
        nxt = _ao_step(x, c, half)
        if nxt == c:
            return c
        if nxt in seen:
            cyc = seen[seen.index(nxt):]
            return int(min(cyc, key=lambda i: (-x[i], i)))
        seen.append(nxt)
        c = nxt
    return c


def detect_ao_anchors(signal):
    """SCG/GCG anchors: spaced peaks, each refined by :func:`refine_ao`."""
    rough = detect_anchor_peaks(signal)
    refined = np.unique([refine_ao(signal, a) for a in rough])
    # refinement can pull two anchors closer than the spacing rule allows
    gap = min_spacing_samples(signal.rate_hz)
    return greedy_spaced(refined, signal.samples[refined], gap)


def detect_s1_anchors(signal):
    return disambiguate_s1(signal, detect_anchor_peaks(signal))


def extract_cycles(signal, anchors, anchor_kind=None):
    """One 400-sample cycle per anchor whose window fits inside the signal."""
    if anchor_kind is None:
        anchor_kind = AnchorKind.S1 if signal.modality is Modality.EAR else AnchorKind.AO
    x = signal.samples
    out = []
    for a in np.asarray(anchors, dtype=int):
        if a - PRE < 0 or a + POST > x.size:
            continue
        out.append(CardiacCycle(x[a - PRE:a + POST], int(a), anchor_kind, signal.modality))
    return out


def _report(p_sig, p_noise):
    if p_noise < 1e-15:
        return SnrReport(p_sig, p_noise, ZERO_NOISE_SNR_DB)
    if p_sig <= 0:
        return SnrReport(p_sig, p_noise, -np.inf)
    return SnrReport(p_sig, p_noise, float(10.0 * np.log10(p_sig / p_noise)))


def signal_region_mask(n, anchors, rate_hz=TARGET_RATE_HZ):
    lo = int(round(SNR_REGION_S[0] * rate_hz))
    hi = int(round(SNR_REGION_S[1] * rate_hz))
    mask = np.zeros(n, dtype=bool)
    for a in np.asarray(anchors, dtype=int):
        mask[max(a + lo, 0):max(min(a + hi, n), 0)] = True
    return mask


def compute_snr(signal, s1_anchors):
    """Recording-level SNR from S1-anchored signal regions.

    The signal region of each beat is ``[S1 - 50 ms, S1 + 350 ms)``; every
    other sample is noise. Powers are mean squares over each union.
    """
    anchors = np.asarray(s1_anchors, dtype=int)
    if anchors.size == 0:
        raise NoAnchors("SNR needs at least one S1 anchor")
    x = signal.samples
    mask = signal_region_mask(x.size, anchors, signal.rate_hz)
    sig = x[mask]
    noise = x[~mask]
    p_sig = float(np.mean(sig ** 2)) if sig.size else 0.0
    p_noise = float(np.mean(noise ** 2)) if noise.size else 0.0
    return _report(p_sig, p_noise)


def cycle_snr(cycle):
    """SNR of one S1-anchored cycle with the same region rule."""
    x = cycle.samples if hasattr(cycle, "samples") else np.asarray(cycle, float)
    mask = signal_region_mask(x.size, [PRE])
    return _report(float(np.mean(x[mask] ** 2)), float(np.mean(x[~mask] ** 2)))


def filter_by_snr(cycles, snrs, threshold_db=SNR_THRESHOLD_DB):
    """Keep cycles with SNR >= ``threshold_db``; returns ``(cycles, snrs)``."""
    keep = [i for i, s in enumerate(snrs) if _db(s) >= threshold_db]
    return [cycles[i] for i in keep], [snrs[i] for i in keep]


def _db(s):
    return s.snr_db if isinstance(s, SnrReport) else float(s)


def select_channel(left=None, right=None):
    """``"left"`` or ``"right"``, whichever has the higher SNR (ties: left)."""
    if left is None and right is None:
        raise NoChannels("no ear channel available")
    if right is None:
        return "left"
    if left is None:
        return "right"
    return "left" if _db(left) >= _db(right) else "right"


def pair_cycles(ear_cycles, target_cycles, max_lag_s=0.2, rate_hz=TARGET_RATE_HZ):
    """One-to-one pairing of S1 cycles with AO cycles in ``[S1, S1 + 200 ms]``."""
    lag = int(round(max_lag_s * rate_hz))
    targets = sorted(target_cycles, key=lambda c: c.anchor_index_global)
    t_idx = np.array([c.anchor_index_global for c in targets], dtype=int)
    used = np.zeros(len(targets), dtype=bool)
    pairs = []
    for ec in sorted(ear_cycles, key=lambda c: c.anchor_index_global):
        s1 = ec.anchor_index_global
        lo = np.searchsorted(t_idx, s1, side="left")
        hi = np.searchsorted(t_idx, s1 + lag, side="right")
        for j in range(lo, hi):
            if not used[j]:
                used[j] = True
                pairs.append((ec, targets[j]))
                break
    return pairs


# ---------------------------------------------------------------------------
# persistence: cycles.f32 (rows of 400 little-endian float32) + cycles.json

def save_cycles(cycles, directory, name="cycles", snrs=None, extra=None, config=None):
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    mat = np.array([c.samples for c in cycles], dtype="<f4").reshape(-1, CYCLE_LEN)
    atomic_write_bytes(d / f"{name}.f32", mat.tobytes())
    meta = {
        "cycle_len": CYCLE_LEN,
        "anchors": [int(c.anchor_index_global) for c in cycles],
        "kinds": [c.anchor_kind.value for c in cycles],
        "modality": cycles[0].modality.value if cycles else None,
        "snr_db": None if snrs is None else [float(_db(s)) for s in snrs],
        "provenance": provenance(config),
    }
    if extra:
        meta.update(extra)
    atomic_write_text(d / f"{name}.json", dumps_json(meta))


def load_cycles(directory, name="cycles"):
    d = Path(directory)
    path = d / f"{name}.f32" if d.is_dir() else d
    meta_path = path.with_suffix(".json")
    mat = np.frombuffer(path.read_bytes(), dtype="<f4").astype(np.float64)
    mat = mat.reshape(-1, CYCLE_LEN)
    meta = json.loads(meta_path.read_text()) if meta_path.exists() else {}
    anchors = meta.get("anchors") or [PRE] * mat.shape[0]
    kinds = meta.get("kinds") or ["S1"] * mat.shape[0]
    modality = meta.get("modality") or "Other"
    cycles = [
        CardiacCycle(row, int(a), k, modality) for row, a, k in zip(mat, anchors, kinds)
    ]
    return cycles, meta


def snr_of(channel_signal, anchors) -> Optional[SnrReport]:
    try:
        return compute_snr(channel_signal, anchors)
    except NoAnchors:
        return None
