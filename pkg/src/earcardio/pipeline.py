"""End-to-end composition: session -> gated, conditioned, paired cycles."""

import json
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np

from .exceptions import InvalidConfig, NoAnchors, NoPeaksFound, SignalTooShort
from .io import DEFAULT_AXIS_MAP
from .motion import WINDOW_S, MfccConfig, gate_stream
from .reconstructor.model import ModelConfig
from .reconstructor.training import CalibrationConfig, TrainConfig
from .segmentation import (
    PRE,
    SNR_THRESHOLD_DB,
    CardiacCycle,
    compute_snr,
    cycle_snr,
    detect_ao_anchors,
    detect_s1_anchors,
    extract_cycles,
    pair_cycles,
    select_channel,
)
from .signal import BandpassSpec, Modality, bandpass, zscore_array


@dataclass(frozen=True)
class PipelineConfig:
    seed: int = 42
    bandpass: BandpassSpec = field(default_factory=BandpassSpec)
    mfcc: MfccConfig = field(default_factory=MfccConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    calibration: CalibrationConfig = field(default_factory=CalibrationConfig)
    snr_threshold_db: float = SNR_THRESHOLD_DB
    calibration_cycles: int = 5
    equalizer_cycles: int = 10
    gate_threshold_p: float = 0.5
    axis_map: dict = field(default_factory=lambda: dict(DEFAULT_AXIS_MAP))
    paths: dict = field(default_factory=dict)

    def to_dict(self):
        d = asdict(self)
        d["model"] = self.model.to_dict()
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise InvalidConfig(f"unknown config keys: {sorted(unknown)}")
        sub = {"bandpass": BandpassSpec, "mfcc": MfccConfig, "train": TrainConfig,
               "calibration": CalibrationConfig}
        for k, typ in sub.items():
            if k in d and isinstance(d[k], dict):
                d[k] = typ(**d[k])
        if "model" in d and isinstance(d["model"], dict):
            d["model"] = ModelConfig.from_dict(d["model"])
        try:
            return cls(**d)
        except TypeError as exc:
            raise InvalidConfig(str(exc)) from exc

    @classmethod
    def load(cls, path=None, overrides=None):
        """Config from a JSON file (optional) with dotted-key overrides on top."""
        d = {}
        if path is not None:
            with open(path) as fh:
                d = json.load(fh)
        cfg = cls.from_dict(d)
        return cfg.with_overrides(overrides or {})

    def with_overrides(self, overrides):
        d = self.to_dict()
        for key, value in overrides.items():
            if value is None:
                continue
            node = d
            parts = key.split(".")
            for p in parts[:-1]:
                node = node[p]
            node[parts[-1]] = value
        return PipelineConfig.from_dict(d)


@dataclass
class CycleSet:
    """Paired, z-scored cycles drawn from one session."""

    ear: np.ndarray
    target: np.ndarray
    ear_anchors: np.ndarray
    target_anchors: np.ndarray
    snr_db: np.ndarray
    channel: str
    modality: str
    clean: np.ndarray = None

    def __len__(self):
        return self.ear.shape[0]

    def subset(self, idx):
        idx = np.asarray(idx, dtype=int)
        return replace(
            self, ear=self.ear[idx], target=self.target[idx],
            ear_anchors=self.ear_anchors[idx], target_anchors=self.target_anchors[idx],
            snr_db=self.snr_db[idx], clean=None if self.clean is None else self.clean[idx],
        )

    @property
    def pairs(self):
        return (self.ear, self.target)


def _zrows(X):
    """Per-row z-score, rounded to float32 (the on-disk cycle precision)."""
    Z = np.array([zscore_array(x) for x in X]).reshape(-1, 400)
    return Z.astype(np.float32).astype(np.float64)


def ear_cycles(session, spec=BandpassSpec(), snr_threshold_db=SNR_THRESHOLD_DB):
    """Condition each ear channel, pick the better one and SNR-filter its cycles.

    Returns ``(cycles, snrs_db, channel)``.
    """
    reports = {}
    for name, ch in session.ear_channels.items():
        sig = bandpass(ch, spec)
        try:
            anchors = detect_s1_anchors(sig)
            rep = compute_snr(sig, anchors)
        except (NoPeaksFound, NoAnchors):
            continue
        reports[name] = (sig, anchors, rep)
    if not reports:
        return [], np.zeros(0), None
    names = list(reports)
    left = reports[names[0]][2]
    right = reports[names[1]][2] if len(names) > 1 else None
    best = names[0] if select_channel(left, right) == "left" else names[1]
    sig, anchors, _ = reports[best]
    cycles = extract_cycles(sig, anchors)
    snrs = np.array([cycle_snr(c).snr_db for c in cycles])
    keep = [i for i, s in enumerate(snrs) if s >= snr_threshold_db]
    return [cycles[i] for i in keep], snrs[keep], best


def target_signal(session, modality):
    m = Modality(modality)
    if m is Modality.SCG:
        return session.scg
    if m is Modality.GCG:
        return session.gcg
    raise InvalidConfig("target modality must be SCG or GCG")


def target_cycles(signal, spec=BandpassSpec()):
    sig = bandpass(signal, spec)
    try:
        anchors = detect_ao_anchors(sig)
    except NoPeaksFound:
        return []
    return extract_cycles(sig, anchors)


def cycles_at(signal, anchors, spec=BandpassSpec()):
    """Conditioned cycles of ``signal`` cut at given anchors (no detection)."""
    sig = bandpass(signal, spec)
    out = []
    for a in anchors:
        a = int(a)
        out.append(sig.samples[a - PRE:a - PRE + 400])
    return np.array(out).reshape(-1, 400)


def session_cycles(session, modality=Modality.SCG, cfg=PipelineConfig(), truth=None):
    """Paired ear/target cycles for one session.

    With ``truth`` (a synthetic ground truth) the clean target stream is cut
    at the same AO anchors and stored in ``CycleSet.clean``.
    """
    modality = Modality(modality).value
    ecs, snrs, channel = ear_cycles(session, cfg.bandpass, cfg.snr_threshold_db)
    tcs = target_cycles(target_signal(session, modality), cfg.bandpass)
    pairs = pair_cycles(ecs, tcs)
    snr_by_anchor = {c.anchor_index_global: s for c, s in zip(ecs, snrs)}
    ear = np.array([p[0].samples for p in pairs]).reshape(-1, 400)
    tgt = np.array([p[1].samples for p in pairs]).reshape(-1, 400)
    ea = np.array([p[0].anchor_index_global for p in pairs], dtype=int)
    ta = np.array([p[1].anchor_index_global for p in pairs], dtype=int)
    out = CycleSet(_zrows(ear), _zrows(tgt), ea, ta,
                   np.array([snr_by_anchor[a] for a in ea]), channel, modality)
    if truth is not None:
        clean_sig = truth.clean_scg if modality == Modality.SCG.value else truth.clean_gcg
        out.clean = _zrows(cycles_at(clean_sig, ta, cfg.bandpass))
    return out


def gate_session(session, clf, threshold_p=0.5):
    """Keep only the motion-free 10 s windows of a session.

    Kept windows are concatenated per contiguous run; returns a list of
    sub-sessions (one per run) and the gate report. IMU streams are cut
    on the same sample grid.
    """
    _, report = gate_stream(session.ear, clf, threshold_p)
    w = report.window_samples
    runs, cur = [], []
    for i in report.kept:
        if cur and i != cur[-1] + 1:
            runs.append(cur)
            cur = []
        cur.append(i)
    if cur:
        runs.append(cur)
    subs = [slice_session(session, r[0] * w, (r[-1] + 1) * w) for r in runs]
    return subs, report


def slice_session(session, i0, i1):
    from .io import PairedSession

    cut = lambda s: None if s is None else s.with_samples(s.samples[i0:i1])  # noqa: E731
    meta = dict(session.meta)
    meta["slice"] = [int(i0), int(i1)]
    return PairedSession(cut(session.ear), cut(session.scg), cut(session.gcg),
                         session.offset_ms, meta, cut(session.ear_right))


def gated_session_cycles(session, clf, modality=Modality.SCG, cfg=PipelineConfig(), truth=None):
    """:func:`session_cycles` over the motion-free parts of ``session``."""
    subs, report = gate_session(session, clf, cfg.gate_threshold_p)
    sets = []
    for sub in subs:
        if sub.ear.duration_s < WINDOW_S:
            continue
        try:
            cs = session_cycles(sub, modality, cfg, None)
        except SignalTooShort:
            continue
        offset = sub.meta["slice"][0]
        if truth is not None and len(cs):
            clean_sig = truth.clean_scg if Modality(modality) is Modality.SCG else truth.clean_gcg
            cs.clean = _zrows(cycles_at(clean_sig, cs.target_anchors + offset, cfg.bandpass))
        cs.ear_anchors = cs.ear_anchors + offset
        cs.target_anchors = cs.target_anchors + offset
        sets.append(cs)
    return concat_sets(sets, modality), report


def concat_sets(sets, modality=Modality.SCG.value):
    sets = [s for s in sets if len(s)]
    if not sets:
        e = np.zeros((0, 400))
        return CycleSet(e, e.copy(), np.zeros(0, int), np.zeros(0, int), np.zeros(0), None,
                        Modality(modality).value)
    cat = lambda name: np.concatenate([getattr(s, name) for s in sets])  # noqa: E731
    clean = cat("clean") if all(s.clean is not None for s in sets) else None
    return CycleSet(cat("ear"), cat("target"), cat("ear_anchors"), cat("target_anchors"),
                    cat("snr_db"), sets[0].channel, sets[0].modality, clean)


def as_cycle_objects(X, anchors, kind, modality):
    return [CardiacCycle(x, int(a), kind, modality) for x, a in zip(X, anchors)]
