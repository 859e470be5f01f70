"""Reading recordings, aligning paired streams, and session persistence."""

import csv
import hashlib
import json
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import scipy.io.wavfile as wavfile
import scipy.signal as ss

from . import __version__
from .exceptions import (
    CorruptHeader,
    NonMonotonicTimestamps,
    SchemaMismatch,
    SignalTooShort,
    TapsNotFound,
    UnsupportedEncoding,
)
from .signal import (
    TARGET_RATE_HZ,
    BandpassSpec,
    Modality,
    SampledSignal,
    bandpass,
    resample,
)

IMU_HEADER = ["t_ns", "ax", "ay", "az", "gx", "gy", "gz"]
DEFAULT_AXIS_MAP = {"scg": "az", "gcg": "gy"}

_TAP_SEARCH_S = 10.0
_TAP_MIN_SEP_S = 0.2
_TAP_RATIO = 8.0


# ---------------------------------------------------------------------------
# atomic writes and provenance

def atomic_write_bytes(path, data):
    """Write ``data`` to ``path`` through a temp file and ``os.replace``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text):
    atomic_write_bytes(path, text.encode("utf-8"))


def dumps_json(obj):
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def config_hash(config):
    """sha256 of the canonical JSON form of ``config`` (first 16 hex digits)."""
    blob = json.dumps(config, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]


def provenance(config=None):
    return {"tool_version": __version__, "config_hash": config_hash(config or {})}


# ---------------------------------------------------------------------------
# WAV

def read_wav(path):
    """Read a PCM or IEEE-float WAV file, one signal per channel.

    Integer PCM is scaled by the full-scale value, so 16-bit ``+32767``
    becomes ``32767 / 32768``. Stereo files yield ``"left"`` and
    ``"right"`` channels.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no such WAV file: {path}")
    try:
        rate, data = wavfile.read(path)
    except ValueError as exc:
        msg = str(exc)
        if "format" in msg.lower() or "unsupported" in msg.lower() or "bit depth" in msg.lower():
            raise UnsupportedEncoding(f"{path}: {msg}") from exc
        raise CorruptHeader(f"{path}: {msg}") from exc
    except (EOFError, OSError) as exc:
        raise CorruptHeader(f"{path}: {exc}") from exc
    if data.dtype == np.uint8:
        x = (data.astype(np.float64) - 128.0) / 128.0
    elif data.dtype == np.int16:
        x = data.astype(np.float64) / 32768.0
    elif data.dtype == np.int32:
        x = data.astype(np.float64) / 2147483648.0
    elif data.dtype in (np.float32, np.float64):
        x = data.astype(np.float64)
    else:
        raise UnsupportedEncoding(f"{path}: sample type {data.dtype}")
    if x.ndim == 1:
        x = x[:, None]
    if x.shape[1] > 2:
        raise UnsupportedEncoding(f"{path}: {x.shape[1]} channels (max 2)")
    if x.shape[0] == 0:
        raise CorruptHeader(f"{path}: no samples")
    names = ["left", "right"] if x.shape[1] == 2 else [None]
    return [
        SampledSignal(x[:, i], rate, Modality.EAR, names[i]) for i in range(x.shape[1])
    ]


def write_wav(path, signals, encoding="float32"):
    """Write one or two equal-length, equal-rate signals to a WAV file.

    ``encoding`` is ``"float32"`` (IEEE float) or ``"pcm16"``. PCM samples
    are rounded from ``x * 32768`` and clipped to the int16 range.
    """
    if isinstance(signals, SampledSignal):
        signals = [signals]
    rates = {s.rate_hz for s in signals}
    if len(rates) != 1 or len({len(s) for s in signals}) != 1:
        raise ValueError("channels must share rate and length")
    rate = rates.pop()
    if rate != int(rate):
        raise ValueError(f"WAV needs an integer rate, got {rate}")
    x = np.stack([s.samples for s in signals], axis=1)
    if x.shape[1] == 1:
        x = x[:, 0]
    if encoding == "float32":
        data = x.astype(np.float32)
    elif encoding == "pcm16":
        data = np.clip(np.round(x * 32768.0), -32768, 32767).astype(np.int16)
    else:
        raise UnsupportedEncoding(encoding)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    os.close(fd)
    try:
        wavfile.write(tmp, int(rate), data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# ---------------------------------------------------------------------------
# IMU CSV

@dataclass(frozen=True)
class ImuRecord:
    timestamps_ns: np.ndarray
    accel_xyz: np.ndarray  # (3, n), m/s^2
    gyro_xyz: np.ndarray  # (3, n), rad/s

    def channel(self, name):
        idx = IMU_HEADER.index(name) - 1
        return self.accel_xyz[idx] if idx < 3 else self.gyro_xyz[idx - 3]


def load_imu_csv(path):
    """Parse an IMU CSV with header ``t_ns,ax,ay,az,gx,gy,gz``."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no such IMU file: {path}")
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != IMU_HEADER:
            raise SchemaMismatch(f"{path}: header must be {','.join(IMU_HEADER)}")
        ts, vals = [], []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(IMU_HEADER):
                raise SchemaMismatch(f"{path}:{lineno}: expected 7 fields")
            try:
                ts.append(int(row[0]))
                vals.append([float(v) for v in row[1:]])
            except ValueError as exc:
                raise SchemaMismatch(f"{path}:{lineno}: {exc}") from exc
    if len(ts) < 2:
        raise SignalTooShort(f"{path}: fewer than two rows")
    t = np.asarray(ts, dtype=np.int64)
    v = np.asarray(vals, dtype=np.float64).T
    bad = np.flatnonzero(np.diff(t) < 0)
    if bad.size:
        raise NonMonotonicTimestamps(f"{path}: timestamp decreases at data row {bad[0] + 2}")
    return ImuRecord(t, v[:3], v[3:])


def _uniform_grid(t_ns, values, rate_hz):
    # collapse duplicate timestamps by averaging
    uniq, inv = np.unique(t_ns, return_inverse=True)
    if uniq.size != t_ns.size:
        values = np.bincount(inv, weights=values) / np.bincount(inv)
    t_s = (uniq - uniq[0]) * 1e-9
    n = int(np.floor(t_s[-1] * rate_hz + 1e-9)) + 1
    grid = np.arange(n) / rate_hz
    return np.interp(grid, t_s, values)


def read_imu_csv(path, axis_map=None, rate_hz=TARGET_RATE_HZ, min_span_s=1.0):
    """Read an IMU CSV and return ``(scg, gcg)`` on a uniform grid.

    Each selected axis is linearly interpolated onto ``rate_hz`` between the
    first and last timestamp. ``axis_map`` maps ``"scg"``/``"gcg"`` to
    column names and defaults to accelerometer z and gyroscope y.
    """
    amap = dict(DEFAULT_AXIS_MAP)
    amap.update(axis_map or {})
    for key in ("scg", "gcg"):
        if amap[key] not in IMU_HEADER[1:]:
            raise SchemaMismatch(f"axis_map[{key!r}] = {amap[key]!r} is not a column")
    rec = load_imu_csv(path)
    span = (rec.timestamps_ns[-1] - rec.timestamps_ns[0]) * 1e-9
    if span < min_span_s:
        raise SignalTooShort(f"{path}: span {span:.3f} s < {min_span_s} s")
    scg = _uniform_grid(rec.timestamps_ns, rec.channel(amap["scg"]), rate_hz)
    gcg = _uniform_grid(rec.timestamps_ns, rec.channel(amap["gcg"]), rate_hz)
    return (
        SampledSignal(scg, rate_hz, Modality.SCG, amap["scg"]),
        SampledSignal(gcg, rate_hz, Modality.GCG, amap["gcg"]),
    )


def write_imu_csv(path, t_ns, accel_xyz, gyro_xyz):
    rows = [",".join(IMU_HEADER)]
    a = np.asarray(accel_xyz)
    g = np.asarray(gyro_xyz)
    for i, t in enumerate(np.asarray(t_ns, dtype=np.int64)):
        vals = [repr(float(v)) for v in (*a[:, i], *g[:, i])]
        rows.append(f"{int(t)}," + ",".join(vals))
    atomic_write_text(path, "\n".join(rows) + "\n")


# ---------------------------------------------------------------------------
# tap alignment

def _tap_times(signal):
    n = min(len(signal), int(round(_TAP_SEARCH_S * signal.rate_hz)))
    spec = BandpassSpec()
    env = np.abs(bandpass(signal, spec).samples)
    head = env[:n]
    floor = np.median(env)
    dist = max(1, int(np.ceil(_TAP_MIN_SEP_S * signal.rate_hz)))
    peaks, props = ss.find_peaks(head, height=max(_TAP_RATIO * floor, np.finfo(float).tiny), distance=dist)
    if peaks.size < 2:
        raise TapsNotFound(
            f"{signal.channel_id or signal.modality.value}: found {peaks.size} "
            f"transient(s) >= {_TAP_RATIO}x median amplitude"
        )
    top = np.sort(peaks[np.argsort(props["peak_heights"])[::-1][:2]])
    times = []
    for p in top:
        # parabolic refinement of the peak location
        if 0 < p < head.size - 1:
            y0, y1, y2 = head[p - 1], head[p], head[p + 1]
            den = y0 - 2 * y1 + y2
            off = 0.5 * (y0 - y2) / den if den != 0 else 0.0
        else:
            off = 0.0
        times.append((p + off) / signal.rate_hz)
    return np.asarray(times)


def align_by_taps(ear, imu):
    """Offset in ms that maps ear-stream time onto IMU-stream time.

    Both streams must contain two tap transients in their first 10 s. A
    positive result means the taps occur later in ``imu``.
    """
    t_ear = _tap_times(ear)
    t_imu = _tap_times(imu)
    return float(np.mean(t_imu - t_ear) * 1000.0)


# ---------------------------------------------------------------------------
# paired sessions

@dataclass
class PairedSession:
    """Ear audio plus chest SCG/GCG on a common 500 Hz timebase."""

    ear: SampledSignal
    scg: SampledSignal
    gcg: SampledSignal
    offset_ms: float = 0.0
    meta: dict = field(default_factory=dict)
    ear_right: Optional[SampledSignal] = None

    def __post_init__(self):
        streams = [self.ear, self.scg, self.gcg] + (
            [self.ear_right] if self.ear_right is not None else []
        )
        if len({s.rate_hz for s in streams}) != 1:
            raise ValueError("session streams must share one rate")
        if len({len(s) for s in streams}) != 1:
            raise ValueError("session streams must have equal length")

    @property
    def rate_hz(self):
        return self.ear.rate_hz

    @property
    def ear_channels(self):
        chans = {self.ear.channel_id or "left": self.ear}
        if self.ear_right is not None:
            chans[self.ear_right.channel_id or "right"] = self.ear_right
        return chans


def _shift_crop(ear_list, imu_list, offset_ms, rate_hz):
    k = int(round(offset_ms * rate_hz / 1000.0))
    ear_arrs = [e.samples for e in ear_list]
    imu_arrs = [s.samples for s in imu_list]
    if k > 0:
        imu_arrs = [a[k:] for a in imu_arrs]
    elif k < 0:
        ear_arrs = [a[-k:] for a in ear_arrs]
    n = min(min(a.size for a in ear_arrs), min(a.size for a in imu_arrs))
    if n <= 0:
        raise SignalTooShort("streams do not overlap after alignment")
    return [a[:n] for a in ear_arrs], [a[:n] for a in imu_arrs]


def build_session(ear, scg, gcg, offset_ms=None, meta=None, rate_hz=TARGET_RATE_HZ):
    """Resample, tap-align, and crop raw streams into a :class:`PairedSession`.

    ``ear`` may be a single signal or a list of one or two channels. With
    ``offset_ms=None`` the offset is estimated from the tap events.
    """
    ears = [ear] if isinstance(ear, SampledSignal) else list(ear)
    ears = [resample(e, rate_hz) for e in ears]
    scg = resample(scg, rate_hz)
    gcg = resample(gcg, rate_hz)
    if offset_ms is None:
        offset_ms = align_by_taps(ears[0], scg)
    ear_arrs, (s, g) = _shift_crop(ears, [scg, gcg], offset_ms, rate_hz)
    ear_sigs = [
        SampledSignal(a, rate_hz, Modality.EAR, e.channel_id or ("left", "right")[i])
        for i, (a, e) in enumerate(zip(ear_arrs, ears))
    ]
    return PairedSession(
        ear=ear_sigs[0],
        scg=SampledSignal(s, rate_hz, Modality.SCG, scg.channel_id),
        gcg=SampledSignal(g, rate_hz, Modality.GCG, gcg.channel_id),
        offset_ms=float(offset_ms),
        meta=dict(meta or {}),
        ear_right=ear_sigs[1] if len(ear_sigs) > 1 else None,
    )


def _write_f32(path, x):
    atomic_write_bytes(path, np.asarray(x, dtype="<f4").tobytes())


def _read_f32(path):
    return np.frombuffer(Path(path).read_bytes(), dtype="<f4").astype(np.float64)


def save_session(session, directory, config=None):
    """Persist as ``ear.wav`` + ``scg.f32`` + ``gcg.f32`` + ``meta.json``."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    ears = [session.ear] + ([session.ear_right] if session.ear_right is not None else [])
    write_wav(d / "ear.wav", ears, encoding="float32")
    _write_f32(d / "scg.f32", session.scg.samples)
    _write_f32(d / "gcg.f32", session.gcg.samples)
    meta = {
        "rate_hz": session.rate_hz,
        "offset_ms": session.offset_ms,
        "n_samples": len(session.ear),
        "scg_axis": session.scg.channel_id,
        "gcg_axis": session.gcg.channel_id,
        "meta": session.meta,
        "provenance": provenance(config),
    }
    atomic_write_text(d / "meta.json", dumps_json(meta))


def load_session(directory):
    d = Path(directory)
    if not d.is_dir():
        raise FileNotFoundError(f"no such session directory: {d}")
    meta = json.loads((d / "meta.json").read_text())
    ears = read_wav(d / "ear.wav")
    rate = ears[0].rate_hz
    scg = SampledSignal(_read_f32(d / "scg.f32"), rate, Modality.SCG, meta.get("scg_axis"))
    gcg = SampledSignal(_read_f32(d / "gcg.f32"), rate, Modality.GCG, meta.get("gcg_axis"))
    return PairedSession(
        ear=ears[0].with_samples(ears[0].samples),
        scg=scg,
        gcg=gcg,
        offset_ms=float(meta.get("offset_ms", 0.0)),
        meta=meta.get("meta", {}),
        ear_right=ears[1] if len(ears) > 1 else None,
    )


# ---------------------------------------------------------------------------
# waveform CSV: one row per cycle, ``cycle_id,v0,...,v{L-1}``

def waveforms_to_csv(X, ids=None):
    X = np.asarray(X, dtype=np.float64)
    ids = range(X.shape[0]) if ids is None else ids
    lines = [",".join(["cycle_id"] + [f"v{i}" for i in range(X.shape[1])])]
    for cid, row in zip(ids, X):
        lines.append(",".join([str(cid)] + [repr(float(np.float32(v))) for v in row]))
    return "\n".join(lines) + "\n"


def write_waveform_csv(path, X, ids=None):
    atomic_write_text(path, waveforms_to_csv(X, ids))


def read_waveform_csv(path):
    """Return ``(ids, X)`` from a waveform CSV."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0][0] != "cycle_id" or not rows[0][1:2] == ["v0"]:
        raise SchemaMismatch(f"{path} is not a waveform CSV")
    ids = [r[0] for r in rows[1:]]
    X = np.array([[float(v) for v in r[1:]] for r in rows[1:]]).reshape(len(ids), -1)
    return ids, X
