"""Synthetic paired ear-sound / SCG / GCG sessions with known ground truth.

The generator is a deliberately simple body model:

* SCG and GCG are sums of signed Gaussian bumps centred on the five
  fiducial events of each beat (AO is always the tallest).
* The in-ear sound is the SCG passed through a heart-to-ear FIR
  (``user_channel``), plus 30 Hz Gaussian tone bursts for S1 (at MC) and
  S2, all colored by the transducer FIR (``device_response``), plus noise,
  optional music and optional motion interference.

Two random streams keep the factors separable: ``seed`` drives physiology
(beat times, per-beat jitter), ``noise_seed`` drives everything additive.
"""

from dataclasses import asdict, dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Optional

import numpy as np

from .exceptions import InvalidConfig
from .io import PairedSession, atomic_write_text, dumps_json, provenance, save_session
from .signal import TARGET_RATE_HZ, Modality, SampledSignal

FIDUCIALS = ("mc", "im", "ao", "ma", "re")
MOTION_KINDS = ("chewing", "walking", "nodding", "talking", "brow")

DEFAULT_OFFSETS_MS = {"mc": 5.0, "im": 30.0, "ao": 55.0, "ma": 80.0, "re": 108.0}
DEFAULT_SCG_AMPS = {"mc": 0.45, "im": -0.35, "ao": 1.0, "ma": -0.55, "re": 0.6}
DEFAULT_GCG_AMPS = {"mc": 0.55, "im": -0.5, "ao": 1.0, "ma": -0.7, "re": 0.45}

# default motion level above heart-sound RMS, dB
_MOTION_LEVEL_DB = {"chewing": 20.0, "walking": 14.0, "nodding": 18.0,
                    "talking": 8.0, "brow": 10.0}


def resonant_fir(freq_hz, decay_samples, n_taps=24, rate_hz=TARGET_RATE_HZ):
    """Damped cosine FIR, normalised to unit peak gain below 60 Hz."""
    n = np.arange(n_taps)
    h = np.exp(-n / decay_samples) * np.cos(2 * np.pi * freq_hz * n / rate_hz)
    f = np.linspace(0, 60, 121)
    H = np.abs(np.exp(-2j * np.pi * np.outer(f, n) / rate_hz) @ h)
    return tuple(float(v) for v in h / H.max())


DEFAULT_USER_CHANNEL = resonant_fir(25.0, 5.0)


class Dimension(str, Enum):
    SESSION = "Session"
    USER = "User"
    DEVICE = "Device"


@dataclass(frozen=True)
class MotionEvent:
    start_s: float
    duration_s: float
    kind: str
    level_db: Optional[float] = None


@dataclass(frozen=True)
class SynthConfig:
    """Knobs of the body model. All times in ms unless the name says ``_s``."""

    seed: int = 0
    duration_s: float = 60.0
    heart_rate_bpm: float = 75.0
    hr_jitter_pct: float = 2.0
    fiducial_offsets_ms: dict = field(default_factory=lambda: dict(DEFAULT_OFFSETS_MS))
    fiducial_jitter_ms: float = 1.0
    scg_amplitudes: dict = field(default_factory=lambda: dict(DEFAULT_SCG_AMPS))
    gcg_amplitudes: dict = field(default_factory=lambda: dict(DEFAULT_GCG_AMPS))
    scg_width_ms: float = 5.0
    gcg_width_ms: float = 6.0
    amplitude_jitter_pct: float = 5.0
    user_channel: tuple = DEFAULT_USER_CHANNEL
    device_response: tuple = (1.0,)
    channel_gain: float = 1.0
    s1_amplitude: float = 1.6
    s2_ratio: float = 0.6
    s2_delay_ms: float = 320.0
    burst_hz: float = 30.0
    burst_width_ms: float = 12.0
    noise_db: float = -15.0
    noise_seed: Optional[int] = None
    imu_noise_db: float = -30.0
    respiration_amplitude: float = 0.2
    music_db: Optional[float] = None
    motion_events: tuple = ()
    ear_channels: int = 1
    right_noise_offset_db: float = 3.0
    first_beat_s: float = 0.3
    rate_hz: float = TARGET_RATE_HZ

    def __post_init__(self):
        object.__setattr__(self, "user_channel", tuple(float(v) for v in self.user_channel))
        object.__setattr__(self, "device_response", tuple(float(v) for v in self.device_response))
        events = tuple(
            e if isinstance(e, MotionEvent) else MotionEvent(*e) for e in self.motion_events
        )
        object.__setattr__(self, "motion_events", events)

    def validate(self):
        off = self.fiducial_offsets_ms
        if set(off) != set(FIDUCIALS):
            raise InvalidConfig(f"fiducial_offsets_ms needs keys {FIDUCIALS}")
        times = [off[k] for k in FIDUCIALS]
        if any(b <= a for a, b in zip(times, times[1:])):
            raise InvalidConfig("fiducial offsets must satisfy MC < IM < AO < MA < RE")
        for name in ("scg_amplitudes", "gcg_amplitudes"):
            amps = getattr(self, name)
            if set(amps) != set(FIDUCIALS):
                raise InvalidConfig(f"{name} needs keys {FIDUCIALS}")
            if any(abs(amps[k]) >= amps["ao"] for k in FIDUCIALS if k != "ao"):
                raise InvalidConfig(f"{name}: AO must have the largest |amplitude|")
        if not 40 <= self.heart_rate_bpm <= 110:
            raise InvalidConfig("heart_rate_bpm must lie in [40, 110]")
        if not self.duration_s > 0:
            raise InvalidConfig("duration_s must be positive")
        if self.hr_jitter_pct < 0 or self.fiducial_jitter_ms < 0:
            raise InvalidConfig("jitter must be non-negative")
        if not self.user_channel or not self.device_response:
            raise InvalidConfig("FIR responses must be non-empty")
        if self.ear_channels not in (1, 2):
            raise InvalidConfig("ear_channels must be 1 or 2")
        for ev in self.motion_events:
            if ev.kind not in MOTION_KINDS:
                raise InvalidConfig(f"unknown motion kind {ev.kind!r}")
            if ev.duration_s <= 0 or ev.start_s < 0:
                raise InvalidConfig("motion events need start >= 0 and duration > 0")
        return self

    def to_dict(self):
        d = asdict(self)
        d["user_channel"] = list(self.user_channel)
        d["device_response"] = list(self.device_response)
        d["motion_events"] = [asdict(e) for e in self.motion_events]
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if "motion_events" in d:
            d["motion_events"] = tuple(
                MotionEvent(**e) if isinstance(e, dict) else MotionEvent(*e)
                for e in d["motion_events"]
            )
        known = cls.__dataclass_fields__
        unknown = set(d) - set(known)
        if unknown:
            raise InvalidConfig(f"unknown synth config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class GroundTruth:
    """Per-beat event times (seconds) and the noise-free streams."""

    beat_times_s: np.ndarray
    fiducial_times_s: np.ndarray  # (n_beats, 5) in FIDUCIALS order
    s2_times_s: np.ndarray
    clean_scg: SampledSignal
    clean_gcg: SampledSignal
    clean_ear: SampledSignal

    @property
    def n_beats(self):
        return self.beat_times_s.size

    @property
    def s1_times_s(self):
        return self.fiducial_times_s[:, 0]

    @property
    def ao_times_s(self):
        return self.fiducial_times_s[:, 2]

    def fiducial_indices(self, beat, cycle_start):
        """Sample indices of one beat's events relative to ``cycle_start``."""
        rate = self.clean_scg.rate_hz
        return np.rint(self.fiducial_times_s[beat] * rate).astype(int) - cycle_start

    def to_dict(self):
        ms = lambda v: round(float(v) * 1000.0, 2)  # noqa: E731
        return {
            "beat_times_ms": [ms(t) for t in self.beat_times_s],
            "fiducials_ms": [
                {k: ms(t) for k, t in zip(FIDUCIALS, row)} for row in self.fiducial_times_s
            ],
            "s2_ms": [ms(t) for t in self.s2_times_s],
        }


def _gaussian_train(n, rate, centers_s, amps, width_s):
    out = np.zeros(n)
    half = int(np.ceil(6 * width_s * rate))
    for c, a in zip(centers_s, amps):
        i0 = int(np.floor(c * rate)) - half
        idx = np.arange(max(i0, 0), min(i0 + 2 * half + 2, n))
        t = idx / rate - c
        out[idx] += a * np.exp(-0.5 * (t / width_s) ** 2)
    return out


def _burst_train(n, rate, centers_s, amps, freq_hz, width_s):
    out = np.zeros(n)
    half = int(np.ceil(5 * width_s * rate))
    for c, a in zip(centers_s, amps):
        i0 = int(np.floor(c * rate)) - half
        idx = np.arange(max(i0, 0), min(i0 + 2 * half + 2, n))
        t = idx / rate - c
        out[idx] += a * np.exp(-0.5 * (t / width_s) ** 2) * np.cos(2 * np.pi * freq_hz * t)
    return out


def _fir(x, h):
    return np.convolve(x, np.asarray(h), mode="full")[: x.size]


def _rms(x):
    return float(np.sqrt(np.mean(np.square(x)))) if x.size else 0.0


def _beat_schedule(cfg, rng):
    period = 60.0 / cfg.heart_rate_bpm
    off = cfg.fiducial_offsets_ms
    tail_s = max(off["re"] + 3 * cfg.scg_width_ms,
                 off["mc"] + cfg.s2_delay_ms + 3 * cfg.burst_width_ms) / 1000.0
    onsets = []
    t = cfg.first_beat_s
    while t + tail_s < cfg.duration_s:
        onsets.append(t)
        jitter = 1.0 + cfg.hr_jitter_pct / 100.0 * rng.standard_normal()
        t += period * float(np.clip(jitter, 0.6, 1.6))
    return np.asarray(onsets)


def _event_times(cfg, onsets, rng):
    """Per-beat fiducial times; non-AO events jitter relative to AO."""
    off = np.array([cfg.fiducial_offsets_ms[k] for k in FIDUCIALS]) / 1000.0
    times = onsets[:, None] + off[None, :]
    if cfg.fiducial_jitter_ms > 0 and onsets.size:
        jit = rng.standard_normal((onsets.size, 5)) * cfg.fiducial_jitter_ms / 1000.0
        jit[:, 2] = 0.0
        # keep at least a quarter of each nominal gap so ordering survives
        gaps = np.diff(off)
        lim = np.minimum(np.r_[np.inf, gaps], np.r_[gaps, np.inf]) * 0.375
        jit = np.clip(jit, -lim, lim)
        times = times + jit
    return times


def _amp_matrix(amps, n_beats, jitter_pct, rng):
    base = np.array([amps[k] for k in FIDUCIALS])
    scale = 1.0 + jitter_pct / 100.0 * rng.standard_normal((n_beats, 5))
    out = base[None, :] * np.clip(scale, 0.5, 1.5)
    # AO stays the largest |amplitude| of its beat
    others = np.abs(out[:, [0, 1, 3, 4]]).max(axis=1)
    out[:, 2] = np.maximum(out[:, 2], others * 1.05)
    return out


def motion_waveform(kind, n, rate, rng):
    """Unit-RMS interference of the given kind (see MOTION_KINDS)."""
    t = np.arange(n) / rate
    if kind == "chewing":
        f = rng.uniform(1.2, 1.8)
        env = np.maximum(np.sin(2 * np.pi * f * t + rng.uniform(0, 2 * np.pi)), 0) ** 2
        noise = rng.standard_normal(n)
        thump = np.sin(2 * np.pi * rng.uniform(3, 8) * t)
        x = env * (noise + 0.8 * thump) + 0.3 * rng.standard_normal(n) * env.mean()
    elif kind == "walking":
        f = rng.uniform(1.6, 2.2)
        x = np.sin(2 * np.pi * f * t) + 0.5 * np.sin(4 * np.pi * f * t + rng.uniform(0, 6))
        steps = np.arange(rng.uniform(0, 1 / f), t[-1] if n else 0, 1 / f)
        x += _burst_train(n, rate, steps, np.full(steps.size, 1.5),
                          rng.uniform(8, 15), 0.04)
    elif kind == "nodding":
        f = rng.uniform(0.8, 1.5)
        centers = np.arange(rng.uniform(0, 1 / f), t[-1] if n else 0, 1 / f)
        amps = rng.choice([-1.0, 1.0], centers.size) * rng.uniform(0.7, 1.3, centers.size)
        x = _burst_train(n, rate, centers, amps, rng.uniform(40, 80), 0.004)
        x += 0.02 * rng.standard_normal(n)
    elif kind == "talking":
        f0 = rng.uniform(90, 150)
        syll = (0.5 + 0.5 * np.sin(2 * np.pi * rng.uniform(3, 5) * t)) ** 2
        voiced = sum(np.cos(2 * np.pi * h * f0 * t) / h for h in (1, 2, 3))
        x = syll * (voiced + 0.7 * rng.standard_normal(n))
    elif kind == "brow":
        x = np.zeros(n)
        for _ in range(int(rng.integers(1, 4))):
            c = rng.uniform(0, t[-1] if n else 0)
            w = rng.uniform(0.25, 0.7)
            env = np.exp(-0.5 * ((t - c) / w) ** 2)
            spec = np.fft.rfft(rng.standard_normal(n))
            fr = np.fft.rfftfreq(n, 1 / rate)
            spec[(fr < 40) | (fr > 200)] = 0
            x += env * np.fft.irfft(spec, n)
        x += 0.05 * rng.standard_normal(n)
    else:
        raise InvalidConfig(f"unknown motion kind {kind!r}")
    r = _rms(x)
    return x / r if r > 0 else x


def pink_music(n, rate, rng, highpass_hz=60.0):
    """Unit-RMS pink-spectrum noise with nothing below ``highpass_hz``."""
    spec = np.fft.rfft(rng.standard_normal(n))
    f = np.fft.rfftfreq(n, 1 / rate)
    gain = np.zeros_like(f)
    keep = f >= highpass_hz
    gain[keep] = 1.0 / np.sqrt(f[keep])
    x = np.fft.irfft(spec * gain, n)
    r = _rms(x)
    return x / r if r > 0 else x


def _f32(x):
    return np.asarray(x, dtype=np.float32).astype(np.float64)


def generate_session(config):
    """Render one session. Deterministic in ``config``.

    Returns
    -------
    session : PairedSession
    truth : GroundTruth
    """
    cfg = config.validate()
    rate = cfg.rate_hz
    n = int(round(cfg.duration_s * rate))
    phys = np.random.default_rng([cfg.seed, 1])
    noise_rng = np.random.default_rng(
        [cfg.seed if cfg.noise_seed is None else cfg.noise_seed, 2]
    )

    onsets = _beat_schedule(cfg, phys)
    times = _event_times(cfg, onsets, phys)
    nb = onsets.size
    scg_amp = _amp_matrix(cfg.scg_amplitudes, nb, cfg.amplitude_jitter_pct, phys)
    gcg_amp = _amp_matrix(cfg.gcg_amplitudes, nb, cfg.amplitude_jitter_pct, phys)
    s1_amp = cfg.s1_amplitude * np.clip(
        1 + cfg.amplitude_jitter_pct / 100 * phys.standard_normal(nb), 0.5, 1.5
    )

    scg = np.zeros(n)
    gcg = np.zeros(n)
    for j in range(5):
        scg += _gaussian_train(n, rate, times[:, j], scg_amp[:, j], cfg.scg_width_ms / 1000)
        gcg += _gaussian_train(n, rate, times[:, j], gcg_amp[:, j], cfg.gcg_width_ms / 1000)

    s1_t = times[:, 0]
    s2_t = s1_t + cfg.s2_delay_ms / 1000.0
    bursts = _burst_train(n, rate, s1_t, s1_amp, cfg.burst_hz, cfg.burst_width_ms / 1000)
    bursts += _burst_train(n, rate, s2_t, s1_amp * cfg.s2_ratio, cfg.burst_hz,
                           cfg.burst_width_ms / 1000)
    body = cfg.channel_gain * _fir(scg, cfg.user_channel) + bursts
    clean_ear = _fir(body, cfg.device_response)
    ref_rms = _rms(clean_ear)

    def additive(offset_db=0.0):
        x = ref_rms * 10 ** ((cfg.noise_db + offset_db) / 20) * noise_rng.standard_normal(n)
        return x

    ear = clean_ear + additive()
    if cfg.music_db is not None:
        ear += ref_rms * 10 ** (cfg.music_db / 20) * pink_music(n, rate, noise_rng)
    for ev in cfg.motion_events:
        i0 = int(round(ev.start_s * rate))
        i1 = min(n, int(round((ev.start_s + ev.duration_s) * rate)))
        if i1 <= i0:
            continue
        level = _MOTION_LEVEL_DB[ev.kind] if ev.level_db is None else ev.level_db
        w = motion_waveform(ev.kind, i1 - i0, rate, noise_rng)
        ramp = min(int(0.05 * rate), (i1 - i0) // 2)
        if ramp > 0:
            taper = np.ones(i1 - i0)
            taper[:ramp] = np.linspace(0, 1, ramp)
            taper[-ramp:] = np.linspace(1, 0, ramp)
            w = w * taper
        ear[i0:i1] += ref_rms * 10 ** (level / 20) * w

    ear_right = None
    if cfg.ear_channels == 2:
        ear_right = 0.9 * clean_ear + additive(cfg.right_noise_offset_db)

    t = np.arange(n) / rate
    resp = cfg.respiration_amplitude * np.sin(2 * np.pi * 0.25 * t + phys.uniform(0, 2 * np.pi))
    scg_meas = scg + resp + _rms(scg) * 10 ** (cfg.imu_noise_db / 20) * noise_rng.standard_normal(n)
    gcg_meas = gcg + resp + _rms(gcg) * 10 ** (cfg.imu_noise_db / 20) * noise_rng.standard_normal(n)

    meta = {"source": "synth", "seed": cfg.seed, "noise_seed": cfg.noise_seed}
    session = PairedSession(
        ear=SampledSignal(_f32(ear), rate, Modality.EAR, "left"),
        scg=SampledSignal(_f32(scg_meas), rate, Modality.SCG, "az"),
        gcg=SampledSignal(_f32(gcg_meas), rate, Modality.GCG, "gy"),
        offset_ms=0.0,
        meta=meta,
        ear_right=(
            SampledSignal(_f32(ear_right), rate, Modality.EAR, "right")
            if ear_right is not None else None
        ),
    )
    truth = GroundTruth(
        beat_times_s=onsets,
        fiducial_times_s=times,
        s2_times_s=s2_t,
        clean_scg=SampledSignal(scg, rate, Modality.SCG),
        clean_gcg=SampledSignal(gcg, rate, Modality.GCG),
        clean_ear=SampledSignal(clean_ear, rate, Modality.EAR),
    )
    return session, truth


_DIM_CODE = {Dimension.SESSION: 11, Dimension.USER: 12, Dimension.DEVICE: 13}


def perturb(config, dimension, seed=None, ao_mc_shift_ms=(10.0, 30.0)):
    """Return a copy of ``config`` varied along one factor.

    Session
        new noise stream and channel gain scaled by up to +-10 %.
    User
        new physiology seed, heart-to-ear channel and fiducial offsets; the
        AO-MC interval moves by a random amount in ``ao_mc_shift_ms`` (either
        sign, kept at >= 15 ms).
    Device
        new transducer response only.
    """
    dimension = Dimension(dimension)
    if seed is None:
        seed = config.seed
    rng = np.random.default_rng([seed, _DIM_CODE[dimension], config.seed])
    if dimension is Dimension.SESSION:
        return replace(
            config,
            noise_seed=int(rng.integers(0, 2**31 - 1)),
            channel_gain=float(config.channel_gain * rng.uniform(0.9, 1.1)),
        )
    if dimension is Dimension.DEVICE:
        taps = rng.uniform(-1, 1, 8)
        taps *= rng.uniform(0.3, 0.6) / np.abs(taps).sum()
        return replace(config, device_response=(1.0, *map(float, taps)))

    off = dict(config.fiducial_offsets_ms)
    gap = off["ao"] - off["mc"]
    lo, hi = ao_mc_shift_ms
    delta = rng.uniform(lo, hi) * rng.choice([-1.0, 1.0])
    if gap + delta < 15.0:
        delta = -delta
    new_gap = gap + delta
    im_frac = (off["ao"] - off["im"]) / gap
    off["mc"] = off["ao"] - new_gap
    off["im"] = off["ao"] - im_frac * new_gap
    tail = off["re"] - off["ao"]
    new_tail = tail + rng.uniform(5, 15) * rng.choice([-1.0, 1.0])
    ma_frac = (off["ma"] - off["ao"]) / tail
    off["re"] = off["ao"] + new_tail
    off["ma"] = off["ao"] + ma_frac * new_tail

    def jiggle(amps):
        out = {k: float(v * rng.uniform(0.8, 1.2)) if k != "ao" else float(v)
               for k, v in amps.items()}
        return {k: (float(np.clip(v, -0.9, 0.9)) if k != "ao" else v) for k, v in out.items()}

    return replace(
        config,
        seed=int(rng.integers(0, 2**31 - 1)),
        user_channel=resonant_fir(rng.uniform(15, 35), rng.uniform(3, 8)),
        fiducial_offsets_ms=off,
        scg_amplitudes=jiggle(config.scg_amplitudes),
        gcg_amplitudes=jiggle(config.gcg_amplitudes),
        s2_delay_ms=float(config.s2_delay_ms + rng.uniform(-20, 20)),
    )


def write_truth(truth, path, config=None):
    d = truth.to_dict()
    d["provenance"] = provenance(config)
    atomic_write_text(path, dumps_json(d))


def write_synth_session(config, directory):
    """Generate and persist a session directory plus ``truth.json``."""
    session, truth = generate_session(config)
    cfg = config.to_dict()
    save_session(session, directory, config=cfg)
    write_truth(truth, Path(directory) / "truth.json", config=cfg)
    return session, truth


def motion_corpus(seed=0, n_static=132, n_per_kind=None, window_s=10.0,
                  rate_hz=TARGET_RATE_HZ):
    """Labelled 10 s ear-audio windows for training the motion gate.

    The default class sizes mirror a 132 static / 176 motion split
    (33 brow, 53 chewing, 32 nodding, 25 talking, 33 walking).

    Returns
    -------
    windows : list of SampledSignal
    labels : ndarray of int (1 = motion)
    kinds : list of str (``"static"`` or a motion kind)
    """
    if n_per_kind is None:
        n_per_kind = {"brow": 33, "chewing": 53, "nodding": 32, "talking": 25, "walking": 33}
    rng = np.random.default_rng([seed, 99])
    plan = ["static"] * n_static + [k for k, c in n_per_kind.items() for _ in range(c)]
    windows, labels, kinds = [], [], []
    for i, kind in enumerate(plan):
        cfg = random_user_config(int(rng.integers(0, 2**31 - 1)), window_s, rng)
        if kind != "static":
            dur = rng.uniform(5.0, window_s)
            start = rng.uniform(0, window_s - dur)
            level = _MOTION_LEVEL_DB[kind] + rng.uniform(-4, 4)
            cfg = replace(cfg, motion_events=(MotionEvent(start, dur, kind, level),))
        session, _ = generate_session(cfg)
        gain = 10 ** (rng.uniform(-6, 6) / 20)
        windows.append(session.ear.with_samples(session.ear.samples * gain))
        labels.append(0 if kind == "static" else 1)
        kinds.append(kind)
    return windows, np.asarray(labels), kinds


def random_user_config(seed, duration_s, rng=None, **overrides):
    """A plausible random user: heart rate, channel and noise level."""
    rng = rng if rng is not None else np.random.default_rng(seed)
    base = SynthConfig(
        seed=seed,
        duration_s=duration_s,
        heart_rate_bpm=float(rng.uniform(55, 95)),
        noise_db=float(rng.uniform(-20, -8)),
        user_channel=resonant_fir(rng.uniform(15, 35), rng.uniform(3, 8)),
        first_beat_s=float(rng.uniform(0.1, 0.6)),
    )
    return replace(base, **overrides)
