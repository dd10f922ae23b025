"""Synthetic AEC/NS scene generation.

A scene mixes a near-end voice, a loudspeaker reference passing through a
(possibly time-variant) delay, a nonlinearity and an echo-path impulse
response, plus additive noise:

    mic = h_near * voice + h_echo * nl(ref delayed) + noise

Delay and echo-path switches are instantaneous at their schedule boundaries,
which is exactly the abrupt time-variance the span-adaptive models are meant
to track.  Every sample carries an activity label (FST / NST / DT) used by
the metrics module.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.signal import fftconvolve

from .dsp import SAMPLE_RATE, Waveform, read_wav, write_wav

# Per-sample activity labels.
FST = "FST"  # far-end single talk: only the echo is active
NST = "NST"  # near-end single talk: only local speech is active
DT = "DT"    # double talk
LABELS = (FST, NST, DT)
_LABEL_CODE = {name: i for i, name in enumerate(LABELS)}

MAX_RIR_LEN = 8000  # 500 ms at 16 kHz


@dataclass
class Nonlinearity:
    """Loudspeaker distortion model applied to the delayed reference."""

    kind: str = "hard_clip"
    param: float = 0.8

    def __post_init__(self):
        if self.kind not in ("identity", "hard_clip", "scaled_tanh"):
            raise ValueError(f"unknown nonlinearity: {self.kind!r}")
        if self.kind != "identity" and self.param <= 0:
            raise ValueError("nonlinearity parameter must be positive")

    def apply(self, x: np.ndarray) -> np.ndarray:
        if self.kind == "identity":
            return x
        if self.kind == "hard_clip":
            return np.clip(x, -self.param, self.param)
        # scaled_tanh: soft clip with unit small-signal gain
        return self.param * np.tanh(x / self.param)


@dataclass
class SceneSpec:
    """Declarative description of one mixing scenario.

    delay_schedule and rir_echo_schedule are lists of (start_sample, value)
    entries sorted by start; the active entry switches instantaneously at
    each boundary.  segments are non-overlapping (start, end, label) spans
    that must tile the full signal.
    """

    delay_schedule: list = field(default_factory=lambda: [(0, 0)])
    rir_near: np.ndarray | None = None
    rir_echo_schedule: list | None = None
    nonlinearity: Nonlinearity = field(default_factory=Nonlinearity)
    snr_db: float | None = None
    ser_db: float | None = None
    segments: list = field(default_factory=list)

    def validate(self, length: int) -> None:
        if not self.delay_schedule:
            raise ValueError("delay schedule is empty")
        starts = [s for s, _ in self.delay_schedule]
        if starts != sorted(starts) or starts[0] != 0:
            raise ValueError("delay schedule must be sorted and start at sample 0")
        if any(d < 0 for _, d in self.delay_schedule):
            raise ValueError("delays must be non-negative")
        if any(s >= length for s, _ in self.delay_schedule[1:]):
            raise ValueError("delay schedule boundary beyond signal length")
        if self.rir_near is not None and len(self.rir_near) > MAX_RIR_LEN:
            raise ValueError(f"near RIR longer than {MAX_RIR_LEN} samples")
        if self.rir_echo_schedule is not None:
            estarts = [s for s, _ in self.rir_echo_schedule]
            if estarts != sorted(estarts) or estarts[0] != 0:
                raise ValueError("echo RIR schedule must be sorted and start at sample 0")
            if any(s >= length for s in estarts[1:]):
                raise ValueError("echo RIR schedule boundary beyond signal length")
            if any(len(h) > MAX_RIR_LEN for _, h in self.rir_echo_schedule):
                raise ValueError(f"echo RIR longer than {MAX_RIR_LEN} samples")
        last_end = 0
        for start, end, label in sorted(self.segments):
            if label not in LABELS:
                raise ValueError(f"unknown segment label: {label!r}")
            if start < last_end:
                raise ValueError("segments overlap")
            if end > length:
                raise ValueError("segment extends beyond signal length")
            last_end = end


@dataclass
class SceneSignals:
    """Generated scene: microphone mix, reference, training target, labels."""

    mic: Waveform
    ref: Waveform
    near_target: Waveform
    labels: np.ndarray  # per-sample uint8 codes into LABELS

    def __post_init__(self):
        n = len(self.mic)
        if not (len(self.ref) == len(self.near_target) == len(self.labels) == n):
            raise ValueError("scene signals must share one length")

    def label_mask(self, *names: str) -> np.ndarray:
        codes = [_LABEL_CODE[n] for n in names]
        return np.isin(self.labels, codes)


def synth_rir(rng: np.random.Generator, rt60: float = 0.2,
              direct_delay: int = 0, length: int | None = None) -> np.ndarray:
    """Exponentially decaying noise RIR with a unit direct-path tap."""
    if length is None:
        length = min(MAX_RIR_LEN, int(rt60 * SAMPLE_RATE) + direct_delay + 1)
    length = min(length, MAX_RIR_LEN)
    h = np.zeros(length)
    h[direct_delay] = 1.0
    tail_len = length - direct_delay - 1
    if tail_len > 0 and rt60 > 0:
        t = np.arange(1, tail_len + 1) / SAMPLE_RATE
        # -60 dB amplitude decay at rt60
        envelope = np.exp(-6.9077552789821 * t / rt60)
        h[direct_delay + 1:] = 0.3 * rng.standard_normal(tail_len) * envelope
    return h


def _delayed(x: np.ndarray, delay: int) -> np.ndarray:
    if delay == 0:
        return x
    out = np.zeros_like(x)
    out[delay:] = x[:-delay]
    return out


def _piecewise(length: int, schedule: list, render) -> np.ndarray:
    """Render a full-length signal per schedule entry, splicing at boundaries."""
    out = np.zeros(length)
    bounds = [s for s, _ in schedule] + [length]
    for i, (start, value) in enumerate(schedule):
        segment = render(value)
        out[start:bounds[i + 1]] = segment[start:bounds[i + 1]]
    return out


def _power(x: np.ndarray, mask: np.ndarray) -> float:
    sel = x[mask]
    return float(np.mean(sel**2)) if sel.size else 0.0


def generate_scene(spec: SceneSpec, s: Waveform, x: Waveform, n: Waveform,
                   seed: int = 0) -> SceneSignals:
    """Mix one scene from its components.

    s is the near-end voice, x the loudspeaker reference, n the noise; any
    RIR left unset in the spec is synthesized from the seed.  Echo and noise
    are scaled to meet ser_db/snr_db (measured over the segments where each
    component is active) whenever both sides of the ratio carry power.
    """
    length = len(s)
    if not (len(x) == len(n) == length):
        raise ValueError("component signals must share one length")
    spec.validate(length)
    rng = np.random.default_rng(seed)

    h1 = spec.rir_near if spec.rir_near is not None else synth_rir(rng)
    if spec.rir_echo_schedule is not None:
        echo_schedule = spec.rir_echo_schedule
    else:
        echo_schedule = [(0, synth_rir(rng))]

    near = fftconvolve(s.samples, h1)[:length]
    direct = int(np.argmax(np.abs(h1)))
    near_target = h1[direct] * _delayed(s.samples, direct)

    def render_delay(delta):
        return spec.nonlinearity.apply(_delayed(x.samples, int(delta)))

    distorted = _piecewise(length, spec.delay_schedule, render_delay)

    def render_echo(h2):
        return fftconvolve(distorted, np.asarray(h2, dtype=np.float64))[:length]

    echo = _piecewise(length, echo_schedule, render_echo)

    labels = np.full(length, _LABEL_CODE[DT], dtype=np.uint8)
    for start, end, label in spec.segments:
        labels[start:end] = _LABEL_CODE[label]

    near_active = np.isin(labels, [_LABEL_CODE[NST], _LABEL_CODE[DT]])
    echo_active = np.isin(labels, [_LABEL_CODE[FST], _LABEL_CODE[DT]])
    p_near = _power(near, near_active)
    p_echo = _power(echo, echo_active)
    if spec.ser_db is not None and p_near > 0 and p_echo > 0:
        echo = echo * np.sqrt(p_near / (p_echo * 10.0 ** (spec.ser_db / 10.0)))
    p_noise = _power(n.samples, near_active)
    noise = n.samples
    if spec.snr_db is not None and p_near > 0 and p_noise > 0:
        noise = noise * np.sqrt(p_near / (p_noise * 10.0 ** (spec.snr_db / 10.0)))

    mic = near + echo + noise
    return SceneSignals(
        mic=Waveform(mic),
        ref=Waveform(x.samples.copy()),
        near_target=Waveform(near_target),
        labels=labels,
    )


@dataclass
class SceneTemplate:
    """Parameters shared by a batch of scenes; randomness comes from the seed."""

    duration_sec: float = 4.0
    snr_db: float = 20.0
    ser_db: float = 0.0
    nonlinearity: str = "hard_clip"
    nl_param: float = 0.8
    rt60: float = 0.2
    delay_ms_min: float = 100.0
    delay_ms_max: float = 400.0
    variant_delay: bool = False
    variant_rir: bool = False

    @classmethod
    def from_config(cls, path) -> "SceneTemplate":
        """Parse a key = value config file; unknown keys are rejected."""
        fields = {f: typ for f, typ in cls.__annotations__.items()}
        kwargs = {}
        for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected 'key = value'")
            key, value = (part.strip() for part in line.split("=", 1))
            if key not in fields:
                raise ValueError(f"{path}:{lineno}: unknown key {key!r}")
            if fields[key] in ("bool", bool):
                kwargs[key] = value.lower() in ("1", "true", "yes")
            elif fields[key] in ("str", str):
                kwargs[key] = value
            else:
                kwargs[key] = float(value)
        return cls(**kwargs)

    def to_config(self) -> str:
        lines = [f"{name} = {getattr(self, name)}" for name in self.__annotations__]
        return "\n".join(lines) + "\n"


def _synth_voice(rng: np.random.Generator, length: int) -> np.ndarray:
    """Speech surrogate: harmonic tone bursts with a wandering pitch."""
    t = np.arange(length) / SAMPLE_RATE
    f0 = rng.uniform(90.0, 220.0)
    drift = np.cumsum(rng.standard_normal(length)) / SAMPLE_RATE
    phase = 2 * np.pi * (f0 * t + 2.0 * drift)
    voice = np.zeros(length)
    for k, amp in enumerate((1.0, 0.6, 0.35, 0.2), start=1):
        voice += amp * np.sin(k * phase + rng.uniform(0, 2 * np.pi))
    # syllable-rate amplitude modulation with pauses
    env_pts = rng.uniform(0.0, 1.0, size=max(4, length // 3200))
    env_pts[env_pts < 0.3] = 0.0
    env = np.interp(np.linspace(0, 1, length), np.linspace(0, 1, len(env_pts)), env_pts)
    voice *= env
    peak = np.max(np.abs(voice))
    return voice / peak * 0.5 if peak > 0 else voice


def _synth_noise(rng: np.random.Generator, length: int) -> np.ndarray:
    """Low-pass filtered white noise."""
    white = rng.standard_normal(length)
    kernel = np.ones(8) / 8.0
    colored = fftconvolve(white, kernel)[:length]
    return colored / np.max(np.abs(colored)) * 0.3


def scene_type_counts(count: int) -> dict:
    """FST:NST:DT = 1:1:5 by largest remainder; ties go to the largest share."""
    shares = {FST: 1, NST: 1, DT: 5}
    total = sum(shares.values())
    quotas = {k: count * v / total for k, v in shares.items()}
    counts = {k: int(q) for k, q in quotas.items()}
    leftover = count - sum(counts.values())
    order = sorted(LABELS, key=lambda k: (quotas[k] - counts[k], shares[k]), reverse=True)
    for k in order[:leftover]:
        counts[k] += 1
    return counts


def synth_batch(template: SceneTemplate, count: int, seed: int) -> list[SceneSignals]:
    """Generate `count` scenes, typed FST:NST:DT = 1:1:5, deterministic in seed."""
    if count < 1:
        raise ValueError("count must be >= 1")
    counts = scene_type_counts(count)
    types = [FST] * counts[FST] + [NST] * counts[NST] + [DT] * counts[DT]
    length = int(round(template.duration_sec * SAMPLE_RATE))
    scenes = []
    for i, scene_type in enumerate(types):
        rng = np.random.default_rng((seed, i))
        voice = _synth_voice(rng, length)
        ref = _synth_voice(rng, length)
        noise = _synth_noise(rng, length)
        if scene_type == FST:
            voice = np.zeros(length)
        elif scene_type == NST:
            ref = np.zeros(length)

        delay = int(rng.uniform(template.delay_ms_min, template.delay_ms_max)
                    * SAMPLE_RATE / 1000.0)
        delay_schedule = [(0, delay)]
        if template.variant_delay:
            delay2 = int(rng.uniform(template.delay_ms_min, template.delay_ms_max)
                         * SAMPLE_RATE / 1000.0)
            delay_schedule.append((length // 2, delay2))
        echo_schedule = [(0, synth_rir(rng, template.rt60))]
        if template.variant_rir:
            echo_schedule.append((length // 2, synth_rir(rng, template.rt60)))

        spec = SceneSpec(
            delay_schedule=delay_schedule,
            rir_near=synth_rir(rng, template.rt60),
            rir_echo_schedule=echo_schedule,
            nonlinearity=Nonlinearity(template.nonlinearity, template.nl_param),
            snr_db=template.snr_db,
            ser_db=template.ser_db,
            segments=[(0, length, scene_type)],
        )
        scenes.append(generate_scene(
            spec,
            Waveform(voice),
            Waveform(ref),
            Waveform(noise),
            seed=int(rng.integers(2**31)),
        ))
    return scenes


def write_scene(scene: SceneSignals, out_dir) -> None:
    """Emit a scene as mic/ref/target WAVs plus a labels CSV."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_wav(out / "mic.wav", scene.mic)
    write_wav(out / "ref.wav", scene.ref)
    write_wav(out / "target.wav", scene.near_target)
    with open(out / "labels.csv", "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["start_sample", "end_sample", "label"])
        codes = scene.labels
        start = 0
        for i in range(1, len(codes) + 1):
            if i == len(codes) or codes[i] != codes[start]:
                writer.writerow([start, i, LABELS[codes[start]]])
                start = i


def read_scene(scene_dir) -> SceneSignals:
    """Load a scene previously written by write_scene."""
    d = Path(scene_dir)
    mic = read_wav(d / "mic.wav")
    ref = read_wav(d / "ref.wav")
    target = read_wav(d / "target.wav")
    labels = np.full(len(mic), _LABEL_CODE[DT], dtype=np.uint8)
    with open(d / "labels.csv", newline="") as f:
        for row in csv.DictReader(f):
            labels[int(row["start_sample"]):int(row["end_sample"])] = \
                _LABEL_CODE[row["label"]]
    return SceneSignals(mic=mic, ref=ref, near_target=target, labels=labels)
