"""Synthetic multichannel ECoG with a known sleep/wake schedule.

Waking segments are low-amplitude white noise. Sleep segments are louder
and dominated by slow (0.5-4 Hz) oscillation, built from five random-phase
sinusoids, plus white noise and optional 14 Hz spindle bursts. All channels
switch state together; every channel draws its own noise. A per-channel
gain is applied last to mimic between-animal amplitude differences.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import DataError
from .ingest import BS, DEFAULT_SAMPLING_RATE_HZ, WS, Hypnogram, Recording

_STATE_NAMES = {"WS": WS, "BS": BS, WS: WS, BS: BS}

N_DELTA_COMPONENTS = 5
DELTA_BAND_HZ = (0.5, 4.0)
SPINDLE_HZ = 14.0
SPINDLE_S = 0.5


def _state(value) -> int:
    try:
        return _STATE_NAMES[value.upper() if isinstance(value, str) else int(value)]
    except (KeyError, ValueError, TypeError):
        raise DataError(f"unknown state {value!r}; use 'WS'/'BS' or 0/1") from None


@dataclass(frozen=True)
class SynthSpec:
    """Parameters of one synthetic subject.

    Amplitudes are the per-channel RMS of each state's signal before the
    noise floor and gain are added. ``delta_weight`` is the fraction of
    sleep-state power carried by the slow oscillation; the rest is white
    noise. Spindle amplitude is relative to the channel's sleep amplitude.
    """

    duration_s: float
    schedule: tuple[tuple[int, float], ...]
    amplitude_ws: tuple[float, ...] = (20.0, 20.0, 20.0)
    amplitude_bs: tuple[float, ...] = (60.0, 60.0, 60.0)
    sampling_rate_hz: int = DEFAULT_SAMPLING_RATE_HZ
    delta_weight: float = 0.8
    spindle_rate_per_min: float = 2.0
    spindle_amplitude: float = 0.5
    noise_floor: float = 1.0
    gains: tuple[float, ...] = (1.0, 1.0, 1.0)
    seed: int = 0
    channel_labels: tuple[str, ...] = ()
    subject_id: str | None = None

    def __post_init__(self):
        sched = tuple((_state(s), float(d)) for s, d in self.schedule)
        if not sched:
            raise DataError("schedule is empty")
        if any(not d > 0 for _, d in sched):
            raise DataError("schedule durations must be positive")
        total = sum(d for _, d in sched)
        if abs(total - self.duration_s) > 1e-9 * max(1.0, self.duration_s):
            raise DataError(f"schedule covers {total} s but duration_s is {self.duration_s}")
        object.__setattr__(self, "schedule", sched)
        ws = tuple(map(float, self.amplitude_ws))
        bs = tuple(map(float, self.amplitude_bs))
        gains = tuple(map(float, self.gains))
        if not (len(ws) == len(bs) == len(gains)) or not ws:
            raise DataError("amplitudes and gains need one entry per channel")
        if any(not a > 0 for a in ws + bs + gains):
            raise DataError("amplitudes and gains must be positive")
        if any(b <= w for w, b in zip(ws, bs)):
            raise DataError("sleep amplitude must exceed waking amplitude on every channel")
        if not 0 <= self.delta_weight <= 1:
            raise DataError("delta_weight must lie in [0, 1]")
        if self.spindle_rate_per_min < 0 or self.spindle_amplitude < 0 or self.noise_floor < 0:
            raise DataError("spindle rate/amplitude and noise floor must be nonnegative")
        if int(self.sampling_rate_hz) != self.sampling_rate_hz or self.sampling_rate_hz <= 0:
            raise DataError("sampling rate must be a positive integer")
        object.__setattr__(self, "amplitude_ws", ws)
        object.__setattr__(self, "amplitude_bs", bs)
        object.__setattr__(self, "gains", gains)

    @property
    def n_channels(self) -> int:
        return len(self.gains)

    @classmethod
    def from_dict(cls, d: dict) -> SynthSpec:
        """Build from JSON-style dict; a missing ``schedule`` is drawn at random.

        Random schedules use ``segment_range_s`` ([min, max], default
        [60, 180]) and the ``seed`` entry.
        """
        d = dict(d)
        seg = d.pop("segment_range_s", (60, 180))
        if "schedule" not in d:
            d["schedule"] = random_schedule(d["duration_s"], d.get("seed", 0), *seg)
        try:
            return cls(**d)
        except TypeError as exc:
            raise DataError(f"bad synth spec: {exc}") from None

    @classmethod
    def load(cls, path: str | Path) -> SynthSpec:
        return cls.from_dict(json.loads(Path(path).read_text()))


def random_schedule(duration_s: float, seed: int = 0, min_segment_s: float = 60,
                    max_segment_s: float = 180) -> list[tuple[str, float]]:
    """Alternating WS/BS segments with whole-second durations."""
    if not 0 < min_segment_s <= max_segment_s:
        raise DataError("need 0 < min_segment_s <= max_segment_s")
    # offset the stream so the schedule is not correlated with the signal noise
    rng = np.random.default_rng([seed, 7919])
    state = "BS" if rng.random() < 0.5 else "WS"
    out, left = [], float(duration_s)
    while left > 0:
        d = float(rng.integers(int(min_segment_s), int(max_segment_s) + 1))
        d = min(d, left)
        out.append((state, d))
        left -= d
        state = "WS" if state == "BS" else "BS"
    return out


def _state_mask(spec: SynthSpec, n: int) -> np.ndarray:
    fs = spec.sampling_rate_hz
    mask = np.zeros(n, dtype=bool)
    t0 = 0.0
    for state, dur in spec.schedule:
        lo, hi = int(round(t0 * fs)), int(round((t0 + dur) * fs))
        mask[lo:hi] = state == BS
        t0 += dur
    return mask


def generate(spec: SynthSpec, hypnogram_stride_s: float = 1.0) -> tuple[Recording, Hypnogram]:
    """Draw a recording and its exact schedule as a hypnogram.

    The hypnogram holds the state at ``0, stride, 2*stride, ...`` up to (not
    including) the end of the recording.
    """
    fs = spec.sampling_rate_hz
    n = int(round(spec.duration_s * fs))
    t = np.arange(n) / fs
    sleep = _state_mask(spec, n)
    rng = np.random.default_rng(spec.seed)

    spindle_len = int(round(SPINDLE_S * fs))
    burst = np.hanning(spindle_len) * np.sin(2 * np.pi * SPINDLE_HZ * np.arange(spindle_len) / fs)
    # burst onsets are drawn once and shared by all channels
    onsets = []
    t0 = 0.0
    for state, dur in spec.schedule:
        if state == BS and dur > SPINDLE_S:
            k = rng.poisson(spec.spindle_rate_per_min * dur / 60.0)
            starts = rng.uniform(t0, t0 + dur - SPINDLE_S, size=k)
            onsets.extend(int(round(s * fs)) for s in starts)
        t0 += dur
    onsets = np.array(sorted(onsets), dtype=np.int64)

    channels = np.empty((spec.n_channels, n))
    for c in range(spec.n_channels):
        f = rng.uniform(*DELTA_BAND_HZ, size=N_DELTA_COMPONENTS)
        phase = rng.uniform(0, 2 * np.pi, size=N_DELTA_COMPONENTS)
        delta = np.sin(2 * np.pi * f[:, None] * t + phase[:, None]).sum(axis=0)
        delta /= np.sqrt(N_DELTA_COMPONENTS / 2.0)
        bs_noise = rng.standard_normal(n)
        ws_noise = rng.standard_normal(n)
        floor = rng.standard_normal(n)

        a_bs = spec.amplitude_bs[c]
        bs = a_bs * (np.sqrt(spec.delta_weight) * delta + np.sqrt(1 - spec.delta_weight) * bs_noise)
        for s in onsets:
            seg = bs[s:s + spindle_len]
            seg += spec.spindle_amplitude * a_bs * burst[:seg.size]
        x = np.where(sleep, bs, spec.amplitude_ws[c] * ws_noise) + spec.noise_floor * floor
        channels[c] = spec.gains[c] * x

    n_labels = int(np.ceil(spec.duration_s / hypnogram_stride_s - 1e-9))
    label_times = np.arange(n_labels) * hypnogram_stride_s
    idx = np.minimum(np.floor(label_times * fs + 1e-9).astype(np.int64), n - 1)
    hyp = Hypnogram(0.0, hypnogram_stride_s, sleep[idx].astype(np.int8))
    rec = Recording(channels, fs, spec.channel_labels, spec.subject_id)
    return rec, hyp


def schedule_fraction(spec: SynthSpec) -> float:
    """Fraction of the duration scheduled as sleep."""
    return sum(d for s, d in spec.schedule if s == BS) / spec.duration_s


def subject(duration_s: float, seed: int, gains: Sequence[float] = (1.0, 1.0, 1.0),
            noise_floor: float = 1.0, **kwargs) -> SynthSpec:
    """Convenience: a subject with a random schedule and the given gains."""
    seg = kwargs.pop("segment_range_s", (60, 180))
    return SynthSpec(
        duration_s=duration_s,
        schedule=tuple(random_schedule(duration_s, seed, *seg)),
        gains=tuple(gains),
        noise_floor=noise_floor,
        seed=seed,
        **kwargs,
    )


__all__ = ["SynthSpec", "generate", "random_schedule", "schedule_fraction", "subject"]
