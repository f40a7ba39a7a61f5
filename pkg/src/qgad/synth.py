"""Magnet-like synthetic series with injected step anomalies.

Three channels mimic a magnet measurement: two coil voltages ``v0`` and
``v1`` and the supply current ``i``. The current follows repeated ramp
cycles (fast ramp, slower ramp after a changeover, flat top, ramp down);
each coil voltage is an inductive term proportional to the ramp rate
plus a converter ripple and white noise. Every channel is therefore a
learnable function of the recent history of all three.
"""

import dataclasses
from dataclasses import dataclass

import numpy as np

from .config import from_mapping
from .errors import ConfigError, InfeasiblePlanError, StructureError
from .signal_io import RawSeries

CHANNELS = ("v0", "v1", "i")


@dataclass(frozen=True)
class SynthSpec:
    """Generator settings; also the ``[synth]`` config section.

    Rates are in A/s, durations in samples, ``step_height`` in units of
    the target channel's normal peak-to-peak range.
    """

    length: int = 100_000
    seed: int = 0
    sample_period: float = 0.01
    ramp_rate: float = 50.0
    changeover_rate: float = 10.0
    ramp_samples: int = 1500
    changeover_samples: int = 1500
    hold_samples: int = 600
    down_samples: int = 1800
    inductance_v0: float = 0.01
    inductance_v1: float = 0.008
    ripple_period: int = 23
    ripple_amplitude: float = 0.15
    ripple_coupling: float = 0.8
    noise: float = 0.003
    current_noise: float = 0.05
    anomaly_count: int = 0
    step_duration: int = 100
    step_height: float = 0.3
    min_gap: int = 200
    margin: int = 64
    target_channel: int = 0

    def validate(self):
        if self.length < 1:
            raise ConfigError("length must be positive")
        if self.sample_period <= 0:
            raise ConfigError("sample_period must be positive")
        for key in ("ramp_samples", "changeover_samples", "hold_samples", "down_samples"):
            if getattr(self, key) < 0:
                raise ConfigError(f"{key} must be >= 0")
        if self.ripple_period < 1:
            raise ConfigError("ripple_period must be >= 1")
        if self.noise < 0 or self.current_noise < 0:
            raise ConfigError("noise levels must be >= 0")
        if self.anomaly_count < 0 or self.step_duration < 1 or self.min_gap < 0:
            raise ConfigError("anomaly plan values out of range")
        if not 0 <= self.target_channel < len(CHANNELS):
            raise ConfigError("target_channel out of range")
        return self

    @classmethod
    def from_dict(cls, mapping):
        return from_mapping(cls, mapping, "synth")

    def replace(self, **changes):
        return dataclasses.replace(self, **changes).validate()

    @property
    def plan(self):
        return StepPlan(
            self.anomaly_count,
            self.step_duration,
            self.step_height,
            self.min_gap,
            self.seed + 1,
            self.target_channel,
            self.margin,
        )


def ramp_rate_profile(spec):
    """dI/dt (A/s) for every sample: fast ramp, changeover ramp, hold, ramp down."""
    cycle_len = spec.ramp_samples + spec.changeover_samples + spec.hold_samples + spec.down_samples
    if cycle_len == 0:
        return np.zeros(spec.length)
    rise = spec.ramp_rate * spec.ramp_samples + spec.changeover_rate * spec.changeover_samples
    down = -rise / spec.down_samples if spec.down_samples else 0.0
    cycle = np.concatenate(
        [
            np.full(spec.ramp_samples, spec.ramp_rate),
            np.full(spec.changeover_samples, spec.changeover_rate),
            np.zeros(spec.hold_samples),
            np.full(spec.down_samples, down),
        ]
    )
    reps = -(-spec.length // cycle_len)
    return np.tile(cycle, reps)[: spec.length]


def generate_normal(spec):
    """Anomaly-free three-channel series, deterministic under ``spec.seed``."""
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    n = spec.length
    t = np.arange(n)
    rate = ramp_rate_profile(spec)
    current = np.concatenate(([0.0], np.cumsum(rate[:-1]) * spec.sample_period))
    phase = rng.uniform(0, 2 * np.pi)
    ripple = spec.ripple_amplitude * np.sin(2 * np.pi * t / spec.ripple_period + phase)
    v0 = spec.inductance_v0 * rate + ripple
    v1 = spec.inductance_v1 * rate - spec.ripple_coupling * ripple
    i = current.copy()
    if spec.noise:
        v0 = v0 + spec.noise * rng.standard_normal(n)
        v1 = v1 + spec.noise * rng.standard_normal(n)
    if spec.current_noise:
        i = i + spec.current_noise * rng.standard_normal(n)
    return RawSeries("synthetic", np.stack([v0, v1, i]), CHANNELS, spec.sample_period)


@dataclass(frozen=True)
class StepPlan:
    count: int
    duration: int = 100
    height: float = 0.3
    min_gap: int = 200
    seed: int = 0
    channel: int = 0
    margin: int = 0


def place_steps(length, plan):
    """Sorted start indices: uniform placement with at least ``min_gap`` between
    steps and ``margin`` samples kept free at both ends."""
    if plan.count == 0:
        return np.zeros(0, dtype=np.int64)
    span = plan.duration + plan.min_gap
    slack = length - 2 * plan.margin - plan.count * plan.duration - (plan.count - 1) * plan.min_gap
    if slack < 0:
        raise InfeasiblePlanError(
            f"cannot place {plan.count} steps of {plan.duration} samples with gap "
            f"{plan.min_gap} in {length} samples"
        )
    rng = np.random.default_rng(plan.seed)
    offsets = np.sort(rng.integers(0, slack + 1, plan.count))
    return plan.margin + offsets + np.arange(plan.count) * span


def inject_steps(series, plan):
    """Add rectangular steps to one channel and record them as anomalies.

    Step height is ``plan.height`` times the channel's peak-to-peak range.
    Samples outside the injected windows are left untouched.
    """
    if not 0 <= plan.channel < series.n_channels:
        raise StructureError(f"channel {plan.channel} out of range")
    if plan.count == 0:
        return series
    starts = place_steps(len(series), plan)
    ch = series.channels.copy()
    row = ch[plan.channel]
    amount = plan.height * float(row.max() - row.min())
    new = [(int(s), int(s) + plan.duration) for s in starts]
    for s, e in new:
        row[s:e] += amount
    merged = sorted(list(series.anomaly_intervals) + new)
    for (s0, e0), (s1, _) in zip(merged, merged[1:]):
        if s1 < e0:
            raise InfeasiblePlanError("injected steps overlap existing anomaly intervals")
    return RawSeries(series.name, ch, series.channel_names, series.sample_period, tuple(merged))


def make_corpus(spec, train_length, test_length, step_durations=(100, 50)):
    """Normal training series plus one test series per step duration.

    Train and test series come from independent seeds; each test series
    carries ``spec.anomaly_count`` steps of the given duration.
    """
    train = generate_normal(spec.replace(length=train_length))
    train = dataclasses.replace(train, name="train")
    tests = {}
    for k, duration in enumerate(step_durations):
        base = generate_normal(spec.replace(length=test_length, seed=spec.seed + 1000 + k))
        plan = dataclasses.replace(spec.plan, duration=duration, seed=spec.seed + 2000 + k)
        stepped = inject_steps(base, plan)
        tests[f"steps{duration}"] = dataclasses.replace(stepped, name=f"steps{duration}")
    return train, tests
