import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qgad.errors import ConfigError, InfeasiblePlanError
from qgad.synth import (
    StepPlan,
    SynthSpec,
    generate_normal,
    inject_steps,
    make_corpus,
    place_steps,
    ramp_rate_profile,
)


def test_periodic_without_noise_or_ramps():
    spec = SynthSpec(length=500, noise=0, current_noise=0, ramp_rate=0, changeover_rate=0)
    s = generate_normal(spec)
    p = spec.ripple_period
    np.testing.assert_allclose(s.channels[:, p:], s.channels[:, :-p], atol=1e-12)
    assert np.all(s.channels[2] == 0)


def test_deterministic():
    a = generate_normal(SynthSpec(length=3000, seed=4))
    b = generate_normal(SynthSpec(length=3000, seed=4))
    c = generate_normal(SynthSpec(length=3000, seed=5))
    assert np.array_equal(a.channels, b.channels)
    assert not np.array_equal(a.channels, c.channels)
    assert a.anomaly_intervals == ()


def test_slope_ratio_across_changeover():
    spec = SynthSpec(length=4000, noise=0, current_noise=0)
    i = generate_normal(spec).channels[2]
    k = spec.ramp_samples
    fast = i[k - 1] - i[k - 2]
    slow = i[k + 11] - i[k + 10]
    assert fast / slow == pytest.approx(5.0)
    assert fast == pytest.approx(spec.ramp_rate * spec.sample_period)


def test_cycle_returns_to_zero():
    spec = SynthSpec(length=5400 * 2 + 1, noise=0, current_noise=0)
    rate = ramp_rate_profile(spec)
    assert rate[:5400].sum() == pytest.approx(0.0, abs=1e-9)


def test_count_zero_is_identity():
    s = generate_normal(SynthSpec(length=1000))
    assert inject_steps(s, StepPlan(0)) is s


def test_thousand_steps():
    s = generate_normal(SynthSpec(length=320_000, noise=0, current_noise=0))
    out = inject_steps(s, StepPlan(1000, duration=100, min_gap=200, seed=3))
    assert len(out.anomaly_intervals) == 1000
    assert {e - s for s, e in out.anomaly_intervals} == {100}


def test_infeasible():
    with pytest.raises(InfeasiblePlanError):
        place_steps(1000, StepPlan(5, duration=100, min_gap=200))


@given(st.integers(1, 30), st.integers(1, 80), st.integers(0, 100), st.integers(0, 50),
       st.integers(0, 2**32 - 1), st.integers(0, 2000))
@settings(max_examples=150, deadline=None)
def test_injection_invariants(count, duration, gap, margin, seed, slack):
    n = 2 * margin + count * duration + (count - 1) * gap + slack
    base = generate_normal(SynthSpec(length=n, seed=1))
    plan = StepPlan(count, duration, 0.3, gap, seed, 0, margin)
    out = inject_steps(base, plan)
    iv = out.anomaly_intervals
    assert len(iv) == count and all(e - s == duration for s, e in iv)
    assert all(s1 - e0 >= gap for (_, e0), (s1, _) in zip(iv, iv[1:]))
    assert iv[0][0] >= margin and iv[-1][1] <= n - margin
    inside = out.labels().astype(bool)
    assert np.array_equal(out.channels[:, ~inside], base.channels[:, ~inside])
    assert np.array_equal(out.channels[1:], base.channels[1:])
    step = 0.3 * np.ptp(base.channels[0])
    np.testing.assert_allclose(out.channels[0, inside] - base.channels[0, inside], step)


def test_corpus_shape():
    spec = SynthSpec(anomaly_count=10)
    train, tests = make_corpus(spec, 20_000, 12_000, (100, 50))
    assert train.name == "train" and train.anomaly_intervals == ()
    assert sorted(tests) == ["steps100", "steps50"]
    assert [len(tests[k].anomaly_intervals) for k in ("steps100", "steps50")] == [10, 10]
    assert {e - s for s, e in tests["steps50"].anomaly_intervals} == {50}


def test_spec_validation_and_config():
    with pytest.raises(ConfigError):
        SynthSpec(ripple_period=0).validate()
    spec = SynthSpec.from_dict({"length": "2000", "step_height": "0.5"})
    assert spec.length == 2000 and spec.step_height == 0.5
    with pytest.raises(ConfigError):
        SynthSpec.from_dict({"nonsense": "1"})
    assert dataclasses.replace(spec.plan, count=3).count == 3
