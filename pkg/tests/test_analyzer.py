import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qgad.analyzer import (
    PROPERTIES,
    AnomalyCandidate,
    RuleSet,
    apply_rules,
    auto_thresholds,
    collect_candidates,
    compartmentalize,
    property_matrix,
    sample_amplitudes,
    saved_area,
    search_thresholds,
    threshold_grid,
)
from qgad.errors import ConfigError, StructureError
from qgad.quantizer import QuantizationGrid, build_static_grid


def cand(length, cum_amp, max_amp=None, start=0):
    """Candidate with the requested length and cumulative amplitude."""
    max_amp = cum_amp / length if max_amp is None else max_amp
    amps = np.full(length, (cum_amp - max_amp) / (length - 1) if length > 1 else max_amp)
    amps[0] = max_amp
    return AnomalyCandidate(start, amps)


def filters_all(props, combo):
    """True when no row strictly exceeds every positive threshold."""
    active = [j for j, t in enumerate(combo) if t > 0]
    if not active:
        return len(props) == 0
    for row in props:
        if all(row[j] > combo[j] for j in active):
            return False
    return True


def brute_force(props, grids):
    """Every grid combination in lexicographic order; strict improvement only."""
    k = props.shape[1]
    maxima = [max(props[:, j]) for j in range(k)]
    best = tuple([maxima[0]] + [0.0] * (k - 1))
    best_area = 0.0
    for combo in itertools.product(*[sorted(g) for g in grids]):
        if not filters_all(props, combo):
            continue
        area, active = 1.0, False
        for t, m in zip(combo, maxima):
            if t > 0:
                area *= 1.0 - t / m
                active = True
        area = area if active else 0.0
        if area > best_area:
            best, best_area = combo, area
    return best, best_area


@st.composite
def populations(draw, max_n=64, max_len=8):
    n = draw(st.integers(1, max_n))
    seed = draw(st.integers(0, 2**32 - 1))
    rng = np.random.default_rng(seed)
    levels = build_static_grid(8).midpoints
    out = []
    for i in range(n):
        length = int(rng.integers(1, max_len + 1))
        real = rng.integers(0, 8, length)
        pred = (real + rng.integers(1, 8, length)) % 8
        out.append(AnomalyCandidate(i * 20, np.abs(levels[real] - levels[pred])))
    return out


class TestCollect:
    def test_no_discrepancy(self):
        assert collect_candidates(np.arange(8) % 4, np.arange(8) % 4, build_static_grid(4)) == []

    def test_amplitudes(self):
        real = np.zeros(20, dtype=int)
        pred = real.copy()
        pred[10:13] = 2
        (c,) = collect_candidates(pred, real, build_static_grid(4))
        assert (c.start, c.length) == (10, 3)
        assert c.amplitudes.tolist() == [0.5, 0.5, 0.5]
        assert c.cum_amp == 1.5 and c.max_amp == 0.5

    def test_split_by_match(self):
        real = np.zeros(10, dtype=int)
        pred = real.copy()
        pred[[5, 7]] = 1
        cands = collect_candidates(pred, real, build_static_grid(4))
        assert [(c.start, c.length) for c in cands] == [(5, 1), (7, 1)]

    def test_offset_and_length_mismatch(self):
        (c,) = collect_candidates([1], [0], build_static_grid(4), offset=16)
        assert c.start == 16
        with pytest.raises(StructureError):
            collect_candidates([0, 1], [0], build_static_grid(4))

    def test_true_count_policy_zero_amplitude_inside(self):
        real = np.zeros(8, dtype=int)
        pred = np.array([0, 3, 0, 3, 0, 0, 0, 0])
        (c,) = collect_candidates(pred, real, build_static_grid(4), "true_count", 2)
        assert (c.start, c.length) == (1, 3)
        assert c.amplitudes.tolist() == [0.75, 0.0, 0.75]

    def test_unknown_policy(self):
        with pytest.raises(ConfigError):
            collect_candidates([0], [0], build_static_grid(4), "sometimes")

    @given(st.lists(st.tuples(st.integers(0, 7), st.integers(0, 7)), max_size=80))
    @settings(max_examples=200, deadline=None)
    def test_amplitude_invariants(self, pairs):
        pred = np.array([p for p, _ in pairs], dtype=int)
        real = np.array([r for _, r in pairs], dtype=int)
        grid = QuantizationGrid(8, [0, .01, .02, .1, .3, .31, .7, .9, 1])
        a = sample_amplitudes(pred, real, grid)
        assert np.array_equal(a, sample_amplitudes(real, pred, grid))
        assert np.array_equal(a == 0, pred == real)
        for c in collect_candidates(pred, real, grid):
            assert c.length == len(c.amplitudes) >= 1
            assert c.max_amp <= c.cum_amp + 1e-15
            assert c.cum_amp <= c.length * c.max_amp + 1e-12


class TestApplyRules:
    def test_vacuous(self):
        cands = [cand(3, 1.0), cand(40, 5.0)]
        assert len(apply_rules(cands, RuleSet()).anomalies) == 2

    def test_strict_length(self):
        run = apply_rules([cand(14, 1.0), cand(15, 1.0)], RuleSet({"length": 14}))
        assert [c.length for c in run.anomalies] == [15]

    def test_conjunction(self):
        a, b = cand(12, 1.2), cand(12, 1.7)
        run = apply_rules([a, b], RuleSet({"length": 10, "cum_amp": 1.55}))
        assert run.anomalies == [b]
        assert len(run.candidates) == 2

    def test_unknown_rule(self):
        with pytest.raises(ConfigError):
            RuleSet({"energy": 1.0})
        with pytest.raises(ConfigError):
            RuleSet({"length": -1})

    def test_intervals(self):
        run = apply_rules([cand(3, 1.0, start=5), cand(2, 1.0, start=20)], RuleSet())
        assert run.intervals == [(5, 8), (20, 22)]

    def test_round_trip(self):
        r = RuleSet({"length": 4, "max_amp": 0.25})
        assert RuleSet.from_dict(r.to_dict()).to_dict() == r.to_dict()
        assert r.active_rules == ("length", "max_amp")

    @given(populations(), st.sampled_from(PROPERTIES), st.floats(0, 30), st.floats(0, 30))
    @settings(max_examples=200, deadline=None)
    def test_monotone(self, cands, prop, base, extra):
        lo = RuleSet({"length": 2, prop: base})
        hi = lo.raised(prop, lo.get(prop) + extra)
        assert len(apply_rules(cands, hi).anomalies) <= len(apply_rules(cands, lo).anomalies)


class TestBins:
    def test_unit_bins_for_small_integer_range(self):
        assert compartmentalize([3, 5, 9]).tolist() == list(range(3, 10))

    def test_constant(self):
        assert compartmentalize([2.5, 2.5]).tolist() == [2.5]
        assert threshold_grid([2.5, 2.5]).tolist() == [0.0, 2.5]

    @given(st.lists(st.floats(0, 50, allow_nan=False), min_size=3, max_size=500))
    @settings(max_examples=200, deadline=None)
    def test_matches_numpy_sturges(self, values):
        x = np.asarray(values) + 0.5  # keep the values off the integer lattice
        n = len(x)
        if np.ptp(x) < 1e-6 or n & (n - 1) == 0 or np.all(x == np.round(x)):
            return
        np.testing.assert_allclose(
            compartmentalize(x), np.histogram_bin_edges(x, bins="sturges"), rtol=1e-12, atol=1e-12
        )


class TestAutoThresholds:
    def test_single_candidate(self):
        c = cand(5, 2.0, 0.5)
        res = auto_thresholds([c])
        assert apply_rules([c], res.rules).anomalies == []
        assert res.saved_area >= saved_area([5, 0, 0], [5, 2.0, 0.5])
        assert res.maxima == {"length": 5.0, "cum_amp": 2.0, "max_amp": 0.5}

    def test_two_candidates_brute_force(self):
        cands = [cand(20, 0.5), cand(3, 3.0)]
        props = property_matrix(cands, ("length", "cum_amp"))
        res = auto_thresholds(cands, ("length", "cum_amp"))
        grids = [res.bins["length"], res.bins["cum_amp"]]
        best, area = brute_force(props, grids)
        assert tuple(res.combination.values()) == tuple(best)
        assert res.saved_area == area
        assert area > 0
        assert apply_rules(cands, res.rules).anomalies == []

    def test_empty(self):
        res = auto_thresholds([])
        assert res.degenerate and res.rules.active_rules == ()
        assert set(res.combination.values()) == {0.0}

    def test_property_validation(self):
        with pytest.raises(ConfigError):
            auto_thresholds([cand(2, 1.0)], ())
        with pytest.raises(ConfigError):
            auto_thresholds([cand(2, 1.0)], ("energy",))

    @given(populations(max_n=1000, max_len=40))
    @settings(max_examples=60, deadline=None)
    def test_safety(self, cands):
        res = auto_thresholds(cands)
        assert apply_rules(cands, res.rules).anomalies == []
        fallback = [res.maxima["length"], 0.0, 0.0]
        assert res.saved_area >= saved_area(fallback, list(res.maxima.values()))

    @given(populations(), st.sampled_from([
        ("length",), ("cum_amp",), ("length", "cum_amp"), ("max_amp", "length"),
        ("length", "cum_amp", "max_amp"), ("cum_amp", "max_amp", "length"),
    ]))
    @settings(max_examples=150, deadline=None)
    def test_exhaustive_equivalence(self, cands, props):
        res = auto_thresholds(cands, props)
        matrix = property_matrix(cands, props)
        best, area = brute_force(matrix, [res.bins[p] for p in props])
        assert tuple(res.combination[p] for p in props) == tuple(best)
        assert res.saved_area == area

    def test_search_on_matrix(self):
        props = np.array([[3.0, 1.0], [1.0, 3.0]])
        res = search_thresholds(props, ("length", "cum_amp"))
        best, area = brute_force(props, [res.bins["length"], res.bins["cum_amp"]])
        assert tuple(res.combination.values()) == tuple(best) and res.saved_area == area


def test_saved_area():
    assert saved_area([0, 0], [4, 2]) == 0.0
    assert saved_area([4, 0], [4, 2]) == 0.0
    assert saved_area([1, 1], [4, 2]) == 0.75 * 0.5
