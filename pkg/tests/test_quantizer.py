import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from qgad.errors import ConfigError, StructureError
from qgad.quantizer import (
    QuantizationGrid,
    bin_midpoint,
    build_adaptive_grid,
    build_static_grid,
    diagnostics,
    quantize,
)

unit = st.floats(0.0, 1.0, allow_nan=False)
samples = arrays(np.float64, st.integers(1, 200), elements=unit)


def adaptive_edges_oracle(values, m):
    """Edges straight from the order-statistic definition, in plain Python."""
    s = sorted(values)
    step = -(-len(s) // m)
    return [0.0] + [s[min(y * step, len(s) - 1)] for y in range(1, m)] + [1.0]


def quantize_oracle(edges, x):
    """Linear scan for the half-open bin holding x; 1.0 goes to the last class."""
    m = len(edges) - 1
    if x >= 1.0:
        return m - 1
    for y in range(m):
        if edges[y] <= x < edges[y + 1]:
            return y
    raise AssertionError("no bin")


class TestStatic:
    def test_edges(self):
        assert build_static_grid(4).edges.tolist() == [0, 0.25, 0.5, 0.75, 1]

    def test_median_width(self):
        g = build_static_grid(8)
        assert diagnostics(g, [0.5]).median_bin_width == 0.125

    def test_too_small(self):
        with pytest.raises(ConfigError):
            build_static_grid(1)

    def test_quantize(self):
        g = build_static_grid(8)
        assert quantize(g, 0.5) == 4
        assert quantize(g, 1.0) == 7
        assert quantize(g, 0.0) == 0

    def test_out_of_range(self):
        with pytest.raises(ValueError):
            quantize(build_static_grid(4), 1.5)


class TestAdaptive:
    def test_hand_example(self):
        g = build_adaptive_grid([.05, .1, .2, .4, .5, .7, .8, .9], 4)
        assert g.edges.tolist() == [0, .2, .5, .8, 1]
        assert quantize(g, 0.49) == 1
        assert quantize(g, 1.0) == 3

    def test_constant(self):
        g = build_adaptive_grid(np.full(10, 0.5), 4)
        assert g.edges.tolist() == [0, .5, .5, .5, 1]
        # the equal edges leave classes 1 and 2 unreachable
        assert quantize(g, 0.5) == 3
        assert quantize(g, 0.49) == 0

    def test_empty(self):
        with pytest.raises(StructureError):
            build_adaptive_grid([], 4)

    def test_index_clamp(self):
        # 5 samples, m=4: step 2, edge 3 would read index 6
        g = build_adaptive_grid([.1, .2, .3, .4, .5], 4)
        assert g.edges.tolist() == [0, .3, .5, .5, 1]

    @given(samples, st.integers(2, 12))
    @settings(max_examples=200, deadline=None)
    def test_edges_oracle(self, x, m):
        assert build_adaptive_grid(x, m).edges.tolist() == adaptive_edges_oracle(x.tolist(), m)

    def test_uniform_balance(self):
        x = np.random.default_rng(0).random(100_000)
        d = diagnostics(build_adaptive_grid(x, 8), x)
        assert 0.08 <= d.min_fraction and d.max_fraction <= 0.14


class TestMidpoint:
    def test_static(self):
        assert bin_midpoint(build_static_grid(4), 0) == 0.125

    def test_adaptive(self):
        g = QuantizationGrid(4, [0, .2, .5, .8, 1])
        assert bin_midpoint(g, 2) == pytest.approx(0.65)

    def test_out_of_range(self):
        with pytest.raises(IndexError):
            bin_midpoint(build_static_grid(4), 4)


class TestProperties:
    @given(samples, st.integers(2, 10), unit, unit)
    @settings(max_examples=200, deadline=None)
    def test_monotone(self, x, m, a, b):
        a, b = min(a, b), max(a, b)
        for g in (build_static_grid(m), build_adaptive_grid(x, m)):
            assert quantize(g, a) <= quantize(g, b)

    @given(samples, st.integers(2, 10), st.lists(unit, min_size=1, max_size=30))
    @settings(max_examples=200, deadline=None)
    def test_adaptive_matches_oracle(self, x, m, probes):
        g = build_adaptive_grid(x, m)
        for p in probes:
            y = quantize(g, p)
            assert y == quantize_oracle(g.edges.tolist(), p)
            if p < 1.0:
                assert g.edges[y] <= p < g.edges[y + 1]

    @given(samples, st.integers(2, 10))
    @settings(max_examples=100, deadline=None)
    def test_midpoint_inside(self, x, m):
        g = build_adaptive_grid(x, m)
        for y in range(m):
            assert g.edges[y] <= bin_midpoint(g, y) <= g.edges[y + 1]

    @given(st.integers(10, 2000), st.integers(2, 10))
    @settings(max_examples=100, deadline=None)
    def test_static_equals_adaptive_on_spaced_samples(self, n, m):
        x = np.arange(n) / (n - 1)
        np.testing.assert_allclose(
            build_adaptive_grid(x, m).edges, build_static_grid(m).edges, atol=m / n
        )

    @given(st.integers(2, 3000), st.integers(2, 16), st.integers(0, 2**32 - 1))
    @settings(max_examples=200, deadline=None)
    def test_distinct_counts(self, n, m, seed):
        x = np.random.default_rng(seed).permutation(n) / n
        counts = diagnostics(build_adaptive_grid(x, m), x).counts
        step = math.ceil(n / m)
        # every class but the last holds exactly one edge-to-edge stretch
        for y in range(m - 1):
            lo, hi = min(y * step, n - 1), min((y + 1) * step, n - 1)
            assert counts[y] == hi - lo
        assert counts.sum() == n

    @given(st.integers(1, 200), st.integers(2, 16), st.integers(0, 2**32 - 1))
    @settings(max_examples=200, deadline=None)
    def test_count_bound_when_divisible(self, k, m, seed):
        n = k * m
        x = np.random.default_rng(seed).permutation(n) / n
        counts = diagnostics(build_adaptive_grid(x, m), x).counts
        assert np.all(np.abs(counts - n / m) <= 1)

    def test_count_bound_fails_for_indivisible_n(self):
        # n=17, m=8: step 3, the last edges clamp to the final sample and
        # class 6 ends up empty, 2.125 away from n/m while the bound is 2
        n, m = 17, 8
        x = np.arange(n) / n
        counts = diagnostics(build_adaptive_grid(x, m), x).counts
        assert counts.tolist() == [3, 3, 3, 3, 3, 1, 0, 1]
        bound = math.ceil(n / m) - n // m + 1
        assert np.max(np.abs(counts - n / m)) > bound
