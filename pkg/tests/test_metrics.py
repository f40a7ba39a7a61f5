import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qgad.errors import StructureError
from qgad.metrics import evaluate, f_beta, match_intervals, score


def match_oracle(detected, truth):
    """Quadratic double loop over both lists."""
    def hit(a, b):
        return a[0] < b[1] and b[0] < a[1]

    tp = sum(any(hit(d, t) for t in truth) for d in detected)
    fn = sum(not any(hit(t, d) for d in detected) for t in truth)
    return tp, len(detected) - tp, fn


@st.composite
def interval_list(draw, max_len=12):
    cuts = sorted(set(draw(st.lists(st.integers(0, 300), max_size=2 * max_len))))
    pairs = list(zip(cuts[0::2], cuts[1::2]))
    return [(s, e) for s, e in pairs if e > s]


class TestMatch:
    def test_partial_overlap(self):
        assert match_intervals([(10, 20)], [(15, 30)]) == (1, 0, 0)

    def test_many_detections_one_truth(self):
        assert match_intervals([(10, 12), (14, 16)], [(5, 20)]) == (2, 0, 0)

    def test_one_detection_many_truths(self):
        assert match_intervals([(0, 100)], [(10, 20), (50, 60)]) == (1, 0, 0)

    def test_touching_is_not_overlap(self):
        assert match_intervals([(0, 10)], [(10, 20)]) == (0, 1, 1)

    def test_unsorted_rejected(self):
        with pytest.raises(StructureError):
            match_intervals([(10, 20), (0, 5)], [])
        with pytest.raises(StructureError):
            match_intervals([(0, 10), (5, 20)], [])

    @given(interval_list(), interval_list())
    @settings(max_examples=300, deadline=None)
    def test_oracle(self, det, tru):
        assert match_intervals(det, tru) == match_oracle(det, tru)

    @given(interval_list(), interval_list(), st.integers(-1000, 1000))
    @settings(max_examples=200, deadline=None)
    def test_translation_invariant(self, det, tru, k):
        shift = [(s + k, e + k) for s, e in det], [(s + k, e + k) for s, e in tru]
        assert match_intervals(*shift) == match_intervals(det, tru)

    @given(interval_list(), interval_list(), st.data())
    @settings(max_examples=200, deadline=None)
    def test_removing_detection(self, det, tru, data):
        if not det:
            return
        i = data.draw(st.integers(0, len(det) - 1))
        tp0, fp0, _ = match_intervals(det, tru)
        tp1, fp1, _ = match_intervals(det[:i] + det[i + 1:], tru)
        assert tp1 <= tp0 and fp1 <= fp0


class TestScore:
    def test_perfect(self):
        assert f_beta(1.0, 1.0, 1) == 1.0 and f_beta(1.0, 1.0, 2) == 1.0

    def test_published_values(self):
        assert f_beta(0.8685, 1.0, 1) == pytest.approx(0.9296, abs=5e-5)
        assert f_beta(0.8685, 1.0, 2) == pytest.approx(0.8920, abs=5e-5)

    def test_degenerate(self):
        s = score(0, 0, 0)
        assert (s.recall, s.precision, s.f_beta, s.degenerate) == (0.0, 0.0, 0.0, True)

    def test_counts(self):
        s = score(8, 2, 2)
        assert (s.recall, s.precision) == (0.8, 0.8)
        assert not s.degenerate

    def test_bad_input(self):
        with pytest.raises(ValueError):
            score(-1, 0, 0)
        with pytest.raises(ValueError):
            score(1, 0, 0, beta=0)

    @given(st.floats(0.01, 1), st.floats(0.01, 1))
    @settings(max_examples=200)
    def test_harmonic_mean(self, r, p):
        assert f_beta(r, p, 1) == pytest.approx(2 * p * r / (p + r), rel=1e-12)

    @given(st.floats(0.05, 1), st.floats(0.05, 1))
    @settings(max_examples=200)
    def test_beta_limits(self, r, p):
        assert f_beta(r, p, 100) == pytest.approx(r, rel=0.01)
        assert f_beta(r, p, 0.01) == pytest.approx(p, rel=0.01)


def test_evaluate_report():
    rep = evaluate([(0, 5), (10, 12), (40, 41)], [(3, 11), (20, 30)])
    assert (rep.tp, rep.fp, rep.fn) == (2, 1, 1)
    assert rep.tp + rep.fp == len(rep.detected)
    assert rep.recall == pytest.approx(2 / 3) and rep.precision == pytest.approx(2 / 3)
    assert rep.f1 == pytest.approx(2 / 3)
    assert rep.to_csv().splitlines()[0] == "tp,fp,fn,recall,precision,f1,f2,degenerate"
    assert rep.to_dict()["truth"] == [[3, 11], [20, 30]]
