"""Per-anomaly scoring of detected intervals against ground truth.

A detected interval is a true positive when it overlaps any truth
interval, so several detections inside one real anomaly all count as
true positives, and one detection spanning several real anomalies marks
all of them as found. True negatives are not defined.
"""

import csv
import io
from dataclasses import dataclass

import numpy as np

from .errors import StructureError

CSV_FIELDS = ("tp", "fp", "fn", "recall", "precision", "f1", "f2", "degenerate")


def _as_intervals(intervals, what):
    arr = np.asarray(list(intervals), dtype=np.int64).reshape(-1, 2)
    if np.any(arr[:, 1] <= arr[:, 0]):
        raise StructureError(f"{what}: every interval needs start < end")
    if len(arr) > 1 and np.any(arr[1:, 0] < arr[:-1, 1]):
        raise StructureError(f"{what}: intervals must be sorted and disjoint")
    return arr


def _overlaps(a, b):
    """For each interval of ``a``, whether it overlaps some interval of ``b``."""
    if len(a) == 0 or len(b) == 0:
        return np.zeros(len(a), dtype=bool)
    # first interval of b ending after a's start
    idx = np.searchsorted(b[:, 1], a[:, 0], side="right")
    hit = idx < len(b)
    hit[hit] = b[idx[hit], 0] < a[hit, 1]
    return hit


def classify_detections(detected, truth):
    """Boolean per detected interval: True for true positives."""
    return _overlaps(_as_intervals(detected, "detected"), _as_intervals(truth, "truth"))


def match_intervals(detected, truth):
    """Return ``(tp, fp, fn)`` under the overlap rule."""
    det = _as_intervals(detected, "detected")
    tru = _as_intervals(truth, "truth")
    det_hit = _overlaps(det, tru)
    truth_found = _overlaps(tru, det)
    tp = int(det_hit.sum())
    return tp, len(det) - tp, int((~truth_found).sum())


def f_beta(recall, precision, beta):
    denom = recall + beta**2 * precision
    if denom == 0:
        return 0.0
    return (1 + beta**2) * recall * precision / denom


@dataclass(frozen=True)
class Score:
    recall: float
    precision: float
    f_beta: float
    degenerate: bool


def score(tp, fp, fn, beta=1.0):
    """Recall, precision and F-beta from counts; 0/0 cases give 0 and a flag."""
    if min(tp, fp, fn) < 0:
        raise ValueError("counts must be non-negative")
    if not beta > 0:
        raise ValueError("beta must be positive")
    degenerate = False
    if tp + fn:
        recall = tp / (tp + fn)
    else:
        recall, degenerate = 0.0, True
    if tp + fp:
        precision = tp / (tp + fp)
    else:
        precision, degenerate = 0.0, True
    if recall + beta**2 * precision == 0:
        degenerate = True
    return Score(recall, precision, f_beta(recall, precision, beta), degenerate)


@dataclass(frozen=True)
class DetectionReport:
    detected: tuple
    truth: tuple
    tp: int
    fp: int
    fn: int
    recall: float
    precision: float
    f1: float
    f2: float
    degenerate: bool

    def row(self):
        return {k: getattr(self, k) for k in CSV_FIELDS}

    def to_dict(self):
        d = self.row()
        d["detected"] = [list(map(int, iv)) for iv in self.detected]
        d["truth"] = [list(map(int, iv)) for iv in self.truth]
        return d

    def to_csv(self):
        buf = io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=CSV_FIELDS, lineterminator="\n")
        writer.writeheader()
        writer.writerow(self.row())
        return buf.getvalue()


def evaluate(detected, truth):
    detected = tuple((int(s), int(e)) for s, e in detected)
    truth = tuple((int(s), int(e)) for s, e in truth)
    tp, fp, fn = match_intervals(detected, truth)
    s1 = score(tp, fp, fn, 1.0)
    s2 = score(tp, fp, fn, 2.0)
    return DetectionReport(
        detected, truth, tp, fp, fn, s1.recall, s1.precision, s1.f_beta, s2.f_beta,
        s1.degenerate or s2.degenerate,
    )
