"""Anomaly candidates, rule filtering and automatic threshold selection.

A candidate is a run of samples whose predicted class differs from the
real one. Each sample's amplitude is the distance between the midpoints
of the real and predicted output bins; a candidate carries its length,
maximum amplitude and cumulative amplitude.

A rule combination confirms a candidate when the candidate strictly
exceeds every active (nonzero) threshold. Threshold search picks, among
combinations on a per-property bin grid that confirm none of the
training candidates, the one with the largest saved area: the volume,
with every axis rescaled by its training maximum, of the box between the
active thresholds and the maxima, ``prod(1 - t_p / max_p)``.
"""

import itertools
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import ConfigError, QgadError, StructureError

log = logging.getLogger(__name__)

PROPERTIES = ("length", "cum_amp", "max_amp")
UNIT_BIN_RANGE = 64


@dataclass(frozen=True, eq=False)
class AnomalyCandidate:
    start: int
    amplitudes: np.ndarray

    @property
    def length(self):
        return len(self.amplitudes)

    @property
    def end(self):
        return self.start + self.length

    @property
    def max_amp(self):
        return float(self.amplitudes.max())

    @property
    def cum_amp(self):
        return float(self.amplitudes.sum())

    def value(self, prop):
        if prop == "length":
            return float(self.length)
        if prop == "cum_amp":
            return self.cum_amp
        if prop == "max_amp":
            return self.max_amp
        raise ConfigError(f"unknown candidate property {prop!r}")

    def to_dict(self):
        return {
            "start": int(self.start),
            "end": int(self.end),
            "length": self.length,
            "max_amp": self.max_amp,
            "cum_amp": self.cum_amp,
        }


def sample_amplitudes(predicted, real, grid):
    """Per-sample distance between real and predicted bin midpoints."""
    mid = grid.midpoints
    return np.abs(mid[np.asarray(real)] - mid[np.asarray(predicted)])


def collect_candidates(predicted, real, out_grid, policy="first_match", policy_param=1.0,
                       offset=0):
    """Group mispredicted samples into candidates.

    With the default ``first_match`` policy a candidate ends at the first
    correct prediction. ``true_count`` waits for ``policy_param``
    consecutive correct predictions and ``true_ratio`` for the share of
    correct predictions to exceed ``policy_param``; samples inside such
    candidates that were predicted correctly contribute zero amplitude.
    ``offset`` is added to every start index.
    """
    predicted = np.asarray(predicted, dtype=np.int64)
    real = np.asarray(real, dtype=np.int64)
    if predicted.shape != real.shape:
        raise StructureError(f"predicted {predicted.shape} and real {real.shape} differ")
    if policy not in kernels.POLICIES:
        raise ConfigError(f"unknown rejection policy {policy!r}")
    starts, ends = kernels.scan_candidates(
        predicted, real, kernels.POLICIES[policy], float(policy_param)
    )
    amps = sample_amplitudes(predicted, real, out_grid)
    return [
        AnomalyCandidate(int(s) + offset, amps[s:e]) for s, e in zip(starts, ends)
    ]


def property_matrix(candidates, properties=PROPERTIES):
    """``(n_candidates, n_properties)`` array of candidate properties."""
    if not candidates:
        return np.zeros((0, len(properties)))
    cols = []
    for prop in properties:
        if prop == "length":
            cols.append([c.length for c in candidates])
        elif prop == "cum_amp":
            cols.append([c.cum_amp for c in candidates])
        elif prop == "max_amp":
            cols.append([c.max_amp for c in candidates])
        else:
            raise ConfigError(f"unknown candidate property {prop!r}")
    return np.asarray(cols, dtype=np.float64).T


@dataclass(frozen=True)
class RuleSet:
    thresholds: dict = field(default_factory=dict)

    def __post_init__(self):
        clean = {}
        for name, value in dict(self.thresholds).items():
            if name not in PROPERTIES:
                raise ConfigError(f"unknown rule {name!r}; supported: {PROPERTIES}")
            value = float(value)
            if not value >= 0:
                raise ConfigError(f"threshold {name} must be >= 0, got {value}")
            clean[name] = value
        object.__setattr__(self, "thresholds", clean)

    @property
    def active_rules(self):
        return tuple(p for p in PROPERTIES if self.thresholds.get(p, 0.0) > 0)

    def get(self, name):
        return self.thresholds.get(name, 0.0)

    def raised(self, name, value):
        th = dict(self.thresholds)
        th[name] = max(self.get(name), float(value))
        return RuleSet(th)

    def to_dict(self):
        return {p: self.get(p) for p in PROPERTIES}

    @classmethod
    def from_dict(cls, d):
        return cls({k: float(v) for k, v in d.items()})


def confirmed_mask(props, thresholds):
    """Rows of ``props`` that strictly exceed every positive entry of ``thresholds``."""
    thresholds = np.asarray(thresholds, dtype=np.float64)
    active = thresholds > 0
    if props.shape[0] == 0:
        return np.zeros(0, dtype=bool)
    if not active.any():
        return np.ones(props.shape[0], dtype=bool)
    return np.all(props[:, active] > thresholds[active], axis=1)


@dataclass
class DetectionRun:
    candidates: list
    anomalies: list

    @property
    def intervals(self):
        return [(c.start, c.end) for c in self.anomalies]

    def to_dict(self):
        return {
            "n_candidates": len(self.candidates),
            "anomalies": [c.to_dict() for c in self.anomalies],
        }


def apply_rules(candidates, rules):
    """Keep the candidates that exceed every active threshold of ``rules``."""
    if not isinstance(rules, RuleSet):
        rules = RuleSet(rules)
    props = property_matrix(candidates)
    mask = confirmed_mask(props, [rules.get(p) for p in PROPERTIES])
    return DetectionRun(list(candidates), [c for c, keep in zip(candidates, mask) if keep])


def compartmentalize(values):
    """Bin edges over the observed range of one property.

    Integer-valued properties spanning fewer than 64 units get one edge
    per integer; anything else gets ``ceil(log2(n)) + 1`` equal-width
    bins (Sturges).
    """
    values = np.asarray(values, dtype=np.float64)
    lo, hi = float(values.min()), float(values.max())
    if lo == hi:
        return np.array([lo])
    if np.all(values == np.round(values)) and hi - lo < UNIT_BIN_RANGE:
        return np.arange(lo, hi + 1.0)
    n_bins = math.ceil(math.log2(values.size)) + 1
    edges = np.linspace(lo, hi, n_bins + 1)
    edges[-1] = hi
    return edges


def threshold_grid(values):
    """Candidate threshold values for one property: 0 plus the bin edges."""
    return np.unique(np.concatenate(([0.0], compartmentalize(values))))


def saved_area(combination, maxima):
    """``prod(1 - t / max)`` over the positive thresholds (0 when none is active)."""
    prod = 1.0
    any_active = False
    for t, m in zip(combination, maxima):
        if t > 0:
            prod *= 1.0 - t / m
            any_active = True
    return prod if any_active else 0.0


@dataclass
class ThresholdSearchResult:
    properties: tuple
    maxima: dict
    combination: dict
    saved_area: float
    bins: dict
    degenerate: bool = False

    @property
    def rules(self):
        return RuleSet({p: v for p, v in self.combination.items() if v > 0})

    def to_dict(self):
        return {
            "properties": list(self.properties),
            "false_anomaly_maxima": dict(self.maxima),
            "combination": dict(self.combination),
            "rules": list(self.rules.active_rules),
            "saved_area": self.saved_area,
            "bins": {k: [float(x) for x in v] for k, v in self.bins.items()},
            "degenerate": self.degenerate,
        }


def auto_thresholds(training_candidates, properties=PROPERTIES):
    """Pick the saved-area-maximising threshold combination that filters every
    training candidate.

    The search starts from the fallback that sets the first property to
    its maximum (saved area 0). Combinations are visited in lexicographic
    order of their threshold vectors and only a strictly larger area
    replaces the incumbent, so ties go to the lexicographically smallest
    vector. For each assignment of all but the last property, only the
    smallest admissible value of the last one can win, which keeps the
    search linear in the size of the last grid.
    """
    properties = tuple(properties)
    if not properties:
        raise ConfigError("at least one property is required")
    return search_thresholds(property_matrix(training_candidates, properties), properties)


def search_thresholds(props, properties=PROPERTIES):
    """:func:`auto_thresholds` on a precomputed ``(n, k)`` property matrix."""
    properties = tuple(properties)
    props = np.asarray(props, dtype=np.float64).reshape(-1, len(properties))
    k = len(properties)
    if props.shape[0] == 0:
        log.warning("no training candidates; all thresholds left at 0")
        zeros = {p: 0.0 for p in properties}
        return ThresholdSearchResult(properties, zeros, dict(zeros), 0.0, {}, degenerate=True)

    maxima = props.max(axis=0)
    grids = [threshold_grid(props[:, j]) for j in range(k)]
    best = np.zeros(k)
    best[0] = maxima[0]
    best_area = 0.0

    last = props[:, -1]
    last_grid = grids[-1]
    last_pos = last_grid[last_grid > 0]
    for prefix in itertools.product(*grids[:-1]):
        mask = np.ones(props.shape[0], dtype=bool)
        prod = 1.0
        prefix_active = False
        for j, t in enumerate(prefix):
            if t > 0:
                mask &= props[:, j] > t
                prod *= 1.0 - t / maxima[j]
                prefix_active = True
        remaining = last[mask]
        if remaining.size == 0 and prefix_active:
            area = prod
            if area > best_area:
                best_area = area
                best = np.array(prefix + (0.0,))
        if remaining.size:
            ok = last_pos[last_pos >= remaining.max()]
        else:
            ok = last_pos
        if ok.size:
            t = ok[0]
            area = prod * (1.0 - t / maxima[-1])
            if area > best_area:
                best_area = area
                best = np.array(prefix + (t,))

    combination = {p: float(v) for p, v in zip(properties, best)}
    if confirmed_mask(props, best).any():
        raise QgadError("threshold search returned a combination that misses training candidates")
    return ThresholdSearchResult(
        properties,
        {p: float(v) for p, v in zip(properties, maxima)},
        combination,
        float(best_area),
        {p: g for p, g in zip(properties, grids)},
    )


def detect(model, dataset, out_grid, rules, policy="first_match", policy_param=1.0):
    """Predict, collect candidates aligned to series indices, apply ``rules``."""
    predicted = model.predict(dataset.inputs)
    offset = int(dataset.sample_index[0]) if len(dataset) else 0
    candidates = collect_candidates(
        predicted, dataset.target_classes, out_grid, policy, policy_param, offset
    )
    return apply_rules(candidates, rules), predicted
