"""Static and adaptive (equal-cardinality) quantization grids."""

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, StructureError

KINDS = ("static", "adaptive")


@dataclass(frozen=True, eq=False)
class QuantizationGrid:
    """``m`` classes delimited by ``m + 1`` edges on the normalized [0, 1] scale."""

    m: int
    edges: np.ndarray
    kind: str = "adaptive"

    def __post_init__(self):
        edges = np.asarray(self.edges, dtype=np.float64).copy()
        if self.kind not in KINDS:
            raise ConfigError(f"grid kind must be one of {KINDS}, got {self.kind!r}")
        if self.m < 2:
            raise ConfigError("a grid needs at least 2 classes")
        if edges.shape != (self.m + 1,):
            raise StructureError(f"expected {self.m + 1} edges, got {edges.shape}")
        if edges[0] != 0.0 or edges[-1] != 1.0 or np.any(np.diff(edges) < 0):
            raise StructureError("edges must rise from 0 to 1 without decreasing")
        edges.setflags(write=False)
        object.__setattr__(self, "edges", edges)

    def __eq__(self, other):
        if not isinstance(other, QuantizationGrid):
            return NotImplemented
        return (
            self.m == other.m
            and self.kind == other.kind
            and np.array_equal(self.edges, other.edges)
        )

    def __hash__(self):
        return hash((self.m, self.kind, self.edges.tobytes()))

    @property
    def midpoints(self):
        return 0.5 * (self.edges[:-1] + self.edges[1:])

    @property
    def widths(self):
        return np.diff(self.edges)

    def quantize_array(self, x):
        """Vectorised :func:`quantize` without the range check."""
        x = np.asarray(x, dtype=np.float64)
        if self.kind == "static":
            y = np.floor(x * self.m).astype(np.int64)
        else:
            y = np.searchsorted(self.edges, x, side="right").astype(np.int64) - 1
        return np.clip(y, 0, self.m - 1)

    def to_dict(self):
        return {"kind": self.kind, "m": int(self.m), "edges": [float(e) for e in self.edges]}

    @classmethod
    def from_dict(cls, d):
        return cls(int(d["m"]), np.asarray(d["edges"], dtype=np.float64), d["kind"])


def build_static_grid(m):
    """Evenly spaced bins: ``edges[i] = i / m``."""
    if m < 2:
        raise ConfigError("a grid needs at least 2 classes")
    return QuantizationGrid(m, np.arange(m + 1) / m, "static")


def build_adaptive_grid(samples, m):
    """Order-statistic edges so that each class holds about ``n / m`` samples.

    Interior edge ``y`` is the ``y * ceil(n / m)``-th smallest sample
    (clamped to the last one when that index runs past ``n - 1``).
    Repeated sample values can produce equal consecutive edges; the
    resulting empty classes are never returned by :func:`quantize`.
    """
    if m < 2:
        raise ConfigError("a grid needs at least 2 classes")
    s = np.sort(np.asarray(samples, dtype=np.float64).ravel())
    n = s.size
    if n == 0:
        raise StructureError("cannot build an adaptive grid from an empty sample")
    if s[0] < 0.0 or s[-1] > 1.0:
        raise StructureError("adaptive grid samples must be normalized to [0, 1]")
    step = math.ceil(n / m)
    idx = np.minimum(np.arange(1, m) * step, n - 1)
    edges = np.concatenate(([0.0], s[idx], [1.0]))
    return QuantizationGrid(m, edges, "adaptive")


def build_grid(kind, samples, m):
    if kind == "static":
        return build_static_grid(m)
    if kind == "adaptive":
        return build_adaptive_grid(samples, m)
    raise ConfigError(f"no grid for quantization algorithm {kind!r}")


def quantize(grid, x):
    """Class index of a single normalized value; ``1.0`` maps to ``m - 1``."""
    if not 0.0 <= x <= 1.0:
        raise ValueError(f"value {x} outside [0, 1]")
    return int(grid.quantize_array(x))


def bin_midpoint(grid, y):
    if not 0 <= y < grid.m:
        raise IndexError(f"class {y} outside [0, {grid.m})")
    return float((grid.edges[y] + grid.edges[y + 1]) / 2)


@dataclass(frozen=True)
class GridDiagnostics:
    counts: np.ndarray
    fractions: np.ndarray
    median_bin_width: float

    @property
    def min_fraction(self):
        return float(self.fractions.min())

    @property
    def max_fraction(self):
        return float(self.fractions.max())


def diagnostics(grid, samples):
    """Per-class sample counts and fractions, and the median bin width."""
    samples = np.asarray(samples, dtype=np.float64).ravel()
    counts = np.bincount(grid.quantize_array(samples), minlength=grid.m)
    total = counts.sum()
    fractions = counts / total if total else np.zeros(grid.m)
    return GridDiagnostics(counts, fractions, float(np.median(grid.widths)))
