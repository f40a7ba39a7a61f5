"""Windowed statistical features for one-class baselines and corpus diagnostics.

Nine features per channel and window: average power, mean, median
frequency, standard deviation, skewness, kurtosis, central tendency
measure, correlation coefficient of successive differences, and
Lempel-Ziv complexity.
"""

import csv
import io
from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import ConfigError, StructureError

FEATURES = (
    "avg_power",
    "mean",
    "median_freq",
    "std",
    "skewness",
    "kurtosis",
    "ctm",
    "corr",
    "lzc",
)
MIN_WINDOW = 8


@dataclass(frozen=True)
class FeatureOptions:
    """``ctm_radius`` scales the std of the differenced window into the CTM
    radius; ``sample_rate`` converts median frequency from cycles/sample."""

    ctm_radius: float = 0.1
    sample_rate: float = 1.0

    def validate(self):
        if self.ctm_radius <= 0 or self.sample_rate <= 0:
            raise ConfigError("ctm_radius and sample_rate must be positive")
        return self


@dataclass(frozen=True)
class FeatureWindow:
    """Feature values of one window, in :data:`FEATURES` order.

    ``degenerate`` is set when the window (or its first differences) has
    zero spread; the affected features are then reported as 0.
    """

    size: int
    values: tuple
    degenerate: bool = False

    def __getitem__(self, name):
        return self.values[FEATURES.index(name)]

    def as_dict(self):
        return dict(zip(FEATURES, self.values))


def median_frequency(x, sample_rate=1.0):
    """Frequency splitting the one-sided power spectrum of the mean-removed
    window into two halves of equal energy (first bin reaching half)."""
    x = np.asarray(x, dtype=np.float64)
    power = np.abs(np.fft.rfft(x - x.mean())) ** 2
    total = power.sum()
    if total <= 0:
        return 0.0
    # relative slack so a cumulative sum equal to half up to FFT rounding counts
    k = int(np.searchsorted(np.cumsum(power), 0.5 * total * (1 - 1e-12)))
    return float(k * sample_rate / len(x))


def skewness(x):
    """Bias-corrected sample skewness."""
    n = len(x)
    d = x - x.mean()
    s = np.sqrt(np.mean(d * d))
    if s == 0:
        return 0.0
    # standardise first so tiny variances cannot underflow to 0/0
    g1 = np.mean((d / s) ** 3)
    return float(np.sqrt(n * (n - 1)) / (n - 2) * g1)


def kurtosis(x):
    """Bias-corrected sample kurtosis, normal distribution at 3."""
    n = len(x)
    d = x - x.mean()
    s = np.sqrt(np.mean(d * d))
    if s == 0:
        return 0.0
    k1 = np.mean((d / s) ** 4)
    return float((n - 1) / ((n - 2) * (n - 3)) * ((n + 1) * k1 - 3 * (n - 1)) + 3)


def central_tendency(x, radius=0.1):
    """Share of second-order difference plot points within ``radius`` times
    the std of the first differences, measured from the origin."""
    d = np.diff(np.asarray(x, dtype=np.float64))
    rho = radius * d.std(ddof=1)
    if rho == 0:
        return 0.0
    inside = np.hypot(d[:-1], d[1:]) < rho
    return float(inside.mean())


def difference_correlation(x):
    """Pearson r between consecutive first differences."""
    d = np.diff(np.asarray(x, dtype=np.float64))
    a, b = d[:-1] - d[:-1].mean(), d[1:] - d[1:].mean()
    den = np.sqrt(np.sum(a * a) * np.sum(b * b))
    if den == 0:
        return 0.0
    return float(np.sum(a * b) / den)


def lz_complexity(x):
    """Lempel-Ziv complexity of the median-binarized window, divided by N."""
    x = np.asarray(x, dtype=np.float64)
    bits = (x > np.median(x)).astype(np.uint8)
    return kernels.lz76(bits) / len(x)


def extract(window, options=None):
    options = (options or FeatureOptions()).validate()
    x = np.asarray(window, dtype=np.float64).ravel()
    n = len(x)
    if n < MIN_WINDOW:
        raise StructureError(f"window of {n} samples; at least {MIN_WINDOW} needed")
    if not np.all(np.isfinite(x)):
        raise StructureError("window contains non-finite values")
    std = float(x.std(ddof=1))
    d = np.diff(x)
    degenerate = std == 0 or d[:-1].std() == 0 or d[1:].std() == 0
    values = (
        float(np.mean(x * x)),
        float(x.mean()),
        median_frequency(x, options.sample_rate),
        std,
        skewness(x),
        kurtosis(x),
        central_tendency(x, options.ctm_radius),
        difference_correlation(x),
        lz_complexity(x),
    )
    return FeatureWindow(n, values, bool(degenerate))


@dataclass(frozen=True)
class FeatureMatrix:
    """One row per window; columns ``channel.feature`` per channel."""

    columns: tuple
    rows: np.ndarray
    starts: np.ndarray
    degenerate: np.ndarray

    def __len__(self):
        return len(self.rows)

    def to_csv(self):
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(("start",) + self.columns)
        for s, row in zip(self.starts, self.rows):
            writer.writerow([int(s)] + [repr(float(v)) for v in row])
        return buf.getvalue()


def window_count(length, size, hop):
    if length < size:
        return 0
    return (length - size) // hop + 1


def window_scan(series, size, hop=None, options=None):
    """Features of every window of ``size`` samples, advancing by ``hop``
    (defaults to ``size``: non-overlapping windows)."""
    hop = size if hop is None else hop
    if size < MIN_WINDOW or hop < 1:
        raise ConfigError(f"window size must be >= {MIN_WINDOW} and hop >= 1")
    n = len(series)
    if n < size:
        raise StructureError(f"series of {n} samples is shorter than the window ({size})")
    count = window_count(n, size, hop)
    starts = np.arange(count, dtype=np.int64) * hop
    columns = tuple(f"{ch}.{f}" for ch in series.channel_names for f in FEATURES)
    rows = np.empty((count, len(columns)))
    degenerate = np.zeros(count, dtype=bool)
    k = len(FEATURES)
    for i, s in enumerate(starts):
        for c in range(series.n_channels):
            fw = extract(series.channels[c, s:s + size], options)
            rows[i, c * k:(c + 1) * k] = fw.values
            degenerate[i] |= fw.degenerate
    return FeatureMatrix(columns, rows, starts, degenerate)
