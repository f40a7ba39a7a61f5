"""Loading, scaling, splitting and windowing of multi-channel series."""

import csv
import io
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import PreprocessConfig
from .errors import (
    ConfigError,
    DegenerateRangeError,
    InvalidSplitError,
    ParseError,
    StructureError,
)

ANOMALY_COLUMN = "anomaly"

# Conversion constants of the magnet measurement chain.
ADC_GAIN = 5.0  # V/V, analogue stage
ADC_LSB = 9.5348e-6  # V/bit
DCCT_FACTOR = 2000.0  # A/V


def _check_intervals(intervals, length):
    out = []
    prev_end = 0
    for start, end in intervals:
        start, end = int(start), int(end)
        if not 0 <= start < end <= length:
            raise StructureError(f"interval [{start}, {end}) outside [0, {length})")
        if start < prev_end:
            raise StructureError("anomaly intervals must be sorted and disjoint")
        prev_end = end
        out.append((start, end))
    return tuple(out)


@dataclass(frozen=True)
class RawSeries:
    """Multi-channel series in physical (or raw ADC) units.

    ``channels`` has shape ``(n_channels, n_samples)``.
    """

    name: str
    channels: np.ndarray
    channel_names: tuple = ()
    sample_period: float = 1.0
    anomaly_intervals: tuple = ()

    def __post_init__(self):
        ch = np.asarray(self.channels, dtype=np.float64)
        if ch.ndim == 1:
            ch = ch[None, :]
        if ch.ndim != 2:
            raise StructureError("channels must be a 2-D array (channels x samples)")
        ch.setflags(write=False)
        object.__setattr__(self, "channels", ch)
        names = tuple(self.channel_names) or tuple(f"ch{i}" for i in range(ch.shape[0]))
        if len(names) != ch.shape[0]:
            raise StructureError(f"{len(names)} channel names for {ch.shape[0]} channels")
        object.__setattr__(self, "channel_names", names)
        object.__setattr__(
            self, "anomaly_intervals", _check_intervals(self.anomaly_intervals, ch.shape[1])
        )

    def __len__(self):
        return self.channels.shape[1]

    @property
    def n_channels(self):
        return self.channels.shape[0]

    def labels(self):
        """Per-sample 0/1 anomaly mask."""
        return intervals_to_mask(self.anomaly_intervals, len(self))


@dataclass(frozen=True)
class NormalizedSeries:
    """Series with every value in [0, 1] plus the bounds that produced it."""

    name: str
    channels: np.ndarray
    norm_bounds: np.ndarray
    channel_names: tuple = ()
    anomaly_intervals: tuple = ()
    sample_period: float = 1.0

    def __post_init__(self):
        ch = np.asarray(self.channels, dtype=np.float64)
        if ch.ndim == 1:
            ch = ch[None, :]
        if ch.size and (ch.min() < 0.0 or ch.max() > 1.0):
            raise StructureError("normalized values must lie in [0, 1]")
        ch.setflags(write=False)
        object.__setattr__(self, "channels", ch)
        bounds = np.asarray(self.norm_bounds, dtype=np.float64).reshape(ch.shape[0], 2)
        bounds.setflags(write=False)
        object.__setattr__(self, "norm_bounds", bounds)
        names = tuple(self.channel_names) or tuple(f"ch{i}" for i in range(ch.shape[0]))
        if len(names) != ch.shape[0]:
            raise StructureError(f"{len(names)} channel names for {ch.shape[0]} channels")
        object.__setattr__(self, "channel_names", names)
        object.__setattr__(
            self, "anomaly_intervals", _check_intervals(self.anomaly_intervals, ch.shape[1])
        )

    def __len__(self):
        return self.channels.shape[1]

    @property
    def n_channels(self):
        return self.channels.shape[0]


@dataclass(frozen=True)
class ConversionSpec:
    multiplier: float
    unit: str = ""

    @classmethod
    def adc_voltage(cls, gain=ADC_GAIN, lsb=ADC_LSB):
        return cls(gain * lsb, "V")

    @classmethod
    def dcct_current(cls, factor=DCCT_FACTOR):
        return cls(factor, "A")


def intervals_to_mask(intervals, length):
    mask = np.zeros(length, dtype=np.int8)
    for start, end in intervals:
        mask[start:end] = 1
    return mask


def mask_to_intervals(mask):
    """Contiguous runs of nonzero entries as ``[start, end)`` pairs."""
    m = np.asarray(mask).astype(bool).astype(np.int8)
    if m.size == 0:
        return ()
    d = np.diff(np.concatenate(([0], m, [0])))
    starts = np.flatnonzero(d == 1)
    ends = np.flatnonzero(d == -1)
    return tuple((int(s), int(e)) for s, e in zip(starts, ends))


def load_csv(path, schema=None, name=None, sample_period=1.0):
    """Read a CSV with a header of channel names and an optional ``anomaly`` column.

    ``schema`` selects and orders channels; by default every non-anomaly
    column is a channel. Contiguous runs of ``anomaly == 1`` become the
    ground-truth intervals.
    """
    path = Path(path)
    with open(path, newline="") as fh:
        return _parse_csv(fh, schema, name or path.stem, sample_period)


def loads_csv(text, schema=None, name="series", sample_period=1.0):
    return _parse_csv(io.StringIO(text), schema, name, sample_period)


def _parse_csv(fh, schema, name, sample_period):
    reader = csv.reader(fh)
    try:
        header = [h.strip() for h in next(reader)]
    except StopIteration:
        raise ParseError("empty file", 1) from None
    if schema is None:
        schema = [h for h in header if h != ANOMALY_COLUMN]
    missing = [c for c in schema if c not in header]
    if missing:
        raise StructureError(f"columns not in header: {', '.join(missing)}")
    col_idx = [header.index(c) for c in schema]
    lab_idx = header.index(ANOMALY_COLUMN) if ANOMALY_COLUMN in header else None
    values, labels = [], []
    for row in reader:
        line = reader.line_num
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(header):
            raise ParseError(f"expected {len(header)} fields, found {len(row)}", line)
        try:
            vals = []
            for i in col_idx:
                cell = row[i].strip()
                if not cell:
                    raise StructureError(
                        f"line {line}: channel {header[i]!r} has no value (ragged channels)"
                    )
                vals.append(float(cell))
        except ValueError as exc:
            raise ParseError(str(exc), line) from None
        values.append(vals)
        if lab_idx is not None:
            lab = row[lab_idx].strip()
            if lab not in ("0", "1", "0.0", "1.0"):
                raise ParseError(f"anomaly label must be 0 or 1, got {lab!r}", line)
            labels.append(int(float(lab)))
    data = np.asarray(values, dtype=np.float64).reshape(-1, len(col_idx)).T
    intervals = mask_to_intervals(labels) if labels else ()
    return RawSeries(name, data, tuple(schema), sample_period, intervals)


def _atomic_write(path, text):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def dumps_csv(series):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(list(series.channel_names) + [ANOMALY_COLUMN])
    labels = intervals_to_mask(series.anomaly_intervals, len(series))
    for j in range(len(series)):
        writer.writerow([repr(float(v)) for v in series.channels[:, j]] + [int(labels[j])])
    return buf.getvalue()


def write_csv(series, path):
    _atomic_write(path, dumps_csv(series))


def convert_physical(series, gains):
    """Scale each channel by its conversion multiplier."""
    gains = list(gains)
    if len(gains) != series.n_channels:
        raise StructureError(f"{len(gains)} conversion specs for {series.n_channels} channels")
    mult = np.array([g.multiplier for g in gains], dtype=np.float64)[:, None]
    return RawSeries(
        series.name,
        series.channels * mult,
        series.channel_names,
        series.sample_period,
        series.anomaly_intervals,
    )


def channel_bounds(*series):
    """Per-channel ``(min, max)`` over one or more series."""
    stacked = np.concatenate([s.channels for s in series], axis=1)
    return np.stack([stacked.min(axis=1), stacked.max(axis=1)], axis=1)


def normalize(series, bounds=None):
    """Affine map of every channel onto [0, 1], clipping out-of-range values.

    When ``bounds`` is omitted it is computed from ``series`` itself.
    """
    if bounds is None:
        bounds = channel_bounds(series)
    bounds = np.asarray(bounds, dtype=np.float64).reshape(series.n_channels, 2)
    lo, hi = bounds[:, 0:1], bounds[:, 1:2]
    span = np.abs(hi - lo)
    flat = np.flatnonzero(span[:, 0] == 0)
    if flat.size:
        names = ", ".join(series.channel_names[i] for i in flat)
        raise DegenerateRangeError(f"constant channel(s), cannot normalize: {names}")
    y = np.clip((series.channels - lo) / span, 0.0, 1.0)
    return NormalizedSeries(
        series.name, y, bounds, series.channel_names, series.anomaly_intervals, series.sample_period
    )


def denormalize(series):
    lo, hi = series.norm_bounds[:, 0:1], series.norm_bounds[:, 1:2]
    return RawSeries(
        series.name,
        series.channels * np.abs(hi - lo) + lo,
        series.channel_names,
        series.sample_period,
        series.anomaly_intervals,
    )


def _slice(series, start, stop, step=1, intervals=()):
    return NormalizedSeries(
        series.name,
        series.channels[:, start:stop:step],
        series.norm_bounds,
        series.channel_names,
        intervals,
        series.sample_period * step,
    )


def split_series(series, split_index):
    """Split into an anomaly-free training head and a test tail."""
    n = len(series)
    if not 0 < split_index < n:
        raise InvalidSplitError(f"split index {split_index} not in (0, {n})")
    test_iv = []
    for start, end in series.anomaly_intervals:
        if start < split_index:
            raise InvalidSplitError(
                f"anomaly [{start}, {end}) intersects the training part [0, {split_index})"
            )
        test_iv.append((start - split_index, end - split_index))
    return _slice(series, 0, split_index), _slice(series, split_index, n, 1, test_iv)


def decimate(series, factor):
    """Keep every ``factor``-th sample; intervals map onto the kept samples."""
    if factor < 1:
        raise ConfigError("decimation factor must be >= 1")
    if factor == 1:
        return series
    intervals = []
    for start, end in series.anomaly_intervals:
        # kept sample j covers original index j*factor
        s, e = -(-start // factor), -(-end // factor)
        if e > s:
            intervals.append((s, e))
    return _slice(series, 0, len(series), factor, intervals)


@dataclass(frozen=True)
class WindowedDataset:
    """Model-ready examples.

    ``inputs`` holds class indices with shape
    ``(num_examples, look_back, num_input_channels)``; ``target_classes``
    holds the class of the predicted sample, and ``sample_index`` the
    series index of that sample.
    """

    inputs: np.ndarray
    target_classes: np.ndarray
    sample_index: np.ndarray
    config: PreprocessConfig
    in_grid: int = field(default=0)

    def __len__(self):
        return len(self.target_classes)

    @property
    def targets(self):
        """One-hot targets, shape ``(num_examples, out_grid)``."""
        onehot = np.zeros((len(self), self.config.out_grid), dtype=np.float64)
        onehot[np.arange(len(self)), self.target_classes] = 1.0
        return onehot

    def take(self, index):
        index = np.asarray(index, dtype=np.int64)
        return WindowedDataset(
            np.ascontiguousarray(self.inputs[index]),
            self.target_classes[index],
            self.sample_index[index],
            self.config,
            self.in_grid,
        )


def quantize_channels(series, in_grids):
    """Class indices for every channel, shape ``(n_channels, n_samples)``."""
    from .quantizer import QuantizationGrid

    if isinstance(in_grids, QuantizationGrid):
        in_grids = [in_grids] * series.n_channels
    if len(in_grids) != series.n_channels:
        raise StructureError(f"{len(in_grids)} input grids for {series.n_channels} channels")
    return np.stack([g.quantize_array(series.channels[i]) for i, g in enumerate(in_grids)])


def build_windows(series, grids, cfg):
    """Slice a normalized series into overlapping history windows.

    ``grids`` is ``(in_grids, out_grid)`` where ``in_grids`` is a single
    grid shared by all channels or one grid per channel. For every sample
    ``t >= look_back + look_ahead - 1`` the example input is the quantized
    history ``[t - look_ahead - look_back + 1, t - look_ahead]`` of all
    channels and the target is the class of ``target_channel`` at ``t``.
    """
    in_grids, out_grid = grids
    if cfg.in_algorithm == "none" or cfg.out_algorithm == "none":
        raise ConfigError("windowing needs class indices; quantization 'none' is unsupported")
    if out_grid.m != cfg.out_grid:
        raise ConfigError(f"out grid has {out_grid.m} classes, config says {cfg.out_grid}")
    n = len(series)
    lb, la = cfg.look_back, cfg.look_ahead
    if n <= lb + la:
        raise StructureError(f"series of {n} samples too short for look_back={lb}, look_ahead={la}")
    if not 0 <= cfg.target_channel < series.n_channels:
        raise ConfigError(f"target_channel {cfg.target_channel} out of range")
    q = quantize_channels(series, in_grids)
    first = lb + la - 1
    hist = np.lib.stride_tricks.sliding_window_view(q.T, lb, axis=0)
    # hist[j] covers samples j .. j+lb-1 with shape (channels, lb)
    count = n - first
    inputs = hist[:count].transpose(0, 2, 1)
    dtype = np.int16 if cfg.in_grid < 2**15 else np.int32
    inputs = np.ascontiguousarray(inputs, dtype=dtype)
    targets = out_grid.quantize_array(series.channels[cfg.target_channel, first:])
    return WindowedDataset(
        inputs, targets.astype(np.int64), np.arange(first, n, dtype=np.int64), cfg, cfg.in_grid
    )


def concat_datasets(datasets):
    datasets = list(datasets)
    if not datasets:
        raise StructureError("nothing to concatenate")
    cfg = datasets[0].config
    return WindowedDataset(
        np.concatenate([d.inputs for d in datasets]),
        np.concatenate([d.target_classes for d in datasets]),
        np.concatenate([d.sample_index for d in datasets]),
        cfg,
        datasets[0].in_grid,
    )


def subsample(dataset, fraction, seed):
    """Uniform random subset of ``round(fraction * N)`` examples, no replacement."""
    if not 0.0 < fraction <= 1.0:
        raise ConfigError("fraction must lie in (0, 1]")
    n = len(dataset)
    k = int(np.floor(fraction * n + 0.5))
    perm = np.random.default_rng(seed).permutation(n)[:k]
    return dataset.take(perm)


def thin_examples(dataset, factor):
    """Keep every ``factor``-th example (training-time decimation)."""
    if factor < 1:
        raise ConfigError("decimation factor must be >= 1")
    if factor == 1:
        return dataset
    return dataset.take(np.arange(0, len(dataset), factor))
